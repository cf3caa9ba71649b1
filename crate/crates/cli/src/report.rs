//! Run summaries and cross-run comparison tables.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// Final record of one training run, written next to its metrics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub task: String,
    /// "ppl" (lower is better) or "accuracy" (higher is better).
    pub metric_name: String,
    pub final_metric: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub param_count: usize,
    pub fp_param_count: usize,
    pub seed: u64,
    pub diverged: bool,
    pub config: BTreeMap<String, String>,
}

pub fn load_summary(path: &Path) -> Result<RunSummary> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

#[derive(Clone, Debug, Serialize)]
pub struct GroupRow {
    pub group: BTreeMap<String, String>,
    pub runs: usize,
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Comparison {
    pub metric_name: String,
    pub rows: Vec<GroupRow>,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Groups summaries by the given config keys and aggregates the final
/// metric per group. All runs in one comparison must report the same
/// metric.
pub fn compare_runs(summaries: &[RunSummary], group_by: &[String]) -> Result<Comparison> {
    if summaries.is_empty() {
        bail!("no run summaries to compare");
    }
    let metric_name = summaries[0].metric_name.clone();
    let mut groups: BTreeMap<Vec<(String, String)>, Vec<f64>> = BTreeMap::new();
    for s in summaries {
        if s.metric_name != metric_name {
            bail!(
                "mixed metrics in one comparison: {} vs {} (run {})",
                metric_name,
                s.metric_name,
                s.run_id
            );
        }
        let key: Vec<(String, String)> = group_by
            .iter()
            .map(|k| {
                let v = match k.as_str() {
                    "seed" => Some(s.seed.to_string()),
                    "task" => Some(s.task.clone()),
                    _ => s.config.get(k).cloned(),
                };
                (k.clone(), v.unwrap_or_else(|| "-".into()))
            })
            .collect();
        groups.entry(key).or_default().push(s.final_metric);
    }
    let rows = groups
        .into_iter()
        .map(|(key, mut values)| {
            values.sort_by(|a, b| a.partial_cmp(b).expect("finite metrics"));
            GroupRow {
                group: key.into_iter().collect(),
                runs: values.len(),
                mean: values.iter().sum::<f64>() / values.len() as f64,
                median: median(&values),
                min: values[0],
                max: *values.last().expect("nonempty"),
            }
        })
        .collect();
    Ok(Comparison { metric_name, rows })
}

/// Plain-text table with aligned columns.
pub fn render_table(comparison: &Comparison, group_by: &[String]) -> String {
    let mut header: Vec<String> = group_by.to_vec();
    header.extend(
        ["runs", "mean", "median", "min", "max"]
            .iter()
            .map(|s| s.to_string()),
    );
    let mut rows: Vec<Vec<String>> = vec![header];
    for row in &comparison.rows {
        let mut cells: Vec<String> = group_by
            .iter()
            .map(|k| row.group.get(k).cloned().unwrap_or_else(|| "-".into()))
            .collect();
        cells.push(row.runs.to_string());
        for v in [row.mean, row.median, row.min, row.max] {
            cells.push(format!("{v:.4}"));
        }
        rows.push(cells);
    }
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = format!("final metric: {}\n", comparison.metric_name);
    for (i, row) in rows.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(cell, w)| format!("{cell:>w$}", w = w))
            .collect();
        out.push_str(&line.join("  "));
        out.push('\n');
        if i == 0 {
            out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
            out.push('\n');
        }
    }
    out
}
