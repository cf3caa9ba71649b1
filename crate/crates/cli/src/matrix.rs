//! Experiment matrices: cross products of config overrides fanned out to
//! independent worker processes.

use crate::experiment::run_id;
use anyhow::{bail, Context, Result};
use fgrnn::tasks::config::read_raw_config;
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Mutex;

/// One cell: the base config with overrides applied.
#[derive(Clone, Debug, Serialize)]
pub struct MatrixCell {
    pub run_id: String,
    pub config: BTreeMap<String, String>,
    pub config_path: PathBuf,
    pub out_dir: PathBuf,
}

/// Expands `template × vary × seeds` into concrete config files under
/// `out/cells/`. Every cell gets a deterministic id from its config hash.
pub fn expand(
    template: &Path,
    vary: &[(String, Vec<String>)],
    seeds: &[u64],
    out: &Path,
) -> Result<Vec<MatrixCell>> {
    let base = read_raw_config(template)?;
    let cells_dir = out.join("cells");
    std::fs::create_dir_all(&cells_dir)?;

    let mut configs = vec![base];
    for (key, values) in vary {
        let mut next = Vec::with_capacity(configs.len() * values.len());
        for config in &configs {
            for value in values {
                let mut c = config.clone();
                c.insert(key.clone(), value.clone());
                next.push(c);
            }
        }
        configs = next;
    }
    let seeds = if seeds.is_empty() { vec![0] } else { seeds.to_vec() };

    let mut cells = Vec::new();
    for config in configs {
        for &seed in &seeds {
            let mut c = config.clone();
            c.insert("seed".into(), seed.to_string());
            let id = run_id(&c);
            let config_path = cells_dir.join(format!("{id}.cfg"));
            let mut text = String::new();
            for (k, v) in &c {
                text.push_str(&format!("{k} = {v}\n"));
            }
            std::fs::write(&config_path, text)?;
            cells.push(MatrixCell {
                run_id: id.clone(),
                config: c,
                config_path,
                out_dir: out.join("runs").join(id),
            });
        }
    }
    let mut ids: Vec<&str> = cells.iter().map(|c| c.run_id.as_str()).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() != cells.len() {
        bail!("matrix expansion produced colliding run ids (duplicate cells?)");
    }
    Ok(cells)
}

/// Runs every cell as a separate worker process (this same binary's
/// `train` subcommand), at most `jobs` at a time. Returns ids of failed
/// cells.
pub fn run_cells(cells: &[MatrixCell], jobs: usize) -> Result<Vec<String>> {
    let exe = std::env::current_exe().context("locating worker binary")?;
    let queue = Mutex::new(cells.iter().collect::<Vec<_>>());
    let failures: Mutex<Vec<String>> = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..jobs.max(1) {
            scope.spawn(|| loop {
                let cell = {
                    let mut q = queue.lock().expect("queue lock");
                    match q.pop() {
                        Some(c) => c,
                        None => return,
                    }
                };
                let status = Command::new(&exe)
                    .arg("train")
                    .arg("--config")
                    .arg(&cell.config_path)
                    .arg("--out")
                    .arg(&cell.out_dir)
                    .arg("--quiet")
                    .status();
                let ok = matches!(status, Ok(s) if s.success());
                if !ok {
                    failures
                        .lock()
                        .expect("failure lock")
                        .push(cell.run_id.clone());
                }
            });
        }
    });
    Ok(failures.into_inner().expect("failure lock"))
}

/// Index of an expanded matrix, written as `matrix.json`.
#[derive(Serialize)]
pub struct MatrixIndex<'a> {
    pub cells: &'a [MatrixCell],
    pub failed: &'a [String],
}
