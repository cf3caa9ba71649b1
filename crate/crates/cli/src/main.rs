use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use fgrnn_cli::{experiment, heatmap, matrix, report};
use std::path::PathBuf;

/// Fixation-guided recurrent network experiments.
#[derive(Parser)]
#[command(name = "fgrnn", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Preprocess an eye-tracking interchange file: normalize, aggregate
    /// subjects, align tokens, discretize into K bins, split.
    Prep {
        #[arg(long)]
        input: PathBuf,
        /// Number of fixation bins.
        #[arg(long)]
        k: usize,
        /// Train fraction of the sentence-level split.
        #[arg(long, default_value_t = 0.75)]
        split: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Normalize each subject by their own mean instead of the corpus
        /// mean.
        #[arg(long)]
        per_subject_norm: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain the frozen fixation predictor on prepped records.
    PretrainFp {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 64)]
        emb: usize,
        #[arg(long, default_value_t = 100)]
        hidden: usize,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, default_value_t = 0.001)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Optional whitespace-format pretrained embeddings.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one configured model and write metrics, checkpoint, summary.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        quiet: bool,
    },
    /// Evaluate a checkpoint on the config's test split.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Write fixation heatmap documents (JSONL) for inspection.
        #[arg(long)]
        fixations: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        fixations_count: usize,
    },
    /// Expand a config template over value lists and seeds, running each
    /// cell as an independent worker process.
    Matrix {
        #[arg(long)]
        template: PathBuf,
        /// Override, e.g. --vary gate_source=full,random (repeatable).
        #[arg(long)]
        vary: Vec<String>,
        /// Comma-separated seeds.
        #[arg(long, default_value = "0")]
        seeds: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        jobs: usize,
    },
    /// Render a fixation heatmap document to HTML or ANSI text.
    Heatmap {
        /// JSONL of heatmap documents (from `eval --fixations`).
        #[arg(long)]
        doc: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, default_value = "html")]
        format: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate run summaries into a comparison table.
    Compare {
        /// summary.json paths.
        #[arg(required = true)]
        summaries: Vec<PathBuf>,
        /// Comma-separated config keys to group by.
        #[arg(long, default_value = "variant,gate_source")]
        group_by: String,
        /// Also write the table as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    if let Err(err) = run() {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Cmd::Prep {
            input,
            k,
            split,
            seed,
            per_subject_norm,
            out,
        } => {
            let (train, test) = experiment::prep(&input, k, split, seed, per_subject_norm, &out)?;
            println!(
                "prepped {} train / {} test sentences -> {}",
                train,
                test,
                out.display()
            );
        }
        Cmd::PretrainFp {
            data,
            emb,
            hidden,
            epochs,
            lr,
            seed,
            embeddings,
            out,
        } => {
            let (l1, mse) = experiment::pretrain_fp(
                &data,
                emb,
                hidden,
                epochs,
                lr,
                seed,
                embeddings.as_deref(),
                &out,
            )?;
            println!("held-out L1 {l1:.4} MSE {mse:.4} -> {}", out.display());
        }
        Cmd::Train { config, out, quiet } => {
            let result = experiment::run_experiment(&config, &out, quiet)?;
            let s = &result.summary;
            println!(
                "[{}] {} {} = {:.4} (best epoch {}/{}, {} params)",
                s.run_id, s.task, s.metric_name, s.final_metric, s.best_epoch, s.epochs_run,
                s.param_count
            );
            if s.diverged {
                bail!("training diverged; partial metrics kept in {}", out.display());
            }
        }
        Cmd::Eval {
            config,
            checkpoint,
            fixations,
            fixations_count,
        } => {
            let (metric, value) = experiment::eval_checkpoint(
                &config,
                &checkpoint,
                fixations.as_deref(),
                fixations_count,
            )?;
            println!("{metric} = {value:.4}");
        }
        Cmd::Matrix {
            template,
            vary,
            seeds,
            out,
            jobs,
        } => {
            let vary: Vec<(String, Vec<String>)> = vary
                .iter()
                .map(|spec| {
                    let (key, values) = spec
                        .split_once('=')
                        .with_context(|| format!("--vary '{spec}' must be key=v1,v2"))?;
                    Ok((
                        key.to_string(),
                        values.split(',').map(str::to_string).collect(),
                    ))
                })
                .collect::<Result<_>>()?;
            let seeds: Vec<u64> = seeds
                .split(',')
                .map(|s| s.trim().parse().context("bad seed"))
                .collect::<Result<_>>()?;
            let cells = matrix::expand(&template, &vary, &seeds, &out)?;
            println!("launching {} cells with {} workers", cells.len(), jobs);
            let failed = matrix::run_cells(&cells, jobs)?;
            let index = matrix::MatrixIndex {
                cells: &cells,
                failed: &failed,
            };
            std::fs::write(out.join("matrix.json"), serde_json::to_string_pretty(&index)?)?;
            if !failed.is_empty() {
                bail!("{} of {} cells failed: {failed:?}", failed.len(), cells.len());
            }
            println!("all {} cells finished -> {}", cells.len(), out.display());
        }
        Cmd::Heatmap {
            doc,
            index,
            format,
            out,
        } => {
            let docs = heatmap::load_docs(&doc)?;
            let doc = docs
                .get(index)
                .with_context(|| format!("document index {index} of {}", docs.len()))?;
            let rendered = heatmap::render(doc, heatmap::Format::parse(&format)?)?;
            std::fs::write(&out, rendered)?;
            println!("rendered -> {}", out.display());
        }
        Cmd::Compare {
            summaries,
            group_by,
            out,
        } => {
            let loaded: Vec<report::RunSummary> = summaries
                .iter()
                .map(|p| report::load_summary(p))
                .collect::<Result<_>>()?;
            let keys: Vec<String> = group_by.split(',').map(str::to_string).collect();
            let comparison = report::compare_runs(&loaded, &keys)?;
            print!("{}", report::render_table(&comparison, &keys));
            if let Some(path) = out {
                std::fs::write(path, serde_json::to_string_pretty(&comparison)?)?;
            }
        }
    }
    Ok(())
}
