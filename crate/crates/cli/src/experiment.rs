//! End-to-end experiment driver: corpus loading, training, metrics files,
//! checkpoints, summaries, and the preprocessing / pretraining pipelines.

use crate::heatmap::{HeatmapDoc, Rescale, Track};
use crate::report::RunSummary;
use anyhow::{bail, Context, Result};
use fgrnn::data::{
    aggregate_subjects, align_tokens, load_corpora, load_prepped, load_sentiment_corpus,
    load_text_corpus, quantile_discretize, save_prepped, split_train_test, token_frequencies,
    FixSentence, NormScope, PreppedSentence, SplitSpec,
};
use fgrnn::fixation::{
    pretrain_fixed_fp, standardize_targets, FixationTarget, FixedFpHyper, FixedFpModel,
};
use fgrnn::tasks::budget::Task;
use fgrnn::tasks::config::{parse_config, GateSource, TrainConfig};
use fgrnn::tasks::lm::{LmInputs, LmSession};
use fgrnn::tasks::metrics::EpochTimed;
use fgrnn::tasks::sentiment::{SentimentInputs, SentimentSession};
use fgrnn::tasks::ArtificialKind;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Training precision of every CLI entry point.
pub type P = f32;

/// Deterministic run id: SHA-256 over the key-sorted config pairs,
/// truncated to 12 hex digits. Invariant under key order in the file.
pub fn run_id(raw: &BTreeMap<String, String>) -> String {
    let mut hasher = Sha256::new();
    for (k, v) in raw {
        hasher.update(k.as_bytes());
        hasher.update(b"=");
        hasher.update(v.as_bytes());
        hasher.update(b"\n");
    }
    let digest = hasher.finalize();
    digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
}

/// Everything the eye-tracking corpus contributes to a task run.
struct EyetrackDerived {
    freq_table: std::collections::HashMap<String, u64>,
    fixation_sentences: Vec<(Vec<String>, Vec<FixationTarget>)>,
}

fn load_eyetrack_derived(path: &Path) -> Result<EyetrackDerived> {
    let corpora = load_corpora(path)?;
    let mut aligned: Vec<FixSentence> = Vec::new();
    for corpus in &corpora {
        for sentence in aggregate_subjects(corpus, NormScope::Corpus)? {
            aligned.push(align_tokens(&sentence)?);
        }
    }
    let freq_table = token_frequencies(
        aligned
            .iter()
            .flat_map(|s| s.tokens.iter().map(|t| t.token.as_str())),
    );
    let mut targets: Vec<Vec<FixationTarget>> = aligned
        .iter()
        .map(|s| s.tokens.iter().map(|t| t.target()).collect())
        .collect();
    standardize_targets(&mut targets);
    let fixation_sentences = aligned
        .iter()
        .zip(targets)
        .map(|(s, t)| {
            (
                s.tokens.iter().map(|tok| tok.token.clone()).collect(),
                t,
            )
        })
        .collect();
    Ok(EyetrackDerived {
        freq_table,
        fixation_sentences,
    })
}

fn needs_eyetrack(cfg: &TrainConfig) -> bool {
    cfg.multi_task && cfg.task == Task::Lm
        || cfg.gate_source == GateSource::Artificial(ArtificialKind::Freq)
}

#[derive(Debug)]
pub struct RunOutput {
    pub summary: RunSummary,
    pub out_dir: PathBuf,
}

/// Trains the configured model, writes `metrics.jsonl` (deterministic),
/// `timings.txt`, `checkpoint.bin` (best validation parameters) and
/// `summary.json` under `out_dir`. Returns the summary; a diverged run
/// still writes everything gathered so far.
pub fn run_experiment(config_path: &Path, out_dir: &Path, quiet: bool) -> Result<RunOutput> {
    let (cfg, raw) = parse_config(config_path)?;
    let id = run_id(&raw);
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;

    let eyetrack = match &cfg.eyetrack_corpus {
        Some(p) => Some(load_eyetrack_derived(p).context("loading eyetrack corpus")?),
        None if needs_eyetrack(&cfg) => bail!("config needs eyetrack_corpus"),
        None => None,
    };
    let fixed_fp = match (&cfg.fp_model, cfg.gate_source == GateSource::FixedFp) {
        (Some(path), true) => {
            Some(FixedFpModel::<P>::load(path).context("loading fixed predictor")?)
        }
        _ => None,
    };

    let metrics_path = out_dir.join("metrics.jsonl");
    let timings_path = out_dir.join("timings.txt");
    let mut metrics_file = std::fs::File::create(&metrics_path)?;
    let mut timings_file = std::fs::File::create(&timings_path)?;
    let mut on_epoch = |e: &EpochTimed| {
        let line = serde_json::to_string(&e.metrics).expect("metrics serialize");
        writeln!(metrics_file, "{line}").expect("metrics write");
        writeln!(timings_file, "epoch {} wall_s {:.3}", e.metrics.epoch, e.wall_s)
            .expect("timings write");
        if !quiet {
            eprintln!("[{id}] {line} ({:.1}s)", e.wall_s);
        }
    };

    let (metric_name, final_metric, best_epoch, epochs_run, param_count, fp_param_count, diverged) =
        match cfg.task {
            Task::Lm => {
                let sentences = load_text_corpus(&cfg.train_corpus)?;
                let inputs = LmInputs {
                    sentences: &sentences,
                    fixation_sentences: eyetrack.as_ref().map(|e| e.fixation_sentences.clone()),
                    freq_table: eyetrack.as_ref().map(|e| e.freq_table.clone()),
                    fixed_fp: fixed_fp.as_ref(),
                };
                let mut session = LmSession::<P>::new(&cfg, inputs)?;
                let outcome = session.train(&mut on_epoch)?;
                fgrnn::checkpoint::save(
                    &out_dir.join("checkpoint.bin"),
                    &outcome.best_store,
                    cfg.seed,
                )?;
                let test_stream = session.test_stream.clone();
                let (_, test_ppl) =
                    session.eval_stream_with(&test_stream, Some(&outcome.best_store))?;
                (
                    "ppl".to_string(),
                    test_ppl,
                    outcome.best_epoch,
                    outcome.history.len(),
                    session.param_count,
                    session.fp_param_count,
                    outcome.diverged,
                )
            }
            Task::Sentiment => {
                let examples = load_sentiment_corpus(&cfg.train_corpus)?;
                let inputs = SentimentInputs {
                    examples: &examples,
                    fixed_fp: fixed_fp.as_ref(),
                    freq_table: eyetrack.as_ref().map(|e| e.freq_table.clone()),
                };
                let mut session = SentimentSession::<P>::new(&cfg, inputs)?;
                let outcome = session.train(&mut on_epoch)?;
                fgrnn::checkpoint::save(
                    &out_dir.join("checkpoint.bin"),
                    &outcome.best_store,
                    cfg.seed,
                )?;
                (
                    "accuracy".to_string(),
                    outcome.best_acc,
                    outcome.best_epoch,
                    outcome.history.len(),
                    session.param_count,
                    session.fp_param_count,
                    outcome.diverged,
                )
            }
        };

    let summary = RunSummary {
        run_id: id,
        task: cfg.task.name().to_string(),
        metric_name,
        final_metric,
        best_epoch,
        epochs_run,
        param_count,
        fp_param_count,
        seed: cfg.seed,
        diverged,
        config: raw,
    };
    std::fs::write(
        out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(RunOutput {
        summary,
        out_dir: out_dir.to_path_buf(),
    })
}

/// `prep`: interchange file in, aligned + discretized + split records out.
pub fn prep(
    input: &Path,
    k: usize,
    split: f64,
    seed: u64,
    per_subject_norm: bool,
    out: &Path,
) -> Result<(usize, usize)> {
    let corpora = load_corpora(input)?;
    let scope = if per_subject_norm {
        NormScope::PerSubject
    } else {
        NormScope::Corpus
    };
    let mut aligned: Vec<FixSentence> = Vec::new();
    for corpus in &corpora {
        for sentence in aggregate_subjects(corpus, scope)? {
            aligned.push(align_tokens(&sentence)?);
        }
    }
    quantile_discretize(&mut aligned, k)?;
    let indices: Vec<usize> = (0..aligned.len()).collect();
    let (train_idx, test_idx) = split_train_test(
        indices,
        &SplitSpec {
            train_fraction: split,
            seed,
        },
    );
    let mut records: Vec<PreppedSentence> = Vec::with_capacity(aligned.len());
    for (split_name, idx) in [("train", &train_idx), ("test", &test_idx)] {
        for &i in idx.iter() {
            records.push(PreppedSentence {
                corpus_id: aligned[i].corpus_id.clone(),
                sentence_id: aligned[i].sentence_id.clone(),
                split: split_name.to_string(),
                tokens: aligned[i].tokens.clone(),
            });
        }
    }
    save_prepped(out, &records)?;
    Ok((train_idx.len(), test_idx.len()))
}

/// `pretrain-fp`: trains the frozen predictor on prepped records and saves
/// its checkpoint (plus vocabulary sidecar). Returns held-out (L1, MSE).
#[allow(clippy::too_many_arguments)]
pub fn pretrain_fp(
    data: &Path,
    emb_dim: usize,
    hidden: usize,
    epochs: usize,
    lr: f64,
    seed: u64,
    embeddings: Option<&Path>,
    out: &Path,
) -> Result<(f64, f64)> {
    let records = load_prepped(data)?;
    let to_sentences = |split: &str| -> Vec<fgrnn::fixation::FpSentence> {
        records
            .iter()
            .filter(|r| r.split == split)
            .map(|r| fgrnn::fixation::FpSentence {
                tokens: r.tokens.iter().map(|t| t.token.clone()).collect(),
                bins: r
                    .tokens
                    .iter()
                    .map(|t| t.bin.map(|b| b as f64).unwrap_or(1.0))
                    .collect(),
            })
            .collect()
    };
    let train = to_sentences("train");
    let test = to_sentences("test");
    if train.is_empty() {
        bail!("{}: no train-split records", data.display());
    }
    let hyper = FixedFpHyper {
        emb_dim,
        hidden,
        epochs,
        lr,
        seed,
        grad_clip: 5.0,
    };
    let (mut model, metrics) = pretrain_fixed_fp::<P>(&train, &test, &hyper)?;
    if let Some(path) = embeddings {
        fgrnn::tasks::heads::apply_pretrained_embeddings(
            path,
            &model.vocab,
            &mut model.store,
            "fp.embed.weight",
        )?;
    }
    model.save(out)?;
    Ok((metrics.l1, metrics.mse))
}

/// `eval`: re-evaluates a checkpoint on the test split and optionally dumps
/// fixation heatmap documents for qualitative inspection.
pub fn eval_checkpoint(
    config_path: &Path,
    checkpoint: &Path,
    fixations_out: Option<&Path>,
    fixations_count: usize,
) -> Result<(String, f64)> {
    let (cfg, _raw) = parse_config(config_path)?;
    let (store, _header) = fgrnn::checkpoint::load::<P>(checkpoint)?;
    let eyetrack = match &cfg.eyetrack_corpus {
        Some(p) => Some(load_eyetrack_derived(p)?),
        None if needs_eyetrack(&cfg) => bail!("config needs eyetrack_corpus"),
        None => None,
    };
    let fixed_fp = match (&cfg.fp_model, cfg.gate_source == GateSource::FixedFp) {
        (Some(path), true) => Some(FixedFpModel::<P>::load(path)?),
        _ => None,
    };

    match cfg.task {
        Task::Lm => {
            let sentences = load_text_corpus(&cfg.train_corpus)?;
            let inputs = LmInputs {
                sentences: &sentences,
                fixation_sentences: eyetrack.as_ref().map(|e| e.fixation_sentences.clone()),
                freq_table: eyetrack.as_ref().map(|e| e.freq_table.clone()),
                fixed_fp: fixed_fp.as_ref(),
            };
            let mut session = LmSession::<P>::new(&cfg, inputs)?;
            let test_stream = session.test_stream.clone();
            let (_, ppl) = session.eval_stream_with(&test_stream, Some(&store))?;
            if let Some(out) = fixations_out {
                let docs = lm_fixation_docs(&mut session, &store, &sentences, fixations_count)?;
                crate::heatmap::save_docs(out, &docs)?;
            }
            Ok(("ppl".into(), ppl))
        }
        Task::Sentiment => {
            let examples = load_sentiment_corpus(&cfg.train_corpus)?;
            let inputs = SentimentInputs {
                examples: &examples,
                fixed_fp: fixed_fp.as_ref(),
                freq_table: eyetrack.as_ref().map(|e| e.freq_table.clone()),
            };
            let mut session = SentimentSession::<P>::new(&cfg, inputs)?;
            let acc = session.evaluate(Some(&store))?;
            if let Some(out) = fixations_out {
                let docs = sentiment_fixation_docs(&mut session, &store, fixations_count)?;
                crate::heatmap::save_docs(out, &docs)?;
            }
            Ok(("accuracy".into(), acc))
        }
    }
}

fn lm_fixation_docs(
    session: &mut LmSession<P>,
    store: &fgrnn::ParamStore<P>,
    sentences: &[Vec<String>],
    count: usize,
) -> Result<Vec<HeatmapDoc>> {
    let mut docs = Vec::new();
    for sentence in sentences.iter().take(count) {
        let ids: Vec<usize> = sentence.iter().map(|t| session.vocab.lookup(t)).collect();
        let track = match session.model_fixations(store, &ids) {
            Ok(values) => Track {
                name: "model".into(),
                values,
                rescale: Rescale::Raw,
            },
            Err(_) => continue, // non-adaptive assemblies have no model track
        };
        docs.push(HeatmapDoc {
            tokens: sentence.clone(),
            tracks: vec![track],
            caption: String::new(),
        });
    }
    if docs.is_empty() {
        bail!("no fixation tracks available (model has no adaptive predictor)");
    }
    Ok(docs)
}

fn sentiment_fixation_docs(
    session: &mut SentimentSession<P>,
    store: &fgrnn::ParamStore<P>,
    count: usize,
) -> Result<Vec<HeatmapDoc>> {
    let mut docs = Vec::new();
    let examples = session.test.clone();
    for example in examples.iter().take(count) {
        let tokens: Vec<String> = example
            .ids
            .iter()
            .map(|&id| session.vocab.token(id).to_string())
            .collect();
        let mut tracks = Vec::new();
        if let Ok(values) = session.model_fixations(store, &example.ids) {
            tracks.push(Track {
                name: "model".into(),
                values,
                rescale: Rescale::Raw,
            });
        }
        if let Some(gates) = &example.gates {
            tracks.push(Track {
                name: "human".into(),
                values: gates.iter().map(|&g| g as f64).collect(),
                rescale: Rescale::Rank,
            });
        } else if let Some(targets) = &example.targets {
            tracks.push(Track {
                name: "human".into(),
                values: targets.iter().map(|t| t.mean).collect(),
                rescale: Rescale::Rank,
            });
        }
        if tracks.is_empty() {
            continue;
        }
        docs.push(HeatmapDoc {
            tokens,
            tracks,
            caption: format!("label {}", example.label),
        });
    }
    if docs.is_empty() {
        bail!("no fixation tracks available for this configuration");
    }
    Ok(docs)
}
