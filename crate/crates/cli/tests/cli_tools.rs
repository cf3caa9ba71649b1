//! End-to-end checks of the experiment tooling on miniature corpora:
//! preprocessing, predictor pretraining, training runs, determinism of
//! metrics files, heatmap golden files, matrix expansion, comparisons.

use fgrnn::data::{
    save_sentiment_corpus, save_text_corpus, synth_fixation_corpus, synth_lm_corpus,
    synth_sentiment_corpus, SynthFixationSpec, SynthLmSpec, SynthSentimentSpec,
};
use fgrnn_cli::heatmap::{render, Format, HeatmapDoc, Rescale, Track};
use fgrnn_cli::{experiment, report};
use std::path::{Path, PathBuf};
use std::process::Command;

fn fixture_doc() -> HeatmapDoc {
    HeatmapDoc {
        tokens: [
            "the",
            "model",
            "fixates",
            "strongly",
            "on",
            "informative",
            "tokens",
            ".",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect(),
        tracks: vec![
            Track {
                name: "human".into(),
                values: vec![0.8, 1.4, 2.9, 3.6, 0.5, 4.8, 1.9, 1.0],
                rescale: Rescale::Rank,
            },
            Track {
                name: "model".into(),
                values: vec![1.1, 1.7, 2.4, 3.1, 0.9, 3.9, 2.2, 0.2],
                rescale: Rescale::Raw,
            },
        ],
        caption: "side-by-side fixation tracks".into(),
    }
}

#[test]
fn heatmap_matches_golden_files_byte_for_byte() {
    let doc = fixture_doc();
    let html = render(&doc, Format::Html).unwrap();
    let golden_html = std::fs::read_to_string(
        Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/heatmap.html"),
    )
    .unwrap();
    assert_eq!(html, golden_html, "HTML render drifted from the golden file");

    let ansi = render(&doc, Format::Ansi).unwrap();
    let golden_ansi = std::fs::read_to_string(
        Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/heatmap.ansi"),
    )
    .unwrap();
    assert_eq!(ansi, golden_ansi, "ANSI render drifted from the golden file");
}

fn write_lm_corpus(dir: &Path) -> PathBuf {
    let corpus = synth_lm_corpus(&SynthLmSpec {
        vocab_size: 40,
        total_tokens: 2_500,
        topics: 1,
        successors: 4,
        sentence_len: 8..14,
        seed: 7,
    });
    let path = dir.join("lm.txt");
    save_text_corpus(&path, &corpus).unwrap();
    path
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

#[test]
fn run_experiment_writes_deterministic_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_lm_corpus(dir.path());
    let config = write_config(
        dir.path(),
        "run.cfg",
        &format!(
            "task = lm\nvariant = fgp_lstm\nk_components = 2\nhidden_dim = 8\nemb_dim = 8\n\
             gate_source = full\nepochs = 2\nbatch_size = 4\nmean_seq_len = 20\nmin_freq = 1\n\
             seed = 3\ntrain_corpus = {}\n",
            corpus.display()
        ),
    );

    let out_a = dir.path().join("a");
    let result = experiment::run_experiment(&config, &out_a, true).unwrap();
    assert!(!result.summary.diverged);
    assert!(result.summary.final_metric.is_finite());
    assert_eq!(result.summary.epochs_run, 2);
    assert!(out_a.join("metrics.jsonl").exists());
    assert!(out_a.join("checkpoint.bin").exists());
    assert!(out_a.join("summary.json").exists());
    let metrics_text = std::fs::read_to_string(out_a.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics_text.lines().count(), 2, "one record per epoch");

    // Same config + seed: byte-identical metrics and identical summary.
    let out_b = dir.path().join("b");
    let again = experiment::run_experiment(&config, &out_b, true).unwrap();
    let metrics_a = std::fs::read(out_a.join("metrics.jsonl")).unwrap();
    let metrics_b = std::fs::read(out_b.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics_a, metrics_b, "metrics files must be deterministic");
    assert_eq!(result.summary.final_metric, again.summary.final_metric);
    assert_eq!(result.summary.run_id, again.summary.run_id);
    let ckpt_a = std::fs::read(out_a.join("checkpoint.bin")).unwrap();
    let ckpt_b = std::fs::read(out_b.join("checkpoint.bin")).unwrap();
    assert_eq!(ckpt_a, ckpt_b, "checkpoints must be deterministic");
}

#[test]
fn invalid_config_key_fails_with_key_name() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "bad.cfg", "task = lm\nwarp_speed = 9\n");
    let err = experiment::run_experiment(&config, &dir.path().join("out"), true).unwrap_err();
    assert!(format!("{err:#}").contains("warp_speed"));
}

#[test]
fn prep_then_pretrain_then_fixed_fp_gates() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth_fixation_corpus(&SynthFixationSpec {
        vocab_size: 24,
        sentences: 120,
        sentence_len: 8,
        subjects: 2,
        noise_ms: 5.0,
        classes: 3,
        seed: 2,
    });
    let corpus_path = dir.path().join("eyetrack.jsonl");
    fgrnn::data::save_corpora(&corpus_path, &[corpus]).unwrap();

    let prep_path = dir.path().join("prep.jsonl");
    let (n_train, n_test) = experiment::prep(&corpus_path, 3, 0.75, 0, false, &prep_path).unwrap();
    assert_eq!(n_train, 90);
    assert_eq!(n_test, 30);

    let fp_path = dir.path().join("fp.bin");
    let (l1, mse) =
        experiment::pretrain_fp(&prep_path, 12, 16, 8, 0.002, 0, None, &fp_path).unwrap();
    assert!(l1.is_finite() && mse.is_finite());
    assert!(fp_path.exists());
    assert!(fgrnn::fixation::vocab_sidecar(&fp_path).exists());

    // Use the pretrained predictor as a hard gate source for a RNN run.
    let lm_corpus = write_lm_corpus(dir.path());
    let config = write_config(
        dir.path(),
        "fixed.cfg",
        &format!(
            "task = lm\nvariant = fgp_rnn\nk_components = 3\nhidden_dim = 8\nemb_dim = 8\n\
             gate_source = fixed_fp\nfp_model = {}\nepochs = 1\nbatch_size = 4\n\
             mean_seq_len = 20\nmin_freq = 1\nseed = 0\ntrain_corpus = {}\n",
            fp_path.display(),
            lm_corpus.display()
        ),
    );
    let fp_bytes_before = std::fs::read(&fp_path).unwrap();
    let result = experiment::run_experiment(&config, &dir.path().join("fixed_run"), true).unwrap();
    assert!(result.summary.final_metric.is_finite());
    // The frozen predictor never changes during a downstream run.
    assert_eq!(fp_bytes_before, std::fs::read(&fp_path).unwrap());
}

#[test]
fn sentiment_run_with_true_fixations_and_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let examples = synth_sentiment_corpus(&SynthSentimentSpec {
        examples: 80,
        ..Default::default()
    });
    let corpus_path = dir.path().join("sa.jsonl");
    save_sentiment_corpus(&corpus_path, &examples).unwrap();
    let config = write_config(
        dir.path(),
        "sa.cfg",
        &format!(
            "task = sentiment\nvariant = fgp_lstm\nk_components = 3\nhidden_dim = 8\nemb_dim = 8\n\
             gate_source = human\nepochs = 2\nbatch_size = 8\nmin_freq = 1\nseed = 1\n\
             train_corpus = {}\n",
            corpus_path.display()
        ),
    );
    let out = dir.path().join("run");
    let result = experiment::run_experiment(&config, &out, true).unwrap();
    assert_eq!(result.summary.metric_name, "accuracy");
    assert!((0.0..=1.0).contains(&result.summary.final_metric));

    // Checkpoint re-evaluation reproduces the summary metric.
    let (metric, value) =
        experiment::eval_checkpoint(&config, &out.join("checkpoint.bin"), None, 0).unwrap();
    assert_eq!(metric, "accuracy");
    assert!((value - result.summary.final_metric).abs() < 1e-9);
}

#[test]
fn adaptive_run_emits_fixation_documents() {
    let dir = tempfile::tempdir().unwrap();
    let examples = synth_sentiment_corpus(&SynthSentimentSpec {
        examples: 60,
        ..Default::default()
    });
    let corpus_path = dir.path().join("sa.jsonl");
    save_sentiment_corpus(&corpus_path, &examples).unwrap();
    let config = write_config(
        dir.path(),
        "adapt.cfg",
        &format!(
            "task = sentiment\nvariant = fgp_lstm\nk_components = 3\nhidden_dim = 8\nemb_dim = 8\n\
             gate_source = adaptive\nmulti_task = true\nepochs = 1\nbatch_size = 8\nmin_freq = 1\n\
             seed = 2\ntrain_corpus = {}\n",
            corpus_path.display()
        ),
    );
    let out = dir.path().join("run");
    let result = experiment::run_experiment(&config, &out, true).unwrap();
    assert!(result.summary.fp_param_count > 0);

    let docs_path = dir.path().join("fixations.jsonl");
    experiment::eval_checkpoint(&config, &out.join("checkpoint.bin"), Some(&docs_path), 3)
        .unwrap();
    let docs = fgrnn_cli::heatmap::load_docs(&docs_path).unwrap();
    assert!(!docs.is_empty());
    // Both tracks present: learned model fixations and rank-scaled human.
    let names: Vec<&str> = docs[0].tracks.iter().map(|t| t.name.as_str()).collect();
    assert!(names.contains(&"model") && names.contains(&"human"), "{names:?}");
    render(&docs[0], Format::Html).unwrap();
}

#[test]
fn matrix_command_runs_cells_in_worker_processes() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_lm_corpus(dir.path());
    let template = write_config(
        dir.path(),
        "base.cfg",
        &format!(
            "task = lm\nvariant = fgp_lstm\nk_components = 2\nhidden_dim = 6\nemb_dim = 6\n\
             gate_source = full\nepochs = 1\nbatch_size = 4\nmean_seq_len = 20\nmin_freq = 1\n\
             train_corpus = {}\n",
            corpus.display()
        ),
    );
    let out = dir.path().join("matrix");
    let status = Command::new(env!("CARGO_BIN_EXE_fgrnn"))
        .args(["matrix", "--template"])
        .arg(&template)
        .args(["--vary", "gate_source=full,random", "--seeds", "0,1", "--jobs", "2", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let index: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("matrix.json")).unwrap()).unwrap();
    let cells = index["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 4);
    assert!(index["failed"].as_array().unwrap().is_empty());

    // Each run directory holds a summary; compare over gate_source
    // reproduces the two-row ablation table shape.
    let summaries: Vec<report::RunSummary> = cells
        .iter()
        .map(|c| {
            let id = c["run_id"].as_str().unwrap();
            report::load_summary(&out.join("runs").join(id).join("summary.json")).unwrap()
        })
        .collect();
    let comparison = report::compare_runs(&summaries, &["gate_source".into()]).unwrap();
    assert_eq!(comparison.rows.len(), 2);
    assert!(comparison.rows.iter().all(|r| r.runs == 2));
}

#[test]
fn train_binary_reports_summary_line() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_lm_corpus(dir.path());
    let config = write_config(
        dir.path(),
        "run.cfg",
        &format!(
            "task = lm\nvariant = rnn\nhidden_dim = 6\nemb_dim = 6\nepochs = 1\nbatch_size = 4\n\
             mean_seq_len = 20\nmin_freq = 1\nseed = 0\ntrain_corpus = {}\n",
            corpus.display()
        ),
    );
    let out = dir.path().join("out");
    let output = Command::new(env!("CARGO_BIN_EXE_fgrnn"))
        .args(["train", "--config"])
        .arg(&config)
        .args(["--quiet", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("lm ppl ="), "{stdout}");
}
