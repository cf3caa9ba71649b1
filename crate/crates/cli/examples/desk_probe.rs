//! Probe for the desk-scale experiment: trains one cell and prints the
//! per-epoch curve. Usage:
//!   desk_probe <variant> <gate_source> <seed> [epochs] [hidden]

use fgrnn::data::{synth_lm_corpus, SynthLmSpec};
use fgrnn::gated::Variant;
use fgrnn::tasks::budget::Task;
use fgrnn::tasks::config::{GateSource, StatsScope, TrainConfig};
use fgrnn::tasks::lm::{LmInputs, LmSession};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let variant = Variant::parse(&args[1]).unwrap();
    let gate_source = GateSource::parse(&args[2]).unwrap();
    let seed: u64 = args[3].parse().unwrap();
    let epochs: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(10);
    let hidden: usize = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(64);

    let corpus = synth_lm_corpus(&SynthLmSpec {
        vocab_size: 500,
        total_tokens: 100_000,
        topics: 4,
        successors: 8,
        sentence_len: 12..26,
        seed: 12345,
    });

    let cfg = TrainConfig {
        task: Task::Lm,
        variant,
        k_components: 4,
        n_layers: 1,
        hidden_dim: Some(hidden),
        param_budget: None,
        gate_source,
        multi_task: false,
        lambda: 0.3,
        steepness: 4.0,
        epsilon: 0.1,
        lr: 0.001,
        batch_size: 64,
        epochs,
        seed,
        dropout_embed: 0.5,
        dropout_other: 0.25,
        emb_dim: 32,
        mean_seq_len: 100,
        grad_clip: 5.0,
        min_freq: 2,
        train_fraction: 0.75,
        proj_dim: None,
        stats_scope: StatsScope::Batch,
        train_corpus: "mem".into(),
        eyetrack_corpus: None,
        fp_model: None,
        embeddings: None,
    };
    let inputs = LmInputs {
        sentences: &corpus,
        fixation_sentences: None,
        freq_table: None,
        fixed_fp: None,
    };
    let mut session = LmSession::<f32>::new(&cfg, inputs).unwrap();
    println!(
        "variant={} gate={} seed={seed} hidden={hidden} params={} vocab={}",
        variant.name(),
        gate_source.name(),
        session.param_count,
        session.vocab.size()
    );
    let outcome = session
        .train(|e| {
            println!(
                "epoch {:>2} train_loss {:.4} valid_ppl {:.2} ({:.1}s)",
                e.metrics.epoch,
                e.metrics.train_loss,
                e.metrics.valid_ppl.unwrap_or(f64::NAN),
                e.wall_s
            );
        })
        .unwrap();
    let test_stream = session.test_stream.clone();
    let (_, ppl) = session
        .eval_stream_with(&test_stream, Some(&outcome.best_store))
        .unwrap();
    println!("diverged={} best_epoch={} test_ppl={ppl:.2}", outcome.diverged, outcome.best_epoch);
}
