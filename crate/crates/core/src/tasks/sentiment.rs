//! Sentiment-classification harness.
//!
//! Sentences are independent, so recurrent state never carries between
//! them, and batches group sentences of equal (aligned) length. The corpus
//! optionally ships real per-subject fixations, which can drive hard gates
//! directly ("true fixation" runs) or serve as the regression targets of a
//! multi-task run.

use crate::data::{
    aggregate_subjects, align_tokens, quantile_discretize, split_train_test, FixSentence,
    NormScope, RawFixationCorpus, RawSentence, SentimentExample, SplitSpec, Vocab,
};
use crate::error::{Error, Result};
use crate::fixation::{
    joint_loss_node, normalize_durations_node, standardize_targets, variance_weighted_mse_node,
    AdaptiveFp, FixationTarget, FixedFpModel,
};
use crate::gated::{ModelSpec, SeqModel, StepGate, VanillaStack};
use crate::graph::{Graph, Var};
use crate::optim::{clip_global_norm, Adam};
use crate::params::ParamStore;
use crate::rng::{RngPool, Stream};
use crate::schedule::GateSchedule;
use crate::tasks::config::{GateSource, TrainConfig};
use crate::tasks::fixations::artificial_fixations;
use crate::tasks::heads::{accuracy, apply_pretrained_embeddings, SentimentHead};
use crate::tasks::metrics::{EpochMetrics, EpochTimed};
use crate::tensor::Real;
use rand::seq::SliceRandom;
use std::collections::HashMap;
use std::time::Instant;

/// One example after tokenization alignment and gate construction.
#[derive(Clone, Debug)]
pub struct PreparedExample {
    pub ids: Vec<usize>,
    pub label: u8,
    pub gates: Option<Vec<usize>>,
    pub targets: Option<Vec<FixationTarget>>,
}

pub struct SentimentInputs<'a, T: Real> {
    pub examples: &'a [SentimentExample],
    pub fixed_fp: Option<&'a FixedFpModel<T>>,
    pub freq_table: Option<HashMap<String, u64>>,
}

pub struct SentimentTrainOutcome<T: Real> {
    pub history: Vec<EpochMetrics>,
    pub best_store: ParamStore<T>,
    pub best_epoch: usize,
    /// Highest test accuracy over the epochs (the reporting convention for
    /// this task).
    pub best_acc: f64,
    pub diverged: bool,
}

pub struct SentimentSession<T: Real> {
    pub cfg: TrainConfig,
    pub vocab: Vocab,
    pub spec: ModelSpec,
    pub store: ParamStore<T>,
    pub train: Vec<PreparedExample>,
    pub test: Vec<PreparedExample>,
    pub param_count: usize,
    pub fp_param_count: usize,
    trunk: Box<dyn SeqModel<T>>,
    adaptive: Option<AdaptiveFp<T>>,
    fix_trunk: Option<VanillaStack<T>>,
    head: SentimentHead,
    pool: RngPool,
}

/// Tokenizes every example and, when fixations are present, aggregates and
/// aligns them the same way the eye-tracking pipeline does.
fn align_examples(
    examples: &[SentimentExample],
    need_fixations: bool,
    k: usize,
) -> Result<Vec<(Vec<String>, u8, Option<FixSentence>)>> {
    let with_fixations = need_fixations
        && examples.iter().all(|e| e.trt_ms.is_some());
    if need_fixations && !with_fixations {
        return Err(Error::config(
            "human gates / multi_task need trt_ms on every sentiment example",
        ));
    }
    if with_fixations {
        // Treat the whole corpus as one recording corpus so durations are
        // normalized by a common mean before subject averaging.
        let raw = RawFixationCorpus {
            corpus_id: "task".into(),
            sentences: examples
                .iter()
                .map(|e| RawSentence {
                    sentence_id: e.sentence_id.clone(),
                    words: e.words.clone(),
                    trt_ms: e.trt_ms.clone().expect("checked above"),
                })
                .collect(),
        };
        let word_level = aggregate_subjects(&raw, NormScope::Corpus)?;
        let mut aligned: Vec<FixSentence> = word_level
            .iter()
            .map(align_tokens)
            .collect::<Result<_>>()?;
        quantile_discretize(&mut aligned, k)?;
        Ok(examples
            .iter()
            .zip(aligned)
            .map(|(e, fx)| {
                let tokens = fx.tokens.iter().map(|t| t.token.clone()).collect();
                (tokens, e.label, Some(fx))
            })
            .collect())
    } else {
        Ok(examples
            .iter()
            .map(|e| {
                let tokens = e
                    .words
                    .iter()
                    .flat_map(|w| crate::data::word_tokenize(w))
                    .collect();
                (tokens, e.label, None)
            })
            .collect())
    }
}

impl<T: Real> SentimentSession<T> {
    pub fn new(cfg: &TrainConfig, inputs: SentimentInputs<'_, T>) -> Result<Self> {
        let spec = cfg.model_spec()?;
        let pool = RngPool::new(cfg.seed);
        let need_fixations = cfg.gate_source == GateSource::Human || cfg.multi_task;
        let aligned = align_examples(inputs.examples, need_fixations, spec.max_gate())?;

        // Gate schedules are sampled once over the full corpus so token
        // types keep one identity across train and test.
        let mut schedules: Vec<Option<Vec<usize>>> = vec![None; aligned.len()];
        match cfg.gate_source {
            GateSource::None | GateSource::Adaptive => {}
            GateSource::Human => {
                for (i, (_, _, fx)) in aligned.iter().enumerate() {
                    let fx = fx.as_ref().expect("fixations required above");
                    schedules[i] = Some(
                        fx.tokens
                            .iter()
                            .map(|t| t.bin.expect("discretized"))
                            .collect(),
                    );
                }
            }
            GateSource::FixedFp => {
                let fp = inputs
                    .fixed_fp
                    .ok_or_else(|| Error::config("gate_source fixed_fp needs a loaded predictor"))?;
                for (i, (tokens, _, _)) in aligned.iter().enumerate() {
                    if let GateSchedule::Hard { values, .. } =
                        fp.predict_schedule(tokens, spec.max_gate())?
                    {
                        schedules[i] = Some(values);
                    }
                }
            }
            GateSource::Artificial(kind) => {
                let all_tokens: Vec<String> = aligned
                    .iter()
                    .flat_map(|(tokens, _, _)| tokens.iter().cloned())
                    .collect();
                let schedule = artificial_fixations(
                    kind,
                    &all_tokens,
                    spec.max_gate(),
                    cfg.seed,
                    inputs.freq_table.as_ref(),
                )?;
                if let GateSchedule::Hard { values, .. } = schedule {
                    let mut cursor = 0usize;
                    for (i, (tokens, _, _)) in aligned.iter().enumerate() {
                        schedules[i] = Some(values[cursor..cursor + tokens.len()].to_vec());
                        cursor += tokens.len();
                    }
                }
            }
        }

        // Multi-task targets: token-level statistics standardized over the
        // whole corpus.
        let mut targets: Vec<Option<Vec<FixationTarget>>> = vec![None; aligned.len()];
        if cfg.multi_task {
            let mut all: Vec<Vec<FixationTarget>> = aligned
                .iter()
                .map(|(_, _, fx)| {
                    fx.as_ref()
                        .expect("fixations required above")
                        .tokens
                        .iter()
                        .map(|t| t.target())
                        .collect()
                })
                .collect();
            standardize_targets(&mut all);
            for (slot, t) in targets.iter_mut().zip(all) {
                *slot = Some(t);
            }
        }

        let indexed: Vec<usize> = (0..aligned.len()).collect();
        let (train_idx, test_idx) = split_train_test(
            indexed,
            &SplitSpec {
                train_fraction: cfg.train_fraction,
                seed: cfg.seed,
            },
        );
        if train_idx.is_empty() || test_idx.is_empty() {
            return Err(Error::invalid("train_sentiment", "corpus too small to split"));
        }

        let vocab = Vocab::build(
            train_idx
                .iter()
                .flat_map(|&i| aligned[i].0.iter().map(String::as_str)),
            cfg.min_freq,
            &[],
        );

        let prepare = |idx: &[usize]| -> Vec<PreparedExample> {
            idx.iter()
                .map(|&i| PreparedExample {
                    ids: aligned[i].0.iter().map(|t| vocab.lookup(t)).collect(),
                    label: aligned[i].1,
                    gates: schedules[i].clone(),
                    targets: targets[i].clone(),
                })
                .filter(|e| !e.ids.is_empty())
                .collect()
        };
        let train = prepare(&train_idx);
        let test = prepare(&test_idx);

        let mut store = ParamStore::new();
        let mut init = pool.stream("init");
        let trunk: Box<dyn SeqModel<T>> = spec.build("model");
        let head = SentimentHead::new(vocab.size(), cfg.emb_dim, trunk.out_dim());
        head.register(&mut store, &mut init);
        trunk.register(&mut store, &mut init);
        let (adaptive, fix_trunk) = if cfg.gate_source == GateSource::Adaptive {
            let fp = AdaptiveFp::for_host(&spec, "fp");
            fp.register(&mut store, &mut init);
            let fix = cfg.multi_task.then(|| {
                VanillaStack::new(
                    spec.variant.cell_kind(),
                    spec.emb_dim,
                    crate::fixation::adaptive_fp_hidden(&spec),
                    spec.layers,
                    spec.inter_dropout,
                    "fp.trunk",
                )
            });
            (Some(fp), fix)
        } else {
            (None, None)
        };
        if let Some(path) = &cfg.embeddings {
            apply_pretrained_embeddings(path, &vocab, &mut store, crate::tasks::heads::EMBED_NAME)?;
        }

        let param_count = trunk.param_count() + head.param_count();
        let fp_param_count = adaptive.as_ref().map(|a| a.param_count()).unwrap_or(0);

        Ok(SentimentSession {
            cfg: cfg.clone(),
            vocab,
            spec,
            store,
            train,
            test,
            param_count,
            fp_param_count,
            trunk,
            adaptive,
            fix_trunk,
            head,
            pool,
        })
    }

    /// Groups example indices into equal-length chunks of at most the batch
    /// size.
    fn length_buckets(examples: &[PreparedExample], batch: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.sort_by_key(|&i| (examples[i].ids.len(), i));
        let mut chunks = Vec::new();
        let mut current: Vec<usize> = Vec::new();
        for i in order {
            if let Some(&first) = current.first() {
                if examples[first].ids.len() != examples[i].ids.len() || current.len() == batch {
                    chunks.push(std::mem::take(&mut current));
                }
            }
            current.push(i);
        }
        if !current.is_empty() {
            chunks.push(current);
        }
        chunks
    }

    /// Class log-probabilities for one equal-length chunk.
    fn chunk_log_probs(
        &mut self,
        g: &mut Graph<T>,
        rng: &mut Stream,
        examples: &[PreparedExample],
        chunk: &[usize],
    ) -> Result<Var> {
        let batch = chunk.len();
        let len = examples[chunk[0]].ids.len();
        self.trunk.reset_state();
        self.trunk.begin(g, &self.store, batch)?;
        let soft = if let Some(fp) = &mut self.adaptive {
            fp.reset_state();
            fp.begin(g, &self.store, batch)?;
            let mut dhats = Vec::with_capacity(len);
            for t in 0..len {
                let tokens: Vec<usize> = chunk.iter().map(|&i| examples[i].ids[t]).collect();
                let x = self.head.embed(g, &self.store, &tokens)?;
                let x = g.dropout(x, self.cfg.dropout_embed, rng)?;
                dhats.push(fp.step_duration(g, &self.store, rng, x)?);
            }
            let all = g.concat(&dhats, 0)?;
            let normalized = normalize_durations_node(g, all, self.spec.max_gate())?;
            Some(
                (0..len)
                    .map(|t| g.slice(normalized, 0, t * batch, batch))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };

        let mut out = None;
        for t in 0..len {
            let tokens: Vec<usize> = chunk.iter().map(|&i| examples[i].ids[t]).collect();
            let x = self.head.embed(g, &self.store, &tokens)?;
            let x = g.dropout(x, self.cfg.dropout_embed, rng)?;
            let gate_values: Option<Vec<usize>> = examples[chunk[0]].gates.as_ref().map(|_| {
                chunk
                    .iter()
                    .map(|&i| examples[i].gates.as_ref().expect("uniform gating")[t])
                    .collect()
            });
            let gate = match (&soft, &gate_values) {
                (Some(vars), _) => StepGate::Soft(vars[t]),
                (None, Some(hard)) => StepGate::Hard(hard),
                (None, None) => StepGate::Full,
            };
            out = Some(self.trunk.step(g, rng, x, gate)?);
        }
        let out = out.expect("nonempty sentence");
        let out = g.dropout(out, self.cfg.dropout_other, rng)?;
        let logits = self.head.logits(g, &self.store, out)?;
        Ok(g.log_softmax(logits))
    }

    fn fixation_loss(
        &mut self,
        g: &mut Graph<T>,
        rng: &mut Stream,
        example: &PreparedExample,
    ) -> Result<Var> {
        let targets = example.targets.as_ref().expect("multi-task example");
        let fix_trunk = self.fix_trunk.as_mut().expect("multi-task trunk");
        let head = &self.adaptive.as_ref().expect("adaptive head").head;
        fix_trunk.reset_state();
        fix_trunk.begin(g, &self.store, 1)?;
        let table = g.param(&self.store, crate::tasks::heads::EMBED_NAME)?;
        let mut preds = Vec::with_capacity(example.ids.len());
        for &id in &example.ids {
            let x = g.embedding(table, &[id])?;
            let x = g.dropout(x, self.cfg.dropout_embed, rng)?;
            let features = fix_trunk.step(g, rng, x, StepGate::Full)?;
            preds.push(head.predict(g, &self.store, features)?);
        }
        let pred_vec = g.concat(&preds, 0)?;
        variance_weighted_mse_node(g, pred_vec, targets, self.cfg.epsilon)
    }

    pub fn train(
        &mut self,
        mut on_epoch: impl FnMut(&EpochTimed),
    ) -> Result<SentimentTrainOutcome<T>> {
        let mut adam = Adam::new(self.cfg.lr);
        let mut best_store = self.store.clone();
        let mut best_epoch = 0usize;
        let mut best_acc = f64::NEG_INFINITY;
        let mut history = Vec::new();
        let mut fix_cursor = 0usize;
        let mut diverged = false;
        let mut shuffle_rng = self.pool.stream("batching");

        'epochs: for epoch in 1..=self.cfg.epochs {
            let started = Instant::now();
            let mut chunks = Self::length_buckets(&self.train, self.cfg.batch_size);
            chunks.shuffle(&mut shuffle_rng);
            let mut drop_rng = self.pool.stream(&format!("dropout-e{epoch}"));

            let mut loss_sum = 0.0;
            let mut loss_batches = 0usize;
            let mut fix_sum = 0.0;
            let mut fix_batches = 0usize;

            let train_examples = self.train.clone();
            for chunk in &chunks {
                let mut g = Graph::training();
                let logp = self.chunk_log_probs(&mut g, &mut drop_rng, &train_examples, chunk)?;
                let labels: Vec<usize> = chunk
                    .iter()
                    .map(|&i| train_examples[i].label as usize)
                    .collect();
                let picked = g.pick(logp, &labels)?;
                let mean_lp = g.mean(picked);
                let task_loss = g.affine_const(mean_lp, T::of(-1.0), T::zero());

                let total = if self.cfg.multi_task {
                    let example = &train_examples[fix_cursor % train_examples.len()];
                    fix_cursor += 1;
                    let fix = self.fixation_loss(&mut g, &mut drop_rng, example)?;
                    fix_sum += g.scalar_value(fix).as_f64();
                    fix_batches += 1;
                    joint_loss_node(&mut g, task_loss, fix, self.cfg.lambda)?
                } else {
                    task_loss
                };

                let loss_value = g.scalar_value(task_loss).as_f64();
                if !loss_value.is_finite() {
                    diverged = true;
                    break 'epochs;
                }
                loss_sum += loss_value;
                loss_batches += 1;

                let mut grads = g.backward(total)?;
                clip_global_norm(&mut grads, self.cfg.grad_clip);
                adam.step(&mut self.store, &grads)?;
            }

            let test_acc = self.evaluate(None)?;
            if test_acc > best_acc {
                best_acc = test_acc;
                best_epoch = epoch;
                best_store = self.store.clone();
            }
            let metrics = EpochMetrics {
                epoch,
                train_loss: loss_sum / loss_batches.max(1) as f64,
                valid_nll: None,
                valid_ppl: None,
                test_acc: Some(test_acc),
                fix_loss: (fix_batches > 0).then(|| fix_sum / fix_batches as f64),
                param_count: self.param_count,
                fp_param_count: self.fp_param_count,
                seed: self.cfg.seed,
            };
            on_epoch(&EpochTimed {
                metrics: metrics.clone(),
                wall_s: started.elapsed().as_secs_f64(),
            });
            history.push(metrics);
        }

        Ok(SentimentTrainOutcome {
            history,
            best_store,
            best_epoch,
            best_acc,
            diverged,
        })
    }

    /// Test-set accuracy with the current parameters (or a checkpoint).
    pub fn evaluate(&mut self, store_override: Option<&ParamStore<T>>) -> Result<f64> {
        match store_override {
            None => self.evaluate_inner(),
            Some(other) => {
                let saved = std::mem::replace(&mut self.store, other.clone());
                let result = self.evaluate_inner();
                self.store = saved;
                result
            }
        }
    }

    fn evaluate_inner(&mut self) -> Result<f64> {
        let mut rng = self.pool.stream("eval");
        let test = self.test.clone();
        let chunks = Self::length_buckets(&test, self.cfg.batch_size);
        let mut predictions = Vec::with_capacity(test.len());
        let mut labels = Vec::with_capacity(test.len());
        for chunk in chunks {
            let mut g = Graph::eval();
            let logp = self.chunk_log_probs(&mut g, &mut rng, &test, &chunk)?;
            let rows = g.value(logp);
            for (row_idx, &i) in chunk.iter().enumerate() {
                let p0 = rows.at(row_idx, 0);
                let p1 = rows.at(row_idx, 1);
                predictions.push(if p1 > p0 { 1u8 } else { 0u8 });
                labels.push(test[i].label);
            }
        }
        accuracy(&predictions, &labels)
    }

    /// Normalized durations the adaptive predictor assigns to one token
    /// sequence (the "model fixations" track for heatmaps).
    pub fn model_fixations(
        &mut self,
        store: &ParamStore<T>,
        tokens: &[usize],
    ) -> Result<Vec<f64>> {
        if self.adaptive.is_none() {
            return Err(Error::invalid(
                "model_fixations",
                "only adaptive assemblies produce model fixations",
            ));
        }
        let saved = std::mem::replace(&mut self.store, store.clone());
        let result = (|| {
            let mut rng = self.pool.stream("eval");
            let mut g = Graph::eval();
            let fp = self.adaptive.as_mut().expect("checked above");
            fp.reset_state();
            fp.begin(&mut g, &self.store, 1)?;
            let mut dhats = Vec::with_capacity(tokens.len());
            for &id in tokens {
                let x = self.head.embed(&mut g, &self.store, &[id])?;
                dhats.push(fp.step_duration(&mut g, &self.store, &mut rng, x)?);
            }
            let all = g.concat(&dhats, 0)?;
            let normalized = normalize_durations_node(&mut g, all, self.spec.max_gate())?;
            Ok(g.value(normalized)
                .data()
                .iter()
                .map(|v| v.as_f64())
                .collect())
        })();
        self.store = saved;
        result
    }

    /// Class probabilities for one tokenized sentence (test surface).
    pub fn probabilities(
        &mut self,
        tokens: &[usize],
        gates: Option<&[usize]>,
    ) -> Result<Vec<f64>> {
        let example = PreparedExample {
            ids: tokens.to_vec(),
            label: 0,
            gates: gates.map(|g| g.to_vec()),
            targets: None,
        };
        let mut rng = self.pool.stream("eval");
        let mut g = Graph::eval();
        let logp = self.chunk_log_probs(&mut g, &mut rng, &[example], &[0])?;
        let probs = g.softmax(logp);
        Ok(g.value(probs).data().iter().map(|v| v.as_f64()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_sentiment_corpus, SynthSentimentSpec};
    use crate::gated::Variant;
    use crate::tasks::budget::Task;
    use crate::tasks::config::StatsScope;

    fn tiny_cfg(variant: Variant, gate_source: GateSource) -> TrainConfig {
        TrainConfig {
            task: Task::Sentiment,
            variant,
            k_components: 3,
            n_layers: 1,
            hidden_dim: Some(12),
            param_budget: None,
            gate_source,
            multi_task: false,
            lambda: 0.001,
            steepness: 4.0,
            epsilon: 0.1,
            lr: 0.002,
            batch_size: 16,
            epochs: 4,
            seed: 5,
            dropout_embed: 0.1,
            dropout_other: 0.1,
            emb_dim: 12,
            mean_seq_len: 100,
            grad_clip: 5.0,
            min_freq: 1,
            train_fraction: 0.8,
            proj_dim: None,
            stats_scope: StatsScope::Batch,
            train_corpus: "unused".into(),
            eyetrack_corpus: None,
            fp_model: None,
            embeddings: None,
        }
    }

    fn corpus() -> Vec<SentimentExample> {
        synth_sentiment_corpus(&SynthSentimentSpec {
            examples: 160,
            ..Default::default()
        })
    }

    #[test]
    fn probabilities_sum_to_one() {
        let cfg = tiny_cfg(Variant::Lstm, GateSource::None);
        let examples = corpus();
        let mut session = SentimentSession::<f64>::new(
            &cfg,
            SentimentInputs {
                examples: &examples,
                fixed_fp: None,
                freq_table: None,
            },
        )
        .unwrap();
        let probs = session.probabilities(&[1, 2, 3], None).unwrap();
        assert_eq!(probs.len(), 2);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn human_gates_come_from_discretized_fixations() {
        let cfg = tiny_cfg(Variant::FgpLstm, GateSource::Human);
        let examples = corpus();
        let session = SentimentSession::<f64>::new(
            &cfg,
            SentimentInputs {
                examples: &examples,
                fixed_fp: None,
                freq_table: None,
            },
        )
        .unwrap();
        for e in session.train.iter().chain(&session.test) {
            let gates = e.gates.as_ref().expect("human schedule");
            assert_eq!(gates.len(), e.ids.len());
            assert!(gates.iter().all(|&g| (1..=3).contains(&g)));
        }
        // Cue words dwell longer, so their bins should skew high.
        let mut cue_sum = 0.0;
        let mut cue_n = 0.0;
        let mut other_sum = 0.0;
        let mut other_n = 0.0;
        for e in &session.train {
            for (&id, &gate) in e.ids.iter().zip(e.gates.as_ref().unwrap()) {
                let token = session.vocab.token(id);
                if token.starts_with("good") || token.starts_with("bad") {
                    cue_sum += gate as f64;
                    cue_n += 1.0;
                } else {
                    other_sum += gate as f64;
                    other_n += 1.0;
                }
            }
        }
        assert!(cue_sum / cue_n > other_sum / other_n + 0.5);
    }

    #[test]
    fn learns_planted_cues_above_chance() {
        let mut cfg = tiny_cfg(Variant::Lstm, GateSource::None);
        cfg.epochs = 15;
        cfg.batch_size = 8;
        cfg.lr = 0.003;
        cfg.hidden_dim = Some(16);
        cfg.dropout_embed = 0.0;
        cfg.dropout_other = 0.0;
        let examples = corpus();
        let mut session = SentimentSession::<f64>::new(
            &cfg,
            SentimentInputs {
                examples: &examples,
                fixed_fp: None,
                freq_table: None,
            },
        )
        .unwrap();
        let outcome = session.train(|_| {}).unwrap();
        assert!(!outcome.diverged);
        assert!(
            outcome.best_acc > 0.75,
            "planted-cue corpus should be learnable, got {}",
            outcome.best_acc
        );
    }

    #[test]
    fn mislabeled_test_labels_are_rejected() {
        assert!(accuracy(&[0, 1], &[0, 2]).is_err());
    }
}
