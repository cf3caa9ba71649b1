//! Language-modeling harness: stream preparation, gate-schedule wiring,
//! the training loop, and evaluation.

use crate::data::{split_train_test, SplitSpec, Vocab, EOS_TOKEN};
use crate::error::{Error, Result};
use crate::fixation::{
    joint_loss_node, normalize_durations_node, normalize_with_stats_node, variance_weighted_mse_node,
    AdaptiveFp, DurationBatchStats, FixationTarget, FixedFpModel,
};
use crate::gated::{ModelSpec, SeqModel, StepGate, VanillaStack};
use crate::graph::{Graph, Var};
use crate::optim::{clip_global_norm, Adam};
use crate::params::ParamStore;
use crate::rng::{RngPool, Stream};
use crate::schedule::GateSchedule;
use crate::tasks::batching::make_batches;
use crate::tasks::config::{GateSource, StatsScope, TrainConfig};
use crate::tasks::fixations::artificial_fixations;
use crate::tasks::heads::{apply_pretrained_embeddings, perplexity_from_nll, LmHead};
use crate::tasks::metrics::{EpochMetrics, EpochTimed};
use crate::tensor::Real;
use std::collections::HashMap;
use std::time::Instant;

/// Token-id stream with an optional aligned hard gate stream.
#[derive(Clone, Debug)]
pub struct StreamData {
    pub ids: Vec<usize>,
    pub gates: Option<Vec<usize>>,
}

/// External inputs for one LM run (already loaded from disk).
pub struct LmInputs<'a, T: Real> {
    pub sentences: &'a [Vec<String>],
    /// Fixation sentences for the multi-task objective.
    pub fixation_sentences: Option<Vec<(Vec<String>, Vec<FixationTarget>)>>,
    /// Type frequencies for the frequency-ranked schedule.
    pub freq_table: Option<HashMap<String, u64>>,
    /// Frozen predictor for `gate_source = fixed_fp`.
    pub fixed_fp: Option<&'a FixedFpModel<T>>,
}

pub struct LmTrainOutcome<T: Real> {
    pub history: Vec<EpochMetrics>,
    pub best_store: ParamStore<T>,
    pub best_epoch: usize,
    pub diverged: bool,
}

/// A fully assembled LM experiment.
pub struct LmSession<T: Real> {
    pub cfg: TrainConfig,
    pub vocab: Vocab,
    pub spec: ModelSpec,
    pub store: ParamStore<T>,
    pub train_stream: StreamData,
    pub valid_stream: StreamData,
    pub test_stream: StreamData,
    pub param_count: usize,
    pub fp_param_count: usize,
    trunk: Box<dyn SeqModel<T>>,
    adaptive: Option<AdaptiveFp<T>>,
    /// Separate trunk instance over the same parameter names, used for
    /// fixation batches so the language stream's carried state stays
    /// untouched.
    fix_trunk: Option<VanillaStack<T>>,
    head: LmHead,
    fixation_batches: Vec<(Vec<usize>, Vec<FixationTarget>)>,
    running_stats: Option<DurationBatchStats>,
    pool: RngPool,
}

fn sentences_to_tokens(sentences: &[Vec<String>]) -> Vec<String> {
    let mut out = Vec::new();
    for s in sentences {
        out.extend(s.iter().cloned());
        out.push(EOS_TOKEN.to_string());
    }
    out
}

impl<T: Real> LmSession<T> {
    pub fn new(cfg: &TrainConfig, inputs: LmInputs<'_, T>) -> Result<Self> {
        let spec = cfg.model_spec()?;
        let pool = RngPool::new(cfg.seed);

        // Sentence-level splits: train fraction first, the rest halved
        // into validation and test.
        let (train_s, holdout) = split_train_test(
            inputs.sentences.to_vec(),
            &SplitSpec {
                train_fraction: cfg.train_fraction,
                seed: cfg.seed,
            },
        );
        let (valid_s, test_s) = split_train_test(
            holdout,
            &SplitSpec {
                train_fraction: 0.5,
                seed: cfg.seed ^ 0x5eed,
            },
        );
        if train_s.is_empty() || valid_s.is_empty() || test_s.is_empty() {
            return Err(Error::invalid("train_lm", "corpus too small to split"));
        }

        let vocab = Vocab::build(
            train_s.iter().flat_map(|s| s.iter().map(String::as_str)),
            cfg.min_freq,
            &[EOS_TOKEN],
        );

        let build_stream = |sentences: &[Vec<String>]| -> Result<StreamData> {
            let tokens = sentences_to_tokens(sentences);
            let ids: Vec<usize> = tokens.iter().map(|t| vocab.lookup(t)).collect();
            let gates = match cfg.gate_source {
                GateSource::None | GateSource::Adaptive => None,
                GateSource::Artificial(kind) => {
                    let schedule = artificial_fixations(
                        kind,
                        &tokens,
                        cfg.k_components.max(spec.max_gate()),
                        cfg.seed,
                        inputs.freq_table.as_ref(),
                    )?;
                    match schedule {
                        GateSchedule::Hard { values, .. } => Some(values),
                        GateSchedule::Soft { .. } => unreachable!("artificial schedules are hard"),
                    }
                }
                GateSource::FixedFp => {
                    let fp = inputs.fixed_fp.ok_or_else(|| {
                        Error::config("gate_source fixed_fp needs a loaded predictor")
                    })?;
                    let mut gates = Vec::with_capacity(tokens.len());
                    for s in sentences {
                        let schedule = fp.predict_schedule(s, spec.max_gate())?;
                        if let GateSchedule::Hard { values, .. } = schedule {
                            gates.extend(values);
                        }
                        // Sentence boundary: minimal computation, like
                        // punctuation.
                        gates.push(1);
                    }
                    Some(gates)
                }
                GateSource::Human => {
                    return Err(Error::config(
                        "human gates need a corpus with recorded fixations (sentiment task)",
                    ))
                }
            };
            Ok(StreamData { ids, gates })
        };

        let train_stream = build_stream(&train_s)?;
        let valid_stream = build_stream(&valid_s)?;
        let test_stream = build_stream(&test_s)?;

        // Model assembly.
        let mut store = ParamStore::new();
        let mut init = pool.stream("init");
        let trunk: Box<dyn SeqModel<T>> = spec.build("model");
        let head = LmHead::new(vocab.size(), cfg.emb_dim, trunk.out_dim());
        head.register(&mut store, &mut init);
        trunk.register(&mut store, &mut init);
        let (adaptive, fix_trunk) = if cfg.gate_source == GateSource::Adaptive {
            let fp = AdaptiveFp::for_host(&spec, "fp");
            fp.register(&mut store, &mut init);
            let fix_trunk = if cfg.multi_task {
                Some(VanillaStack::new(
                    spec.variant.cell_kind(),
                    spec.emb_dim,
                    crate::fixation::adaptive_fp_hidden(&spec),
                    spec.layers,
                    spec.inter_dropout,
                    "fp.trunk",
                ))
            } else {
                None
            };
            (Some(fp), fix_trunk)
        } else {
            (None, None)
        };
        if let Some(path) = &cfg.embeddings {
            apply_pretrained_embeddings(path, &vocab, &mut store, crate::tasks::heads::EMBED_NAME)?;
        }

        let fixation_batches = match (&inputs.fixation_sentences, cfg.multi_task) {
            (Some(sentences), true) => sentences
                .iter()
                .map(|(tokens, targets)| {
                    let ids = tokens.iter().map(|t| vocab.lookup(t)).collect();
                    (ids, targets.clone())
                })
                .collect(),
            _ => Vec::new(),
        };
        if cfg.multi_task && fixation_batches.is_empty() {
            return Err(Error::config("multi_task run has no fixation sentences"));
        }

        let param_count = trunk.param_count() + head.param_count();
        let fp_param_count = adaptive.as_ref().map(|a| a.param_count()).unwrap_or(0);

        Ok(LmSession {
            cfg: cfg.clone(),
            vocab,
            spec,
            store,
            train_stream,
            valid_stream,
            test_stream,
            param_count,
            fp_param_count,
            trunk,
            adaptive,
            fix_trunk,
            head,
            fixation_batches,
            running_stats: None,
            pool,
        })
    }

    fn step_gate<'a>(
        gates: Option<&'a [Vec<usize>]>,
        soft: Option<&[Var]>,
        t: usize,
    ) -> StepGate<'a> {
        if let Some(soft_vars) = soft {
            StepGate::Soft(soft_vars[t])
        } else if let Some(hard) = gates {
            StepGate::Hard(&hard[t])
        } else {
            StepGate::Full
        }
    }

    /// Adaptive pre-pass: predicted durations for every position of the
    /// segment, normalized over the whole segment batch, sliced per step.
    fn soft_gates_for_segment(
        &mut self,
        g: &mut Graph<T>,
        rng: &mut Stream,
        inputs: &[Vec<usize>],
    ) -> Result<Vec<Var>> {
        let fp = self.adaptive.as_mut().expect("adaptive gate source");
        let batch = inputs[0].len();
        let steps = inputs.len();
        let mut dhats = Vec::with_capacity(steps);
        for step_tokens in inputs {
            let x = self.head.embed(g, &self.store, step_tokens)?;
            let x = g.dropout(x, self.cfg.dropout_embed, rng)?;
            dhats.push(fp.step_duration(g, &self.store, rng, x)?);
        }
        let all = g.concat(&dhats, 0)?;
        let normalized = match self.cfg.stats_scope {
            StatsScope::Batch => normalize_durations_node(g, all, self.spec.max_gate())?,
            StatsScope::Running => {
                let values: Vec<f64> = g.value(all).data().iter().map(|v| v.as_f64()).collect();
                let batch_stats = crate::fixation::batch_stats(&values, self.spec.max_gate());
                let stats = match self.running_stats {
                    None => batch_stats,
                    Some(prev) => DurationBatchStats {
                        mean: 0.9 * prev.mean + 0.1 * batch_stats.mean,
                        std: 0.9 * prev.std + 0.1 * batch_stats.std,
                        components: batch_stats.components,
                    },
                };
                if g.is_training() {
                    self.running_stats = Some(stats);
                }
                normalize_with_stats_node(g, all, &stats)?
            }
        };
        (0..steps)
            .map(|t| g.slice(normalized, 0, t * batch, batch))
            .collect()
    }

    /// One segment forward pass; returns the mean NLL node and the number
    /// of target positions it averages.
    fn run_segment(
        &mut self,
        g: &mut Graph<T>,
        rng: &mut Stream,
        inputs: &[Vec<usize>],
        targets: &[Vec<usize>],
        gates: Option<&[Vec<usize>]>,
    ) -> Result<(Var, usize)> {
        let soft = if self.adaptive.is_some() {
            Some(self.soft_gates_for_segment(g, rng, inputs)?)
        } else {
            None
        };
        let mut picked = Vec::with_capacity(inputs.len());
        for (t, step_tokens) in inputs.iter().enumerate() {
            let x = self.head.embed(g, &self.store, step_tokens)?;
            let x = g.dropout(x, self.cfg.dropout_embed, rng)?;
            let gate = Self::step_gate(gates, soft.as_deref(), t);
            let out = self.trunk.step(g, rng, x, gate)?;
            let out = g.dropout(out, self.cfg.dropout_other, rng)?;
            let logits = self.head.logits(g, &self.store, out)?;
            let logp = g.log_softmax(logits);
            picked.push(g.pick(logp, &targets[t])?);
        }
        let all = g.concat(&picked, 0)?;
        let count = g.value(all).numel();
        let mean_lp = g.mean(all);
        Ok((g.affine_const(mean_lp, T::of(-1.0), T::zero()), count))
    }

    /// Variance-weighted fixation loss over one human-fixation sentence,
    /// run on a fresh predictor state.
    fn fixation_loss(
        &mut self,
        g: &mut Graph<T>,
        rng: &mut Stream,
        batch_index: usize,
    ) -> Result<Var> {
        let (ids, targets) = &self.fixation_batches[batch_index % self.fixation_batches.len()];
        let fix_trunk = self.fix_trunk.as_mut().expect("multi-task trunk");
        let head = &self.adaptive.as_ref().expect("adaptive head").head;
        fix_trunk.reset_state();
        fix_trunk.begin(g, &self.store, 1)?;
        let table = g.param(&self.store, crate::tasks::heads::EMBED_NAME)?;
        let mut preds = Vec::with_capacity(ids.len());
        for &id in ids {
            let x = g.embedding(table, &[id])?;
            let x = g.dropout(x, self.cfg.dropout_embed, rng)?;
            let features = fix_trunk.step(g, rng, x, StepGate::Full)?;
            preds.push(head.predict(g, &self.store, features)?);
        }
        let pred_vec = g.concat(&preds, 0)?;
        variance_weighted_mse_node(g, pred_vec, targets, self.cfg.epsilon)
    }

    /// Full training loop. Checkpoints the best-validation parameters in
    /// memory; on divergence the best state so far is preserved and the
    /// outcome is flagged.
    pub fn train(&mut self, mut on_epoch: impl FnMut(&EpochTimed)) -> Result<LmTrainOutcome<T>> {
        let mut adam = Adam::new(self.cfg.lr);
        let mut best_store = self.store.clone();
        let mut best_epoch = 0usize;
        let mut best_ppl = f64::INFINITY;
        let mut history = Vec::new();
        let mut fix_cursor = 0usize;
        let mut diverged = false;

        'epochs: for epoch in 1..=self.cfg.epochs {
            let started = Instant::now();
            let plan_seed = self
                .cfg
                .seed
                .wrapping_add((epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let plan = make_batches(
                self.train_stream.ids.len(),
                self.cfg.batch_size,
                self.cfg.mean_seq_len,
                plan_seed,
            )?;
            let mut drop_rng = self.pool.stream(&format!("dropout-e{epoch}"));
            self.trunk.reset_state();
            if let Some(fp) = &mut self.adaptive {
                fp.reset_state();
            }

            let mut loss_sum = 0.0;
            let mut loss_batches = 0usize;
            let mut fix_sum = 0.0;
            let mut fix_batches = 0usize;

            for seg in 0..plan.segments.len() {
                let inputs = plan.inputs(&self.train_stream.ids, seg);
                let targets = plan.targets(&self.train_stream.ids, seg);
                let gates = self
                    .train_stream
                    .gates
                    .as_ref()
                    .map(|gs| plan.gather_payload(gs, seg));

                let mut g = Graph::training();
                self.trunk.begin(&mut g, &self.store, self.cfg.batch_size)?;
                if let Some(fp) = &mut self.adaptive {
                    fp.begin(&mut g, &self.store, self.cfg.batch_size)?;
                }
                let (task_loss, _) =
                    self.run_segment(&mut g, &mut drop_rng, &inputs, &targets, gates.as_deref())?;
                let total = if self.cfg.multi_task && !self.fixation_batches.is_empty() {
                    let fix = self.fixation_loss(&mut g, &mut drop_rng, fix_cursor)?;
                    fix_cursor += 1;
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
                self.trunk.finish(&g);
                if let Some(fp) = &mut self.adaptive {
                    fp.finish(&g);
                }
            }

            let (valid_nll, valid_ppl) = self.eval_stream_with(&self.valid_stream.clone(), None)?;
            if valid_ppl < best_ppl {
                best_ppl = valid_ppl;
                best_epoch = epoch;
                best_store = self.store.clone();
            }
            let metrics = EpochMetrics {
                epoch,
                train_loss: loss_sum / loss_batches.max(1) as f64,
                valid_nll: Some(valid_nll),
                valid_ppl: Some(valid_ppl),
                test_acc: None,
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

        Ok(LmTrainOutcome {
            history,
            best_store,
            best_epoch,
            diverged,
        })
    }

    /// Evaluates mean NLL and perplexity over a stream with the current
    /// parameters (or with an explicit checkpointed store).
    pub fn eval_stream_with(
        &mut self,
        stream: &StreamData,
        store_override: Option<&ParamStore<T>>,
    ) -> Result<(f64, f64)> {
        match store_override {
            None => self.eval_stream_inner(stream),
            Some(other) => {
                // Every parameter lookup goes through self.store by name,
                // so evaluating a checkpoint means swapping it in.
                let saved = std::mem::replace(&mut self.store, other.clone());
                let result = self.eval_stream_inner(stream);
                self.store = saved;
                result
            }
        }
    }

    fn eval_stream_inner(&mut self, stream: &StreamData) -> Result<(f64, f64)> {
        let batch = self.cfg.batch_size.min((stream.ids.len() - 1) / 2).max(1);
        let row_len = (stream.ids.len() - 1) / batch;
        let seg_len = self.cfg.mean_seq_len.min(row_len);
        let mut rng = self.pool.stream("eval");
        let saved_running = self.running_stats;

        self.trunk.reset_state();
        if let Some(fp) = &mut self.adaptive {
            fp.reset_state();
        }
        let mut nll_sum = 0.0;
        let mut count = 0usize;
        let mut start = 0usize;
        while start < row_len {
            let len = seg_len.min(row_len - start);
            let inputs: Vec<Vec<usize>> = (0..len)
                .map(|t| (0..batch).map(|b| stream.ids[b * row_len + start + t]).collect())
                .collect();
            let targets: Vec<Vec<usize>> = (0..len)
                .map(|t| {
                    (0..batch)
                        .map(|b| stream.ids[b * row_len + start + t + 1])
                        .collect()
                })
                .collect();
            let gates: Option<Vec<Vec<usize>>> = stream.gates.as_ref().map(|gs| {
                (0..len)
                    .map(|t| (0..batch).map(|b| gs[b * row_len + start + t]).collect())
                    .collect()
            });
            let mut g = Graph::eval();
            self.trunk.begin(&mut g, &self.store, batch)?;
            if let Some(fp) = &mut self.adaptive {
                fp.begin(&mut g, &self.store, batch)?;
            }
            let (loss, n) =
                self.run_segment(&mut g, &mut rng, &inputs, &targets, gates.as_deref())?;
            nll_sum += g.scalar_value(loss).as_f64() * n as f64;
            count += n;
            self.trunk.finish(&g);
            if let Some(fp) = &mut self.adaptive {
                fp.finish(&g);
            }
            start += len;
        }
        self.trunk.reset_state();
        if let Some(fp) = &mut self.adaptive {
            fp.reset_state();
        }
        self.running_stats = saved_running;
        let mean_nll = nll_sum / count.max(1) as f64;
        Ok((mean_nll, perplexity_from_nll(nll_sum, count)))
    }

    /// Per-position next-token log-probabilities for a single sequence,
    /// conditioned on strictly preceding tokens. The schedule, when given,
    /// must match the sequence length.
    pub fn log_probs(
        &mut self,
        store: &ParamStore<T>,
        tokens: &[usize],
        schedule: Option<&GateSchedule>,
    ) -> Result<Vec<Vec<f64>>> {
        let saved = std::mem::replace(&mut self.store, store.clone());
        let result = self.log_probs_inner(tokens, schedule);
        self.store = saved;
        result
    }

    fn log_probs_inner(
        &mut self,
        tokens: &[usize],
        schedule: Option<&GateSchedule>,
    ) -> Result<Vec<Vec<f64>>> {
        if let Some(s) = schedule {
            if s.len() != tokens.len() {
                return Err(Error::invalid(
                    "lm_forward",
                    format!("schedule length {} vs {} tokens", s.len(), tokens.len()),
                ));
            }
            s.validate()?;
        }
        let mut rng = self.pool.stream("eval");
        self.trunk.reset_state();
        if let Some(fp) = &mut self.adaptive {
            fp.reset_state();
        }
        let mut g = Graph::eval();
        self.trunk.begin(&mut g, &self.store, 1)?;
        if let Some(fp) = &mut self.adaptive {
            fp.begin(&mut g, &self.store, 1)?;
        }

        // Adaptive assemblies still normalize over the whole sequence; the
        // schedule-driven and vanilla paths are strictly causal.
        let soft = if self.adaptive.is_some() {
            let inputs: Vec<Vec<usize>> = tokens.iter().map(|&t| vec![t]).collect();
            Some(self.soft_gates_for_segment(&mut g, &mut rng, &inputs)?)
        } else {
            None
        };

        let mut rows = Vec::with_capacity(tokens.len());
        for (t, &token) in tokens.iter().enumerate() {
            let x = self.head.embed(&mut g, &self.store, &[token])?;
            let gate = match (&soft, schedule) {
                (Some(vars), _) => StepGate::Soft(vars[t]),
                (None, Some(GateSchedule::Hard { values, .. })) => {
                    let d = vec![values[t]];
                    let out = self.forward_one(&mut g, &mut rng, x, StepGate::Hard(&d))?;
                    rows.push(out);
                    continue;
                }
                (None, Some(GateSchedule::Soft { values, .. })) => {
                    let dbar = g.leaf_vec(vec![T::of(values[t])]);
                    StepGate::Soft(dbar)
                }
                (None, None) => StepGate::Full,
            };
            let out = self.forward_one(&mut g, &mut rng, x, gate)?;
            rows.push(out);
        }
        self.trunk.reset_state();
        if let Some(fp) = &mut self.adaptive {
            fp.reset_state();
        }
        Ok(rows)
    }

    fn forward_one(
        &mut self,
        g: &mut Graph<T>,
        rng: &mut Stream,
        x: Var,
        gate: StepGate,
    ) -> Result<Vec<f64>> {
        let out = self.trunk.step(g, rng, x, gate)?;
        let logits = self.head.logits(g, &self.store, out)?;
        let logp = g.log_softmax(logits);
        Ok(g.value(logp).data().iter().map(|v| v.as_f64()).collect())
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
            if let Some(fp) = &mut self.adaptive {
                fp.reset_state();
                fp.begin(&mut g, &self.store, 1)?;
            }
            let inputs: Vec<Vec<usize>> = tokens.iter().map(|&t| vec![t]).collect();
            let vars = self.soft_gates_for_segment(&mut g, &mut rng, &inputs)?;
            Ok(vars
                .into_iter()
                .map(|v| g.scalar_value(v).as_f64())
                .collect())
        })();
        self.store = saved;
        result
    }
}
