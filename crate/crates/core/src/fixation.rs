//! Fixation-duration prediction and its losses.
//!
//! Two predictor flavors feed the gated models:
//!
//! * a **fixed** predictor — an LSTM regressor pretrained on discretized
//!   human fixation bins and frozen afterwards; its (rounded) outputs become
//!   hard gate schedules, and
//! * an **adaptive** predictor — randomly initialized, mirroring the host
//!   model's architecture, sharing its embedding, and trained end-to-end
//!   through the soft gates (optionally also against human data via a
//!   variance-weighted regression loss).
//!
//! Continuous predictions are mapped into gate range by standardizing
//! against batch statistics and rescaling so that ±1.96 standard deviations
//! span `[0, K]`.

use crate::cells::CellKind;
use crate::data::Vocab;
use crate::error::{Error, Result};
use crate::gated::{ModelSpec, SeqModel, StepGate, VanillaStack, Variant};
use crate::graph::{BcastKind, Graph, Var};
use crate::params::ParamStore;
use crate::rng::Stream;
use crate::tensor::Real;

/// Standard-deviation floor used when standardizing predicted durations.
pub const STD_FLOOR: f64 = 1e-5;

// ── Duration normalization ──────────────────────────────────────────────

/// Batch statistics for duration normalization.
#[derive(Clone, Copy, Debug)]
pub struct DurationBatchStats {
    pub mean: f64,
    pub std: f64,
    pub components: usize,
}

/// Mean and (floored) standard deviation of a prediction batch.
pub fn batch_stats(values: &[f64], components: usize) -> DurationBatchStats {
    let n = values.len().max(1) as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    DurationBatchStats {
        mean,
        std: var.sqrt().max(STD_FLOOR),
        components,
    }
}

/// `dbar = ((d - mean)/std + 1.96) / 3.92 * K`: the batch mean maps to
/// `K/2` and `mean + 1.96*std` maps exactly to `K`. Values outside the
/// ±1.96σ band land outside `[0, K]` and are deliberately not clamped.
pub fn normalize_durations(values: &[f64], stats: &DurationBatchStats) -> Vec<f64> {
    let k = stats.components as f64;
    values
        .iter()
        .map(|&d| ((d - stats.mean) / stats.std + 1.96) / 3.92 * k)
        .collect()
}

/// In-graph version of the same map over a rank-1 prediction batch, with
/// statistics computed from the batch itself so gradients flow through
/// mean and standard deviation.
pub fn normalize_durations_node<T: Real>(
    g: &mut Graph<T>,
    dhat: Var,
    components: usize,
) -> Result<Var> {
    let mean = g.mean(dhat);
    let centered = g.bcast(BcastKind::Sub, dhat, mean)?;
    let squared = g.mul(centered, centered)?;
    let var = g.mean(squared);
    // Flooring the variance before the root keeps sqrt off zero.
    let var = g.max_const(var, T::of(STD_FLOOR * STD_FLOOR));
    let std = g.sqrt(var);
    let z = g.bcast(BcastKind::Div, centered, std)?;
    let k = components as f64;
    Ok(g.affine_const(z, T::of(k / 3.92), T::of(k / 2.0)))
}

/// Same map but against externally supplied (constant) statistics, for the
/// running-statistics normalization scope.
pub fn normalize_with_stats_node<T: Real>(
    g: &mut Graph<T>,
    dhat: Var,
    stats: &DurationBatchStats,
) -> Result<Var> {
    let mean = g.constant(T::of(stats.mean));
    let centered = g.bcast(BcastKind::Sub, dhat, mean)?;
    let std = g.constant(T::of(stats.std));
    let z = g.bcast(BcastKind::Div, centered, std)?;
    let k = stats.components as f64;
    Ok(g.affine_const(z, T::of(k / 3.92), T::of(k / 2.0)))
}

/// Rounds a continuous predicted duration to a hard gate bin in `1..=K`.
/// The fixed predictor is trained on integer bins, so nearest-integer with
/// clamping is the discretization used on its output path.
pub fn round_to_bin(value: f64, components: usize) -> usize {
    (value.round() as i64).clamp(1, components as i64) as usize
}

// ── Fixation regression targets and losses ──────────────────────────────

/// Regression target for one token: expectation and variance of the
/// normalized human fixation duration over subjects. Pure-punctuation
/// tokens (and tokens without a usable recording) carry infinite variance,
/// which removes them from the loss exactly.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FixationTarget {
    pub mean: f64,
    pub var: f64,
}

impl FixationTarget {
    pub fn unconstrained() -> Self {
        FixationTarget {
            mean: 0.0,
            var: f64::INFINITY,
        }
    }
}

/// Sum over tokens of `(E[d] - pred)^2 / (Var[d] + eps)`. Infinite-variance
/// tokens contribute exactly zero.
pub fn variance_weighted_mse(
    preds: &[f64],
    targets: &[FixationTarget],
    eps: f64,
) -> Result<f64> {
    if eps <= 0.0 {
        return Err(Error::invalid("variance_weighted_mse", "eps must be positive"));
    }
    if preds.len() != targets.len() {
        return Err(Error::invalid(
            "variance_weighted_mse",
            format!("{} predictions vs {} targets", preds.len(), targets.len()),
        ));
    }
    let mut total = 0.0;
    for (&p, t) in preds.iter().zip(targets) {
        if t.var.is_infinite() {
            continue;
        }
        if t.var < 0.0 {
            return Err(Error::invalid(
                "variance_weighted_mse",
                format!("negative variance {}", t.var),
            ));
        }
        let d = t.mean - p;
        total += d * d / (t.var + eps);
    }
    Ok(total)
}

/// In-graph variance-weighted MSE: targets and weights enter as constant
/// leaves, so only the predictions carry gradient. `preds` is rank 1.
pub fn variance_weighted_mse_node<T: Real>(
    g: &mut Graph<T>,
    preds: Var,
    targets: &[FixationTarget],
    eps: f64,
) -> Result<Var> {
    if eps <= 0.0 {
        return Err(Error::invalid("variance_weighted_mse", "eps must be positive"));
    }
    let n = g.value(preds).numel();
    if n != targets.len() {
        return Err(Error::invalid(
            "variance_weighted_mse",
            format!("{n} predictions vs {} targets", targets.len()),
        ));
    }
    let mut means = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for t in targets {
        if t.var.is_infinite() {
            means.push(T::zero());
            weights.push(T::zero());
        } else if t.var < 0.0 {
            return Err(Error::invalid(
                "variance_weighted_mse",
                format!("negative variance {}", t.var),
            ));
        } else {
            means.push(T::of(t.mean));
            weights.push(T::of(1.0 / (t.var + eps)));
        }
    }
    let mean_leaf = g.leaf_vec(means);
    let w_leaf = g.leaf_vec(weights);
    let diff = g.sub(mean_leaf, preds)?;
    let sq = g.mul(diff, diff)?;
    let weighted = g.mul(sq, w_leaf)?;
    Ok(g.sum(weighted))
}

/// Joint multi-task objective `L = L1 + lambda * L2`.
pub fn joint_loss(task_loss: f64, fixation_loss: f64, lambda: f64) -> f64 {
    task_loss + lambda * fixation_loss
}

/// In-graph joint objective.
pub fn joint_loss_node<T: Real>(
    g: &mut Graph<T>,
    task_loss: Var,
    fixation_loss: Var,
    lambda: f64,
) -> Result<Var> {
    let scaled = g.affine_const(fixation_loss, T::of(lambda), T::zero());
    g.add(task_loss, scaled)
}

/// Standardizes target means to zero mean / unit variance over all finite
/// targets and rescales their variances accordingly (used when training the
/// adaptive predictor against human data, whose raw scale is arbitrary).
pub fn standardize_targets(sentences: &mut [Vec<FixationTarget>]) {
    let mut values = Vec::new();
    for s in sentences.iter() {
        for t in s {
            if t.var.is_finite() {
                values.push(t.mean);
            }
        }
    }
    if values.is_empty() {
        return;
    }
    let stats = batch_stats(&values, 1);
    let scale = 1.0 / stats.std;
    for s in sentences.iter_mut() {
        for t in s {
            if t.var.is_finite() {
                t.mean = (t.mean - stats.mean) * scale;
                t.var *= scale * scale;
            }
        }
    }
}

// ── Regression head (shared by both predictor flavors) ─────────────────

/// Two stacked fully-connected layers with a tanh between, producing one
/// real duration per token.
#[derive(Clone, Debug)]
pub struct RegressionHead {
    pub in_dim: usize,
    pub mid_dim: usize,
    prefix: String,
}

impl RegressionHead {
    pub fn new(in_dim: usize, mid_dim: usize, prefix: &str) -> Self {
        RegressionHead {
            in_dim,
            mid_dim,
            prefix: prefix.to_string(),
        }
    }

    pub fn register<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut Stream) {
        store.insert_uniform(
            format!("{}.fc1.w", self.prefix),
            vec![self.mid_dim, self.in_dim],
            self.in_dim,
            rng,
        );
        store.insert_zeros(format!("{}.fc1.b", self.prefix), vec![self.mid_dim]);
        store.insert_uniform(
            format!("{}.out.w", self.prefix),
            vec![1, self.mid_dim],
            self.mid_dim,
            rng,
        );
        store.insert_zeros(format!("{}.out.b", self.prefix), vec![1]);
    }

    /// `[batch, in_dim] -> [batch]` predicted durations.
    pub fn predict<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        features: Var,
    ) -> Result<Var> {
        let w1 = g.param(store, &format!("{}.fc1.w", self.prefix))?;
        let b1 = g.param(store, &format!("{}.fc1.b", self.prefix))?;
        let w2 = g.param(store, &format!("{}.out.w", self.prefix))?;
        let b2 = g.param(store, &format!("{}.out.b", self.prefix))?;
        let z = g.linear(features, w1, b1)?;
        let z = g.tanh(z);
        let out = g.linear(z, w2, b2)?;
        let batch = g.value(out).rows();
        g.reshape(out, vec![batch])
    }

    pub fn param_count(&self) -> usize {
        self.mid_dim * self.in_dim + self.mid_dim + self.mid_dim + 1
    }

    pub fn param_names(&self) -> Vec<String> {
        ["fc1.w", "fc1.b", "out.w", "out.b"]
            .iter()
            .map(|s| format!("{}.{s}", self.prefix))
            .collect()
    }
}

// ── Adaptive predictor ──────────────────────────────────────────────────

/// Fixation predictor trained jointly with a host model. Its recurrent
/// trunk mirrors the host architecture (cell family and layer count) and it
/// reads token features from the host's own embedding table.
pub struct AdaptiveFp<T: Real> {
    pub trunk: VanillaStack<T>,
    pub head: RegressionHead,
}

/// Trunk width rule: parallel-component hosts get the component width,
/// layer-gated hosts a third of theirs.
pub fn adaptive_fp_hidden(host: &ModelSpec) -> usize {
    match host.variant {
        Variant::FglRnn | Variant::FglLstm => (host.hidden / 3).max(1),
        _ => host.hidden,
    }
}

impl<T: Real> AdaptiveFp<T> {
    pub fn for_host(host: &ModelSpec, prefix: &str) -> Self {
        let hidden = adaptive_fp_hidden(host);
        let trunk = VanillaStack::new(
            host.variant.cell_kind(),
            host.emb_dim,
            hidden,
            host.layers,
            host.inter_dropout,
            &format!("{prefix}.trunk"),
        );
        let head = RegressionHead::new(hidden, hidden, &format!("{prefix}.head"));
        AdaptiveFp { trunk, head }
    }

    pub fn register(&self, store: &mut ParamStore<T>, rng: &mut Stream) {
        self.trunk.register(store, rng);
        self.head.register(store, rng);
    }

    pub fn begin(&mut self, g: &mut Graph<T>, store: &ParamStore<T>, batch: usize) -> Result<()> {
        self.trunk.begin(g, store, batch)
    }

    /// One token of features in, one predicted duration per row out.
    pub fn step_duration(
        &mut self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        rng: &mut Stream,
        x: Var,
    ) -> Result<Var> {
        let features = self.trunk.step(g, rng, x, StepGate::Full)?;
        self.head.predict(g, store, features)
    }

    pub fn finish(&mut self, g: &Graph<T>) {
        self.trunk.finish(g);
    }

    pub fn reset_state(&mut self) {
        self.trunk.reset_state();
    }

    pub fn param_count(&self) -> usize {
        self.trunk.param_count() + self.head.param_count()
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = self.trunk.param_names();
        names.extend(self.head.param_names());
        names
    }
}

// ── Fixed predictor ─────────────────────────────────────────────────────

/// Pretraining hyper-parameters for the fixed predictor.
#[derive(Clone, Debug)]
pub struct FixedFpHyper {
    pub emb_dim: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub grad_clip: f64,
}

impl Default for FixedFpHyper {
    fn default() -> Self {
        FixedFpHyper {
            emb_dim: 64,
            hidden: 100,
            epochs: 20,
            lr: 1e-3,
            seed: 0,
            grad_clip: 5.0,
        }
    }
}

/// Held-out regression quality of a fixed predictor.
#[derive(Clone, Copy, Debug)]
pub struct FpEvalMetrics {
    pub l1: f64,
    pub mse: f64,
    pub tokens: usize,
}

/// Frozen fixation regressor: own embedding, one uni-directional LSTM
/// layer, and a two-layer head producing one duration per token. After
/// pretraining it only ever runs forward.
pub struct FixedFpModel<T: Real> {
    pub vocab: Vocab,
    pub store: ParamStore<T>,
    pub emb_dim: usize,
    pub hidden: usize,
    pub seed: u64,
}

impl<T: Real> FixedFpModel<T> {
    fn trunk(emb_dim: usize, hidden: usize) -> VanillaStack<T> {
        VanillaStack::new(CellKind::Lstm, emb_dim, hidden, 1, 0.0, "fp.trunk")
    }

    fn head(hidden: usize) -> RegressionHead {
        RegressionHead::new(hidden, hidden, "fp.head")
    }

    /// Predicts one real duration per token, mapping tokens through the
    /// model's own vocabulary (unknowns allowed).
    pub fn predict(&self, tokens: &[String]) -> Result<Vec<f64>> {
        if tokens.is_empty() {
            return Ok(Vec::new());
        }
        let ids: Vec<usize> = tokens.iter().map(|t| self.vocab.lookup(t)).collect();
        let mut g = Graph::eval();
        let mut rng = crate::rng::RngPool::new(0).stream("unused");
        let mut trunk = Self::trunk(self.emb_dim, self.hidden);
        let head = Self::head(self.hidden);
        trunk.begin(&mut g, &self.store, 1)?;
        let table = g.param(&self.store, "fp.embed.weight")?;
        let mut out = Vec::with_capacity(ids.len());
        for &id in &ids {
            let x = g.embedding(table, &[id])?;
            let features = trunk.step(&mut g, &mut rng, x, StepGate::Full)?;
            let d = head.predict(&mut g, &self.store, features)?;
            out.push(g.scalar_value(d).as_f64());
        }
        Ok(out)
    }

    /// Predicts and rounds into a hard gate schedule for `components` bins.
    pub fn predict_schedule(
        &self,
        tokens: &[String],
        components: usize,
    ) -> Result<crate::schedule::GateSchedule> {
        let raw = self.predict(tokens)?;
        let bins = raw.iter().map(|&v| round_to_bin(v, components)).collect();
        crate::schedule::GateSchedule::hard(bins, components)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::checkpoint::save(path, &self.store, self.seed)?;
        let vocab_path = vocab_sidecar(path);
        self.vocab.save(&vocab_path)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let (store, header) = crate::checkpoint::load::<T>(path)?;
        let vocab = Vocab::load(&vocab_sidecar(path))?;
        let emb = store.require("fp.embed.weight")?;
        let emb_dim = emb.cols();
        let hidden = store.require("fp.trunk.l0.w_hh")?.cols();
        Ok(FixedFpModel {
            vocab,
            store,
            emb_dim,
            hidden,
            seed: header.seed,
        })
    }
}

/// Path of the vocabulary file stored next to a predictor checkpoint.
pub fn vocab_sidecar(checkpoint: &std::path::Path) -> std::path::PathBuf {
    let mut os = checkpoint.as_os_str().to_os_string();
    os.push(".vocab.json");
    std::path::PathBuf::from(os)
}

/// One pretraining sentence: tokens plus their discrete fixation bins.
#[derive(Clone, Debug)]
pub struct FpSentence {
    pub tokens: Vec<String>,
    pub bins: Vec<f64>,
}

/// Trains the fixed predictor with MSE against integer bins and reports L1
/// and MSE on the held-out sentences.
pub fn pretrain_fixed_fp<T: Real>(
    train: &[FpSentence],
    held_out: &[FpSentence],
    hyper: &FixedFpHyper,
) -> Result<(FixedFpModel<T>, FpEvalMetrics)> {
    if train.is_empty() {
        return Err(Error::invalid("pretrain_fixed_fp", "empty training corpus"));
    }
    let vocab = Vocab::build(
        train.iter().flat_map(|s| s.tokens.iter().map(String::as_str)),
        1,
        &[],
    );
    let pool = crate::rng::RngPool::new(hyper.seed);
    let mut init = pool.stream("init");
    let mut store = ParamStore::<T>::new();
    store.insert_uniform(
        "fp.embed.weight",
        vec![vocab.size(), hyper.emb_dim],
        hyper.emb_dim,
        &mut init,
    );
    let mut trunk = FixedFpModel::<T>::trunk(hyper.emb_dim, hyper.hidden);
    let head = FixedFpModel::<T>::head(hyper.hidden);
    trunk.register(&mut store, &mut init);
    head.register(&mut store, &mut init);

    let mut adam = crate::optim::Adam::new(hyper.lr);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle_rng = pool.stream("batching");
    let mut scratch = pool.stream("unused");

    for _epoch in 0..hyper.epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut shuffle_rng);
        for &idx in &order {
            let sentence = &train[idx];
            if sentence.tokens.is_empty() {
                continue;
            }
            let mut g = Graph::training();
            trunk.reset_state();
            trunk.begin(&mut g, &store, 1)?;
            let table = g.param(&store, "fp.embed.weight")?;
            let mut preds = Vec::with_capacity(sentence.tokens.len());
            for token in &sentence.tokens {
                let x = g.embedding(table, &[vocab.lookup(token)])?;
                let features = trunk.step(&mut g, &mut scratch, x, StepGate::Full)?;
                preds.push(head.predict(&mut g, &store, features)?);
            }
            let pred_vec = g.concat(&preds, 0)?;
            let target = g.leaf_vec(sentence.bins.iter().map(|&b| T::of(b)).collect());
            let diff = g.sub(pred_vec, target)?;
            let sq = g.mul(diff, diff)?;
            let loss = g.mean(sq);
            let mut grads = g.backward(loss)?;
            crate::optim::clip_global_norm(&mut grads, hyper.grad_clip);
            adam.step(&mut store, &grads)?;
        }
    }

    let model = FixedFpModel {
        vocab,
        store,
        emb_dim: hyper.emb_dim,
        hidden: hyper.hidden,
        seed: hyper.seed,
    };
    let metrics = eval_fixed_fp(&model, held_out)?;
    Ok((model, metrics))
}

/// L1 and MSE of a predictor against discrete bins.
pub fn eval_fixed_fp<T: Real>(
    model: &FixedFpModel<T>,
    sentences: &[FpSentence],
) -> Result<FpEvalMetrics> {
    let mut abs = 0.0;
    let mut sq = 0.0;
    let mut n = 0usize;
    for s in sentences {
        let preds = model.predict(&s.tokens)?;
        for (&p, &b) in preds.iter().zip(&s.bins) {
            abs += (p - b).abs();
            sq += (p - b) * (p - b);
            n += 1;
        }
    }
    let n_f = n.max(1) as f64;
    Ok(FpEvalMetrics {
        l1: abs / n_f,
        mse: sq / n_f,
        tokens: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn normalization_maps_mean_to_half_range() {
        let values = vec![2.0, 4.0, 6.0, 8.0];
        let stats = batch_stats(&values, 12);
        let out = normalize_durations(&[stats.mean], &stats);
        assert_relative_eq!(out[0], 6.0, epsilon = 1e-9);
    }

    #[test]
    fn normalization_maps_design_point_to_k() {
        let values = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        let stats = batch_stats(&values, 12);
        let out = normalize_durations(&[stats.mean + 1.96 * stats.std], &stats);
        assert_relative_eq!(out[0], 12.0, epsilon = 1e-9);
    }

    #[test]
    fn normalization_one_sigma_scalar_value() {
        let stats = DurationBatchStats {
            mean: 0.0,
            std: 1.0,
            components: 12,
        };
        let out = normalize_durations(&[1.0], &stats);
        assert_relative_eq!(out[0], 9.06122, epsilon = 1e-5);
    }

    #[test]
    fn normalization_is_invariant_to_affine_rescaling() {
        let base = vec![0.4, 1.0, 2.2, 3.1, 0.9];
        let shifted: Vec<f64> = base.iter().map(|v| v * 7.5 + 42.0).collect();
        let a = normalize_durations(&base, &batch_stats(&base, 4));
        let b = normalize_durations(&shifted, &batch_stats(&shifted, 4));
        for (x, y) in a.iter().zip(&b) {
            assert_relative_eq!(x, y, epsilon = 1e-6);
        }
    }

    #[test]
    fn graph_normalization_matches_plain_route() {
        let values = vec![0.3, -1.2, 2.4, 0.9, 1.1, -0.4];
        let plain = normalize_durations(&values, &batch_stats(&values, 4));
        let mut g = Graph::<f64>::eval();
        let v = g.leaf_vec(values);
        let node = normalize_durations_node(&mut g, v, 4).unwrap();
        for (a, b) in g.value(node).data().iter().zip(&plain) {
            assert_relative_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn weighted_mse_scalar_case() {
        let loss = variance_weighted_mse(
            &[3.0],
            &[FixationTarget { mean: 2.0, var: 1.0 }],
            0.1,
        )
        .unwrap();
        assert_relative_eq!(loss, 0.909091, epsilon = 1e-6);
        assert_relative_eq!(loss, 1.0 / 1.1, epsilon = 1e-9);
    }

    #[test]
    fn weighted_mse_perfect_prediction_is_zero() {
        let targets = vec![
            FixationTarget { mean: 1.5, var: 0.2 },
            FixationTarget { mean: -0.5, var: 2.0 },
        ];
        let loss = variance_weighted_mse(&[1.5, -0.5], &targets, 0.1).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn infinite_variance_contributes_exactly_zero() {
        let targets = vec![
            FixationTarget {
                mean: 99.0,
                var: f64::INFINITY,
            },
            FixationTarget { mean: 2.0, var: 1.0 },
        ];
        let loss = variance_weighted_mse(&[-1000.0, 3.0], &targets, 0.1).unwrap();
        assert_relative_eq!(loss, 1.0 / 1.1, epsilon = 1e-9);

        let mut g = Graph::<f64>::eval();
        let preds = g.leaf_vec(vec![-1000.0, 3.0]);
        let node = variance_weighted_mse_node(&mut g, preds, &targets, 0.1).unwrap();
        assert_relative_eq!(g.scalar_value(node), 1.0 / 1.1, epsilon = 1e-9);
    }

    #[test]
    fn negative_variance_is_rejected() {
        let targets = vec![FixationTarget { mean: 0.0, var: -1.0 }];
        assert!(variance_weighted_mse(&[0.0], &targets, 0.1).is_err());
    }

    #[test]
    fn joint_loss_is_a_weighted_sum() {
        assert_relative_eq!(joint_loss(2.0, 1.0, 0.3), 2.3);
        assert_relative_eq!(joint_loss(2.0, 123.0, 0.0), 2.0);
    }

    #[test]
    fn round_to_bin_clamps_into_range() {
        assert_eq!(round_to_bin(-3.2, 4), 1);
        assert_eq!(round_to_bin(2.4, 4), 2);
        assert_eq!(round_to_bin(2.6, 4), 3);
        assert_eq!(round_to_bin(99.0, 4), 4);
    }

    #[test]
    fn standardize_targets_centers_finite_means() {
        let mut sentences = vec![vec![
            FixationTarget { mean: 2.0, var: 1.0 },
            FixationTarget { mean: 4.0, var: 4.0 },
            FixationTarget::unconstrained(),
        ]];
        standardize_targets(&mut sentences);
        let finite: Vec<f64> = sentences[0]
            .iter()
            .filter(|t| t.var.is_finite())
            .map(|t| t.mean)
            .collect();
        assert_relative_eq!(finite.iter().sum::<f64>(), 0.0, epsilon = 1e-12);
        assert!(sentences[0][2].var.is_infinite());
    }
}
