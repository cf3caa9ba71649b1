//! Gradient-check fixtures covering the whole operator set.
//!
//! Every operator gets a case that routes random parameters through it into
//! a scalar loss. The probe leaf makes loss gradients non-uniform so a
//! transposed or mis-indexed backward rule cannot cancel out.

use super::GradCase;
use crate::error::Result;
use crate::graph::{BcastKind, Graph, Var};
use crate::params::ParamStore;
use crate::rng::RngPool;
use crate::tensor::Tensor;
use rand::Rng;

fn rand_store(seed: u64, specs: &[(&str, Vec<usize>)]) -> ParamStore<f64> {
    let mut rng = RngPool::new(seed).stream("gradcheck");
    let mut store = ParamStore::new();
    for (name, shape) in specs {
        let numel: usize = shape.iter().product();
        let data: Vec<f64> = (0..numel).map(|_| rng.gen_range(-0.9..0.9)).collect();
        store.insert(*name, Tensor::new(shape.clone(), data).unwrap());
    }
    store
}

/// Store with values bounded away from zero (for divisions).
fn rand_store_offset(seed: u64, specs: &[(&str, Vec<usize>)], low: f64, high: f64) -> ParamStore<f64> {
    let mut rng = RngPool::new(seed).stream("gradcheck");
    let mut store = ParamStore::new();
    for (name, shape) in specs {
        let numel: usize = shape.iter().product();
        let data: Vec<f64> = (0..numel).map(|_| rng.gen_range(low..high)).collect();
        store.insert(*name, Tensor::new(shape.clone(), data).unwrap());
    }
    store
}

fn probe(g: &mut Graph<f64>, out: Var, seed: u64) -> Result<Var> {
    let numel = g.value(out).numel();
    let shape = g.value(out).shape().to_vec();
    let mut rng = RngPool::new(seed ^ 0x9e3779b9).stream("probe");
    let p = g.leaf(
        Tensor::new(shape, (0..numel).map(|_| rng.gen_range(0.1..1.0)).collect()).unwrap(),
    );
    let weighted = g.mul(out, p)?;
    Ok(g.mean(weighted))
}

/// One case per operator, all drawing values from `seed`.
pub fn operator_cases(seed: u64) -> Vec<GradCase> {
    let mut cases = Vec::new();

    let ab = || {
        rand_store(
            seed,
            &[("a", vec![3, 4]), ("b", vec![3, 4])],
        )
    };

    for (name, kind) in [
        ("add", 0usize),
        ("sub", 1),
        ("mul", 2),
    ] {
        cases.push(GradCase::new(name, ab(), move |s| {
            let mut g = Graph::training();
            let a = g.param(s, "a")?;
            let b = g.param(s, "b")?;
            let out = match kind {
                0 => g.add(a, b)?,
                1 => g.sub(a, b)?,
                _ => g.mul(a, b)?,
            };
            let loss = probe(&mut g, out, seed)?;
            Ok((g, loss))
        }));
    }

    cases.push(GradCase::new(
        "div",
        rand_store_offset(seed, &[("a", vec![3, 4]), ("b", vec![3, 4])], 0.5, 1.5),
        move |s| {
            let mut g = Graph::training();
            let a = g.param(s, "a")?;
            let b = g.param(s, "b")?;
            let out = g.div(a, b)?;
            let loss = probe(&mut g, out, seed)?;
            Ok((g, loss))
        },
    ));

    cases.push(GradCase::new(
        "affine_const",
        rand_store(seed, &[("a", vec![5])]),
        move |s| {
            let mut g = Graph::training();
            let a = g.param(s, "a")?;
            let out = g.affine_const(a, -2.5, 0.75);
            let loss = probe(&mut g, out, seed)?;
            Ok((g, loss))
        },
    ));

    for (name, which) in [("tanh", 0usize), ("sigmoid", 1)] {
        cases.push(GradCase::new(name, rand_store(seed, &[("a", vec![2, 3])]), move |s| {
            let mut g = Graph::training();
            let a = g.param(s, "a")?;
            let out = match which {
                0 => g.tanh(a),
                _ => g.sigmoid(a),
            };
            let loss = probe(&mut g, out, seed)?;
            Ok((g, loss))
        }));
    }

    cases.push(GradCase::new(
        "sqrt",
        rand_store_offset(seed, &[("a", vec![6])], 0.3, 2.0),
        move |s| {
            let mut g = Graph::training();
            let a = g.param(s, "a")?;
            let out = g.sqrt(a);
            let loss = probe(&mut g, out, seed)?;
            Ok((g, loss))
        },
    ));

    // Values kept away from the hinge so finite differences stay valid.
    cases.push(GradCase::new(
        "max_const",
        rand_store_offset(seed, &[("a", vec![6])], 0.2, 2.0),
        move |s| {
            let mut g = Graph::training();
            let a = g.param(s, "a")?;
            let out = g.max_const(a, 0.1);
            let loss = probe(&mut g, out, seed)?;
            Ok((g, loss))
        },
    ));

    cases.push(GradCase::new(
        "matmul",
        rand_store(seed, &[("a", vec![3, 4]), ("b", vec![4, 2])]),
        move |s| {
            let mut g = Graph::training();
            let a = g.param(s, "a")?;
            let b = g.param(s, "b")?;
            let out = g.matmul(a, b)?;
            let loss = probe(&mut g, out, seed)?;
            Ok((g, loss))
        },
    ));

    cases.push(GradCase::new(
        "matmul_nt",
        rand_store(seed, &[("a", vec![3, 4]), ("b", vec![2, 4])]),
        move |s| {
            let mut g = Graph::training();
            let a = g.param(s, "a")?;
            let b = g.param(s, "b")?;
            let out = g.matmul_nt(a, b)?;
            let loss = probe(&mut g, out, seed)?;
            Ok((g, loss))
        },
    ));

    cases.push(GradCase::new(
        "add_row",
        rand_store(seed, &[("a", vec![3, 4]), ("bias", vec![4])]),
        move |s| {
            let mut g = Graph::training();
            let a = g.param(s, "a")?;
            let b = g.param(s, "bias")?;
            let out = g.add_row(a, b)?;
            let loss = probe(&mut g, out, seed)?;
            Ok((g, loss))
        },
    ));

    cases.push(GradCase::new(
        "scale_rows",
        rand_store(seed, &[("a", vec![3, 4]), ("s", vec![3])]),
        move |s| {
            let mut g = Graph::training();
            let a = g.param(s, "a")?;
            let scale = g.param(s, "s")?;
            let out = g.scale_rows(a, scale)?;
            let loss = probe(&mut g, out, seed)?;
            Ok((g, loss))
        },
    ));

    for (name, kind) in [
        ("bcast_add", BcastKind::Add),
        ("bcast_sub", BcastKind::Sub),
        ("bcast_mul", BcastKind::Mul),
        ("bcast_div", BcastKind::Div),
    ] {
        cases.push(GradCase::new(
            name,
            rand_store_offset(seed, &[("a", vec![5]), ("s", vec![1])], 0.4, 1.4),
            move |st| {
                let mut g = Graph::training();
                let a = g.param(st, "a")?;
                let s = g.param(st, "s")?;
                let out = g.bcast(kind, a, s)?;
                let loss = probe(&mut g, out, seed)?;
                Ok((g, loss))
            },
        ));
    }

    cases.push(GradCase::new(
        "sum",
        rand_store(seed, &[("a", vec![7])]),
        move |s| {
            let mut g = Graph::training();
            let a = g.param(s, "a")?;
            let total = g.sum(a);
            let sq = g.mul(total, total)?;
            Ok((g, sq))
        },
    ));

    cases.push(GradCase::new(
        "mean",
        rand_store(seed, &[("a", vec![2, 3])]),
        move |s| {
            let mut g = Graph::training();
            let a = g.param(s, "a")?;
            let m = g.mean(a);
            let sq = g.mul(m, m)?;
            Ok((g, sq))
        },
    ));

    for (name, log) in [("softmax", false), ("log_softmax", true)] {
        cases.push(GradCase::new(name, rand_store(seed, &[("a", vec![3, 5])]), move |s| {
            let mut g = Graph::training();
            let a = g.param(s, "a")?;
            let out = if log { g.log_softmax(a) } else { g.softmax(a) };
            let loss = probe(&mut g, out, seed)?;
            Ok((g, loss))
        }));
    }

    for axis in [0usize, 1] {
        cases.push(GradCase::new(
            format!("concat_axis{axis}"),
            rand_store(seed, &[("a", vec![2, 3]), ("b", vec![2, 3])]),
            move |s| {
                let mut g = Graph::training();
                let a = g.param(s, "a")?;
                let b = g.param(s, "b")?;
                let out = g.concat(&[a, b], axis)?;
                let loss = probe(&mut g, out, seed)?;
                Ok((g, loss))
            },
        ));
        cases.push(GradCase::new(
            format!("slice_axis{axis}"),
            rand_store(seed, &[("a", vec![3, 4])]),
            move |s| {
                let mut g = Graph::training();
                let a = g.param(s, "a")?;
                let out = g.slice(a, axis, 1, 2)?;
                let loss = probe(&mut g, out, seed)?;
                Ok((g, loss))
            },
        ));
    }

    cases.push(GradCase::new(
        "reshape",
        rand_store(seed, &[("a", vec![2, 6])]),
        move |s| {
            let mut g = Graph::training();
            let a = g.param(s, "a")?;
            let out = g.reshape(a, vec![12])?;
            let loss = probe(&mut g, out, seed)?;
            Ok((g, loss))
        },
    ));

    cases.push(GradCase::new(
        "embedding",
        rand_store(seed, &[("table", vec![5, 3])]),
        move |s| {
            let mut g = Graph::training();
            let t = g.param(s, "table")?;
            // Token 2 repeats so gather gradients must accumulate.
            let out = g.embedding(t, &[0, 2, 2, 4])?;
            let loss = probe(&mut g, out, seed)?;
            Ok((g, loss))
        },
    ));

    cases.push(GradCase::new(
        "pick",
        rand_store(seed, &[("a", vec![4, 3])]),
        move |s| {
            let mut g = Graph::training();
            let a = g.param(s, "a")?;
            let out = g.pick(a, &[2, 0, 1, 2])?;
            let loss = probe(&mut g, out, seed)?;
            Ok((g, loss))
        },
    ));

    cases.push(GradCase::new(
        "dropout",
        rand_store(seed, &[("a", vec![4, 4])]),
        move |s| {
            let mut g = Graph::training();
            // Mask is resampled from the same stream on every rebuild, so
            // the finite-difference evals see an identical graph.
            let mut rng = RngPool::new(seed).stream("dropout");
            let a = g.param(s, "a")?;
            let out = g.dropout(a, 0.4, &mut rng)?;
            let loss = probe(&mut g, out, seed)?;
            Ok((g, loss))
        },
    ));

    cases.push(GradCase::new(
        "row_select",
        rand_store(seed, &[("a", vec![4, 3]), ("b", vec![4, 3])]),
        move |s| {
            let mut g = Graph::training();
            let a = g.param(s, "a")?;
            let b = g.param(s, "b")?;
            let out = g.row_select(a, b, &[true, false, true, false])?;
            let loss = probe(&mut g, out, seed)?;
            Ok((g, loss))
        },
    ));

    cases
}

// ── End-to-end model cases ──────────────────────────────────────────────

use crate::gated::{ModelSpec, StepGate, Variant};
use crate::rng::Stream;

const STEPS: usize = 5;
const BATCH: usize = 2;
const EMB: usize = 4;
const HIDDEN: usize = 3;

fn model_spec(variant: Variant, components: usize, layers: usize) -> ModelSpec {
    ModelSpec {
        variant,
        components,
        layers,
        hidden: HIDDEN,
        emb_dim: EMB,
        proj_dim: None,
        steepness: 4.0,
        inter_dropout: 0.0,
    }
}

fn random_inputs(seed: u64) -> Vec<Tensor<f64>> {
    let mut rng = RngPool::new(seed ^ 0xfeed).stream("inputs");
    (0..STEPS)
        .map(|_| {
            Tensor::from_rows(
                BATCH,
                EMB,
                (0..BATCH * EMB).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap()
        })
        .collect()
}

fn random_hard_schedule(seed: u64, max_gate: usize) -> Vec<Vec<usize>> {
    let mut rng = RngPool::new(seed ^ 0xdead).stream("schedule");
    (0..STEPS)
        .map(|_| (0..BATCH).map(|_| rng.gen_range(1..=max_gate)).collect())
        .collect()
}

fn unroll_loss(
    s: &ParamStore<f64>,
    spec: &ModelSpec,
    gate_mode: GateMode,
    seed: u64,
) -> Result<(Graph<f64>, Var)> {
    let mut g = Graph::training();
    let mut rng: Stream = RngPool::new(0).stream("unused");
    let mut model = spec.build::<f64>("model");
    model.begin(&mut g, s, BATCH)?;
    let inputs = random_inputs(seed);
    let hard = random_hard_schedule(seed, spec.max_gate());
    let mut outputs = Vec::with_capacity(STEPS);
    for (t, x_t) in inputs.iter().enumerate() {
        let x = g.leaf(x_t.clone());
        let out = match gate_mode {
            GateMode::Full => model.step(&mut g, &mut rng, x, StepGate::Full)?,
            GateMode::Hard => model.step(&mut g, &mut rng, x, StepGate::Hard(&hard[t]))?,
            GateMode::SoftParam => {
                let dbar_all = g.param(s, "dbar")?;
                let dbar_t = g.slice(dbar_all, 0, t * BATCH, BATCH)?;
                model.step(&mut g, &mut rng, x, StepGate::Soft(dbar_t))?
            }
        };
        outputs.push(out);
    }
    let cat = g.concat(&outputs, 0)?;
    let loss = probe(&mut g, cat, seed)?;
    Ok((g, loss))
}

#[derive(Clone, Copy)]
enum GateMode {
    Full,
    Hard,
    SoftParam,
}

fn model_store(spec: &ModelSpec, seed: u64, with_dbar: bool) -> ParamStore<f64> {
    let mut store = ParamStore::new();
    let mut rng = RngPool::new(seed).stream("init");
    spec.build::<f64>("model").register(&mut store, &mut rng);
    if with_dbar {
        let values: Vec<f64> = (0..STEPS * BATCH)
            .map(|_| rng.gen_range(-0.5..(spec.max_gate() as f64 + 0.5)))
            .collect();
        store.insert("dbar", Tensor::from_vec(values));
    }
    store
}

/// Five-step unrolls of every architecture, hard- and soft-gated. Soft
/// cases treat the duration stream as a parameter, so the check also
/// verifies the gradient path into the gate coefficients.
pub fn variant_cases(seed: u64) -> Vec<GradCase> {
    let mut cases = Vec::new();
    let hard_variants = [
        ("vanilla_rnn_2l", model_spec(Variant::Rnn, 1, 2), GateMode::Full),
        ("vanilla_lstm_2l", model_spec(Variant::Lstm, 1, 2), GateMode::Full),
        ("fgp_rnn_hard", model_spec(Variant::FgpRnn, 3, 1), GateMode::Hard),
        ("fgp_lstm_hard", model_spec(Variant::FgpLstm, 3, 1), GateMode::Hard),
        (
            "stacked_fgp_rnn_hard",
            model_spec(Variant::FgpRnn, 2, 2),
            GateMode::Hard,
        ),
        (
            "stacked_fgp_lstm_hard",
            model_spec(Variant::FgpLstm, 2, 2),
            GateMode::Hard,
        ),
        ("fgl_rnn_hard", model_spec(Variant::FglRnn, 1, 3), GateMode::Hard),
        ("fgl_lstm_hard", model_spec(Variant::FglLstm, 1, 3), GateMode::Hard),
        ("fgp_rnn_soft", model_spec(Variant::FgpRnn, 3, 1), GateMode::SoftParam),
        ("fgp_lstm_soft", model_spec(Variant::FgpLstm, 3, 1), GateMode::SoftParam),
        (
            "stacked_fgp_lstm_soft",
            model_spec(Variant::FgpLstm, 2, 2),
            GateMode::SoftParam,
        ),
        ("fgl_rnn_soft", model_spec(Variant::FglRnn, 1, 3), GateMode::SoftParam),
        ("fgl_lstm_soft", model_spec(Variant::FglLstm, 1, 3), GateMode::SoftParam),
    ];
    for (name, spec, mode) in hard_variants {
        let store = model_store(&spec, seed, matches!(mode, GateMode::SoftParam));
        let spec_clone = spec.clone();
        cases.push(GradCase::new(name, store, move |s| {
            unroll_loss(s, &spec_clone, mode, seed)
        }));
    }
    cases.push(adaptive_path_case(seed));
    cases
}

/// The full adaptive-predictor path: shared embedding, predictor trunk and
/// regression head, duration standardization into gate range, steepened
/// sigmoid coefficients, soft convex combination, host unroll.
fn adaptive_path_case(seed: u64) -> GradCase {
    use crate::fixation::{normalize_durations_node, AdaptiveFp};

    let spec = model_spec(Variant::FgpLstm, 3, 1);
    let vocab = 6usize;
    let mut store = ParamStore::new();
    let mut rng = RngPool::new(seed).stream("init");
    {
        let numel = vocab * EMB;
        let data: Vec<f64> = (0..numel).map(|_| rng.gen_range(-0.5..0.5)).collect();
        store.insert("embed.weight", Tensor::from_rows(vocab, EMB, data).unwrap());
    }
    spec.build::<f64>("model").register(&mut store, &mut rng);
    AdaptiveFp::<f64>::for_host(&spec, "fp").register(&mut store, &mut rng);

    let spec_clone = spec.clone();
    GradCase::new("adaptive_fp_path", store, move |s| {
        let mut g = Graph::training();
        let mut rng: Stream = RngPool::new(0).stream("unused");
        let mut tok_rng = RngPool::new(seed ^ 0xabcd).stream("tokens");
        let tokens: Vec<Vec<usize>> = (0..STEPS)
            .map(|_| (0..BATCH).map(|_| tok_rng.gen_range(0..vocab)).collect())
            .collect();

        let mut fp = AdaptiveFp::<f64>::for_host(&spec_clone, "fp");
        let mut host = spec_clone.build::<f64>("model");
        fp.begin(&mut g, s, BATCH)?;
        host.begin(&mut g, s, BATCH)?;
        let table = g.param(s, "embed.weight")?;

        let mut dhats = Vec::with_capacity(STEPS);
        for step_tokens in &tokens {
            let x = g.embedding(table, step_tokens)?;
            dhats.push(fp.step_duration(&mut g, s, &mut rng, x)?);
        }
        let all = g.concat(&dhats, 0)?;
        let dbar = normalize_durations_node(&mut g, all, spec_clone.max_gate())?;

        let mut outputs = Vec::with_capacity(STEPS);
        for (t, step_tokens) in tokens.iter().enumerate() {
            let x = g.embedding(table, step_tokens)?;
            let dbar_t = g.slice(dbar, 0, t * BATCH, BATCH)?;
            outputs.push(host.step(&mut g, &mut rng, x, StepGate::Soft(dbar_t))?);
        }
        let cat = g.concat(&outputs, 0)?;
        let loss = probe(&mut g, cat, seed)?;
        Ok((g, loss))
    })
}
