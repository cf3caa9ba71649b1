//! Central finite-difference gradient oracle.
//!
//! This module deliberately never touches the tape's backward rules: it
//! re-runs the forward pass with perturbed parameters, so it stays an
//! independent check of `Graph::backward`.

use crate::error::Result;
use crate::graph::GradMap;
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;

/// Forward evaluation used by the checker: builds a fresh graph from the
/// given parameters and returns the scalar loss value. Implementations must
/// be deterministic (re-seed any randomness internally on every call).
pub type LossFn<'a> = dyn Fn(&ParamStore<f64>) -> Result<f64> + 'a;

/// Central finite differences of `loss` with respect to every element of
/// every parameter in `store`.
pub fn numeric_grads(store: &ParamStore<f64>, loss: &LossFn, step: f64) -> Result<GradMap<f64>> {
    let names: Vec<String> = store.names().map(str::to_string).collect();
    let mut grads = GradMap::new();
    for name in names {
        let numel = store.get(&name).unwrap().numel();
        let mut g = vec![0.0; numel];
        for i in 0..numel {
            let mut plus = store.clone();
            plus.get_mut(&name).unwrap().data_mut()[i] += step;
            let mut minus = store.clone();
            minus.get_mut(&name).unwrap().data_mut()[i] -= step;
            g[i] = (loss(&plus)? - loss(&minus)?) / (2.0 * step);
        }
        let shape = store.get(&name).unwrap().shape().to_vec();
        grads.insert(name, Tensor::new(shape, g)?);
    }
    Ok(grads)
}

/// Worst relative error between analytic and numeric gradients over all
/// parameters. The error is `|a - n| / max(|a|, |n|, 1)`, which stays
/// meaningful for near-zero gradients.
pub fn max_relative_error(analytic: &GradMap<f64>, numeric: &GradMap<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for (name, a) in analytic {
        let n = numeric
            .get(name)
            .unwrap_or_else(|| panic!("numeric grads missing '{name}'"));
        for (&av, &nv) in a.data().iter().zip(n.data()) {
            let scale = av.abs().max(nv.abs()).max(1.0);
            worst = worst.max((av - nv).abs() / scale);
        }
    }
    worst
}

/// Runs both routes and returns the worst relative error.
pub fn check(
    store: &ParamStore<f64>,
    loss: &LossFn,
    analytic: &GradMap<f64>,
    step: f64,
) -> Result<f64> {
    let numeric = numeric_grads(store, loss, step)?;
    Ok(max_relative_error(analytic, &numeric))
}

/// A named, self-contained gradient-check fixture: a parameter store plus a
/// deterministic graph builder producing a scalar loss from it.
pub struct GradCase {
    pub name: String,
    pub store: ParamStore<f64>,
    #[allow(clippy::type_complexity)]
    pub build: Box<dyn Fn(&ParamStore<f64>) -> Result<(crate::graph::Graph<f64>, crate::graph::Var)>>,
}

impl GradCase {
    pub fn new(
        name: impl Into<String>,
        store: ParamStore<f64>,
        build: impl Fn(&ParamStore<f64>) -> Result<(crate::graph::Graph<f64>, crate::graph::Var)>
            + 'static,
    ) -> Self {
        GradCase {
            name: name.into(),
            store,
            build: Box::new(build),
        }
    }

    /// Worst relative error between the tape's backward pass and central
    /// finite differences at the given step.
    pub fn run(&self, step: f64) -> Result<f64> {
        let (graph, loss) = (self.build)(&self.store)?;
        let analytic = graph.backward(loss)?;
        let numeric = numeric_grads(
            &self.store,
            &|s| {
                let (g, l) = (self.build)(s)?;
                Ok(g.scalar_value(l))
            },
            step,
        )?;
        Ok(max_relative_error(&analytic, &numeric))
    }
}

pub mod cases;
