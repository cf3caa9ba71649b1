//! Shared fixtures for the throughput benchmarks.

use fgrnn::gated::{ModelSpec, Variant};
use fgrnn::params::ParamStore;
use fgrnn::rng::RngPool;
use fgrnn::tensor::{Real, Tensor};
use rand::Rng;

pub fn spec(variant: Variant, components: usize, hidden: usize, emb: usize) -> ModelSpec {
    ModelSpec {
        variant,
        components,
        layers: 1,
        hidden,
        emb_dim: emb,
        proj_dim: None,
        steepness: 4.0,
        inter_dropout: 0.0,
    }
}

pub fn registered_store<T: Real>(spec: &ModelSpec, seed: u64) -> ParamStore<T> {
    let mut store = ParamStore::new();
    let mut rng = RngPool::new(seed).stream("init");
    spec.build::<T>("model").register(&mut store, &mut rng);
    store
}

pub fn random_batch<T: Real>(rows: usize, cols: usize, seed: u64) -> Tensor<T> {
    let mut rng = RngPool::new(seed).stream("bench-data");
    Tensor::from_rows(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| T::of(rng.gen_range(-1.0..1.0)))
            .collect(),
    )
    .expect("batch shape")
}

pub use rand;
