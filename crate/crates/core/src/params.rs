//! Named parameter storage and initialization.

use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::tensor::{Real, Tensor};
use indexmap::IndexMap;
use rand::Rng;

/// Flat, insertion-ordered map of named parameter tensors. One store holds
/// every trainable tensor of a model assembly; components that share a
/// tensor (e.g. a host model and an adaptive predictor sharing an embedding
/// table) simply reference the same name.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    entries: IndexMap<String, Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) {
        self.entries.insert(name.into(), tensor);
    }

    /// Matrix initialized uniformly in `±1/sqrt(fan_in)`.
    pub fn insert_uniform(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        fan_in: usize,
        rng: &mut Stream,
    ) {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let numel: usize = shape.iter().product();
        let data: Vec<T> = (0..numel)
            .map(|_| T::of(rng.gen_range(-bound..bound)))
            .collect();
        self.entries
            .insert(name.into(), Tensor::new(shape, data).expect("init shape"));
    }

    pub fn insert_zeros(&mut self, name: impl Into<String>, shape: Vec<usize>) {
        self.entries.insert(name.into(), Tensor::zeros(shape));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<T>> {
        self.get(name).ok_or_else(|| Error::UnknownParameter {
            name: name.to_string(),
        })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total element count over parameters whose name passes `filter`.
    pub fn count_elements(&self, filter: impl Fn(&str) -> bool) -> usize {
        self.iter()
            .filter(|(n, _)| filter(n))
            .map(|(_, t)| t.numel())
            .sum()
    }

    /// FNV-1a digest of shapes and little-endian payloads, for cheap
    /// "did anything move" audits.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |b: u8| {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        };
        for (name, t) in &self.entries {
            for b in name.bytes() {
                eat(b);
            }
            for &d in t.shape() {
                for b in (d as u64).to_le_bytes() {
                    eat(b);
                }
            }
            let mut buf = Vec::with_capacity(8);
            for &v in t.data() {
                buf.clear();
                v.write_le(&mut buf);
                for &b in &buf {
                    eat(b);
                }
            }
        }
        h
    }
}
