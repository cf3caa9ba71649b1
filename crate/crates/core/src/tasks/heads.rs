//! Task heads and scalar metrics.

use crate::data::Vocab;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::ParamStore;
use crate::rng::Stream;
use crate::tensor::Real;

/// Name of the shared embedding table inside a task parameter store. The
/// host trunk, any adaptive predictor, and the tied output projection all
/// resolve tokens through this one tensor.
pub const EMBED_NAME: &str = "embed.weight";

/// Language-model head: embedding table in, a fully-connected + tanh
/// bottleneck back to embedding width, then an output projection that is
/// the embedding table itself transposed (weight tying; no output bias).
#[derive(Clone, Debug)]
pub struct LmHead {
    pub vocab_size: usize,
    pub emb_dim: usize,
    pub model_out: usize,
}

impl LmHead {
    pub fn new(vocab_size: usize, emb_dim: usize, model_out: usize) -> Self {
        LmHead {
            vocab_size,
            emb_dim,
            model_out,
        }
    }

    pub fn register<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut Stream) {
        store.insert_uniform(
            EMBED_NAME,
            vec![self.vocab_size, self.emb_dim],
            self.emb_dim,
            rng,
        );
        store.insert_uniform(
            "head.fc1.w",
            vec![self.emb_dim, self.model_out],
            self.model_out,
            rng,
        );
        store.insert_zeros("head.fc1.b", vec![self.emb_dim]);
    }

    pub fn embed<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        tokens: &[usize],
    ) -> Result<Var> {
        let table = g.param(store, EMBED_NAME)?;
        g.embedding(table, tokens)
    }

    /// `[batch, model_out] -> [batch, vocab]` logits through the tied
    /// output projection.
    pub fn logits<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        model_out: Var,
    ) -> Result<Var> {
        let w1 = g.param(store, "head.fc1.w")?;
        let b1 = g.param(store, "head.fc1.b")?;
        let z = g.linear(model_out, w1, b1)?;
        let z = g.tanh(z);
        let table = g.param(store, EMBED_NAME)?;
        g.matmul_nt(z, table)
    }

    /// Trainable head parameters. The embedding and the tied output layer
    /// are excluded by convention.
    pub fn param_count(&self) -> usize {
        self.emb_dim * self.model_out + self.emb_dim
    }
}

/// Sentiment head: same bottleneck, then a two-logit output layer.
#[derive(Clone, Debug)]
pub struct SentimentHead {
    pub vocab_size: usize,
    pub emb_dim: usize,
    pub model_out: usize,
}

impl SentimentHead {
    pub fn new(vocab_size: usize, emb_dim: usize, model_out: usize) -> Self {
        SentimentHead {
            vocab_size,
            emb_dim,
            model_out,
        }
    }

    pub fn register<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut Stream) {
        store.insert_uniform(
            EMBED_NAME,
            vec![self.vocab_size, self.emb_dim],
            self.emb_dim,
            rng,
        );
        store.insert_uniform(
            "head.fc1.w",
            vec![self.emb_dim, self.model_out],
            self.model_out,
            rng,
        );
        store.insert_zeros("head.fc1.b", vec![self.emb_dim]);
        store.insert_uniform("head.out.w", vec![2, self.emb_dim], self.emb_dim, rng);
        store.insert_zeros("head.out.b", vec![2]);
    }

    pub fn embed<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        tokens: &[usize],
    ) -> Result<Var> {
        let table = g.param(store, EMBED_NAME)?;
        g.embedding(table, tokens)
    }

    /// `[batch, model_out] -> [batch, 2]` class logits.
    pub fn logits<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        model_out: Var,
    ) -> Result<Var> {
        let w1 = g.param(store, "head.fc1.w")?;
        let b1 = g.param(store, "head.fc1.b")?;
        let z = g.linear(model_out, w1, b1)?;
        let z = g.tanh(z);
        let w2 = g.param(store, "head.out.w")?;
        let b2 = g.param(store, "head.out.b")?;
        g.linear(z, w2, b2)
    }

    pub fn param_count(&self) -> usize {
        self.emb_dim * self.model_out + self.emb_dim + 2 * self.emb_dim + 2
    }
}

/// `exp` of the mean negative log-likelihood over target positions.
/// `log_probs[t]` is the log-distribution at position `t` (rank 1, vocab
/// wide); `targets[t]` indexes into it.
pub fn perplexity(log_probs: &[Vec<f64>], targets: &[usize]) -> Result<f64> {
    if targets.is_empty() {
        return Err(Error::invalid("perplexity", "no target positions"));
    }
    if log_probs.len() != targets.len() {
        return Err(Error::invalid(
            "perplexity",
            format!("{} rows vs {} targets", log_probs.len(), targets.len()),
        ));
    }
    let mut nll = 0.0;
    for (row, &t) in log_probs.iter().zip(targets) {
        nll -= row[t];
    }
    Ok((nll / targets.len() as f64).exp())
}

/// Perplexity from an accumulated NLL sum.
pub fn perplexity_from_nll(nll_sum: f64, tokens: usize) -> f64 {
    (nll_sum / tokens.max(1) as f64).exp()
}

/// Classification accuracy over `{0, 1}` labels.
pub fn accuracy(predictions: &[u8], labels: &[u8]) -> Result<f64> {
    if predictions.len() != labels.len() || labels.is_empty() {
        return Err(Error::invalid(
            "accuracy",
            format!("{} predictions vs {} labels", predictions.len(), labels.len()),
        ));
    }
    if let Some(bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::invalid("accuracy", format!("label {bad} outside {{0,1}}")));
    }
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Loads whitespace-separated pretrained embeddings ("token v1 .. vd" per
/// line) into the embedding table rows of in-vocabulary tokens. Rows for
/// uncovered tokens keep their random initialization. Returns how many
/// rows were filled.
pub fn apply_pretrained_embeddings<T: Real>(
    path: &std::path::Path,
    vocab: &Vocab,
    store: &mut ParamStore<T>,
    table_name: &str,
) -> Result<usize> {
    use std::io::BufRead;
    let table = store.get(table_name).ok_or_else(|| Error::UnknownParameter {
        name: table_name.into(),
    })?;
    let dim = table.cols();
    let file = std::fs::File::open(path)?;
    let mut filled = 0usize;
    for (idx, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        if !vocab.contains(token) {
            continue;
        }
        let values: Vec<f64> = parts
            .map(|p| {
                p.parse::<f64>().map_err(|_| Error::Corpus {
                    path: path.display().to_string(),
                    line: idx + 1,
                    msg: format!("bad float '{p}'"),
                })
            })
            .collect::<Result<_>>()?;
        if values.len() != dim {
            return Err(Error::Corpus {
                path: path.display().to_string(),
                line: idx + 1,
                msg: format!("{} values for embedding dim {dim}", values.len()),
            });
        }
        let id = vocab.lookup(token);
        let row = &mut store.get_mut(table_name).unwrap().data_mut()[id * dim..(id + 1) * dim];
        for (dst, v) in row.iter_mut().zip(values) {
            *dst = T::of(v);
        }
        filled += 1;
    }
    Ok(filled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn uniform_model_perplexity_equals_vocab_size() {
        let vocab = 4;
        let row = vec![-(vocab as f64).ln(); vocab];
        let log_probs = vec![row.clone(), row.clone(), row];
        let ppl = perplexity(&log_probs, &[0, 3, 2]).unwrap();
        assert_relative_eq!(ppl, 4.0, epsilon = 1e-12);
    }

    #[test]
    fn perfect_prediction_has_perplexity_one() {
        let mut row = vec![f64::NEG_INFINITY; 3];
        row[1] = 0.0;
        let ppl = perplexity(&[row], &[1]).unwrap();
        assert_relative_eq!(ppl, 1.0);
    }

    #[test]
    fn two_token_hand_value() {
        // probs 0.5 and 0.25 -> exp((ln2 + ln4)/2) = 2sqrt(2)
        let rows = vec![vec![0.5f64.ln(), 0.5f64.ln()], vec![0.25f64.ln(), 0.75f64.ln()]];
        let ppl = perplexity(&rows, &[0, 0]).unwrap();
        assert_relative_eq!(ppl, 2.828427, epsilon = 1e-6);
    }

    #[test]
    fn empty_targets_are_rejected() {
        assert!(perplexity(&[], &[]).is_err());
    }

    #[test]
    fn accuracy_counts_matches_and_validates_labels() {
        assert_relative_eq!(accuracy(&[1, 0, 1], &[1, 0, 1]).unwrap(), 1.0);
        assert_relative_eq!(accuracy(&[1, 1, 1, 1], &[1, 0, 1, 0]).unwrap(), 0.5);
        assert!(accuracy(&[1], &[2]).is_err());
    }

    #[test]
    fn constant_predictor_on_shuffled_balanced_labels_is_near_chance() {
        use rand::seq::SliceRandom;
        let mut labels: Vec<u8> = (0..1000).map(|i| (i % 2) as u8).collect();
        let mut rng = crate::rng::RngPool::new(3).stream("labels");
        labels.shuffle(&mut rng);
        let constant = vec![1u8; labels.len()];
        let acc = accuracy(&constant, &labels).unwrap();
        assert!((acc - 0.5).abs() <= 0.05, "acc={acc}");
    }
}
