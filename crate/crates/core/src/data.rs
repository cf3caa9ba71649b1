//! Eye-tracking corpus ingestion, normalization, aggregation,
//! discretization, token alignment, splits, and synthetic fixtures.
//!
//! Raw recordings enter through a line-delimited JSON interchange format —
//! one sentence per line with per-subject total reading times per word —
//! because the upstream corpus distributions are proprietary and arrive in
//! incompatible layouts. Writing an adapter from a raw corpus to this
//! format is the caller's job.

use crate::error::{Error, Result};
use crate::fixation::FixationTarget;
use crate::rng::RngPool;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

// ── Interchange format ──────────────────────────────────────────────────

/// One presented sentence with per-subject total reading times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawSentence {
    pub sentence_id: String,
    /// Words exactly as presented (whitespace tokenization).
    pub words: Vec<String>,
    /// `trt_ms[subject][word]` in milliseconds; 0 marks a skipped word.
    pub trt_ms: Vec<Vec<f64>>,
}

/// All sentences of one recording corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct RawFixationCorpus {
    pub corpus_id: String,
    pub sentences: Vec<RawSentence>,
}

#[derive(Serialize, Deserialize)]
struct CorpusLine<'a> {
    corpus_id: std::borrow::Cow<'a, str>,
    sentence_id: std::borrow::Cow<'a, str>,
    words: Vec<String>,
    trt_ms: Vec<Vec<f64>>,
}

/// Reads the interchange file, validating per line, grouping sentences by
/// corpus id in order of first appearance.
pub fn load_corpora(path: &Path) -> Result<Vec<RawFixationCorpus>> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let path_str = path.display().to_string();
    let mut order: Vec<String> = Vec::new();
    let mut grouped: HashMap<String, Vec<RawSentence>> = HashMap::new();
    let mut any = false;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        any = true;
        let parsed: CorpusLine = serde_json::from_str(&line).map_err(|e| Error::Corpus {
            path: path_str.clone(),
            line: line_no,
            msg: e.to_string(),
        })?;
        let corpus_err = |msg: String| Error::Corpus {
            path: path_str.clone(),
            line: line_no,
            msg,
        };
        if parsed.words.is_empty() {
            return Err(corpus_err("sentence has no words".into()));
        }
        if parsed.words.iter().any(|w| w.is_empty()) {
            return Err(corpus_err("empty word".into()));
        }
        if parsed.trt_ms.is_empty() {
            return Err(corpus_err("no subjects".into()));
        }
        for (s, subject) in parsed.trt_ms.iter().enumerate() {
            if subject.len() != parsed.words.len() {
                return Err(corpus_err(format!(
                    "subject {s} has {} durations for {} words",
                    subject.len(),
                    parsed.words.len()
                )));
            }
            if let Some(bad) = subject.iter().find(|v| !v.is_finite() || **v < 0.0) {
                return Err(corpus_err(format!("invalid duration {bad}")));
            }
        }
        let corpus_id = parsed.corpus_id.into_owned();
        if !grouped.contains_key(&corpus_id) {
            order.push(corpus_id.clone());
        }
        grouped.entry(corpus_id).or_default().push(RawSentence {
            sentence_id: parsed.sentence_id.into_owned(),
            words: parsed.words,
            trt_ms: parsed.trt_ms,
        });
    }
    if !any {
        return Err(Error::Corpus {
            path: path_str,
            line: 0,
            msg: "empty file".into(),
        });
    }
    Ok(order
        .into_iter()
        .map(|id| RawFixationCorpus {
            sentences: grouped.remove(&id).unwrap_or_default(),
            corpus_id: id,
        })
        .collect())
}

/// Writes corpora back to the interchange format (inverse of
/// [`load_corpora`]; round-trips bit-exactly).
pub fn save_corpora(path: &Path, corpora: &[RawFixationCorpus]) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    for corpus in corpora {
        for s in &corpus.sentences {
            let line = CorpusLine {
                corpus_id: (&corpus.corpus_id).into(),
                sentence_id: (&s.sentence_id).into(),
                words: s.words.clone(),
                trt_ms: s.trt_ms.clone(),
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
    }
    out.flush()?;
    Ok(())
}

// ── Aggregation ─────────────────────────────────────────────────────────

/// One task token with its aggregated fixation statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixationRecord {
    pub token: String,
    /// Mean normalized duration across subjects.
    pub mean: f64,
    /// Population variance across subjects; `None` encodes infinite
    /// variance (pure punctuation / unconstrained tokens).
    pub var: Option<f64>,
    /// Discrete bin in `1..=K`, present only after discretization.
    pub bin: Option<usize>,
}

impl FixationRecord {
    pub fn variance(&self) -> f64 {
        self.var.unwrap_or(f64::INFINITY)
    }

    pub fn target(&self) -> FixationTarget {
        FixationTarget {
            mean: self.mean,
            var: self.variance(),
        }
    }
}

/// One sentence of aggregated records (word- or token-level).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixSentence {
    pub corpus_id: String,
    pub sentence_id: String,
    pub tokens: Vec<FixationRecord>,
}

/// Scope of the duration normalization applied before subject averaging.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormScope {
    /// Divide every duration by the corpus-wide mean (default).
    Corpus,
    /// Divide each subject's durations by that subject's own mean.
    PerSubject,
}

/// Normalizes durations, then averages across subjects per word, producing
/// word-level records with population variance. Skipped words (zero TRT)
/// participate as zeros.
pub fn aggregate_subjects(
    corpus: &RawFixationCorpus,
    scope: NormScope,
) -> Result<Vec<FixSentence>> {
    let mut corpus_sum = 0.0;
    let mut corpus_n = 0usize;
    let mut subject_sums: HashMap<usize, (f64, usize)> = HashMap::new();
    for s in &corpus.sentences {
        for (subj, durations) in s.trt_ms.iter().enumerate() {
            for &d in durations {
                corpus_sum += d;
                corpus_n += 1;
                let entry = subject_sums.entry(subj).or_insert((0.0, 0));
                entry.0 += d;
                entry.1 += 1;
            }
        }
    }
    if corpus_n == 0 || corpus_sum == 0.0 {
        return Err(Error::invalid(
            "aggregate_subjects",
            format!("corpus '{}' has no nonzero durations", corpus.corpus_id),
        ));
    }
    let corpus_mean = corpus_sum / corpus_n as f64;
    let subject_mean = |subj: usize| -> Result<f64> {
        let (sum, n) = subject_sums[&subj];
        if sum == 0.0 {
            return Err(Error::invalid(
                "aggregate_subjects",
                format!("subject {subj} has all-zero durations"),
            ));
        }
        Ok(sum / n as f64)
    };

    let mut out = Vec::with_capacity(corpus.sentences.len());
    for s in &corpus.sentences {
        let subjects = s.trt_ms.len();
        let mut tokens = Vec::with_capacity(s.words.len());
        for (w, word) in s.words.iter().enumerate() {
            let mut normalized = Vec::with_capacity(subjects);
            for subj in 0..subjects {
                let denom = match scope {
                    NormScope::Corpus => corpus_mean,
                    NormScope::PerSubject => subject_mean(subj)?,
                };
                normalized.push(s.trt_ms[subj][w] / denom);
            }
            // Mean and variance computed about the first sample, so
            // identical samples give exactly zero variance.
            let base = normalized[0];
            let shifted_mean =
                normalized.iter().map(|v| v - base).sum::<f64>() / subjects as f64;
            let mean = base + shifted_mean;
            let var = normalized
                .iter()
                .map(|v| {
                    let d = (v - base) - shifted_mean;
                    d * d
                })
                .sum::<f64>()
                / subjects as f64;
            tokens.push(FixationRecord {
                token: word.clone(),
                mean,
                var: Some(var),
                bin: None,
            });
        }
        out.push(FixSentence {
            corpus_id: corpus.corpus_id.clone(),
            sentence_id: s.sentence_id.clone(),
            tokens,
        });
    }
    Ok(out)
}

// ── Token alignment ─────────────────────────────────────────────────────

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

/// Splits a presented word into task tokens: punctuation runs split off at
/// either end, contractions split at the apostrophe ("I'm" -> "I", "'m").
/// A word with no alphanumeric character stays whole.
pub fn word_tokenize(word: &str) -> Vec<String> {
    if !word.chars().any(is_word_char) {
        return vec![word.to_string()];
    }
    let chars: Vec<char> = word.chars().collect();
    let mut pieces: Vec<String> = Vec::new();
    let mut current = String::new();
    let mut current_is_word = is_word_char(chars[0]) || chars[0] == '\'';
    for (i, &c) in chars.iter().enumerate() {
        let word_char = is_word_char(c);
        let apostrophe_in_word =
            c == '\'' && i + 1 < chars.len() && is_word_char(chars[i + 1]) && current_is_word;
        if apostrophe_in_word {
            // Start a new core piece at the apostrophe: "don't" -> "don","'t".
            if !current.is_empty() {
                pieces.push(std::mem::take(&mut current));
            }
            current.push(c);
            current_is_word = true;
            continue;
        }
        if current.is_empty() {
            current.push(c);
            current_is_word = word_char;
        } else if word_char == current_is_word {
            current.push(c);
        } else {
            pieces.push(std::mem::take(&mut current));
            current.push(c);
            current_is_word = word_char;
        }
    }
    if !current.is_empty() {
        pieces.push(current);
    }
    pieces
}

/// Expands word-level records into task-token records. Sub-tokens with any
/// word character inherit the word's statistics; pure-punctuation sub-tokens
/// get duration 1 (the normalized mean scale) with infinite variance.
pub fn align_tokens(sentence: &FixSentence) -> Result<FixSentence> {
    let mut tokens = Vec::with_capacity(sentence.tokens.len());
    for word in &sentence.tokens {
        let pieces = word_tokenize(&word.token);
        if pieces.is_empty() {
            return Err(Error::invalid(
                "align_tokens",
                format!("tokenizer produced no tokens for '{}'", word.token),
            ));
        }
        for piece in pieces {
            if piece.chars().any(is_word_char) {
                tokens.push(FixationRecord {
                    token: piece,
                    mean: word.mean,
                    var: word.var,
                    bin: None,
                });
            } else {
                tokens.push(FixationRecord {
                    token: piece,
                    mean: 1.0,
                    var: None,
                    bin: None,
                });
            }
        }
    }
    Ok(FixSentence {
        corpus_id: sentence.corpus_id.clone(),
        sentence_id: sentence.sentence_id.clone(),
        tokens,
    })
}

// ── Quantile discretization ─────────────────────────────────────────────

/// Assigns K-quantile bins (1-based) to values: sorted values split into K
/// nearly-equal-count runs, ties always share the bin of their first
/// occurrence. Order-preserving.
pub fn quantile_bins(values: &[f64], k: usize) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::invalid("quantile_discretize", "k must be at least 2"));
    }
    let n = values.len();
    if n < k {
        return Err(Error::invalid(
            "quantile_discretize",
            format!("{n} records cannot fill {k} bins"),
        ));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut bins = vec![0usize; n];
    let mut prev_value = f64::NAN;
    let mut prev_bin = 0usize;
    for (rank, &idx) in order.iter().enumerate() {
        let ideal = rank * k / n;
        let bin = if values[idx] == prev_value {
            prev_bin
        } else {
            ideal
        };
        bins[idx] = bin + 1;
        prev_value = values[idx];
        prev_bin = bin;
    }
    Ok(bins)
}

/// Discretizes every record's mean duration across all sentences jointly.
pub fn quantile_discretize(sentences: &mut [FixSentence], k: usize) -> Result<()> {
    let values: Vec<f64> = sentences
        .iter()
        .flat_map(|s| s.tokens.iter().map(|t| t.mean))
        .collect();
    let bins = quantile_bins(&values, k)?;
    let mut it = bins.into_iter();
    for s in sentences.iter_mut() {
        for t in &mut s.tokens {
            t.bin = Some(it.next().expect("one bin per record"));
        }
    }
    Ok(())
}

// ── Splits ──────────────────────────────────────────────────────────────

/// Shuffled sentence-level split specification.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.75,
            seed: 0,
        }
    }
}

/// Deterministic shuffled partition at the given fraction.
pub fn split_train_test<I>(items: Vec<I>, spec: &SplitSpec) -> (Vec<I>, Vec<I>) {
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut rng = RngPool::new(spec.seed).stream("split");
    order.shuffle(&mut rng);
    let n_train = ((items.len() as f64) * spec.train_fraction).round() as usize;
    let mut slots: Vec<Option<I>> = items.into_iter().map(Some).collect();
    let mut train = Vec::with_capacity(n_train);
    let mut test = Vec::with_capacity(slots.len().saturating_sub(n_train));
    for (pos, idx) in order.into_iter().enumerate() {
        let item = slots[idx].take().expect("each index visited once");
        if pos < n_train {
            train.push(item);
        } else {
            test.push(item);
        }
    }
    (train, test)
}

// ── Vocabulary ──────────────────────────────────────────────────────────

pub const UNK_TOKEN: &str = "<unk>";
pub const EOS_TOKEN: &str = "<eos>";

/// Token table with a single unknown id. Built from a training split with a
/// minimum frequency cutoff; id order is deterministic (specials, then
/// frequency-descending with lexicographic tie-break).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    pub unk: usize,
}

impl Vocab {
    pub fn build<'a>(
        tokens: impl Iterator<Item = &'a str>,
        min_freq: usize,
        extra_specials: &[&str],
    ) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for t in tokens {
            *counts.entry(t).or_insert(0) += 1;
        }
        let mut list: Vec<String> = vec![UNK_TOKEN.to_string()];
        list.extend(extra_specials.iter().map(|s| s.to_string()));
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_freq && *t != UNK_TOKEN && !extra_specials.contains(t))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        list.extend(ranked.into_iter().map(|(t, _)| t.to_string()));
        Vocab::from_tokens(list)
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab {
            tokens,
            index,
            unk: 0,
        }
    }

    pub fn lookup(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(self.unk)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let raw: Vocab = serde_json::from_reader(std::io::BufReader::new(file))?;
        Ok(Vocab::from_tokens(raw.tokens))
    }
}

// ── Task text corpora ───────────────────────────────────────────────────

/// Plain-text task corpus: one sentence per line, whitespace tokens.
pub fn load_text_corpus(path: &Path) -> Result<Vec<Vec<String>>> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut sentences = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let tokens: Vec<String> = line.split_whitespace().map(str::to_string).collect();
        if !tokens.is_empty() {
            sentences.push(tokens);
        }
    }
    if sentences.is_empty() {
        return Err(Error::Corpus {
            path: path.display().to_string(),
            line: 0,
            msg: "empty corpus".into(),
        });
    }
    Ok(sentences)
}

pub fn save_text_corpus(path: &Path, sentences: &[Vec<String>]) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    for s in sentences {
        writeln!(out, "{}", s.join(" "))?;
    }
    out.flush()?;
    Ok(())
}

/// Labeled sentence for the sentiment task; human fixations optional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SentimentExample {
    pub sentence_id: String,
    pub words: Vec<String>,
    pub label: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trt_ms: Option<Vec<Vec<f64>>>,
}

pub fn load_sentiment_corpus(path: &Path) -> Result<Vec<SentimentExample>> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let path_str = path.display().to_string();
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: SentimentExample = serde_json::from_str(&line).map_err(|e| Error::Corpus {
            path: path_str.clone(),
            line: idx + 1,
            msg: e.to_string(),
        })?;
        if ex.label > 1 {
            return Err(Error::Corpus {
                path: path_str.clone(),
                line: idx + 1,
                msg: format!("label must be 0 or 1, got {}", ex.label),
            });
        }
        if ex.words.is_empty() {
            return Err(Error::Corpus {
                path: path_str.clone(),
                line: idx + 1,
                msg: "sentence has no words".into(),
            });
        }
        out.push(ex);
    }
    if out.is_empty() {
        return Err(Error::Corpus {
            path: path_str,
            line: 0,
            msg: "empty corpus".into(),
        });
    }
    Ok(out)
}

pub fn save_sentiment_corpus(path: &Path, examples: &[SentimentExample]) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    for ex in examples {
        serde_json::to_writer(&mut out, ex)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Occurrence counts of tokens, for frequency-ranked gate schedules.
pub fn token_frequencies<'a>(tokens: impl Iterator<Item = &'a str>) -> HashMap<String, u64> {
    let mut counts = HashMap::new();
    for t in tokens {
        *counts.entry(t.to_string()).or_insert(0) += 1;
    }
    counts
}

/// One preprocessed sentence as produced by the `prep` pipeline: aligned
/// token records with bins, tagged with its split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreppedSentence {
    pub corpus_id: String,
    pub sentence_id: String,
    pub split: String,
    pub tokens: Vec<FixationRecord>,
}

pub fn save_prepped(path: &Path, sentences: &[PreppedSentence]) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    for s in sentences {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_prepped(path: &Path) -> Result<Vec<PreppedSentence>> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let path_str = path.display().to_string();
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: PreppedSentence = serde_json::from_str(&line).map_err(|e| Error::Corpus {
            path: path_str.clone(),
            line: idx + 1,
            msg: e.to_string(),
        })?;
        out.push(s);
    }
    if out.is_empty() {
        return Err(Error::Corpus {
            path: path_str,
            line: 0,
            msg: "empty file".into(),
        });
    }
    Ok(out)
}

// ── Synthetic fixtures ──────────────────────────────────────────────────

/// Generator spec for a synthetic eye-tracking corpus with known latent
/// per-type durations.
#[derive(Clone, Debug)]
pub struct SynthFixationSpec {
    pub vocab_size: usize,
    pub sentences: usize,
    pub sentence_len: usize,
    pub subjects: usize,
    /// Per-subject, per-occurrence gaussian noise (milliseconds).
    pub noise_ms: f64,
    /// Number of latent duration classes types are spread over.
    pub classes: usize,
    pub seed: u64,
}

impl Default for SynthFixationSpec {
    fn default() -> Self {
        SynthFixationSpec {
            vocab_size: 60,
            sentences: 300,
            sentence_len: 12,
            subjects: 3,
            noise_ms: 10.0,
            classes: 4,
            seed: 0,
        }
    }
}

/// Synthetic token type name.
pub fn synth_token(idx: usize) -> String {
    format!("w{idx:04}")
}

/// Latent mean duration of a synthetic type: classes are well separated and
/// a small per-type offset keeps values distinct within a class.
fn latent_duration(idx: usize, classes: usize) -> f64 {
    let class = idx % classes;
    60.0 + 120.0 * class as f64 + 0.017 * idx as f64
}

/// Builds a corpus where each token type carries a latent true duration
/// plus per-subject noise. Types cycle round-robin through sentence slots,
/// so occurrence counts stay balanced and the latent classes fill quantile
/// bins evenly.
pub fn synth_fixation_corpus(spec: &SynthFixationSpec) -> RawFixationCorpus {
    let mut noise_rng = RngPool::new(spec.seed).stream("synth-noise");
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut sentences = Vec::with_capacity(spec.sentences);
    let mut cursor = 0usize;
    for s in 0..spec.sentences {
        let words: Vec<String> = (0..spec.sentence_len)
            .map(|_| {
                let idx = cursor % spec.vocab_size;
                cursor += 1;
                synth_token(idx)
            })
            .collect();
        let trt_ms: Vec<Vec<f64>> = (0..spec.subjects)
            .map(|_| {
                words
                    .iter()
                    .map(|w| {
                        let idx: usize = w[1..].parse().expect("synthetic token");
                        let base = latent_duration(idx, spec.classes);
                        let noisy = base + spec.noise_ms * normal.sample(&mut noise_rng);
                        noisy.max(1.0)
                    })
                    .collect()
            })
            .collect();
        sentences.push(RawSentence {
            sentence_id: format!("s{s:05}"),
            words,
            trt_ms,
        });
    }
    RawFixationCorpus {
        corpus_id: "synthetic".into(),
        sentences,
    }
}

/// Generator spec for a synthetic language-modeling corpus.
///
/// Text is drawn from per-topic sparse bigram tables: each sentence samples
/// a topic, and each token has a handful of plausible successors under that
/// topic. Local structure makes the stream learnable far below the uniform
/// baseline; the topic latent adds longer-range signal that rewards
/// recurrent capacity.
#[derive(Clone, Debug)]
pub struct SynthLmSpec {
    pub vocab_size: usize,
    pub total_tokens: usize,
    pub topics: usize,
    pub successors: usize,
    pub sentence_len: std::ops::Range<usize>,
    pub seed: u64,
}

impl Default for SynthLmSpec {
    fn default() -> Self {
        SynthLmSpec {
            vocab_size: 500,
            total_tokens: 100_000,
            topics: 4,
            successors: 8,
            sentence_len: 12..26,
            seed: 0,
        }
    }
}

pub fn synth_lm_corpus(spec: &SynthLmSpec) -> Vec<Vec<String>> {
    let pool = RngPool::new(spec.seed);
    let mut table_rng = pool.stream("synth-lm-tables");
    let v = spec.vocab_size;
    // successors[topic][token] -> candidate next tokens
    let successors: Vec<Vec<Vec<usize>>> = (0..spec.topics)
        .map(|_| {
            (0..v)
                .map(|_| (0..spec.successors).map(|_| table_rng.gen_range(0..v)).collect())
                .collect()
        })
        .collect();
    // Zipf-ish successor weights, shared across tokens.
    let weights: Vec<f64> = (0..spec.successors)
        .map(|r| 1.0 / (r as f64 + 1.2))
        .collect();
    let total_w: f64 = weights.iter().sum();

    let mut gen_rng = pool.stream("synth-lm-text");
    let mut sentences = Vec::new();
    let mut produced = 0usize;
    while produced < spec.total_tokens {
        let topic = gen_rng.gen_range(0..spec.topics);
        let len = gen_rng.gen_range(spec.sentence_len.clone());
        let mut sentence = Vec::with_capacity(len);
        let mut current = gen_rng.gen_range(0..v);
        for _ in 0..len {
            sentence.push(format!("t{current:04}"));
            let mut pick = gen_rng.gen_range(0.0..total_w);
            let mut chosen = 0usize;
            for (i, &w) in weights.iter().enumerate() {
                if pick < w {
                    chosen = i;
                    break;
                }
                pick -= w;
            }
            current = successors[topic][current][chosen];
        }
        produced += len + 1; // sentence boundary token counts too
        sentences.push(sentence);
    }
    sentences
}

/// Generator spec for a synthetic sentiment corpus with planted cue words
/// and (optionally) synthetic subject fixations that dwell on the cues.
#[derive(Clone, Debug)]
pub struct SynthSentimentSpec {
    pub examples: usize,
    pub neutral_vocab: usize,
    pub cues_per_class: usize,
    pub sentence_len: std::ops::Range<usize>,
    pub subjects: usize,
    pub seed: u64,
}

impl Default for SynthSentimentSpec {
    fn default() -> Self {
        SynthSentimentSpec {
            examples: 400,
            neutral_vocab: 120,
            cues_per_class: 6,
            sentence_len: 6..14,
            subjects: 3,
            seed: 0,
        }
    }
}

pub fn synth_sentiment_corpus(spec: &SynthSentimentSpec) -> Vec<SentimentExample> {
    let mut rng = RngPool::new(spec.seed).stream("synth-sentiment");
    let mut out = Vec::with_capacity(spec.examples);
    for i in 0..spec.examples {
        let label = (i % 2) as u8;
        let len = rng.gen_range(spec.sentence_len.clone());
        let n_cues = rng.gen_range(1..=2usize);
        let cue_positions: Vec<usize> = {
            let mut pos: Vec<usize> = (0..len).collect();
            pos.shuffle(&mut rng);
            pos.into_iter().take(n_cues).collect()
        };
        let mut words = Vec::with_capacity(len);
        for p in 0..len {
            if cue_positions.contains(&p) {
                let cue = rng.gen_range(0..spec.cues_per_class);
                words.push(if label == 1 {
                    format!("good{cue}")
                } else {
                    format!("bad{cue}")
                });
            } else {
                words.push(format!("n{:03}", rng.gen_range(0..spec.neutral_vocab)));
            }
        }
        // Subjects dwell on cue words about three times longer.
        let trt: Vec<Vec<f64>> = (0..spec.subjects)
            .map(|_| {
                words
                    .iter()
                    .map(|w| {
                        let base = if w.starts_with("good") || w.starts_with("bad") {
                            320.0
                        } else {
                            110.0
                        };
                        base + rng.gen_range(-30.0..30.0)
                    })
                    .collect()
            })
            .collect();
        out.push(SentimentExample {
            sentence_id: format!("sa{i:05}"),
            words,
            label,
            trt_ms: Some(trt),
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn one_word_corpus(trts: Vec<Vec<f64>>) -> RawFixationCorpus {
        RawFixationCorpus {
            corpus_id: "t".into(),
            sentences: vec![RawSentence {
                sentence_id: "s0".into(),
                words: vec!["the".into()],
                trt_ms: trts,
            }],
        }
    }

    #[test]
    fn aggregate_matches_hand_computation() {
        // Two subjects 100/300 on one word; corpus mean 200 -> 0.5/1.5.
        let corpus = one_word_corpus(vec![vec![100.0], vec![300.0]]);
        let sentences = aggregate_subjects(&corpus, NormScope::Corpus).unwrap();
        let rec = &sentences[0].tokens[0];
        assert_relative_eq!(rec.mean, 1.0, epsilon = 1e-12);
        assert_relative_eq!(rec.var.unwrap(), 0.25, epsilon = 1e-12);
    }

    #[test]
    fn single_subject_has_zero_variance() {
        let corpus = one_word_corpus(vec![vec![150.0]]);
        let sentences = aggregate_subjects(&corpus, NormScope::Corpus).unwrap();
        assert_eq!(sentences[0].tokens[0].var, Some(0.0));
    }

    #[test]
    fn uniform_corpus_normalizes_to_one() {
        let corpus = RawFixationCorpus {
            corpus_id: "u".into(),
            sentences: vec![RawSentence {
                sentence_id: "s0".into(),
                words: vec!["a".into(), "b".into(), "c".into()],
                trt_ms: vec![vec![200.0, 200.0, 200.0], vec![200.0, 200.0, 200.0]],
            }],
        };
        let sentences = aggregate_subjects(&corpus, NormScope::Corpus).unwrap();
        for rec in &sentences[0].tokens {
            assert_relative_eq!(rec.mean, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn grand_mean_after_normalization_is_one() {
        let corpus = synth_fixation_corpus(&SynthFixationSpec::default());
        let sentences = aggregate_subjects(&corpus, NormScope::Corpus).unwrap();
        // The grand mean over all (subject-averaged) record means equals 1
        // when every word has the same subject count, as here.
        let values: Vec<f64> = sentences
            .iter()
            .flat_map(|s| s.tokens.iter().map(|t| t.mean))
            .collect();
        let grand = values.iter().sum::<f64>() / values.len() as f64;
        assert_relative_eq!(grand, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn all_zero_corpus_is_rejected() {
        let corpus = one_word_corpus(vec![vec![0.0], vec![0.0]]);
        assert!(aggregate_subjects(&corpus, NormScope::Corpus).is_err());
    }

    #[test]
    fn skipped_words_stay_as_zeros() {
        let corpus = RawFixationCorpus {
            corpus_id: "t".into(),
            sentences: vec![RawSentence {
                sentence_id: "s0".into(),
                words: vec!["the".into(), "cat".into()],
                trt_ms: vec![vec![0.0, 200.0], vec![100.0, 100.0]],
            }],
        };
        let sentences = aggregate_subjects(&corpus, NormScope::Corpus).unwrap();
        // Corpus mean = 100; subject 0 contributes exactly 0 on "the".
        assert_relative_eq!(sentences[0].tokens[0].mean, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn tokenizer_matches_fixture_cases() {
        assert_eq!(word_tokenize("hello!"), vec!["hello", "!"]);
        assert_eq!(word_tokenize("I'm"), vec!["I", "'m"]);
        assert_eq!(word_tokenize("..."), vec!["..."]);
        assert_eq!(word_tokenize("don't"), vec!["don", "'t"]);
        assert_eq!(word_tokenize("(yes)"), vec!["(", "yes", ")"]);
        assert_eq!(word_tokenize("word"), vec!["word"]);
    }

    #[test]
    fn alignment_applies_punctuation_rule() {
        let sentence = FixSentence {
            corpus_id: "t".into(),
            sentence_id: "s".into(),
            tokens: vec![FixationRecord {
                token: "hello!".into(),
                mean: 1.2,
                var: Some(0.04),
                bin: None,
            }],
        };
        let aligned = align_tokens(&sentence).unwrap();
        assert_eq!(aligned.tokens.len(), 2);
        assert_eq!(aligned.tokens[0].token, "hello");
        assert_relative_eq!(aligned.tokens[0].mean, 1.2);
        assert_eq!(aligned.tokens[0].var, Some(0.04));
        assert_eq!(aligned.tokens[1].token, "!");
        assert_relative_eq!(aligned.tokens[1].mean, 1.0);
        assert_eq!(aligned.tokens[1].var, None);
        assert!(aligned.tokens[1].variance().is_infinite());
    }

    #[test]
    fn contraction_inherits_duration() {
        let sentence = FixSentence {
            corpus_id: "t".into(),
            sentence_id: "s".into(),
            tokens: vec![FixationRecord {
                token: "I'm".into(),
                mean: 0.9,
                var: Some(0.1),
                bin: None,
            }],
        };
        let aligned = align_tokens(&sentence).unwrap();
        assert_eq!(aligned.tokens.len(), 2);
        assert_eq!(aligned.tokens[1].token, "'m");
        assert_relative_eq!(aligned.tokens[1].mean, 0.9);
    }

    #[test]
    fn quantile_bins_match_sort_and_split_oracle() {
        assert_eq!(quantile_bins(&[10.0, 20.0, 30.0, 40.0], 2).unwrap(), vec![1, 1, 2, 2]);
        assert_eq!(
            quantile_bins(&[10.0, 20.0, 30.0, 40.0], 4).unwrap(),
            vec![1, 2, 3, 4]
        );
        // Order independence of input positions.
        assert_eq!(
            quantile_bins(&[40.0, 10.0, 30.0, 20.0], 2).unwrap(),
            vec![2, 1, 2, 1]
        );
    }

    #[test]
    fn quantile_ties_share_a_bin() {
        assert_eq!(quantile_bins(&[5.0, 5.0, 5.0, 5.0], 2).unwrap(), vec![1; 4]);
        let bins = quantile_bins(&[1.0, 2.0, 2.0, 3.0], 2).unwrap();
        assert_eq!(bins[1], bins[2]);
    }

    #[test]
    fn quantile_counts_differ_by_at_most_one_on_distinct_values() {
        let values: Vec<f64> = (0..103).map(|i| (i * 37 % 103) as f64).collect();
        for k in [2, 3, 5, 8] {
            let bins = quantile_bins(&values, k).unwrap();
            let mut counts = vec![0usize; k];
            for b in &bins {
                counts[b - 1] += 1;
            }
            let (min, max) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
            assert!(max - min <= 1, "k={k}: counts {counts:?}");
        }
    }

    #[test]
    fn quantile_is_order_preserving() {
        let values = vec![3.0, 1.0, 2.5, 9.0, 0.2, 2.5];
        let bins = quantile_bins(&values, 3).unwrap();
        for i in 0..values.len() {
            for j in 0..values.len() {
                if values[i] <= values[j] {
                    assert!(bins[i] <= bins[j]);
                }
            }
        }
    }

    #[test]
    fn quantile_rejects_fewer_records_than_bins() {
        assert!(quantile_bins(&[1.0, 2.0], 3).is_err());
    }

    #[test]
    fn split_is_deterministic_partition() {
        let items: Vec<usize> = (0..100).collect();
        let spec = SplitSpec {
            train_fraction: 0.75,
            seed: 5,
        };
        let (train, test) = split_train_test(items.clone(), &spec);
        assert_eq!(train.len(), 75);
        assert_eq!(test.len(), 25);
        let mut all: Vec<usize> = train.iter().chain(test.iter()).copied().collect();
        all.sort_unstable();
        assert_eq!(all, items);
        let (train2, test2) = split_train_test(items, &spec);
        assert_eq!(train, train2);
        assert_eq!(test, test2);
    }

    #[test]
    fn corpus_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        let corpus = synth_fixation_corpus(&SynthFixationSpec {
            sentences: 5,
            ..Default::default()
        });
        save_corpora(&path, &[corpus.clone()]).unwrap();
        let loaded = load_corpora(&path).unwrap();
        assert_eq!(loaded.len(), 1);
        assert_eq!(loaded[0], corpus);
        // Byte-level determinism of the writer.
        let bytes1 = std::fs::read(&path).unwrap();
        save_corpora(&path, &loaded).unwrap();
        assert_eq!(bytes1, std::fs::read(&path).unwrap());
    }

    #[test]
    fn empty_and_malformed_files_error_with_location() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(load_corpora(&path).is_err());
        std::fs::write(&path, "{\"corpus_id\":\"c\",\"sentence_id\":\"s\",\"words\":[\"a\"],\"trt_ms\":[[1.0,2.0]]}\n").unwrap();
        let err = load_corpora(&path).unwrap_err().to_string();
        assert!(err.contains(":1:"), "{err}");
        assert!(err.contains("1 words") || err.contains("2 durations"), "{err}");
    }

    #[test]
    fn subject_skip_is_preserved_through_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("skip.jsonl");
        let corpus = RawFixationCorpus {
            corpus_id: "c".into(),
            sentences: vec![RawSentence {
                sentence_id: "s".into(),
                words: vec!["the".into(), "dog".into()],
                trt_ms: vec![vec![0.0, 210.0], vec![130.0, 190.0]],
            }],
        };
        save_corpora(&path, &[corpus]).unwrap();
        let loaded = load_corpora(&path).unwrap();
        assert_eq!(loaded[0].sentences[0].trt_ms[0][0], 0.0);
    }

    #[test]
    fn synthetic_fixture_is_deterministic_and_noise_free_at_zero() {
        let spec = SynthFixationSpec {
            noise_ms: 0.0,
            sentences: 20,
            ..Default::default()
        };
        let a = synth_fixation_corpus(&spec);
        let b = synth_fixation_corpus(&spec);
        assert_eq!(a, b);
        let sentences = aggregate_subjects(&a, NormScope::Corpus).unwrap();
        for s in &sentences {
            for t in &s.tokens {
                assert_eq!(t.var, Some(0.0));
            }
        }
    }

    #[test]
    fn synthetic_latent_classes_fill_bins_evenly() {
        // Balanced occurrences + distinct per-type values => near-uniform bins.
        let spec = SynthFixationSpec {
            vocab_size: 60,
            sentences: 60,
            sentence_len: 12,
            subjects: 2,
            noise_ms: 2.0,
            classes: 4,
            seed: 3,
        };
        let corpus = synth_fixation_corpus(&spec);
        let mut sentences = aggregate_subjects(&corpus, NormScope::Corpus).unwrap();
        quantile_discretize(&mut sentences, 4).unwrap();
        let mut counts = [0usize; 4];
        for s in &sentences {
            for t in &s.tokens {
                counts[t.bin.unwrap() - 1] += 1;
            }
        }
        let (min, max) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        assert!(max - min <= 1, "bin counts {counts:?}");
    }

    #[test]
    fn vocab_respects_min_frequency_and_maps_unknowns() {
        let sentences = ["a a a b b c", "a b d"];
        let vocab = Vocab::build(
            sentences.iter().flat_map(|s| s.split_whitespace()),
            2,
            &[EOS_TOKEN],
        );
        assert!(vocab.contains("a") && vocab.contains("b"));
        assert!(!vocab.contains("c") && !vocab.contains("d"));
        assert_eq!(vocab.lookup("zebra"), vocab.unk);
        assert_eq!(vocab.token(vocab.lookup(EOS_TOKEN)), EOS_TOKEN);
    }

    #[test]
    fn sentiment_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sa.jsonl");
        let examples = synth_sentiment_corpus(&SynthSentimentSpec {
            examples: 10,
            ..Default::default()
        });
        save_sentiment_corpus(&path, &examples).unwrap();
        let loaded = load_sentiment_corpus(&path).unwrap();
        assert_eq!(loaded, examples);
        std::fs::write(&path, "{\"sentence_id\":\"x\",\"words\":[\"hi\"],\"label\":7}\n").unwrap();
        assert!(load_sentiment_corpus(&path).is_err());
    }

    #[test]
    fn synth_lm_corpus_hits_token_budget_and_is_deterministic() {
        let spec = SynthLmSpec {
            total_tokens: 2000,
            ..Default::default()
        };
        let a = synth_lm_corpus(&spec);
        let b = synth_lm_corpus(&spec);
        assert_eq!(a, b);
        let tokens: usize = a.iter().map(|s| s.len() + 1).sum();
        assert!(tokens >= 2000 && tokens < 2100, "{tokens}");
    }
}
