//! Contiguous-stream batching with randomized segment lengths.
//!
//! The token stream reshapes into `batch_size` parallel rows; segment cuts
//! are shared across rows, recurrent state carries across consecutive
//! segments, and gradients truncate at every cut.

use crate::error::{Error, Result};
use crate::rng::{RngPool, Stream};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Reshaped stream layout plus the segment cuts of one epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchPlan {
    pub batch_size: usize,
    /// Input tokens per row; position `i` of row `r` is stream index
    /// `r * row_len + i`, and its target is the next stream index.
    pub row_len: usize,
    /// `(start, len)` cuts covering `[0, row_len)` exactly.
    pub segments: Vec<(usize, usize)>,
}

/// Draws one segment length. Most of the time the length is normal around
/// the configured mean, occasionally around half of it; branch means are
/// scaled so the sampler's overall expectation equals `mean` exactly
/// (0.95 * 40/39 + 0.05 * 20/39 = 1). Lengths clamp to `[10, 2 * mean]`.
pub fn sample_segment_len(rng: &mut Stream, mean: usize) -> usize {
    let m = mean as f64;
    let base = if rng.gen::<f64>() < 0.95 {
        m * 40.0 / 39.0
    } else {
        m * 20.0 / 39.0
    };
    let normal = Normal::new(base, 5.0).expect("positive sd");
    let drawn = normal.sample(rng).round();
    (drawn.max(10.0).min(2.0 * m)) as usize
}

/// Cuts a stream of `stream_len` tokens into a [`BatchPlan`].
pub fn make_batches(
    stream_len: usize,
    batch_size: usize,
    mean_len: usize,
    seed: u64,
) -> Result<BatchPlan> {
    if batch_size == 0 || mean_len < 5 {
        return Err(Error::invalid(
            "make_batches",
            "batch_size must be positive and mean_len at least 5",
        ));
    }
    // One extra token is needed for the final target.
    if stream_len < 2 * batch_size + 1 {
        return Err(Error::invalid(
            "make_batches",
            format!("stream of {stream_len} tokens is shorter than one batch row"),
        ));
    }
    let row_len = (stream_len - 1) / batch_size;
    let mut rng = RngPool::new(seed).stream("batching");
    let mut segments = Vec::new();
    let mut start = 0usize;
    while start < row_len {
        let len = sample_segment_len(&mut rng, mean_len).min(row_len - start);
        segments.push((start, len));
        start += len;
    }
    Ok(BatchPlan {
        batch_size,
        row_len,
        segments,
    })
}

impl BatchPlan {
    /// Time-major input ids for one segment: `out[t][b]`.
    pub fn inputs(&self, stream: &[usize], segment: usize) -> Vec<Vec<usize>> {
        self.gather(stream, segment, 0)
    }

    /// Time-major target ids (inputs shifted by one) for one segment.
    pub fn targets(&self, stream: &[usize], segment: usize) -> Vec<Vec<usize>> {
        self.gather(stream, segment, 1)
    }

    /// Time-major gather of any per-token payload aligned with the stream.
    pub fn gather_payload<P: Copy>(&self, payload: &[P], segment: usize) -> Vec<Vec<P>> {
        let (start, len) = self.segments[segment];
        (0..len)
            .map(|t| {
                (0..self.batch_size)
                    .map(|b| payload[b * self.row_len + start + t])
                    .collect()
            })
            .collect()
    }

    fn gather(&self, stream: &[usize], segment: usize, shift: usize) -> Vec<Vec<usize>> {
        let (start, len) = self.segments[segment];
        (0..len)
            .map(|t| {
                (0..self.batch_size)
                    .map(|b| stream[b * self.row_len + start + t + shift])
                    .collect()
            })
            .collect()
    }
}
