//! Choice of the past frames attended by a query frame. Indices are 0-based.

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// Split the preceding frames into `n` contiguous bins and draw one
    /// frame from each.
    TrainBins,
    /// The `n` nearest preceding frames.
    PrevN,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameWindow {
    pub query: usize,
    /// Ascending; may contain later frames when too few earlier ones exist.
    pub past: Vec<usize>,
    pub strategy: Strategy,
}

impl FrameWindow {
    /// Position in `past` of the frame closest in time to the query,
    /// preferring the earlier one on ties.
    pub fn nearest(&self) -> usize {
        let q = self.query as isize;
        let mut best = 0;
        for (i, &p) in self.past.iter().enumerate() {
            let (d, db) = ((p as isize - q).abs(), (self.past[best] as isize - q).abs());
            if d < db {
                best = i;
            }
        }
        best
    }
}

/// Bin `i` of `m` items split into `n` near-equal contiguous ranges.
fn bin(i: usize, m: usize, n: usize) -> (usize, usize) {
    (i * m / n, (i + 1) * m / n)
}

/// Past frames for query `t` in a clip of `len` frames.
///
/// With fewer than `n` preceding frames both strategies use every
/// preceding frame and fill up with the nearest succeeding ones.
pub fn select_past_frames(t: usize, len: usize, n: usize, strategy: Strategy, rng: &mut Rng) -> Result<FrameWindow> {
    if n == 0 {
        return Err(Error::arg("at least one past frame is required"));
    }
    if t >= len {
        return Err(Error::arg(format!("query frame {t} outside a clip of {len} frames")));
    }
    if len < n + 1 {
        return Err(Error::arg(format!("a clip of {len} frames cannot supply {n} memory frames")));
    }
    let past = if t < n {
        let mut v: Vec<usize> = (0..t).collect();
        v.extend(t + 1..=n);
        v
    } else {
        match strategy {
            Strategy::PrevN => (t - n..t).collect(),
            Strategy::TrainBins => (0..n)
                .map(|i| {
                    let (lo, hi) = bin(i, t, n);
                    rng.index(lo, hi)
                })
                .collect(),
        }
    };
    Ok(FrameWindow { query: t, past, strategy })
}
