//! Region similarity `J` and contour accuracy `F`.

use super::Mask;
use crate::error::Result;

/// Intersection over union. Two empty masks score 1.
pub fn metric_j(pred: &Mask, gt: &Mask) -> Result<f64> {
    pred.expect_same_extent(gt, "metric_j")?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&a, &b) in pred.bits().iter().zip(gt.bits()) {
        inter += (a & b) as usize;
        union += (a | b) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Foreground pixels with a 4-neighbor inside the image that is background.
pub fn boundary(mask: &Mask) -> Vec<bool> {
    let (h, w) = (mask.h(), mask.w());
    let mut out = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            if !mask.get(y, x) {
                continue;
            }
            let edge = (y > 0 && !mask.get(y - 1, x))
                || (y + 1 < h && !mask.get(y + 1, x))
                || (x > 0 && !mask.get(y, x - 1))
                || (x + 1 < w && !mask.get(y, x + 1));
            out[y * w + x] = edge;
        }
    }
    out
}

/// Square dilation of `bits` with Chebyshev radius `r`.
fn dilate(bits: &[bool], h: usize, w: usize, r: usize) -> Vec<bool> {
    if r == 0 {
        return bits.to_vec();
    }
    let mut rows = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let (lo, hi) = (x.saturating_sub(r), (x + r).min(w - 1));
            rows[y * w + x] = bits[y * w + lo..=y * w + hi].iter().any(|&b| b);
        }
    }
    let mut out = vec![false; h * w];
    for y in 0..h {
        let (lo, hi) = (y.saturating_sub(r), (y + r).min(h - 1));
        for x in 0..w {
            out[y * w + x] = (lo..=hi).any(|yy| rows[yy * w + x]);
        }
    }
    out
}

fn matched_fraction(from: &[bool], to_dilated: &[bool]) -> (usize, usize) {
    let total = from.iter().filter(|&&b| b).count();
    let hit = from.iter().zip(to_dilated).filter(|(&a, &b)| a && b).count();
    (hit, total)
}

/// Boundary F-measure: a boundary pixel counts as matched when the other
/// mask has a boundary pixel within Chebyshev distance `tol_px`.
///
/// Two empty boundaries score 1; exactly one empty scores 0.
pub fn metric_f(pred: &Mask, gt: &Mask, tol_px: usize) -> Result<f64> {
    pred.expect_same_extent(gt, "metric_f")?;
    let (h, w) = (pred.h(), pred.w());
    let (bp, bg) = (boundary(pred), boundary(gt));
    let (hit_p, n_p) = matched_fraction(&bp, &dilate(&bg, h, w, tol_px));
    let (hit_g, n_g) = matched_fraction(&bg, &dilate(&bp, h, w, tol_px));
    Ok(match (n_p, n_g) {
        (0, 0) => 1.0,
        (0, _) | (_, 0) => 0.0,
        _ => {
            let precision = hit_p as f64 / n_p as f64;
            let recall = hit_g as f64 / n_g as f64;
            if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            }
        }
    })
}

/// Scores of one evaluated clip.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipScore {
    pub clip: String,
    pub frames: usize,
    pub j: f64,
    pub f: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub clips: Vec<ClipScore>,
    pub mean_j: f64,
    pub mean_f: f64,
    /// Average of `mean_j` and `mean_f`.
    pub mean_jf: f64,
    pub fps: Option<f64>,
}

impl EvalReport {
    /// Aggregates per-clip scores with an unweighted mean over clips.
    pub fn from_clips(clips: Vec<ClipScore>, fps: Option<f64>) -> Self {
        let n = clips.len().max(1) as f64;
        let mean_j = clips.iter().map(|c| c.j).sum::<f64>() / n;
        let mean_f = clips.iter().map(|c| c.f).sum::<f64>() / n;
        Self {
            clips,
            mean_j,
            mean_f,
            mean_jf: (mean_j + mean_f) / 2.0,
            fps,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("clip,frames,j,f,jf\n");
        for c in &self.clips {
            s += &format!("{},{},{:.6},{:.6},{:.6}\n", c.clip, c.frames, c.j, c.f, (c.j + c.f) / 2.0);
        }
        s += &format!(
            "mean,{},{:.6},{:.6},{:.6}\n",
            self.clips.iter().map(|c| c.frames).sum::<usize>(),
            self.mean_j,
            self.mean_f,
            self.mean_jf
        );
        s
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "clips: {}\nJ mean: {:.4}\nF mean: {:.4}\nJ&F mean: {:.4}\n",
            self.clips.len(),
            self.mean_j,
            self.mean_f,
            self.mean_jf
        );
        if let Some(fps) = self.fps {
            s += &format!("frames/s: {fps:.2}\n");
        }
        s
    }
}
