use std::time::Instant;

use super::network::Segmenter;
use super::params::ModelParams;
use crate::data::{metric_f, metric_j, Clip, ClipScore, EvalReport, Mask};
use crate::error::{Error, Result};
use crate::ltm::make_projection_basis;

/// Per-clip mean `J` and `F` of `pred` against `gt`.
pub fn score_clip(id: &str, pred: &[Mask], gt: &[Mask], tol_px: usize) -> Result<ClipScore> {
    if pred.len() != gt.len() || gt.is_empty() {
        return Err(Error::arg(format!(
            "clip {id}: {} predicted masks for {} ground-truth masks",
            pred.len(),
            gt.len()
        )));
    }
    let (mut j, mut f) = (0.0, 0.0);
    for (p, g) in pred.iter().zip(gt) {
        j += metric_j(p, g)?;
        f += metric_f(p, g, tol_px)?;
    }
    let n = gt.len() as f64;
    Ok(ClipScore {
        clip: id.to_string(),
        frames: gt.len(),
        j: j / n,
        f: f / n,
    })
}

/// Segments every clip with the inference basis drawn from `seed` and
/// scores it. Reports end-to-end frames per second.
pub fn evaluate(params: &ModelParams<f32>, clips: &[(String, Clip)], seed: u64, tol_px: usize) -> Result<EvalReport> {
    let basis = make_projection_basis(params.config.c, seed)?;
    let seg = Segmenter::new(params, basis)?;
    let mut scores = Vec::with_capacity(clips.len());
    let mut frames = 0usize;
    let start = Instant::now();
    let mut predicted = Vec::with_capacity(clips.len());
    for (_, clip) in clips {
        predicted.push(seg.masks(&clip.frames)?);
        frames += clip.len();
    }
    let secs = start.elapsed().as_secs_f64();
    for ((id, clip), pred) in clips.iter().zip(&predicted) {
        scores.push(score_clip(id, pred, &clip.masks, tol_px)?);
    }
    Ok(EvalReport::from_clips(scores, (secs > 0.0).then(|| frames as f64 / secs)))
}
