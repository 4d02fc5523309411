use super::frames::{select_past_frames, FrameWindow, Strategy};
use super::params::{ConvVars, ModelConfig, ModelParams, ParamVars};
use crate::autograd::{Tape, Var};
use crate::data::Mask;
use crate::error::{Error, Result};
use crate::ltm::{ltm_forward, ProjectionBasis};
use crate::rng::Rng;
use crate::sta::sta_forward;
use crate::tensor::{Real, Tensor};

/// Spatial reduction between frames and feature maps.
pub const DOWNSAMPLE: usize = 4;

fn conv_relu<T: Real>(tape: &mut Tape<T>, x: Var, cv: ConvVars, stride: usize) -> Result<Var> {
    let y = conv(tape, x, cv, stride)?;
    Ok(tape.relu(y))
}

fn conv<T: Real>(tape: &mut Tape<T>, x: Var, cv: ConvVars, stride: usize) -> Result<Var> {
    let y = tape.conv2d(x, cv.w, stride, 1)?;
    tape.add_bias(y, cv.b)
}

/// Frame `H × W × 3` in `[0, 1]` to features `H/4 × W/4 × c₀`. Pixels are
/// first mapped to `[−1, 1]`.
pub fn encode<T: Real>(tape: &mut Tape<T>, vars: &ParamVars, frame: Var) -> Result<Var> {
    let s = tape.shape(frame).to_vec();
    if s.len() != 3 || s[2] != 3 {
        return Err(Error::shape(format!("encode: frame {s:?} is not H×W×3")));
    }
    if s[0] % DOWNSAMPLE != 0 || s[1] % DOWNSAMPLE != 0 {
        return Err(Error::arg(format!("encode: frame {}×{} not divisible by {DOWNSAMPLE}", s[0], s[1])));
    }
    let shift = tape.constant(Tensor::full([3], T::cast_from(-0.5))?);
    let x = tape.add_bias(frame, shift)?;
    let x = tape.scale(x, T::cast_from(2.0));
    let x = conv_relu(tape, x, vars.enc[0], 2)?;
    let x = conv_relu(tape, x, vars.enc[1], 2)?;
    conv_relu(tape, x, vars.enc[2], 1)
}

/// Fuses global, local and query maps (`h × w × c` each) into per-pixel
/// (background, object) probabilities at `4h × 4w`.
pub fn decode<T: Real>(tape: &mut Tape<T>, vars: &ParamVars, g: Var, l: Var, q: Var) -> Result<Var> {
    let s = tape.shape(g).to_vec();
    if tape.shape(l) != s.as_slice() || tape.shape(q) != s.as_slice() || s.len() != 3 {
        return Err(Error::shape(format!(
            "decode: maps {:?}, {:?}, {:?} differ",
            s,
            tape.shape(l),
            tape.shape(q)
        )));
    }
    let x = tape.concat(&[g, l, q], 2)?;
    let x = conv_relu(tape, x, vars.fuse, 1)?;
    let x = refine(tape, vars, x)?;
    let logits = conv(tape, x, vars.head, 1)?;
    let logits = tape.upsample(logits, DOWNSAMPLE)?;
    Ok(tape.softmax_rows(logits))
}

/// Stand-in for the anisotropic convolution block: a residual pair of 3×3
/// convolutions.
fn refine<T: Real>(tape: &mut Tape<T>, vars: &ParamVars, x: Var) -> Result<Var> {
    let y = conv_relu(tape, x, vars.aic[0], 1)?;
    let y = conv(tape, y, vars.aic[1], 1)?;
    let y = tape.add(x, y)?;
    Ok(tape.relu(y))
}

/// Memory, local attention and decoding on already encoded maps. `nearest`
/// indexes the past map used for local attention.
pub fn forward_encoded<T: Real>(
    tape: &mut Tape<T>,
    vars: &ParamVars,
    config: &ModelConfig,
    query: Var,
    past: &[Var],
    nearest: usize,
    basis: &ProjectionBasis<T>,
) -> Result<Var> {
    if nearest >= past.len() {
        return Err(Error::arg(format!("nearest frame {nearest} outside {} past maps", past.len())));
    }
    let s = tape.shape(query).to_vec();
    let (h, w, c) = (s[0], s[1], config.c);
    let ltm = ltm_forward(tape, past, query, &vars.ltm, basis)?;
    let local = if config.use_sta {
        sta_forward(tape, ltm.query, past[nearest], &vars.sta, config.patch, config.stride)?
    } else {
        tape.constant(Tensor::zeros([h, w, c])?)
    };
    let q = tape.reshape(ltm.query, &[h, w, c])?;
    decode(tape, vars, ltm.global, local, q)
}

/// End-to-end forward of one window: frames are `H × W × 3` tape values,
/// `past` ordered as in `window.past`.
pub fn lsta_forward<T: Real>(
    tape: &mut Tape<T>,
    vars: &ParamVars,
    config: &ModelConfig,
    window: &FrameWindow,
    query: Var,
    past: &[Var],
    basis: &ProjectionBasis<T>,
) -> Result<Var> {
    if past.len() != window.past.len() {
        return Err(Error::arg(format!(
            "window lists {} past frames, {} given",
            window.past.len(),
            past.len()
        )));
    }
    let q = encode(tape, vars, query)?;
    let mut enc = Vec::with_capacity(past.len());
    for &p in past {
        enc.push(encode(tape, vars, p)?);
    }
    forward_encoded(tape, vars, config, q, &enc, window.nearest(), basis)
}

/// Object where its probability strictly exceeds the background's.
pub fn predict_mask<T: Real>(prob: &Tensor<T>) -> Result<Mask> {
    if prob.rank() != 3 || prob.shape()[2] != 2 {
        return Err(Error::shape(format!("predict_mask: {:?} is not H×W×2", prob.shape())));
    }
    let (h, w) = (prob.shape()[0], prob.shape()[1]);
    Mask::new(h, w, prob.data().chunks(2).map(|p| (p[1] > p[0]) as u8).collect())
}

/// Inference over a whole clip with a fixed projection basis.
pub struct Segmenter<'a> {
    params: &'a ModelParams<f32>,
    basis: ProjectionBasis<f32>,
}

impl<'a> Segmenter<'a> {
    pub fn new(params: &'a ModelParams<f32>, basis: ProjectionBasis<f32>) -> Result<Self> {
        if basis.channels() != params.config.c {
            return Err(Error::shape(format!(
                "basis for {} channels, model uses {}",
                basis.channels(),
                params.config.c
            )));
        }
        Ok(Self { params, basis })
    }

    /// Encodes every frame once.
    pub fn encode_all(&self, frames: &[Tensor<f32>]) -> Result<Vec<Tensor<f32>>> {
        let mut out = Vec::with_capacity(frames.len());
        for f in frames {
            let mut tape = Tape::new();
            let vars = self.params.bind(&mut tape, false);
            let x = tape.constant(f.clone());
            let e = encode(&mut tape, &vars, x)?;
            out.push(tape.value(e).clone());
        }
        Ok(out)
    }

    /// Probabilities for every frame, using the nearest previous frames
    /// (or succeeding ones near the start) as memory.
    pub fn probabilities(&self, frames: &[Tensor<f32>]) -> Result<Vec<Tensor<f32>>> {
        if frames.len() < 2 {
            return Err(Error::arg(format!("clip of {} frames; at least 2 required", frames.len())));
        }
        let cfg = self.params.config;
        // Short clips shrink the memory rather than failing.
        let n = cfg.n_past.min(frames.len() - 1);
        let enc = self.encode_all(frames)?;
        let mut out = Vec::with_capacity(frames.len());
        let mut unused = Rng::new(0);
        for t in 0..frames.len() {
            let window = select_past_frames(t, frames.len(), n, Strategy::PrevN, &mut unused)?;
            let mut tape = Tape::new();
            let vars = self.params.bind(&mut tape, false);
            let q = tape.constant(enc[t].clone());
            let past: Vec<Var> = window.past.iter().map(|&i| tape.constant(enc[i].clone())).collect();
            let p = forward_encoded(&mut tape, &vars, &cfg, q, &past, window.nearest(), &self.basis)?;
            out.push(tape.value(p).clone());
        }
        Ok(out)
    }

    pub fn masks(&self, frames: &[Tensor<f32>]) -> Result<Vec<Mask>> {
        self.probabilities(frames)?.iter().map(predict_mask).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ltm::make_projection_basis;

    fn tiny() -> ModelConfig {
        ModelConfig {
            enc_widths: [4, 4],
            c0: 8,
            c: 4,
            n_past: 2,
            patch: 4,
            stride: 2,
            use_sta: true,
        }
    }

    #[test]
    fn shapes_and_probabilities() {
        let cfg = tiny();
        let params = ModelParams::<f32>::init(cfg, &mut Rng::new(0)).unwrap();
        let mut rng = Rng::new(1);
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape, false);
        let frames: Vec<Var> = (0..3)
            .map(|_| tape.constant(rng.uniform_tensor(&[16, 16, 3], 0.0, 1.0).unwrap()))
            .collect();
        let e = encode(&mut tape, &vars, frames[0]).unwrap();
        assert_eq!(tape.shape(e), &[4, 4, 8]);
        let window = select_past_frames(2, 3, 2, Strategy::PrevN, &mut rng).unwrap();
        let basis = make_projection_basis(4, 3).unwrap();
        let p = lsta_forward(&mut tape, &vars, &cfg, &window, frames[2], &frames[..2], &basis).unwrap();
        let prob = tape.value(p);
        assert_eq!(prob.shape(), &[16, 16, 2]);
        for px in prob.data().chunks(2) {
            assert!(((px[0] + px[1]) as f64 - 1.0).abs() < 1e-6);
        }
        let m = predict_mask(prob).unwrap();
        assert!(m.bits().iter().all(|&b| b <= 1));
    }

    #[test]
    fn indivisible_frames_are_rejected() {
        let params = ModelParams::<f32>::init(tiny(), &mut Rng::new(0)).unwrap();
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape, false);
        let x = tape.constant(Tensor::zeros([18, 16, 3]).unwrap());
        assert!(encode(&mut tape, &vars, x).is_err());
    }

    #[test]
    fn zero_head_gives_even_odds() {
        let mut params = ModelParams::<f32>::init(tiny(), &mut Rng::new(0)).unwrap();
        for v in params.get_mut("head_w").unwrap().data_mut() {
            *v = 0.0;
        }
        let frames: Vec<Tensor<f32>> = (0..3)
            .map(|i| Rng::new(i).uniform_tensor(&[16, 16, 3], 0.0, 1.0).unwrap())
            .collect();
        let seg = Segmenter::new(&params, make_projection_basis(4, 0).unwrap()).unwrap();
        for p in seg.probabilities(&frames).unwrap() {
            assert!(p.data().iter().all(|&v| v == 0.5));
            assert!(predict_mask(&p).unwrap().bits().iter().all(|&b| b == 0));
        }
    }

    #[test]
    fn mask_ties_go_to_background() {
        let p = Tensor::<f32>::from_f64s([1, 3, 2], &[0.5, 0.5, 0.1, 0.9, 0.9, 0.1]).unwrap();
        assert_eq!(predict_mask(&p).unwrap().bits(), &[0, 1, 0]);
        let m = Mask::from_fn(4, 5, |y, x| (y + x) % 3 == 0).unwrap();
        assert_eq!(predict_mask(&m.one_hot::<f32>()).unwrap(), m);
    }

    #[test]
    fn inference_is_deterministic() {
        let params = ModelParams::<f32>::init(tiny(), &mut Rng::new(4)).unwrap();
        let frames: Vec<Tensor<f32>> = (0..4)
            .map(|i| Rng::new(i).uniform_tensor(&[16, 16, 3], 0.0, 1.0).unwrap())
            .collect();
        let run = || {
            Segmenter::new(&params, make_projection_basis(4, 7).unwrap())
                .unwrap()
                .probabilities(&frames)
                .unwrap()
        };
        assert_eq!(run(), run());
    }
}
