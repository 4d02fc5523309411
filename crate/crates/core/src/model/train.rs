use super::frames::{select_past_frames, FrameWindow, Strategy};
use super::network::lsta_forward;
use super::params::{ModelConfig, ModelParams, ParamVars};
use crate::autograd::{Tape, Var};
use crate::data::{teacher_soft_labels, Clip, Mask};
use crate::error::{Error, Result};
use crate::loss::total_loss_var;
use crate::ltm::{make_projection_basis, ProjectionBasis};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

/// Optimizer and loss hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyper {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Weight of the hard-example term against distillation.
    pub alpha: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            lr: 6e-3,
            momentum: 0.9,
            weight_decay: 1.5e-4,
            alpha: 0.5,
        }
    }
}

impl Hyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be finite and non-negative", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight decay {} must be non-negative", self.weight_decay)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        Ok(())
    }
}

/// SGD with heavy-ball momentum and L2 weight decay:
/// `v ← μv + g + λθ`, `θ ← θ − ηv`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd<T: Real = f32> {
    pub velocity: Vec<Tensor<T>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        Self {
            velocity: params.tensors.iter().map(|t| t.zeros_like()).collect(),
        }
    }

    /// Parameters without a gradient are left untouched.
    pub fn step(&mut self, params: &mut ModelParams<T>, grads: &[Option<Tensor<T>>], hyper: &Hyper) {
        for ((p, v), g) in params.tensors.iter_mut().zip(&mut self.velocity).zip(grads) {
            let Some(g) = g else { continue };
            for ((pv, vv), &gv) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                let vel = hyper.momentum * vv.as_f64() + gv.as_f64() + hyper.weight_decay * pv.as_f64();
                *vv = T::cast_from(vel);
                *pv = T::cast_from(pv.as_f64() - hyper.lr * vel);
            }
        }
    }
}

/// One query frame with its memory frames and targets.
#[derive(Debug, Clone)]
pub struct Sample<T: Real = f32> {
    pub window: FrameWindow,
    pub query: Tensor<T>,
    /// In `window.past` order.
    pub past: Vec<Tensor<T>>,
    pub target: Mask,
    pub soft: Tensor<T>,
}

impl Sample<f32> {
    /// Random query frame of `clip` with training-mode memory selection.
    pub fn draw(clip: &Clip, n_past: usize, blur_radius: usize, rng: &mut Rng) -> Result<Self> {
        let t = rng.index(0, clip.len());
        let window = select_past_frames(t, clip.len(), n_past, Strategy::TrainBins, rng)?;
        Ok(Self {
            query: clip.frames[t].clone(),
            past: window.past.iter().map(|&i| clip.frames[i].clone()).collect(),
            target: clip.masks[t].clone(),
            soft: teacher_soft_labels(&clip.masks[t], blur_radius),
            window,
        })
    }
}

/// Mean blended loss over `batch`, recorded on `tape`.
pub fn batch_loss<T: Real>(
    tape: &mut Tape<T>,
    vars: &ParamVars,
    config: &ModelConfig,
    batch: &[Sample<T>],
    basis: &ProjectionBasis<T>,
    alpha: f64,
) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::arg("empty training batch"));
    }
    let mut total: Option<Var> = None;
    for s in batch {
        let q = tape.constant(s.query.clone());
        let past: Vec<Var> = s.past.iter().map(|p| tape.constant(p.clone())).collect();
        let prob = lsta_forward(tape, vars, config, &s.window, q, &past, basis)?;
        let l = total_loss_var(tape, prob, &s.target, &s.soft, alpha)?;
        total = Some(match total {
            None => l,
            Some(acc) => tape.add(acc, l)?,
        });
    }
    let total = total.expect("non-empty batch");
    Ok(tape.scale(total, T::cast_from(1.0 / batch.len() as f64)))
}

/// Forward, backward and one optimizer update. Returns the loss before
/// the update.
pub fn train_step<T: Real>(
    params: &mut ModelParams<T>,
    opt: &mut Sgd<T>,
    batch: &[Sample<T>],
    basis: &ProjectionBasis<T>,
    hyper: &Hyper,
) -> Result<f64> {
    hyper.validate()?;
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, true);
    let loss = batch_loss(&mut tape, &vars, &params.config, batch, basis, hyper.alpha)?;
    let value = tape.value(loss).item()?.as_f64();
    if !value.is_finite() {
        return Err(Error::Numeric(format!("non-finite training loss {value}")));
    }
    let mut grads = tape.backward(loss)?;
    let g: Vec<Option<Tensor<T>>> = vars.all.iter().map(|&v| grads.take(v)).collect();
    if let Some(i) = g.iter().position(|t| t.as_ref().is_some_and(|t| !t.all_finite())) {
        return Err(Error::Numeric(format!(
            "non-finite gradient for parameter {}",
            params.names()[i]
        )));
    }
    opt.step(params, &g, hyper);
    Ok(value)
}

/// Settings of a training run beyond the optimizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSettings {
    pub hyper: Hyper,
    pub batch_size: usize,
    pub blur_radius: usize,
    pub seed: u64,
    /// Steps over which the learning rate ramps linearly up to `hyper.lr`.
    pub warmup_steps: usize,
}

impl RunSettings {
    /// Learning rate applied at 0-based step `step`.
    pub fn lr_at(&self, step: usize) -> f64 {
        if step >= self.warmup_steps {
            self.hyper.lr
        } else {
            self.hyper.lr * (step + 1) as f64 / self.warmup_steps as f64
        }
    }
}

/// Model, optimizer state and progress of a training run.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: ModelParams<f32>,
    pub opt: Sgd<f32>,
    /// Number of completed steps.
    pub step: usize,
}

impl TrainState {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = ModelParams::init(config, &mut Rng::new(seed).derive(u64::MAX))?;
        let opt = Sgd::new(&params);
        Ok(Self { params, opt, step: 0 })
    }

    /// Performs step `self.step`. All randomness of a step comes from
    /// `(seed, step)`, so a resumed run repeats an uninterrupted one.
    pub fn advance(&mut self, clips: &[Clip], run: &RunSettings) -> Result<f64> {
        if clips.is_empty() {
            return Err(Error::arg("no training clips"));
        }
        let step_rng = Rng::new(run.seed).derive(self.step as u64);
        let basis = make_projection_basis(self.params.config.c, step_rng.derive(0).next_u64())?;
        let mut pick = step_rng.derive(1);
        let mut batch = Vec::with_capacity(run.batch_size);
        for _ in 0..run.batch_size.max(1) {
            let clip = &clips[pick.index(0, clips.len())];
            batch.push(Sample::draw(clip, self.params.config.n_past, run.blur_radius, &mut pick)?);
        }
        let hyper = Hyper {
            lr: run.lr_at(self.step),
            ..run.hyper
        };
        let loss = train_step(&mut self.params, &mut self.opt, &batch, &basis, &hyper)?;
        self.step += 1;
        Ok(loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_clip, SceneSpec};

    fn tiny() -> ModelConfig {
        ModelConfig {
            enc_widths: [4, 6],
            c0: 8,
            c: 4,
            n_past: 2,
            patch: 4,
            stride: 2,
            use_sta: true,
        }
    }

    fn clips(n: usize) -> Vec<Clip> {
        let mut r = Rng::new(11);
        (0..n)
            .map(|_| {
                let spec = SceneSpec::sample(16, 16, 4, 1, false, &mut r);
                generate_clip(&spec, 4, &mut r).unwrap()
            })
            .collect()
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let mut state = TrainState::new(tiny(), 0).unwrap();
        let before = state.params.clone();
        let run = RunSettings {
            hyper: Hyper { lr: 0.0, ..Hyper::default() },
            batch_size: 1,
            blur_radius: 1,
            seed: 3,
            warmup_steps: 0,
        };
        state.advance(&clips(1), &run).unwrap();
        assert_eq!(state.params, before);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn momentum_and_decay_update() {
        let mut p = ModelParams::<f64>::init(tiny(), &mut Rng::new(0)).unwrap();
        let mut opt = Sgd::new(&p);
        let hyper = Hyper { lr: 0.1, momentum: 0.5, weight_decay: 0.01, alpha: 0.5 };
        let before = p.tensors[0].data()[0];
        let g: Vec<Option<Tensor<f64>>> = p.tensors.iter().map(|t| Some(t.map(|_| 1.0))).collect();
        opt.step(&mut p, &g, &hyper);
        let v1 = 1.0 + 0.01 * before;
        let after1 = before - 0.1 * v1;
        assert!((p.tensors[0].data()[0] - after1).abs() < 1e-15);
        opt.step(&mut p, &g, &hyper);
        let v2 = 0.5 * v1 + 1.0 + 0.01 * after1;
        assert!((p.tensors[0].data()[0] - (after1 - 0.1 * v2)).abs() < 1e-15);
    }

    #[test]
    fn resumed_run_repeats_losses() {
        let data = clips(3);
        let run = RunSettings {
            hyper: Hyper { lr: 0.05, ..Hyper::default() },
            batch_size: 2,
            blur_radius: 1,
            seed: 5,
            warmup_steps: 2,
        };
        let mut a = TrainState::new(tiny(), 1).unwrap();
        let la: Vec<f64> = (0..4).map(|_| a.advance(&data, &run).unwrap()).collect();
        let mut b = TrainState::new(tiny(), 1).unwrap();
        b.advance(&data, &run).unwrap();
        b.advance(&data, &run).unwrap();
        let mut resumed = b.clone();
        let lb: Vec<f64> = (0..2).map(|_| resumed.advance(&data, &run).unwrap()).collect();
        assert_eq!(&la[2..], &lb[..]);
        assert_eq!(a.params, resumed.params);
    }

    #[test]
    fn warmup_ramps_linearly() {
        let run = RunSettings {
            hyper: Hyper { lr: 1.0, ..Hyper::default() },
            batch_size: 1,
            blur_radius: 1,
            seed: 0,
            warmup_steps: 4,
        };
        let lrs: Vec<f64> = (0..6).map(|s| run.lr_at(s)).collect();
        assert_eq!(lrs, vec![0.25, 0.5, 0.75, 1.0, 1.0, 1.0]);
        assert_eq!(RunSettings { warmup_steps: 0, ..run }.lr_at(0), 1.0);
    }

    #[test]
    fn end_to_end_gradients_match_finite_differences() {
        let cfg = ModelConfig {
            enc_widths: [4, 4],
            c0: 8,
            c: 4,
            n_past: 2,
            patch: 4,
            stride: 2,
            use_sta: true,
        };
        let data = clips(1);
        let mut r = Rng::new(6);
        let s = Sample::draw(&data[0], 2, 1, &mut r).unwrap();
        let batch = [Sample::<f64> {
            window: s.window.clone(),
            query: s.query.cast(),
            past: s.past.iter().map(|p| p.cast()).collect(),
            target: s.target.clone(),
            soft: s.soft.cast(),
        }];
        let params = ModelParams::<f64>::init(cfg, &mut Rng::new(8)).unwrap();
        let basis = make_projection_basis::<f64>(4, 2).unwrap();
        let report = crate::gradcheck::check_gradients(&params.tensors, |tape, v| {
            let vars = ParamVars::from_slice(v);
            batch_loss(tape, &vars, &cfg, &batch, &basis, 0.5)
        })
        .unwrap();
        report.assert_within(1e-3);
    }

    #[test]
    fn fixed_batch_overfits() {
        let data = clips(1);
        let mut r = Rng::new(2);
        let batch: Vec<Sample> = (0..2).map(|_| Sample::draw(&data[0], 2, 1, &mut r).unwrap()).collect();
        let basis = make_projection_basis(4, 9).unwrap();
        let mut params = ModelParams::<f32>::init(tiny(), &mut Rng::new(3)).unwrap();
        let mut opt = Sgd::new(&params);
        let hyper = Hyper { lr: 0.05, ..Hyper::default() };
        let first = train_step(&mut params, &mut opt, &batch, &basis, &hyper).unwrap();
        let mut last = first;
        for _ in 0..49 {
            last = train_step(&mut params, &mut opt, &batch, &basis, &hyper).unwrap();
        }
        assert!(last < first, "{first} -> {last}");
    }
}
