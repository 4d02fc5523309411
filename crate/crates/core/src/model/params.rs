use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::ltm::LtmVars;
use crate::rng::Rng;
use crate::sta::StaVars;
use crate::tensor::{Real, Tensor};

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    /// Encoder stage widths before the final `c₀` stage.
    pub enc_widths: [usize; 2],
    pub c0: usize,
    pub c: usize,
    pub n_past: usize,
    pub patch: usize,
    pub stride: usize,
    /// When false the local branch is replaced by zeros.
    pub use_sta: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            enc_widths: [16, 32],
            c0: 32,
            c: 16,
            n_past: 5,
            patch: 8,
            stride: 4,
            use_sta: true,
        }
    }
}

impl ModelConfig {
    /// Full-scale widths (`c₀ = 256`, `c = 128`).
    pub fn full_scale() -> Self {
        Self {
            c0: 256,
            c: 128,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.enc_widths.contains(&0) || self.c0 == 0 {
            return Err(Error::Config("encoder widths must be positive".into()));
        }
        if self.c < 2 {
            return Err(Error::Config(format!("embedding width c = {} must be at least 2", self.c)));
        }
        if self.n_past == 0 {
            return Err(Error::Config("n_past must be at least 1".into()));
        }
        if self.stride == 0 || self.stride > self.patch {
            return Err(Error::Config(format!(
                "stride {} must lie in 1..={} (the patch size)",
                self.stride, self.patch
            )));
        }
        Ok(())
    }

    /// `(name, shape)` of every parameter in canonical order.
    pub fn layout(&self) -> Vec<(&'static str, Vec<usize>)> {
        let [w1, w2] = self.enc_widths;
        let (c0, c) = (self.c0, self.c);
        vec![
            ("enc1_w", vec![3, 3, 3, w1]),
            ("enc1_b", vec![w1]),
            ("enc2_w", vec![3, 3, w1, w2]),
            ("enc2_b", vec![w2]),
            ("enc3_w", vec![3, 3, w2, c0]),
            ("enc3_b", vec![c0]),
            ("phi_w", vec![1, 1, c0, c]),
            ("phi_b", vec![c]),
            ("psi_w", vec![1, 1, c0, c]),
            ("psi_b", vec![c]),
            ("theta_w", vec![1, 1, c0, c]),
            ("theta_b", vec![c]),
            ("fuse_w", vec![3, 3, 3 * c, c]),
            ("fuse_b", vec![c]),
            ("aic1_w", vec![3, 3, c, c]),
            ("aic1_b", vec![c]),
            ("aic2_w", vec![3, 3, c, c]),
            ("aic2_b", vec![c]),
            ("head_w", vec![3, 3, c, 2]),
            ("head_b", vec![2]),
        ]
    }
}

/// Every trainable tensor, in [`ModelConfig::layout`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T: Real = f32> {
    pub config: ModelConfig,
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Real> ModelParams<T> {
    /// He-uniform kernels and zero biases.
    pub fn init(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut tensors = Vec::new();
        for (_, shape) in config.layout() {
            let t = if shape.len() == 4 {
                let fan_in = shape[0] * shape[1] * shape[2];
                let a = (6.0 / fan_in as f64).sqrt();
                rng.uniform_tensor(&shape, -a, a)?
            } else {
                Tensor::zeros(shape)?
            };
            tensors.push(t);
        }
        Ok(Self { config, tensors })
    }

    /// Checks tensors against the layout of `config`.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<Tensor<T>>) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        if layout.len() != tensors.len() {
            return Err(Error::shape(format!(
                "expected {} parameter tensors, got {}",
                layout.len(),
                tensors.len()
            )));
        }
        for ((name, shape), t) in layout.iter().zip(&tensors) {
            if t.shape() != shape.as_slice() {
                return Err(Error::shape(format!("parameter {name}: expected {shape:?}, got {:?}", t.shape())));
            }
        }
        Ok(Self { config, tensors })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.config.layout().into_iter().map(|(n, _)| n).collect()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names().iter().position(|&n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        let i = self.names().iter().position(|&n| n == name)?;
        Some(&mut self.tensors[i])
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config,
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
        }
    }

    /// Places every tensor on `tape`, as parameters when `trainable`.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> ParamVars {
        let vars: Vec<Var> = self
            .tensors
            .iter()
            .map(|t| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) })
            .collect();
        ParamVars::from_slice(&vars)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConvVars {
    pub w: Var,
    pub b: Var,
}

/// Tape handles of a bound [`ModelParams`].
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub all: Vec<Var>,
    pub enc: [ConvVars; 3],
    pub ltm: LtmVars,
    pub sta: StaVars,
    pub fuse: ConvVars,
    pub aic: [ConvVars; 2],
    pub head: ConvVars,
}

impl ParamVars {
    /// Handles in layout order.
    pub fn from_slice(v: &[Var]) -> Self {
        let cv = |i: usize| ConvVars { w: v[i], b: v[i + 1] };
        Self {
            all: v.to_vec(),
            enc: [cv(0), cv(2), cv(4)],
            ltm: LtmVars {
                phi_w: v[6],
                phi_b: v[7],
                psi_w: v[8],
                psi_b: v[9],
            },
            sta: StaVars {
                theta_w: v[10],
                theta_b: v[11],
            },
            fuse: cv(12),
            aic: [cv(14), cv(16)],
            head: cv(18),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_matches_contract() {
        let cfg = ModelConfig::full_scale();
        let p = ModelParams::<f32>::init(ModelConfig { enc_widths: [2, 2], ..cfg }, &mut Rng::new(0)).unwrap();
        assert_eq!(p.get("phi_w").unwrap().shape(), &[1, 1, 256, 128]);
        assert_eq!(p.get("fuse_w").unwrap().shape(), &[3, 3, 384, 128]);
        assert_eq!(p.get("head_w").unwrap().shape(), &[3, 3, 128, 2]);
        assert!(p.get("head_b").unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn he_bound_holds() {
        let p = ModelParams::<f64>::init(ModelConfig::default(), &mut Rng::new(1)).unwrap();
        let w = p.get("enc2_w").unwrap();
        let a = (6.0 / (9.0 * 16.0f64)).sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= a));
        assert!(w.data().iter().any(|v| v.abs() > 0.5 * a));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = ModelConfig { stride: 9, ..ModelConfig::default() };
        assert!(bad.validate().is_err());
        let bad = ModelConfig { c: 1, ..ModelConfig::default() };
        assert!(ModelParams::<f32>::init(bad, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn from_tensors_checks_shapes() {
        let p = ModelParams::<f32>::init(ModelConfig::default(), &mut Rng::new(0)).unwrap();
        let mut t = p.tensors.clone();
        assert!(ModelParams::from_tensors(p.config, t.clone()).is_ok());
        t.swap(0, 2);
        assert!(ModelParams::from_tensors(p.config, t).is_err());
    }
}
