//! Hard-example-mined cross-entropy, distillation cross-entropy and their
//! blend.
//!
//! Predictions are `H × W × 2` per-pixel (background, object)
//! probabilities. They are clamped to `[ε, 1 − ε]` before every logarithm;
//! clamped entries receive no gradient.

use crate::autograd::{GradFn, Tape, Var};
use crate::data::Mask;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const PROB_EPS: f64 = 1e-7;

/// Fraction denominator of the hard-example count, `r = ⌊HW / 16⌋`.
pub const OHEM_DIVISOR: usize = 16;

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

fn dclamp(p: f64) -> f64 {
    if (PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
        1.0
    } else {
        0.0
    }
}

fn check_pred<T: Real>(pred: &Tensor<T>, h: usize, w: usize, what: &str) -> Result<()> {
    if pred.shape() != [h, w, 2] {
        return Err(Error::shape(format!("{what}: prediction {:?} for a {h}×{w} target", pred.shape())));
    }
    Ok(())
}

/// Per-pixel `−log p̃^{y}`.
pub fn pixel_ce<T: Real>(pred: &Tensor<T>, target: &Mask) -> Result<Vec<f64>> {
    check_pred(pred, target.h(), target.w(), "pixel_ce")?;
    Ok(pred
        .data()
        .chunks(2)
        .zip(target.bits())
        .map(|(p, &y)| -clamp_prob(p[y as usize].as_f64()).ln())
        .collect())
}

/// Indices of the `r` largest losses, ordered by descending value and then
/// ascending pixel index.
pub fn hardest(losses: &[f64], r: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..losses.len()).collect();
    let by_loss = |&a: &usize, &b: &usize| losses[b].total_cmp(&losses[a]).then(a.cmp(&b));
    if r < idx.len() {
        idx.select_nth_unstable_by(r, by_loss);
        idx.truncate(r);
    }
    idx.sort_unstable_by(by_loss);
    idx
}

fn ohem_count(h: usize, w: usize) -> Result<usize> {
    let r = h * w / OHEM_DIVISOR;
    if r == 0 {
        return Err(Error::arg(format!("OHEM needs at least {OHEM_DIVISOR} pixels, got {h}×{w}")));
    }
    Ok(r)
}

/// Mean of the `⌊HW/16⌋` largest per-pixel cross-entropies, plus the
/// selected pixels.
pub fn ohem_ce_selected<T: Real>(pred: &Tensor<T>, target: &Mask) -> Result<(f64, Vec<usize>)> {
    let r = ohem_count(target.h(), target.w())?;
    let losses = pixel_ce(pred, target)?;
    let chosen = hardest(&losses, r);
    let sum: f64 = chosen.iter().map(|&i| losses[i]).sum();
    Ok((sum / r as f64, chosen))
}

pub fn ohem_ce<T: Real>(pred: &Tensor<T>, target: &Mask) -> Result<f64> {
    Ok(ohem_ce_selected(pred, target)?.0)
}

/// Mean over pixels of `−Σ_k p̄ᵏ log p̃ᵏ`.
pub fn distill_ce<T: Real>(pred: &Tensor<T>, soft: &Tensor<T>) -> Result<f64> {
    pred.expect_same_shape(soft, "distill_ce")?;
    if pred.rank() != 3 || pred.shape()[2] != 2 {
        return Err(Error::shape(format!("distill_ce: {:?} is not H×W×2", pred.shape())));
    }
    let n = pred.len() / 2;
    let sum: f64 = pred
        .data()
        .chunks(2)
        .zip(soft.data().chunks(2))
        .map(|(p, s)| -(s[0].as_f64() * clamp_prob(p[0].as_f64()).ln() + s[1].as_f64() * clamp_prob(p[1].as_f64()).ln()))
        .sum();
    Ok(sum / n as f64)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::arg(format!("loss blend α = {alpha} outside [0, 1]")));
    }
    Ok(())
}

/// `α·ohem_ce + (1 − α)·distill_ce`.
pub fn total_loss<T: Real>(pred: &Tensor<T>, target: &Mask, soft: &Tensor<T>, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let hard = ohem_ce(pred, target)?;
    let distill = distill_ce(pred, soft)?;
    Ok(blend(hard, distill, alpha))
}

fn blend(hard: f64, distill: f64, alpha: f64) -> f64 {
    // Endpoints return a component untouched.
    if alpha == 1.0 {
        hard
    } else if alpha == 0.0 {
        distill
    } else {
        alpha * hard + (1.0 - alpha) * distill
    }
}

/// Tape version of [`ohem_ce`]; gradient flows only through the selected
/// pixels.
pub fn ohem_ce_var<T: Real>(tape: &mut Tape<T>, pred: Var, target: &Mask) -> Result<Var> {
    let (loss, chosen) = ohem_ce_selected(tape.value(pred), target)?;
    let rule = OhemRule {
        picks: chosen.iter().map(|&i| (i, target.bits()[i] as usize)).collect(),
    };
    Ok(tape.record(Tensor::scalar(T::cast_from(loss)), &[pred], rule))
}

struct OhemRule {
    /// `(pixel, label)` of every selected pixel.
    picks: Vec<(usize, usize)>,
}

impl<T: Real> GradFn<T> for OhemRule {
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        let scale = g.data()[0].as_f64() / self.picks.len() as f64;
        let p = x[0];
        let mut dx = p.zeros_like();
        for &(i, y) in &self.picks {
            let v = p.data()[2 * i + y].as_f64();
            dx.data_mut()[2 * i + y] = T::cast_from(-scale * dclamp(v) / clamp_prob(v));
        }
        Ok(vec![Some(dx)])
    }
}

/// Tape version of [`distill_ce`] with `soft` held constant.
pub fn distill_ce_var<T: Real>(tape: &mut Tape<T>, pred: Var, soft: &Tensor<T>) -> Result<Var> {
    let loss = distill_ce(tape.value(pred), soft)?;
    Ok(tape.record(Tensor::scalar(T::cast_from(loss)), &[pred], DistillRule { soft: soft.clone() }))
}

struct DistillRule<T: Real> {
    soft: Tensor<T>,
}

impl<T: Real> GradFn<T> for DistillRule<T> {
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        let n = (x[0].len() / 2) as f64;
        let scale = g.data()[0].as_f64() / n;
        let mut dx = x[0].zeros_like();
        for ((d, &p), &s) in dx.data_mut().iter_mut().zip(x[0].data()).zip(self.soft.data()) {
            let p = p.as_f64();
            *d = T::cast_from(-scale * s.as_f64() * dclamp(p) / clamp_prob(p));
        }
        Ok(vec![Some(dx)])
    }
}

/// Tape version of [`total_loss`].
pub fn total_loss_var<T: Real>(tape: &mut Tape<T>, pred: Var, target: &Mask, soft: &Tensor<T>, alpha: f64) -> Result<Var> {
    check_alpha(alpha)?;
    if alpha == 1.0 {
        return ohem_ce_var(tape, pred, target);
    }
    if alpha == 0.0 {
        return distill_ce_var(tape, pred, soft);
    }
    let hard = ohem_ce_var(tape, pred, target)?;
    let distill = distill_ce_var(tape, pred, soft)?;
    let a = tape.scale(hard, T::cast_from(alpha));
    let b = tape.scale(distill, T::cast_from(1.0 - alpha));
    tape.add(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::check_gradients;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn random_probs(rng: &mut Rng, h: usize, w: usize) -> Tensor<f64> {
        let mut data = Vec::with_capacity(h * w * 2);
        for _ in 0..h * w {
            let p = rng.uniform_range(0.02, 0.98);
            data.extend([1.0 - p, p]);
        }
        Tensor::new([h, w, 2], data).unwrap()
    }

    fn random_mask(rng: &mut Rng, h: usize, w: usize) -> Mask {
        Mask::from_fn(h, w, |_, _| rng.bernoulli(0.4)).unwrap()
    }

    #[test]
    fn uniform_prediction_costs_log_two() {
        let pred = Tensor::<f64>::full([4, 4, 2], 0.5).unwrap();
        let target = Mask::from_fn(4, 4, |y, _| y == 0).unwrap();
        let ln2 = std::f64::consts::LN_2;
        assert!((ohem_ce(&pred, &target).unwrap() - ln2).abs() < 1e-15);
        assert!((distill_ce(&pred, &pred).unwrap() - ln2).abs() < 1e-15);
    }

    #[test]
    fn perfect_prediction_costs_nothing() {
        let target = Mask::from_fn(8, 8, |y, x| x > y).unwrap();
        let pred = target.one_hot::<f64>();
        assert!(ohem_ce(&pred, &target).unwrap() <= -(1.0 - PROB_EPS).ln() + 1e-15);
        assert!(distill_ce(&pred, &pred).unwrap() < 1e-6);
    }

    #[test]
    fn too_few_pixels_is_an_error() {
        let pred = Tensor::<f64>::full([3, 5, 2], 0.5).unwrap();
        assert!(ohem_ce(&pred, &Mask::empty(3, 5).unwrap()).is_err());
        assert!(total_loss(&pred, &Mask::empty(3, 5).unwrap(), &pred, 1.5).is_err());
    }

    #[test]
    fn ties_resolve_by_pixel_index() {
        assert_eq!(hardest(&[1.0, 3.0, 3.0, 2.0, 3.0], 2), vec![1, 2]);
        assert_eq!(hardest(&[0.5; 4], 4), vec![0, 1, 2, 3]);
    }

    #[test]
    fn blend_endpoints_are_exact() {
        let mut rng = Rng::new(4);
        let pred = random_probs(&mut rng, 8, 8);
        let soft = random_probs(&mut rng, 8, 8);
        let target = random_mask(&mut rng, 8, 8);
        let hard = ohem_ce(&pred, &target).unwrap();
        let distill = distill_ce(&pred, &soft).unwrap();
        assert_eq!(total_loss(&pred, &target, &soft, 1.0).unwrap().to_bits(), hard.to_bits());
        assert_eq!(total_loss(&pred, &target, &soft, 0.0).unwrap().to_bits(), distill.to_bits());
        let mid = total_loss(&pred, &target, &soft, 0.5).unwrap();
        assert!((mid - 0.5 * (hard + distill)).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = Rng::new(9);
        let pred = random_probs(&mut rng, 4, 8);
        let soft = random_probs(&mut rng, 4, 8).cast::<f64>();
        let target = random_mask(&mut rng, 4, 8);
        for alpha in [0.0, 0.3, 1.0] {
            check_gradients(std::slice::from_ref(&pred), |tape, v| total_loss_var(tape, v[0], &target, &soft, alpha))
                .unwrap()
                .assert_within(1e-4);
        }
    }

    proptest! {
        #[test]
        fn ohem_matches_full_sort(seed in 0u64..10_000, h in 4usize..12, w in 4usize..12) {
            let mut rng = Rng::new(seed);
            let pred = random_probs(&mut rng, h, w);
            let target = random_mask(&mut rng, h, w);
            let mut all = pixel_ce(&pred, &target).unwrap();
            all.sort_by(|a, b| b.total_cmp(a));
            let r = h * w / 16;
            let oracle = all[..r].iter().sum::<f64>() / r as f64;
            prop_assert_eq!(ohem_ce(&pred, &target).unwrap(), oracle);
        }

        #[test]
        fn losses_are_finite_and_non_negative(seed in 0u64..10_000) {
            let mut rng = Rng::new(seed);
            let pred = random_probs(&mut rng, 6, 6).map(|v| if v < 0.05 { 0.0 } else { v });
            let soft = random_probs(&mut rng, 6, 6);
            let target = random_mask(&mut rng, 6, 6);
            for alpha in [0.0, 0.25, 0.5, 1.0] {
                let l = total_loss(&pred, &target, &soft, alpha).unwrap();
                prop_assert!(l.is_finite() && l >= 0.0);
            }
        }
    }
}
