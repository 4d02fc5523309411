//! Central finite-difference gradient checks in double precision.

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Gradients smaller than this are compared on an absolute scale.
pub const GRAD_FLOOR: f64 = 1e-3;

/// Relative disagreement between central differences at `h` and `h / 10`
/// that marks a kink (a ReLU or selection switch inside the step).
pub const KINK_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, GRAD_FLOOR)`.
    pub max_rel_err: f64,
    /// `(input, element, analytic, numeric)` of the worst entry.
    pub worst: (usize, usize, f64, f64),
    pub checked: usize,
    /// Elements skipped because the function is not smooth within the step.
    pub kinks: usize,
}

impl GradReport {
    pub fn assert_within(&self, tol: f64) {
        assert!(
            self.max_rel_err < tol,
            "gradient check failed: rel err {:.3e} >= {tol:.1e} at input {} element {} (analytic {}, numeric {})",
            self.max_rel_err,
            self.worst.0,
            self.worst.1,
            self.worst.2,
            self.worst.3
        );
        assert!(
            self.kinks * 100 <= self.checked,
            "gradient check: {} of {} elements sit on kinks",
            self.kinks,
            self.checked
        );
    }
}

/// Compares tape gradients of `f` against central differences with step
/// `1e-5`. Elements where the step straddles a kink are counted in
/// `kinks` and left out of `max_rel_err`.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], f: F) -> Result<GradReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    check_gradients_with_step(inputs, 1e-5, f)
}

pub fn check_gradients_with_step<F>(inputs: &[Tensor<f64>], step: f64, f: F) -> Result<GradReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| tape.param(v.clone())).collect();
        let out = f(&mut tape, &vars)?;
        tape.value(out).item()
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| tape.param(v.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut report = GradReport {
        max_rel_err: 0.0,
        worst: (0, 0, 0.0, 0.0),
        checked: 0,
        kinks: 0,
    };
    let f0 = tape.value(out).item()?;
    // One-sided gaps below this are rounding noise at the fine step.
    let noise = 100.0 * f64::EPSILON * f0.abs().max(1.0) / (step / 10.0);
    let mut probe = inputs.to_vec();
    // (central difference, |forward - backward| one-sided gap) at step h.
    let diffs = |probe: &mut [Tensor<f64>], i: usize, e: usize, h: f64| -> Result<(f64, f64)> {
        let orig = probe[i].data()[e];
        probe[i].data_mut()[e] = orig + h;
        let plus = eval(probe)?;
        probe[i].data_mut()[e] = orig - h;
        let minus = eval(probe)?;
        probe[i].data_mut()[e] = orig;
        let d = (plus - minus) / (2.0 * h);
        if d.is_finite() {
            Ok((d, (plus + minus - 2.0 * f0).abs() / h))
        } else {
            Err(Error::Numeric(format!("non-finite finite difference at input {i} element {e}")))
        }
    };
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .cloned()
            .unwrap_or_else(|| inputs[i].zeros_like());
        for e in 0..inputs[i].len() {
            let (numeric, gap) = diffs(&mut probe, i, e, step)?;
            let (fine, fine_gap) = diffs(&mut probe, i, e, step / 10.0)?;
            report.checked += 1;
            // Smooth: the centrals agree and the gap shrinks with the step.
            let straddles = (numeric - fine).abs() > KINK_TOL * numeric.abs().max(fine.abs()).max(GRAD_FLOOR);
            let at_point = fine_gap > noise && fine_gap > 0.5 * gap;
            if straddles || at_point {
                report.kinks += 1;
                continue;
            }
            let a = analytic.data()[e];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_FLOOR);
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = (i, e, a, numeric);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smooth_function_has_no_kinks() {
        let x = Tensor::new([3], vec![0.3, -1.2, 2.0]).unwrap();
        let r = check_gradients(&[x], |t, v| {
            let y = t.mul(v[0], v[0])?;
            let y = t.mul(y, v[0])?;
            Ok(t.sum(y))
        })
        .unwrap();
        assert_eq!((r.checked, r.kinks), (3, 0));
        r.assert_within(1e-7);
    }

    #[test]
    fn relu_at_or_near_zero_is_a_kink() {
        let x = Tensor::new([4], vec![4e-6, 0.0, 1.0, -1.0]).unwrap();
        let r = check_gradients(&[x], |t, v| {
            let y = t.relu(v[0]);
            Ok(t.sum(y))
        })
        .unwrap();
        assert_eq!(r.kinks, 2);
        assert!(r.max_rel_err < 1e-9);
    }

    #[test]
    fn wrong_gradient_is_not_excused() {
        let x = Tensor::new([2], vec![0.5, 1.5]).unwrap();
        // The square is taken off the tape, so its gradient reads as zero.
        let r = check_gradients(&[x], |t, v| {
            let sq = t.value(v[0]).map(|a| a * a);
            let c = t.constant(sq);
            Ok(t.sum(c))
        })
        .unwrap();
        assert_eq!(r.kinks, 0);
        assert!(r.max_rel_err > 0.99);
    }
}
