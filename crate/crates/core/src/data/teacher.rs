//! Soft labels standing in for a teacher network's pixel probabilities.

use super::Mask;
use crate::loss::PROB_EPS;
use crate::tensor::Tensor;

/// Box-blurred one-hot mask, `h × w × 2` as (background, object).
///
/// The window is clipped at the image border and averaged over the cells
/// that remain. Probabilities are clamped to `[ε, 1 − ε]`.
pub fn teacher_soft_labels(mask: &Mask, blur_radius: usize) -> Tensor<f32> {
    let (h, w) = (mask.h(), mask.w());
    // Summed-area table for O(1) window counts.
    let mut sat = vec![0usize; (h + 1) * (w + 1)];
    for y in 0..h {
        for x in 0..w {
            sat[(y + 1) * (w + 1) + x + 1] =
                mask.get(y, x) as usize + sat[y * (w + 1) + x + 1] + sat[(y + 1) * (w + 1) + x] - sat[y * (w + 1) + x];
        }
    }
    let r = blur_radius;
    let mut data = Vec::with_capacity(h * w * 2);
    for y in 0..h {
        let (y0, y1) = (y.saturating_sub(r), (y + r + 1).min(h));
        for x in 0..w {
            let (x0, x1) = (x.saturating_sub(r), (x + r + 1).min(w));
            let inside = sat[y1 * (w + 1) + x1] + sat[y0 * (w + 1) + x0] - sat[y0 * (w + 1) + x1] - sat[y1 * (w + 1) + x0];
            let cells = (y1 - y0) * (x1 - x0);
            let p = (inside as f64 / cells as f64).clamp(PROB_EPS, 1.0 - PROB_EPS);
            data.push((1.0 - p) as f32);
            data.push(p as f32);
        }
    }
    Tensor::new([h, w, 2], data).expect("mask extent is positive")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radius_zero_is_clamped_one_hot() {
        let m = Mask::from_fn(3, 3, |y, x| y == x).unwrap();
        let s = teacher_soft_labels(&m, 0);
        for y in 0..3 {
            for x in 0..3 {
                let on = y == x;
                let p = s.at(&[y, x, 1]) as f64;
                assert!((p - if on { 1.0 - PROB_EPS } else { PROB_EPS }).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn half_plane_boundary_gets_two_thirds() {
        // Rows 0..=4 are object; pixel (4, 4) sees 6 of 9 object cells.
        let m = Mask::from_fn(10, 10, |y, _| y <= 4).unwrap();
        let s = teacher_soft_labels(&m, 1);
        assert!((s.at(&[4, 4, 1]) as f64 - 2.0 / 3.0).abs() < 1e-6);
        assert!(s.at(&[1, 5, 1]) > 0.999);
        assert!(s.at(&[8, 5, 0]) > 0.999);
    }

    #[test]
    fn probabilities_sum_to_one() {
        let m = Mask::from_fn(7, 9, |y, x| (y * x) % 4 == 1).unwrap();
        let s = teacher_soft_labels(&m, 2);
        for px in s.data().chunks(2) {
            assert!(((px[0] + px[1]) as f64 - 1.0).abs() < 1e-6);
        }
    }
}
