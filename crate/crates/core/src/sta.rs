//! Short temporal attention.
//!
//! The current frame and its nearest past frame are cut into overlapping
//! `k × k` windows at stride `d`. Each query pixel attends to the pixels of
//! the same window in the neighbor frame, and the retrieved windows are
//! scattered back with overlapping contributions summed, then layer-normed.

use crate::autograd::{GradFn, Tape, Var};
use crate::error::{Error, Result};
use crate::kernels::{self, LAYER_NORM_EPS};
use crate::ltm::embed_pointwise;
use crate::tensor::{Real, Tensor};

/// Placement of the sliding windows over an `h × w` map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGeometry {
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub d: usize,
    pub h_pad: usize,
    pub w_pad: usize,
    /// Zero rows added above the map.
    pub top: usize,
    /// Zero columns added left of the map.
    pub left: usize,
    pub rows: usize,
    pub cols: usize,
}

/// Smallest `n_pad ≥ n` with `(n_pad − k) % d == 0`.
fn padded_extent(n: usize, k: usize, d: usize) -> usize {
    n + (d - (n - k) % d) % d
}

impl PatchGeometry {
    pub fn new(h: usize, w: usize, k: usize, d: usize) -> Result<Self> {
        if d == 0 || k == 0 {
            return Err(Error::arg(format!("patch size {k} and stride {d} must be positive")));
        }
        if d > k {
            return Err(Error::arg(format!("stride {d} exceeds patch size {k}; pixels would be skipped")));
        }
        if k > h || k > w {
            return Err(Error::arg(format!("patch size {k} exceeds map {h}×{w}")));
        }
        let (h_pad, w_pad) = (padded_extent(h, k, d), padded_extent(w, k, d));
        Ok(Self {
            h,
            w,
            k,
            d,
            h_pad,
            w_pad,
            top: (h_pad - h) / 2,
            left: (w_pad - w) / 2,
            rows: (h_pad - k) / d + 1,
            cols: (w_pad - k) / d + 1,
        })
    }

    /// Number of windows `b`.
    pub fn patches(&self) -> usize {
        self.rows * self.cols
    }

    /// Pixels per window, `k²`.
    pub fn cells(&self) -> usize {
        self.k * self.k
    }

    /// Source pixel `y·w + x` of cell `cell` in window `patch`, or `None`
    /// when the cell falls in the zero padding.
    pub fn source(&self, patch: usize, cell: usize) -> Option<usize> {
        let (pr, pc) = (patch / self.cols, patch % self.cols);
        let (cr, cc) = (cell / self.k, cell % self.k);
        let y = (pr * self.d + cr).checked_sub(self.top)?;
        let x = (pc * self.d + cc).checked_sub(self.left)?;
        (y < self.h && x < self.w).then_some(y * self.w + x)
    }

    fn sources(&self) -> Vec<Option<usize>> {
        let cells = self.cells();
        (0..self.patches() * cells)
            .map(|i| self.source(i / cells, i % cells))
            .collect()
    }

    fn check_map<T: Real>(&self, x: &Tensor<T>, what: &str) -> Result<usize> {
        x.expect_rank(3, what)?;
        if x.shape()[0] != self.h || x.shape()[1] != self.w {
            return Err(Error::shape(format!(
                "{what}: map {:?} does not match geometry {}×{}",
                x.shape(),
                self.h,
                self.w
            )));
        }
        Ok(x.shape()[2])
    }

    fn check_patches<T: Real>(&self, p: &Tensor<T>, what: &str) -> Result<usize> {
        p.expect_rank(3, what)?;
        if p.shape()[0] != self.patches() || p.shape()[1] != self.cells() {
            return Err(Error::shape(format!(
                "{what}: patches {:?} do not match geometry ({} × {})",
                p.shape(),
                self.patches(),
                self.cells()
            )));
        }
        Ok(p.shape()[2])
    }
}

/// Stack of windows `b × k² × c` with the geometry that produced it.
#[derive(Debug, Clone)]
pub struct PatchGrid<T: Real = f32> {
    pub patches: Tensor<T>,
    pub geometry: PatchGeometry,
}

/// Per-window attention weights `b × k² × k²`.
#[derive(Debug, Clone)]
pub struct PatchSimilarity<T: Real = f32> {
    pub weights: Tensor<T>,
}

fn gather<T: Real>(x: &Tensor<T>, g: &PatchGeometry, c: usize) -> Tensor<T> {
    let mut out = vec![T::zero(); g.patches() * g.cells() * c];
    for (dst, src) in out.chunks_mut(c).zip(g.sources()) {
        if let Some(s) = src {
            dst.copy_from_slice(&x.data()[s * c..(s + 1) * c]);
        }
    }
    Tensor::from_parts(vec![g.patches(), g.cells(), c], out)
}

fn scatter_add<T: Real>(p: &Tensor<T>, g: &PatchGeometry, c: usize) -> Tensor<T> {
    let mut acc = vec![0.0f64; g.h * g.w * c];
    for (src, dst) in p.data().chunks(c).zip(g.sources()) {
        if let Some(s) = dst {
            for (a, &v) in acc[s * c..(s + 1) * c].iter_mut().zip(src) {
                *a += v.as_f64();
            }
        }
    }
    Tensor::from_parts(vec![g.h, g.w, c], acc.into_iter().map(T::cast_from).collect())
}

/// Cuts `x[h×w×c]` into windows, row-major over window origins.
pub fn separate<T: Real>(x: &Tensor<T>, k: usize, d: usize) -> Result<PatchGrid<T>> {
    x.expect_rank(3, "separate")?;
    let geometry = PatchGeometry::new(x.shape()[0], x.shape()[1], k, d)?;
    separate_with(x, &geometry)
}

pub fn separate_with<T: Real>(x: &Tensor<T>, geometry: &PatchGeometry) -> Result<PatchGrid<T>> {
    let c = geometry.check_map(x, "separate")?;
    Ok(PatchGrid {
        patches: gather(x, geometry, c),
        geometry: *geometry,
    })
}

/// Scatters windows back to `h × w × c`, summing overlaps and dropping
/// padding cells.
pub fn recover<T: Real>(p: &PatchGrid<T>) -> Result<Tensor<T>> {
    let c = p.geometry.check_patches(&p.patches, "recover")?;
    Ok(scatter_add(&p.patches, &p.geometry, c))
}

/// Softmax over `xᵢᵀyⱼ / √c` within each window.
pub fn patch_similarity<T: Real>(xq: &PatchGrid<T>, yn: &PatchGrid<T>) -> Result<PatchSimilarity<T>> {
    if xq.geometry != yn.geometry || xq.patches.shape() != yn.patches.shape() {
        return Err(Error::shape(format!(
            "patch_similarity: grids {:?} and {:?} differ",
            xq.patches.shape(),
            yn.patches.shape()
        )));
    }
    let c = xq.patches.shape()[2];
    let scale = T::cast_from(1.0 / (c as f64).sqrt());
    let logits = crate::autograd::batched_matmul(&xq.patches, &yn.patches, true)?.map(|v| v * scale);
    Ok(PatchSimilarity {
        weights: kernels::softmax_rows(&logits),
    })
}

/// `WᵢYᵢ` for every window `i`.
pub fn patch_retrieve<T: Real>(w: &PatchSimilarity<T>, yn: &PatchGrid<T>) -> Result<PatchGrid<T>> {
    let ws = w.weights.shape();
    let ys = yn.patches.shape();
    if ws.len() != 3 || ws[0] != ys[0] || ws[1] != ys[1] || ws[2] != ys[1] {
        return Err(Error::shape(format!("patch_retrieve: weights {ws:?} for patches {ys:?}")));
    }
    Ok(PatchGrid {
        patches: crate::autograd::batched_matmul(&w.weights, &yn.patches, false)?,
        geometry: yn.geometry,
    })
}

/// Windowed attention of `query[h×w×c]` over `neighbor[h×w×c]` followed by
/// recovery and layer normalization.
pub fn local_attention<T: Real>(query: &Tensor<T>, neighbor: &Tensor<T>, k: usize, d: usize) -> Result<Tensor<T>> {
    query.expect_same_shape(neighbor, "local_attention")?;
    let xq = separate(query, k, d)?;
    let yn = separate_with(neighbor, &xq.geometry)?;
    let w = patch_similarity(&xq, &yn)?;
    let r = patch_retrieve(&w, &yn)?;
    kernels::layer_norm(&recover(&r)?, LAYER_NORM_EPS)
}

/// Per-pixel number of windows covering it, as `h × w`.
pub fn overlap_count(geometry: &PatchGeometry) -> Tensor<f64> {
    let ones = Tensor::from_parts(vec![geometry.patches(), geometry.cells(), 1], vec![1.0; geometry.patches() * geometry.cells()]);
    scatter_add(&ones, geometry, 1).reshape([geometry.h, geometry.w]).expect("same length")
}

/// Learned `θ` embedding of the neighbor frame.
#[derive(Debug, Clone, Copy)]
pub struct StaVars {
    pub theta_w: Var,
    pub theta_b: Var,
}

pub fn separate_var<T: Real>(tape: &mut Tape<T>, x: Var, geometry: &PatchGeometry) -> Result<Var> {
    let grid = separate_with(tape.value(x), geometry)?;
    Ok(tape.record(grid.patches, &[x], SeparateRule(*geometry)))
}

pub fn recover_var<T: Real>(tape: &mut Tape<T>, p: Var, geometry: &PatchGeometry) -> Result<Var> {
    let c = geometry.check_patches(tape.value(p), "recover")?;
    let v = scatter_add(tape.value(p), geometry, c);
    Ok(tape.record(v, &[p], RecoverRule(*geometry)))
}

struct SeparateRule(PatchGeometry);

impl<T: Real> GradFn<T> for SeparateRule {
    fn backward(&self, _: &[&Tensor<T>], y: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(scatter_add(g, &self.0, y.shape()[2]))])
    }
}

struct RecoverRule(PatchGeometry);

impl<T: Real> GradFn<T> for RecoverRule {
    fn backward(&self, _: &[&Tensor<T>], y: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(gather(g, &self.0, y.shape()[2]))])
    }
}

/// Differentiable short attention. `query` is the `hw × c` embedding shared
/// with long memory; `neighbor` is the nearest past frame, `h × w × c₀`.
/// Returns the local feature map `h × w × c`.
pub fn sta_forward<T: Real>(
    tape: &mut Tape<T>,
    query: Var,
    neighbor: Var,
    vars: &StaVars,
    k: usize,
    d: usize,
) -> Result<Var> {
    let ns = tape.shape(neighbor).to_vec();
    if ns.len() != 3 {
        return Err(Error::shape(format!("sta_forward: neighbor {ns:?} is not h×w×c")));
    }
    let (h, w) = (ns[0], ns[1]);
    let qs = tape.shape(query).to_vec();
    if qs.len() != 2 || qs[0] != h * w {
        return Err(Error::shape(format!("sta_forward: query {qs:?} for a {h}×{w} map")));
    }
    let c = qs[1];
    let geometry = PatchGeometry::new(h, w, k, d)?;
    let hn = embed_pointwise(tape, neighbor, vars.theta_w, vars.theta_b)?;
    if tape.shape(hn)[1] != c {
        return Err(Error::shape(format!(
            "sta_forward: θ yields {} channels, query has {c}",
            tape.shape(hn)[1]
        )));
    }
    let hn = tape.reshape(hn, &[h, w, c])?;
    let q = tape.reshape(query, &[h, w, c])?;
    let xq = separate_var(tape, q, &geometry)?;
    let yn = separate_var(tape, hn, &geometry)?;
    let logits = tape.batched_matmul(xq, yn, true)?;
    let logits = tape.scale(logits, T::cast_from(1.0 / (c as f64).sqrt()));
    let weights = tape.softmax_rows(logits);
    let retrieved = tape.batched_matmul(weights, yn, false)?;
    let summed = recover_var(tape, retrieved, &geometry)?;
    tape.layer_norm(summed, LAYER_NORM_EPS)
}
