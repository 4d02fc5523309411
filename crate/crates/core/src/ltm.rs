//! Long temporal memory: linearized global attention between the query
//! frame and a memory of past frames.
//!
//! Pixel embeddings are lifted to strictly positive random features
//! `φ(x) = exp(uᵀx − ‖x‖²/2) / √r`, whose inner products estimate the
//! softmax kernel `exp(qᵀm)`. Re-associating the attention product as
//! `Q′ (M′ᵀ M)` costs `O(n·r·c)` instead of the `O(n²)` of materializing
//! `Q′ M′ᵀ`.

use crate::autograd::{GradFn, Tape, Var};
use crate::error::{Error, Result};
use crate::kernels::{matmul, matmul_tn};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

/// Largest row count accepted by [`exact_attention_oracle`].
pub const EXACT_ORACLE_MAX_ROWS: usize = 1 << 16;

/// Normalizer entries at or below this value are clamped and reported.
pub const NORMALIZER_FLOOR: f64 = 1e-30;

/// Past-frame embeddings concatenated row-wise, oldest frame first.
#[derive(Debug, Clone)]
pub struct FeatureMemory<T: Real = f32> {
    matrix: Tensor<T>,
    frames: usize,
    rows_per_frame: usize,
}

impl<T: Real> FeatureMemory<T> {
    pub fn matrix(&self) -> &Tensor<T> {
        &self.matrix
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn rows_per_frame(&self) -> usize {
        self.rows_per_frame
    }

    pub fn channels(&self) -> usize {
        self.matrix.shape()[1]
    }
}

pub fn build_memory<T: Real>(past: &[Tensor<T>]) -> Result<FeatureMemory<T>> {
    let first = past
        .first()
        .ok_or_else(|| Error::arg("build_memory: no past frames"))?;
    first.expect_rank(2, "build_memory")?;
    if first.shape()[1] < 2 {
        return Err(Error::arg("build_memory: need at least 2 channels"));
    }
    for p in past {
        first.expect_same_shape(p, "build_memory")?;
    }
    Ok(FeatureMemory {
        matrix: Tensor::concat_rows(past)?,
        frames: past.len(),
        rows_per_frame: first.shape()[0],
    })
}

/// `⌊c/2⌋` mutually orthogonal Gaussian directions in `ℝᶜ`.
#[derive(Debug, Clone)]
pub struct ProjectionBasis<T: Real = f32> {
    vectors: Tensor<T>,
    seed: u64,
}

impl<T: Real> ProjectionBasis<T> {
    pub fn vectors(&self) -> &Tensor<T> {
        &self.vectors
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn features(&self) -> usize {
        self.vectors.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.vectors.shape()[1]
    }

    /// Uses caller-provided directions verbatim (rows need not be
    /// orthogonal). Intended for tests and hand-built cases.
    pub fn from_vectors(vectors: Tensor<T>) -> Result<Self> {
        vectors.expect_rank(2, "projection basis")?;
        Ok(Self { vectors, seed: 0 })
    }
}

pub fn make_projection_basis<T: Real>(c: usize, seed: u64) -> Result<ProjectionBasis<T>> {
    let mut rng = Rng::new(seed);
    draw_projection_basis(c, &mut rng)
}

/// Draws a basis from an existing stream. Rows are Gram–Schmidt
/// orthogonalized, then each is rescaled to the norm of its own Gaussian
/// draw so its length stays chi-distributed.
pub fn draw_projection_basis<T: Real>(c: usize, rng: &mut Rng) -> Result<ProjectionBasis<T>> {
    if c < 2 {
        return Err(Error::arg(format!("projection basis needs c >= 2, got {c}")));
    }
    let r = c / 2;
    let seed = rng.seed();
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(r);
    let mut norms = Vec::with_capacity(r);
    while rows.len() < r {
        let draw: Vec<f64> = (0..c).map(|_| rng.normal()).collect();
        let norm = draw.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut v = draw;
        for prev in &rows {
            let dot: f64 = v.iter().zip(prev).map(|(a, b)| a * b).sum();
            for (x, p) in v.iter_mut().zip(prev) {
                *x -= dot * p;
            }
        }
        let residual = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if residual < 1e-8 * norm.max(1.0) {
            continue; // degenerate draw, redraw
        }
        for x in v.iter_mut() {
            *x /= residual;
        }
        rows.push(v);
        norms.push(norm);
    }
    let mut data = Vec::with_capacity(r * c);
    for (row, norm) in rows.iter().zip(norms) {
        data.extend(row.iter().map(|&x| T::cast_from(x * norm)));
    }
    Ok(ProjectionBasis {
        vectors: Tensor::from_parts(vec![r, c], data),
        seed,
    })
}

/// Exponent shift applied before `exp` in [`project_features`].
///
/// The normalized attention output is unchanged by any shift that is
/// uniform over memory rows, or per-row over query rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stabilizer {
    None,
    /// One shift, the maximum exponent over all rows and features.
    Shared,
    /// Each row shifted by its own maximum exponent.
    PerRow,
}

/// Strictly positive random features, one row per input row.
#[derive(Debug, Clone)]
pub struct ProjectedFeatures<T: Real = f32> {
    matrix: Tensor<T>,
}

impl<T: Real> ProjectedFeatures<T> {
    pub fn matrix(&self) -> &Tensor<T> {
        &self.matrix
    }

    pub fn into_matrix(self) -> Tensor<T> {
        self.matrix
    }

    /// Wraps a matrix after checking every entry is strictly positive.
    pub fn from_matrix(matrix: Tensor<T>) -> Result<Self> {
        matrix.expect_rank(2, "projected features")?;
        if matrix.data().iter().any(|&v| !(v > T::zero())) {
            return Err(Error::arg("projected features must be strictly positive"));
        }
        Ok(Self { matrix })
    }
}

/// Exponents `uⱼᵀxₚ − ‖xₚ‖²/2` in `f64`, row-major `rows × r`.
fn exponents<T: Real>(x: &Tensor<T>, basis: &ProjectionBasis<T>) -> Result<Vec<f64>> {
    x.expect_rank(2, "project_features")?;
    let (rows, c) = (x.shape()[0], x.shape()[1]);
    if c != basis.channels() {
        return Err(Error::shape(format!(
            "project_features: {c} columns but basis has {} channels",
            basis.channels()
        )));
    }
    let r = basis.features();
    let xu = matmul(&x.cast::<f64>(), &basis.vectors.cast::<f64>().transpose()?)?;
    let mut z = xu.into_data();
    for p in 0..rows {
        let half_sq = x.row(p).iter().map(|v| v.as_f64().powi(2)).sum::<f64>() / 2.0;
        for v in &mut z[p * r..(p + 1) * r] {
            *v -= half_sq;
        }
    }
    Ok(z)
}

fn shifts(z: &[f64], rows: usize, r: usize, mode: Stabilizer) -> Vec<f64> {
    match mode {
        Stabilizer::None => vec![0.0; rows],
        Stabilizer::Shared => {
            let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            vec![m; rows]
        }
        Stabilizer::PerRow => z
            .chunks(r)
            .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect(),
    }
}

pub fn project_features<T: Real>(
    x: &Tensor<T>,
    basis: &ProjectionBasis<T>,
    stabilizer: Stabilizer,
) -> Result<ProjectedFeatures<T>> {
    let rows = x.shape()[0];
    let r = basis.features();
    let z = exponents(x, basis)?;
    let s = shifts(&z, rows, r, stabilizer);
    let scale = 1.0 / (r as f64).sqrt();
    let data = z
        .chunks(r)
        .zip(&s)
        .flat_map(|(row, &sh)| row.iter().map(move |&v| T::cast_from((v - sh).exp() * scale)))
        .collect();
    Ok(ProjectedFeatures {
        matrix: Tensor::from_parts(vec![rows, r], data),
    })
}

/// Channel-wise memory similarity `Â = M′ᵀ M` (`r × c`).
pub fn channel_similarity<T: Real>(mp: &ProjectedFeatures<T>, m: &FeatureMemory<T>) -> Result<Tensor<T>> {
    if mp.matrix.shape()[0] != m.matrix.shape()[0] {
        return Err(Error::shape(format!(
            "channel_similarity: {} projected rows vs {} memory rows",
            mp.matrix.shape()[0],
            m.matrix.shape()[0]
        )));
    }
    matmul_tn(&mp.matrix, &m.matrix)
}

/// Un-normalized global feature `G = Q′ Â` (`hw × c`).
pub fn global_feature<T: Real>(qp: &ProjectedFeatures<T>, asim: &Tensor<T>) -> Result<Tensor<T>> {
    matmul(&qp.matrix, asim)
}

/// Divides every row of `g` by `Q′ (M′ᵀ 𝟙)`. Returns the normalized map and
/// the number of normalizer entries that hit [`NORMALIZER_FLOOR`].
pub fn normalize_global_checked<T: Real>(
    g: &Tensor<T>,
    qp: &ProjectedFeatures<T>,
    mp: &ProjectedFeatures<T>,
) -> Result<(Tensor<T>, usize)> {
    g.expect_rank(2, "normalize_global")?;
    let (hw, c) = (g.shape()[0], g.shape()[1]);
    if qp.matrix.shape()[0] != hw || qp.matrix.shape()[1] != mp.matrix.shape()[1] {
        return Err(Error::shape(format!(
            "normalize_global: g {:?}, q′ {:?}, m′ {:?}",
            g.shape(),
            qp.matrix.shape(),
            mp.matrix.shape()
        )));
    }
    let d = normalizer(&qp.matrix, &mp.matrix);
    let mut clamped = 0;
    let mut out = Vec::with_capacity(hw * c);
    for (i, &di) in d.iter().enumerate() {
        let di = if di <= NORMALIZER_FLOOR {
            clamped += 1;
            NORMALIZER_FLOOR
        } else {
            di
        };
        out.extend(g.row(i).iter().map(|&v| T::cast_from(v.as_f64() / di)));
    }
    Ok((Tensor::from_parts(vec![hw, c], out), clamped))
}

pub fn normalize_global<T: Real>(
    g: &Tensor<T>,
    qp: &ProjectedFeatures<T>,
    mp: &ProjectedFeatures<T>,
) -> Result<Tensor<T>> {
    let (out, clamped) = normalize_global_checked(g, qp, mp)?;
    if clamped > 0 {
        log::warn!("normalize_global: {clamped} normalizer entries clamped");
    }
    Ok(out)
}

/// Row normalizers `dᵢ = q′ᵢ · Σₚ m′ₚ`. Every column of `Q′(M′ᵀ𝟙)` equals
/// this vector, so it is computed once and broadcast.
fn normalizer<T: Real>(qp: &Tensor<T>, mp: &Tensor<T>) -> Vec<f64> {
    let r = mp.shape()[1];
    let mut colsum = vec![0.0f64; r];
    for row in mp.data().chunks(r) {
        for (s, &v) in colsum.iter_mut().zip(row) {
            *s += v.as_f64();
        }
    }
    qp.data()
        .chunks(r)
        .map(|row| row.iter().zip(&colsum).map(|(a, b)| a.as_f64() * b).sum())
        .collect()
}

/// Linear-cost attention: project, `Â = M′ᵀM`, `G = Q′Â`, normalize.
pub fn linear_attention<T: Real>(
    q: &Tensor<T>,
    m: &FeatureMemory<T>,
    basis: &ProjectionBasis<T>,
) -> Result<Tensor<T>> {
    let mp = project_features(m.matrix(), basis, Stabilizer::Shared)?;
    let qp = project_features(q, basis, Stabilizer::PerRow)?;
    let asim = channel_similarity(&mp, m)?;
    let g = global_feature(&qp, &asim)?;
    normalize_global(&g, &qp, &mp)
}

/// Quadratic reference: materializes the `hw × Nhw` attention `Q′M′ᵀ`
/// (in row blocks) and applies it to `M` with the same normalization.
pub fn exact_attention_oracle<T: Real>(
    q: &Tensor<T>,
    m: &Tensor<T>,
    basis: &ProjectionBasis<T>,
) -> Result<Tensor<T>> {
    q.expect_rank(2, "exact_attention_oracle query")?;
    m.expect_rank(2, "exact_attention_oracle memory")?;
    let (hw, nhw) = (q.shape()[0], m.shape()[0]);
    if hw > EXACT_ORACLE_MAX_ROWS || nhw > EXACT_ORACLE_MAX_ROWS {
        return Err(Error::arg(format!(
            "exact_attention_oracle: {hw}×{nhw} exceeds the {EXACT_ORACLE_MAX_ROWS}-row cap"
        )));
    }
    let c = m.shape()[1];
    let qp = project_features(q, basis, Stabilizer::PerRow)?;
    let mp = project_features(m, basis, Stabilizer::Shared)?;
    let mpt = mp.matrix.transpose()?;
    let r = basis.features();
    const BLOCK: usize = 256;
    let mut out = Vec::with_capacity(hw * c);
    let mut start = 0;
    while start < hw {
        let end = (start + BLOCK).min(hw);
        let qb = Tensor::from_parts(vec![end - start, r], qp.matrix.data()[start * r..end * r].to_vec());
        let attn = matmul(&qb, &mpt)?;
        let num = matmul(&attn, m)?;
        for i in 0..end - start {
            let d: f64 = attn.row(i).iter().map(|v| v.as_f64()).sum();
            let d = d.max(NORMALIZER_FLOOR);
            out.extend(num.row(i).iter().map(|&v| T::cast_from(v.as_f64() / d)));
        }
        start = end;
    }
    Ok(Tensor::from_parts(vec![hw, c], out))
}

/// Learned 1×1 embeddings feeding the memory (`φ`) and the query (`ψ`).
#[derive(Debug, Clone, Copy)]
pub struct LtmVars {
    pub phi_w: Var,
    pub phi_b: Var,
    pub psi_w: Var,
    pub psi_b: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct LtmOutput {
    /// Global feature map `h × w × c`.
    pub global: Var,
    /// Query embedding `hw × c` (the `ψ` output), reused by short attention.
    pub query: Var,
}

/// Embeds `map[h×w×c₀]` with a 1×1 convolution and flattens to `hw × c`.
pub fn embed_pointwise<T: Real>(tape: &mut Tape<T>, map: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.conv2d(map, w, 1, 0)?;
    let y = tape.add_bias(y, b)?;
    let s = tape.shape(y).to_vec();
    tape.reshape(y, &[s[0] * s[1], s[2]])
}

/// Differentiable long temporal memory over `past` maps (oldest first)
/// and the `current` map, all `h × w × c₀`.
pub fn ltm_forward<T: Real>(
    tape: &mut Tape<T>,
    past: &[Var],
    current: Var,
    vars: &LtmVars,
    basis: &ProjectionBasis<T>,
) -> Result<LtmOutput> {
    if past.is_empty() {
        return Err(Error::arg("ltm_forward: at least one past frame required"));
    }
    let shape = tape.shape(current).to_vec();
    if shape.len() != 3 {
        return Err(Error::shape(format!("ltm_forward: current map {shape:?} is not h×w×c")));
    }
    for &p in past {
        if tape.shape(p) != shape.as_slice() {
            return Err(Error::shape(format!(
                "ltm_forward: past map {:?} differs from current {shape:?}",
                tape.shape(p)
            )));
        }
    }
    let (h, w) = (shape[0], shape[1]);
    let mut rows = Vec::with_capacity(past.len());
    for &p in past {
        rows.push(embed_pointwise(tape, p, vars.phi_w, vars.phi_b)?);
    }
    let memory = tape.concat(&rows, 0)?;
    let query = embed_pointwise(tape, current, vars.psi_w, vars.psi_b)?;
    let global = attend(tape, query, memory, basis)?;
    let c = tape.shape(global)[1];
    let global = tape.reshape(global, &[h, w, c])?;
    Ok(LtmOutput { global, query })
}

/// Tape version of [`linear_attention`] on `query[hw×c]`, `memory[Nhw×c]`.
pub fn attend<T: Real>(tape: &mut Tape<T>, query: Var, memory: Var, basis: &ProjectionBasis<T>) -> Result<Var> {
    let mp = positive_features(tape, memory, basis, Stabilizer::Shared)?;
    let qp = positive_features(tape, query, basis, Stabilizer::PerRow)?;
    let mpt = tape.transpose(mp)?;
    let asim = tape.matmul(mpt, memory)?;
    let g = tape.matmul(qp, asim)?;
    let ones = tape.constant(Tensor::ones([1, tape.shape(memory)[0]])?);
    let colsum = tape.matmul(ones, mp)?;
    let colsum_t = tape.transpose(colsum)?;
    let d = tape.matmul(qp, colsum_t)?;
    divide_rows(tape, g, d)
}

/// Records [`project_features`] on the tape. The exponent shift is treated
/// as a constant: the normalized output does not depend on it.
pub fn positive_features<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    basis: &ProjectionBasis<T>,
    stabilizer: Stabilizer,
) -> Result<Var> {
    let f = project_features(tape.value(x), basis, stabilizer)?;
    Ok(tape.record(
        f.matrix,
        &[x],
        PositiveFeaturesRule {
            basis: basis.vectors.clone(),
        },
    ))
}

struct PositiveFeaturesRule<T: Real> {
    basis: Tensor<T>,
}

impl<T: Real> GradFn<T> for PositiveFeaturesRule<T> {
    fn backward(&self, x: &[&Tensor<T>], f: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        // ∂fₚⱼ/∂xₚ = fₚⱼ (uⱼ − xₚ)
        let gf = g.zip_map(f, |a, b| a * b)?;
        let mut dx = matmul(&gf, &self.basis)?;
        let (rows, c) = (x[0].shape()[0], x[0].shape()[1]);
        for p in 0..rows {
            let s: f64 = gf.row(p).iter().map(|v| v.as_f64()).sum();
            let xr = x[0].row(p);
            let dr = &mut dx.data_mut()[p * c..(p + 1) * c];
            for (d, &xv) in dr.iter_mut().zip(xr) {
                *d = T::cast_from(d.as_f64() - s * xv.as_f64());
            }
        }
        Ok(vec![Some(dx)])
    }
}

/// `g[i][j] / d[i]` for `g[hw×c]`, `d[hw×1]`.
pub fn divide_rows<T: Real>(tape: &mut Tape<T>, g: Var, d: Var) -> Result<Var> {
    let (gv, dv) = (tape.value(g), tape.value(d));
    gv.expect_rank(2, "divide_rows")?;
    let (hw, c) = (gv.shape()[0], gv.shape()[1]);
    if dv.shape() != [hw, 1] {
        return Err(Error::shape(format!("divide_rows: divisor {:?} for {:?}", dv.shape(), gv.shape())));
    }
    let mut clamped = 0;
    let mut out = Vec::with_capacity(hw * c);
    for i in 0..hw {
        let mut di = dv.data()[i].as_f64();
        if di <= NORMALIZER_FLOOR {
            clamped += 1;
            di = NORMALIZER_FLOOR;
        }
        out.extend(gv.row(i).iter().map(|&v| T::cast_from(v.as_f64() / di)));
    }
    if clamped > 0 {
        log::warn!("ltm normalizer: {clamped} entries clamped");
    }
    Ok(tape.record(Tensor::from_parts(vec![hw, c], out), &[g, d], DivideRowsRule))
}

struct DivideRowsRule;

impl<T: Real> GradFn<T> for DivideRowsRule {
    fn backward(&self, x: &[&Tensor<T>], y: &Tensor<T>, g: &Tensor<T>, needs: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        let (hw, c) = (y.shape()[0], y.shape()[1]);
        let d: Vec<f64> = x[1]
            .data()
            .iter()
            .map(|v| v.as_f64().max(NORMALIZER_FLOOR))
            .collect();
        let dg = needs[0].then(|| {
            let mut out = g.clone();
            for i in 0..hw {
                for v in &mut out.data_mut()[i * c..(i + 1) * c] {
                    *v = T::cast_from(v.as_f64() / d[i]);
                }
            }
            out
        });
        let dd = needs[1].then(|| {
            // ∂yᵢⱼ/∂dᵢ = −yᵢⱼ / dᵢ
            let v = (0..hw)
                .map(|i| {
                    let s: f64 = g.row(i).iter().zip(y.row(i)).map(|(a, b)| a.as_f64() * b.as_f64()).sum();
                    T::cast_from(-s / d[i])
                })
                .collect();
            Tensor::from_parts(vec![hw, 1], v)
        });
        Ok(vec![dg, dd])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::check_gradients;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64s(shape.to_vec(), v).unwrap()
    }

    #[test]
    fn build_memory_concatenates_in_order() {
        let a = t(&[2, 3], &[1., 2., 3., 4., 5., 6.]);
        let one = build_memory(std::slice::from_ref(&a)).unwrap();
        assert_eq!(one.matrix(), &a);
        let b = t(&[2, 3], &[7., 8., 9., 10., 11., 12.]);
        let two = build_memory(&[a.clone(), b]).unwrap();
        assert_eq!(two.matrix().shape(), &[4, 3]);
        assert_eq!(two.matrix().row(2), &[7., 8., 9.]);
        let frames: Vec<Tensor<f32>> = (0..5).map(|_| Tensor::zeros([4, 128]).unwrap()).collect();
        assert_eq!(build_memory(&frames).unwrap().matrix().shape(), &[20, 128]);
    }

    #[test]
    fn build_memory_rejects_mismatch_and_empty() {
        let a = Tensor::<f32>::zeros([2, 3]).unwrap();
        let b = Tensor::<f32>::zeros([3, 3]).unwrap();
        assert!(matches!(build_memory(&[a, b]), Err(Error::Shape(_))));
        assert!(build_memory::<f32>(&[]).is_err());
    }

    #[test]
    fn basis_shapes_and_orthogonality() {
        let b2 = make_projection_basis::<f32>(2, 1).unwrap();
        assert_eq!(b2.vectors().shape(), &[1, 2]);
        assert!(b2.vectors().data().iter().any(|&v| v != 0.0));

        let b4 = make_projection_basis::<f64>(4, 9).unwrap();
        let v = b4.vectors();
        let dot: f64 = v.row(0).iter().zip(v.row(1)).map(|(a, b)| a * b).sum();
        assert!(dot.abs() < 1e-5);

        let b128 = make_projection_basis::<f32>(128, 3).unwrap();
        assert_eq!(b128.vectors().shape(), &[64, 128]);
        let g = matmul_nt_f64(b128.vectors());
        for i in 0..64 {
            for j in 0..64 {
                if i != j {
                    let cos = g[i * 64 + j] / (g[i * 64 + i] * g[j * 64 + j]).sqrt();
                    assert!(cos.abs() < 1e-5, "rows {i},{j}: {cos}");
                }
            }
        }
        assert!(make_projection_basis::<f32>(1, 0).is_err());
    }

    fn matmul_nt_f64(v: &Tensor<f32>) -> Vec<f64> {
        let v = v.cast::<f64>();
        crate::kernels::matmul_nt(&v, &v).unwrap().into_data()
    }

    #[test]
    fn basis_is_deterministic_per_seed() {
        let a = make_projection_basis::<f32>(16, 5).unwrap();
        let b = make_projection_basis::<f32>(16, 5).unwrap();
        let c = make_projection_basis::<f32>(16, 6).unwrap();
        assert_eq!(a.vectors(), b.vectors());
        assert_ne!(a.vectors(), c.vectors());
    }

    #[test]
    fn projection_examples() {
        let basis = make_projection_basis::<f64>(8, 2).unwrap();
        let zero = Tensor::<f64>::zeros([1, 8]).unwrap();
        let f = project_features(&zero, &basis, Stabilizer::None).unwrap();
        for &v in f.matrix().data() {
            assert!((v - 0.5).abs() < 1e-12); // 1/√4
        }

        let basis = ProjectionBasis::from_vectors(t(&[1, 2], &[1., 0.])).unwrap();
        let f = project_features(&t(&[1, 2], &[1., 0.]), &basis, Stabilizer::None).unwrap();
        assert!((f.matrix().data()[0] - 0.5f64.exp()).abs() < 1e-12);
        assert!((f.matrix().data()[0] - 1.64872).abs() < 1e-5);
    }

    #[test]
    fn stabilized_features_stay_finite_for_large_norms() {
        let basis = make_projection_basis::<f32>(16, 4).unwrap();
        let mut rng = Rng::new(2);
        let x = rng.normal_tensor::<f32>(&[10, 16]).unwrap().map(|v| v * 20.0);
        let f = project_features(&x, &basis, Stabilizer::Shared).unwrap();
        assert!(f.matrix().all_finite());
        assert!(f.matrix().data().iter().any(|&v| v > 0.0));
        let f = project_features(&x, &basis, Stabilizer::PerRow).unwrap();
        for p in 0..10 {
            let row_max = f.matrix().row(p).iter().copied().fold(0.0f32, f32::max);
            assert!((row_max - 8f32.sqrt().recip()).abs() < 1e-6);
        }
    }

    #[test]
    fn channel_similarity_examples() {
        let mp = ProjectedFeatures::from_matrix(t(&[2, 1], &[1., 1.])).unwrap();
        let m = build_memory(&[t(&[2, 2], &[1., 0., 0., 1.])]).unwrap();
        assert_eq!(channel_similarity(&mp, &m).unwrap().data(), &[1., 1.]);

        let mut rng = Rng::new(12);
        let a = rng.uniform_tensor::<f64>(&[6, 3], 0.1, 1.0).unwrap();
        let b = rng.normal_tensor::<f64>(&[6, 4]).unwrap();
        let s = channel_similarity(
            &ProjectedFeatures::from_matrix(a.clone()).unwrap(),
            &build_memory(std::slice::from_ref(&b)).unwrap(),
        )
        .unwrap();
        let oracle = matmul(&a.transpose().unwrap(), &b).unwrap();
        assert_eq!(s, oracle);

        let mp = ProjectedFeatures::from_matrix(Tensor::<f32>::ones([3, 64]).unwrap()).unwrap();
        let m = build_memory(&[Tensor::<f32>::ones([3, 128]).unwrap()]).unwrap();
        assert_eq!(channel_similarity(&mp, &m).unwrap().shape(), &[64, 128]);
    }

    #[test]
    fn single_memory_row_is_reproduced() {
        let basis = make_projection_basis::<f64>(4, 3).unwrap();
        let mut rng = Rng::new(1);
        let q = rng.normal_tensor::<f64>(&[3, 4]).unwrap();
        let mrow = rng.normal_tensor::<f64>(&[1, 4]).unwrap();
        let mem = build_memory(std::slice::from_ref(&mrow)).unwrap();
        let out = linear_attention(&q, &mem, &basis).unwrap();
        for i in 0..3 {
            for j in 0..4 {
                assert!((out.at(&[i, j]) - mrow.at(&[0, j])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn equal_weights_give_mean() {
        let qp = ProjectedFeatures::from_matrix(t(&[1, 1], &[2.0])).unwrap();
        let mp = ProjectedFeatures::from_matrix(t(&[2, 1], &[3.0, 3.0])).unwrap();
        let m = build_memory(&[t(&[2, 2], &[1., 4., 3., -2.])]).unwrap();
        let g = global_feature(&qp, &channel_similarity(&mp, &m).unwrap()).unwrap();
        let n = normalize_global(&g, &qp, &mp).unwrap();
        assert!((n.data()[0] - 2.0).abs() < 1e-12 && (n.data()[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scalar_weight_for_one_pair() {
        let qp = ProjectedFeatures::from_matrix(t(&[1, 2], &[0.5, 2.0])).unwrap();
        let mp = ProjectedFeatures::from_matrix(t(&[1, 2], &[3.0, 0.25])).unwrap();
        let m = build_memory(&[t(&[1, 3], &[1., -2., 4.])]).unwrap();
        let g = global_feature(&qp, &channel_similarity(&mp, &m).unwrap()).unwrap();
        let w = 0.5 * 3.0 + 2.0 * 0.25;
        assert_eq!(g.data(), &[w, -2.0 * w, 4.0 * w]);
    }

    #[test]
    fn per_row_memory_rescaling_changes_output() {
        // Only uniform memory-side scaling is an invariance; scaling a
        // single memory row re-weights it.
        let qp = ProjectedFeatures::from_matrix(t(&[1, 1], &[1.0])).unwrap();
        let mp = ProjectedFeatures::from_matrix(t(&[2, 1], &[1.0, 1.0])).unwrap();
        let mp2 = ProjectedFeatures::from_matrix(t(&[2, 1], &[3.0, 1.0])).unwrap();
        let m = build_memory(&[t(&[2, 2], &[0.0, 0.0, 1.0, 1.0])]).unwrap();
        let out = |mp: &ProjectedFeatures<f64>| {
            let g = global_feature(&qp, &channel_similarity(mp, &m).unwrap()).unwrap();
            normalize_global(&g, &qp, mp).unwrap().data()[0]
        };
        assert!((out(&mp) - 0.5).abs() < 1e-12);
        assert!((out(&mp2) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn exact_oracle_single_pair_and_cap() {
        let basis = make_projection_basis::<f64>(4, 8).unwrap();
        let q = t(&[1, 4], &[0.1, 0.2, -0.3, 0.4]);
        let m = t(&[1, 4], &[1., 2., 3., 4.]);
        let out = exact_attention_oracle(&q, &m, &basis).unwrap();
        assert!(out.max_abs_diff(&m).unwrap() < 1e-12);
        let big = Tensor::<f32>::zeros([EXACT_ORACLE_MAX_ROWS + 1, 2]).unwrap();
        let small = Tensor::<f32>::zeros([1, 2]).unwrap();
        let b2 = make_projection_basis::<f32>(2, 0).unwrap();
        assert!(matches!(exact_attention_oracle(&small, &big, &b2), Err(Error::Argument(_))));
    }

    #[test]
    fn linear_path_matches_exact_oracle() {
        let mut rng = Rng::new(77);
        for _ in 0..5 {
            let basis = make_projection_basis::<f32>(8, rng.next_u64()).unwrap();
            let q = rng.normal_tensor::<f32>(&[12, 8]).unwrap();
            let m = rng.normal_tensor::<f32>(&[30, 8]).unwrap();
            let mem = build_memory(std::slice::from_ref(&m)).unwrap();
            let lin = linear_attention(&q, &mem, &basis).unwrap();
            let exact = exact_attention_oracle(&q, &m, &basis).unwrap();
            assert!(lin.max_rel_diff(&exact, 1e-3).unwrap() < 1e-5);
        }
    }

    #[test]
    fn attend_tape_matches_pure_path_and_gradients() {
        let mut rng = Rng::new(31);
        let basis = make_projection_basis::<f64>(4, 2).unwrap();
        let q = rng.normal_tensor::<f64>(&[3, 4]).unwrap().map(|v| v * 0.5);
        let m = rng.normal_tensor::<f64>(&[5, 4]).unwrap().map(|v| v * 0.5);
        let mut tape = Tape::new();
        let (qv, mv) = (tape.constant(q.clone()), tape.constant(m.clone()));
        let out = attend(&mut tape, qv, mv, &basis).unwrap();
        let pure = linear_attention(&q, &build_memory(std::slice::from_ref(&m)).unwrap(), &basis).unwrap();
        assert!(tape.value(out).max_abs_diff(&pure).unwrap() < 1e-12);

        let w = rng.normal_tensor::<f64>(&[3, 4]).unwrap();
        check_gradients(&[q, m], |tape, v| {
            let o = attend(tape, v[0], v[1], &basis)?;
            let wv = tape.constant(w.clone());
            let p = tape.mul(o, wv)?;
            Ok(tape.sum(p))
        })
        .unwrap()
        .assert_within(1e-4);
    }

    #[test]
    fn positive_features_gradient() {
        let mut rng = Rng::new(41);
        let basis = make_projection_basis::<f64>(6, 1).unwrap();
        let x = rng.normal_tensor::<f64>(&[4, 6]).unwrap().map(|v| v * 0.5);
        let w = rng.normal_tensor::<f64>(&[4, 3]).unwrap();
        check_gradients(&[x], |tape, v| {
            let f = positive_features(tape, v[0], &basis, Stabilizer::None)?;
            let wv = tape.constant(w.clone());
            let p = tape.mul(f, wv)?;
            Ok(tape.sum(p))
        })
        .unwrap()
        .assert_within(1e-4);
    }
}
