//! Reverse-mode differentiation over a dynamically recorded tape.
//!
//! A [`Tape`] owns every intermediate value of one forward pass. Nodes are
//! appended in execution order, so the tape is a topological order of the
//! (acyclic) graph and the backward sweep is a single reverse scan.
//! Gradients accumulate additively when a value fans out to several
//! consumers.

use crate::error::{Error, Result};
use crate::kernels;
use crate::tensor::{Real, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule of a recorded operation.
///
/// Given the operation's inputs, its output and the gradient of the final
/// scalar with respect to that output, returns one gradient per input.
/// Entries for inputs with `needs[i] == false` may be `None`.
pub trait GradFn<T: Real>: Send + Sync {
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>>;
}

struct Node<T: Real> {
    value: Tensor<T>,
    parents: Vec<Var>,
    rule: Option<Box<dyn GradFn<T>>>,
    requires_grad: bool,
}

pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients<T: Real> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the differentiated scalar w.r.t. `v`, if `v` influenced it.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, node: Node<T>) -> Var {
        self.nodes.push(node);
        Var(self.nodes.len() - 1)
    }

    /// Trainable input; gradients are reported for it.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(Node {
            value,
            parents: Vec::new(),
            rule: None,
            requires_grad: true,
        })
    }

    /// Input that is never differentiated.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(Node {
            value,
            parents: Vec::new(),
            rule: None,
            requires_grad: false,
        })
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records an operation. The rule is dropped when no parent needs a
    /// gradient.
    pub fn record(&mut self, value: Tensor<T>, parents: &[Var], rule: impl GradFn<T> + 'static) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(Node {
            value,
            parents: parents.to_vec(),
            rule: requires_grad.then(|| Box::new(rule) as Box<dyn GradFn<T>>),
            requires_grad,
        })
    }

    /// Gradients of the scalar `output` w.r.t. every node that reaches it.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>> {
        let out = &self.nodes[output.0];
        if out.value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar output, got shape {:?}",
                out.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::from_parts(out.value.shape().to_vec(), vec![T::one()]));

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            let Some(rule) = node.rule.as_ref() else {
                continue;
            };
            let Some(g) = grads[i].take() else {
                continue;
            };
            let inputs: Vec<&Tensor<T>> = node.parents.iter().map(|p| &self.nodes[p.0].value).collect();
            let needs: Vec<bool> = node
                .parents
                .iter()
                .map(|p| self.nodes[p.0].requires_grad)
                .collect();
            let parent_grads = rule.backward(&inputs, &node.value, &g, &needs)?;
            for ((p, pg), need) in node.parents.iter().zip(parent_grads).zip(needs) {
                if !need {
                    continue;
                }
                let Some(pg) = pg else { continue };
                debug_assert_eq!(pg.shape(), self.nodes[p.0].value.shape());
                match &mut grads[p.0] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
            // keep the gradient of leaves and of the output around
            if node.rule.is_none() || i == output.0 {
                grads[i] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.record(v, &[a, b], AddRule))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.record(v, &[a, b], SubRule))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.record(v, &[a, b], MulRule))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let v = self.value(a).map(|x| x * s);
        self.record(v, &[a], ScaleRule(s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        self.record(v, &[a], ReluRule)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.record(v, &[a], SumRule(T::one()))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = T::cast_from(self.value(a).sum().as_f64() / n);
        self.record(Tensor::scalar(s), &[a], SumRule(T::cast_from(1.0 / n)))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshape(shape.to_vec())?;
        Ok(self.record(v, &[a], ReshapeRule))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).transpose()?;
        Ok(self.record(v, &[a], TransposeRule))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = kernels::matmul(self.value(a), self.value(b))?;
        Ok(self.record(v, &[a, b], MatmulRule))
    }

    /// Per-slice product of `a[b×m×p]` with `b[b×p×q]`, or with
    /// `b[b×q×p]` transposed when `transpose_rhs` is set.
    pub fn batched_matmul(&mut self, a: Var, b: Var, transpose_rhs: bool) -> Result<Var> {
        let v = batched_matmul(self.value(a), self.value(b), transpose_rhs)?;
        Ok(self.record(v, &[a, b], BatchedMatmulRule { transpose_rhs }))
    }

    /// Concatenation along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let tensors: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let v = concat(&tensors, axis)?;
        let sizes = tensors.iter().map(|t| t.shape()[axis]).collect();
        Ok(self.record(v, parts, ConcatRule { axis, sizes }))
    }

    /// Adds `bias[c]` along the last axis.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let (_, cols) = xv.rows_cols();
        if bv.len() != cols {
            return Err(Error::shape(format!(
                "add_bias: bias of length {} for last axis {cols}",
                bv.len()
            )));
        }
        let mut v = xv.clone();
        for row in v.data_mut().chunks_mut(cols) {
            for (o, &b) in row.iter_mut().zip(bv.data()) {
                *o = *o + b;
            }
        }
        Ok(self.record(v, &[x, bias], AddBiasRule))
    }

    pub fn conv2d(&mut self, x: Var, kernel: Var, stride: usize, pad: usize) -> Result<Var> {
        let v = kernels::conv2d(self.value(x), self.value(kernel), stride, pad)?;
        Ok(self.record(v, &[x, kernel], Conv2dRule { stride, pad }))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let v = kernels::softmax_rows(self.value(x));
        self.record(v, &[x], SoftmaxRule)
    }

    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let v = kernels::layer_norm(self.value(x), eps)?;
        Ok(self.record(v, &[x], LayerNormRule { eps }))
    }

    pub fn upsample(&mut self, x: Var, factor: usize) -> Result<Var> {
        let v = kernels::bilinear_upsample(self.value(x), factor)?;
        Ok(self.record(v, &[x], UpsampleRule { factor }))
    }
}

/// Per-slice matrix product; see [`Tape::batched_matmul`].
pub fn batched_matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>, transpose_rhs: bool) -> Result<Tensor<T>> {
    a.expect_rank(3, "batched_matmul lhs")?;
    b.expect_rank(3, "batched_matmul rhs")?;
    let (nb, m, p) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let (nb2, r0, r1) = (b.shape()[0], b.shape()[1], b.shape()[2]);
    let (p2, q) = if transpose_rhs { (r1, r0) } else { (r0, r1) };
    if nb != nb2 || p != p2 {
        return Err(Error::shape(format!(
            "batched_matmul: {:?} x {:?} (transpose_rhs = {transpose_rhs})",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = vec![T::zero(); nb * m * q];
    let (ad, bd) = (a.data(), b.data());
    crate::parallel::for_each_row(&mut out, m * q, nb * m * p * q, |s, slice| {
        let a_s = &ad[s * m * p..(s + 1) * m * p];
        let b_s = &bd[s * p * q..(s + 1) * p * q];
        if transpose_rhs {
            for i in 0..m {
                let ar = &a_s[i * p..(i + 1) * p];
                for j in 0..q {
                    let br = &b_s[j * p..(j + 1) * p];
                    let dot: f64 = ar.iter().zip(br).map(|(x, y)| x.as_f64() * y.as_f64()).sum();
                    slice[i * q + j] = T::cast_from(dot);
                }
            }
        } else {
            kernels::matmul_into(a_s, b_s, slice, m, p, q);
        }
    });
    Ok(Tensor::from_parts(vec![nb, m, q], out))
}

fn transpose_slices<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let (nb, m, n) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut out = Vec::with_capacity(x.len());
    for s in 0..nb {
        let base = s * m * n;
        for j in 0..n {
            for i in 0..m {
                out.push(x.data()[base + i * n + j]);
            }
        }
    }
    Tensor::from_parts(vec![nb, n, m], out)
}

/// Concatenation of tensors along `axis`.
pub fn concat<T: Real>(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = parts.first().ok_or_else(|| Error::arg("concat: no inputs"))?;
    if axis >= first.rank() {
        return Err(Error::arg(format!("concat: axis {axis} out of range")));
    }
    for p in parts {
        let ok = p.rank() == first.rank()
            && p.shape()
                .iter()
                .zip(first.shape())
                .enumerate()
                .all(|(i, (a, b))| i == axis || a == b);
        if !ok {
            return Err(Error::shape(format!(
                "concat: shape {:?} incompatible with {:?} along axis {axis}",
                p.shape(),
                first.shape()
            )));
        }
    }
    let outer: usize = first.shape()[..axis].iter().product();
    let inners: Vec<usize> = parts
        .iter()
        .map(|p| p.shape()[axis..].iter().product())
        .collect();
    let mut data = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
    for o in 0..outer {
        for (p, &inner) in parts.iter().zip(&inners) {
            data.extend_from_slice(&p.data()[o * inner..(o + 1) * inner]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = parts.iter().map(|p| p.shape()[axis]).sum();
    Ok(Tensor::from_parts(shape, data))
}

struct AddRule;
impl<T: Real> GradFn<T> for AddRule {
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(g.clone()), Some(g.clone())])
    }
}

struct SubRule;
impl<T: Real> GradFn<T> for SubRule {
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(g.clone()), Some(g.map(|v| -v))])
    }
}

struct MulRule;
impl<T: Real> GradFn<T> for MulRule {
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, needs: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        let da = needs[0].then(|| g.zip_map(x[1], |g, b| g * b)).transpose()?;
        let db = needs[1].then(|| g.zip_map(x[0], |g, a| g * a)).transpose()?;
        Ok(vec![da, db])
    }
}

struct ScaleRule<T>(T);
impl<T: Real> GradFn<T> for ScaleRule<T> {
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        let s = self.0;
        Ok(vec![Some(g.map(|v| v * s))])
    }
}

struct ReluRule;
impl<T: Real> GradFn<T> for ReluRule {
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(g.zip_map(x[0], |g, v| if v > T::zero() { g } else { T::zero() })?)])
    }
}

struct SumRule<T>(T);
impl<T: Real> GradFn<T> for SumRule<T> {
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        let v = g.data()[0] * self.0;
        Ok(vec![Some(Tensor::full(x[0].shape().to_vec(), v)?)])
    }
}

struct ReshapeRule;
impl<T: Real> GradFn<T> for ReshapeRule {
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(g.clone().reshape(x[0].shape().to_vec())?)])
    }
}

struct TransposeRule;
impl<T: Real> GradFn<T> for TransposeRule {
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(g.transpose()?)])
    }
}

struct MatmulRule;
impl<T: Real> GradFn<T> for MatmulRule {
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, needs: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        let da = needs[0].then(|| kernels::matmul_nt(g, x[1])).transpose()?;
        let db = needs[1].then(|| kernels::matmul_tn(x[0], g)).transpose()?;
        Ok(vec![da, db])
    }
}

struct BatchedMatmulRule {
    transpose_rhs: bool,
}
impl<T: Real> GradFn<T> for BatchedMatmulRule {
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, needs: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        let (a, b) = (x[0], x[1]);
        if self.transpose_rhs {
            // C = A·Bᵀ: dA = G·B, dB = Gᵀ·A
            let da = needs[0].then(|| batched_matmul(g, b, false)).transpose()?;
            let db = needs[1]
                .then(|| batched_matmul(&transpose_slices(g), a, false))
                .transpose()?;
            Ok(vec![da, db])
        } else {
            // C = A·B: dA = G·Bᵀ, dB = Aᵀ·G
            let da = needs[0].then(|| batched_matmul(g, b, true)).transpose()?;
            let db = needs[1]
                .then(|| batched_matmul(&transpose_slices(a), g, false))
                .transpose()?;
            Ok(vec![da, db])
        }
    }
}

struct ConcatRule {
    axis: usize,
    sizes: Vec<usize>,
}
impl<T: Real> GradFn<T> for ConcatRule {
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, needs: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        let outer: usize = g.shape()[..self.axis].iter().product();
        let inners: Vec<usize> = x.iter().map(|p| p.shape()[self.axis..].iter().product()).collect();
        let total: usize = inners.iter().sum();
        let mut outs: Vec<Vec<T>> = x.iter().map(|p| Vec::with_capacity(p.len())).collect();
        for o in 0..outer {
            let mut off = o * total;
            for (buf, &inner) in outs.iter_mut().zip(&inners) {
                buf.extend_from_slice(&g.data()[off..off + inner]);
                off += inner;
            }
        }
        debug_assert_eq!(self.sizes.len(), x.len());
        Ok(outs
            .into_iter()
            .zip(x)
            .zip(needs)
            .map(|((buf, p), &need)| need.then(|| Tensor::from_parts(p.shape().to_vec(), buf)))
            .collect())
    }
}

struct AddBiasRule;
impl<T: Real> GradFn<T> for AddBiasRule {
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, needs: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        let cols = x[1].len();
        let db = needs[1].then(|| {
            let mut acc = vec![0.0f64; cols];
            for row in g.data().chunks(cols) {
                for (a, &v) in acc.iter_mut().zip(row) {
                    *a += v.as_f64();
                }
            }
            Tensor::from_parts(x[1].shape().to_vec(), acc.into_iter().map(T::cast_from).collect())
        });
        Ok(vec![needs[0].then(|| g.clone()), db])
    }
}

struct Conv2dRule {
    stride: usize,
    pad: usize,
}
impl<T: Real> GradFn<T> for Conv2dRule {
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, needs: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        let (dx, dk) = kernels::conv2d_backward(x[0], x[1], g, self.stride, self.pad, needs[0], needs[1])?;
        Ok(vec![dx, dk])
    }
}

struct SoftmaxRule;
impl<T: Real> GradFn<T> for SoftmaxRule {
    fn backward(&self, _: &[&Tensor<T>], y: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(kernels::softmax_rows_backward(y, g))])
    }
}

struct LayerNormRule {
    eps: f64,
}
impl<T: Real> GradFn<T> for LayerNormRule {
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(kernels::layer_norm_backward(x[0], g, self.eps))])
    }
}

struct UpsampleRule {
    factor: usize,
}
impl<T: Real> GradFn<T> for UpsampleRule {
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(kernels::bilinear_upsample_backward(x[0].shape(), g, self.factor))])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::check_gradients;
    use crate::rng::Rng;

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::from_f64s([2, 3], &[1., 2., 3., 4., 5., 6.]).unwrap());
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::<f32>::new();
        let x = tape.param(Tensor::zeros([2]).unwrap());
        let y = tape.scale(x, 2.0);
        assert!(matches!(tape.backward(y), Err(Error::Contract(_))));
    }

    #[test]
    fn diamond_accumulates_both_paths() {
        // f = sum(x * x + 3x) -> df/dx = 2x + 3
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::from_f64s([3], &[1., -2., 0.5]).unwrap());
        let sq = tape.mul(x, x).unwrap();
        let lin = tape.scale(x, 3.0);
        let y = tape.add(sq, lin).unwrap();
        let f = tape.sum(y);
        let g = tape.backward(f).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[5.0, -1.0, 4.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let c = tape.constant(Tensor::ones([2, 2]).unwrap());
        let p = tape.param(Tensor::ones([2, 2]).unwrap());
        let m = tape.matmul(c, p).unwrap();
        let f = tape.sum(m);
        let g = tape.backward(f).unwrap();
        assert!(g.get(c).is_none());
        assert!(g.get(p).is_some());
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let mut rng = Rng::new(4);
        let a = rng.normal_tensor::<f64>(&[3, 4]).unwrap();
        let b = rng.normal_tensor::<f64>(&[4, 2]).unwrap();
        check_gradients(&[a, b], |tape, v| {
            let m = tape.matmul(v[0], v[1])?;
            Ok(tape.sum(m))
        })
        .unwrap()
        .assert_within(1e-4);
    }

    #[test]
    fn batched_matmul_gradients() {
        let mut rng = Rng::new(5);
        for transpose_rhs in [false, true] {
            let a = rng.normal_tensor::<f64>(&[2, 3, 4]).unwrap();
            let b = if transpose_rhs {
                rng.normal_tensor::<f64>(&[2, 5, 4]).unwrap()
            } else {
                rng.normal_tensor::<f64>(&[2, 4, 5]).unwrap()
            };
            let w = rng.normal_tensor::<f64>(&[2, 3, 5]).unwrap();
            check_gradients(&[a, b], |tape, v| {
                let m = tape.batched_matmul(v[0], v[1], transpose_rhs)?;
                let wv = tape.constant(w.clone());
                let p = tape.mul(m, wv)?;
                Ok(tape.sum(p))
            })
            .unwrap()
            .assert_within(1e-4);
        }
    }

    #[test]
    fn concat_gradients_split_back() {
        let mut rng = Rng::new(6);
        let a = rng.normal_tensor::<f64>(&[2, 3, 2]).unwrap();
        let b = rng.normal_tensor::<f64>(&[2, 3, 3]).unwrap();
        let w = rng.normal_tensor::<f64>(&[2, 3, 5]).unwrap();
        check_gradients(&[a, b], |tape, v| {
            let c = tape.concat(&[v[0], v[1]], 2)?;
            let wv = tape.constant(w.clone());
            let p = tape.mul(c, wv)?;
            Ok(tape.sum(p))
        })
        .unwrap()
        .assert_within(1e-4);
    }

    #[test]
    fn conv_bias_relu_gradients() {
        let mut rng = Rng::new(7);
        let x = rng.normal_tensor::<f64>(&[6, 5, 3]).unwrap();
        let k = rng.normal_tensor::<f64>(&[3, 3, 3, 4]).unwrap();
        let b = rng.normal_tensor::<f64>(&[4]).unwrap();
        for (stride, pad) in [(1, 1), (2, 1), (1, 0)] {
            let w = rng.normal_tensor::<f64>(&[(6 + 2 * pad - 3) / stride + 1, (5 + 2 * pad - 3) / stride + 1, 4]).unwrap();
            check_gradients(&[x.clone(), k.clone(), b.clone()], |tape, v| {
                let y = tape.conv2d(v[0], v[1], stride, pad)?;
                let y = tape.add_bias(y, v[2])?;
                let wv = tape.constant(w.clone());
                let p = tape.mul(y, wv)?;
                Ok(tape.sum(p))
            })
            .unwrap()
            .assert_within(1e-4);
        }
    }

    #[test]
    fn softmax_layer_norm_upsample_gradients() {
        let mut rng = Rng::new(8);
        let x = rng.normal_tensor::<f64>(&[3, 4, 5]).unwrap();
        let w = rng.normal_tensor::<f64>(&[6, 8, 5]).unwrap();
        check_gradients(&[x], |tape, v| {
            let s = tape.softmax_rows(v[0]);
            let n = tape.layer_norm(s, kernels::LAYER_NORM_EPS)?;
            let u = tape.upsample(n, 2)?;
            let wv = tape.constant(w.clone());
            let p = tape.mul(u, wv)?;
            Ok(tape.sum(p))
        })
        .unwrap()
        .assert_within(1e-4);
    }

    #[test]
    fn relu_transpose_reshape_gradients() {
        let mut rng = Rng::new(9);
        let x = rng.normal_tensor::<f64>(&[4, 3]).unwrap();
        let w = rng.normal_tensor::<f64>(&[2, 6]).unwrap();
        check_gradients(&[x], |tape, v| {
            let r = tape.relu(v[0]);
            let t = tape.transpose(r)?;
            let s = tape.reshape(t, &[2, 6])?;
            let wv = tape.constant(w.clone());
            let p = tape.mul(s, wv)?;
            let q = tape.sub(p, wv)?;
            Ok(tape.mean(q))
        })
        .unwrap()
        .assert_within(1e-4);
    }
}
