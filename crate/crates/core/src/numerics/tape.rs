//! Reverse-mode tape.
//!
//! Nodes are appended in evaluation order, so the node index is already a
//! topological order and the backward sweep is a single reverse walk.

use super::{ops, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Adjoint rule for an op defined outside this module.
pub trait AdjointRule<T: Real> {
    /// Returns one entry per input; `None` where `needs[i]` is false.
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad_output: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>>;
}

enum Op<T: Real> {
    Leaf,
    Linear { x: Var, w: Var, b: Option<Var> },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    ConcatCols { a: Var, b: Var },
    SliceCols { x: Var, start: usize },
    RepeatRows(Var),
    Sum(Var),
    Mean(Var),
    Scale { x: Var, factor: T },
    MaxOverRows { x: Var, argmax: Vec<usize> },
    MaxNormalize { x: Var, argmax: Vec<usize> },
    Custom { inputs: Vec<Var>, rule: Box<dyn AdjointRule<T>> },
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
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

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = ops::linear(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(y, Op::Linear { x, w, b }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = ops::relu(self.value(x));
        let rg = self.rg(x);
        self.push(y, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = ops::sigmoid(self.value(x));
        let rg = self.rg(x);
        self.push(y, Op::Sigmoid(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let y = ops::tanh(self.value(x));
        let rg = self.rg(x);
        self.push(y, Op::Tanh(x), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::add(self.value(a), self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(y, Op::Add { a, b }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::mul(self.value(a), self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(y, Op::Mul { a, b }, rg))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::concat_cols(self.value(a), self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(y, Op::ConcatCols { a, b }, rg))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let y = ops::slice_cols(self.value(x), start, len)?;
        let rg = self.rg(x);
        Ok(self.push(y, Op::SliceCols { x, start }, rg))
    }

    pub fn repeat_rows(&mut self, x: Var, n: usize) -> Result<Var> {
        let y = ops::repeat_rows(self.value(x), n)?;
        let rg = self.rg(x);
        Ok(self.push(y, Op::RepeatRows(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let y = ops::sum(self.value(x))?;
        let rg = self.rg(x);
        Ok(self.push(y, Op::Sum(x), rg))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let y = ops::mean(self.value(x))?;
        let rg = self.rg(x);
        Ok(self.push(y, Op::Mean(x), rg))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var> {
        let y = ops::scale(self.value(x), factor)?;
        let rg = self.rg(x);
        Ok(self.push(y, Op::Scale { x, factor }, rg))
    }

    /// Sum of several scalars.
    pub fn add_scalars(&mut self, xs: &[Var]) -> Result<Var> {
        let (&first, rest) = xs.split_first().ok_or(Error::Empty("add_scalars"))?;
        let mut acc = first;
        for &x in rest {
            acc = self.add(acc, x)?;
        }
        Ok(acc)
    }

    pub fn max_over_rows(&mut self, x: Var) -> Result<Var> {
        let (y, argmax) = ops::max_over_rows(self.value(x))?;
        let rg = self.rg(x);
        Ok(self.push(y, Op::MaxOverRows { x, argmax }, rg))
    }

    pub fn max_normalize(&mut self, x: Var) -> Result<Var> {
        let (y, argmax) = ops::max_normalize_rows(self.value(x))?;
        let rg = self.rg(x);
        Ok(self.push(y, Op::MaxNormalize { x, argmax }, rg))
    }

    /// Records an externally computed value with its own adjoint rule.
    pub fn custom(
        &mut self,
        inputs: Vec<Var>,
        value: Tensor<T>,
        rule: Box<dyn AdjointRule<T>>,
    ) -> Result<Var> {
        let value = ops::ensure_finite("custom", value)?;
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(value, Op::Custom { inputs, rule }, rg))
    }

    /// Back-propagates from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::ShapeMismatch {
                op: "backward",
                left: self.value(loss).shape().to_vec(),
                right: vec![1, 1],
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) -> Result<()> {
        if !self.rg(v) {
            return Ok(());
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g)?,
            slot => *slot = Some(g),
        }
        Ok(())
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (n, out, inp) = (xv.rows(), wv.rows(), wv.cols());
                if self.rg(*x) {
                    let mut dx = Tensor::zeros(&[n, inp]);
                    for i in 0..n {
                        let gi = g.row(i);
                        let dxi = dx.row_mut(i);
                        for (o, &go) in gi.iter().enumerate() {
                            if go != T::zero() {
                                ops::axpy(go, wv.row(o), dxi);
                            }
                        }
                    }
                    self.accumulate(grads, *x, dx)?;
                }
                if self.rg(*w) {
                    let mut dw = Tensor::zeros(&[out, inp]);
                    for i in 0..n {
                        let xi = xv.row(i);
                        for (o, &go) in g.row(i).iter().enumerate() {
                            if go != T::zero() {
                                ops::axpy(go, xi, dw.row_mut(o));
                            }
                        }
                    }
                    self.accumulate(grads, *w, dw)?;
                }
                if let Some(b) = b {
                    if self.rg(*b) {
                        self.accumulate(grads, *b, column_sums(g))?;
                    }
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let mut d = g.clone();
                for (dv, &xi) in d.data_mut().iter_mut().zip(xv.data()) {
                    if xi <= T::zero() {
                        *dv = T::zero();
                    }
                }
                self.accumulate(grads, *x, d)?;
            }
            Op::Sigmoid(x) => {
                let mut d = g.clone();
                for (dv, &s) in d.data_mut().iter_mut().zip(y.data()) {
                    *dv = *dv * s * (T::one() - s);
                }
                self.accumulate(grads, *x, d)?;
            }
            Op::Tanh(x) => {
                let mut d = g.clone();
                for (dv, &t) in d.data_mut().iter_mut().zip(y.data()) {
                    *dv = *dv * (T::one() - t * t);
                }
                self.accumulate(grads, *x, d)?;
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, g.clone())?;
                if self.value(*b).shape() == g.shape() {
                    self.accumulate(grads, *b, g.clone())?;
                } else {
                    self.accumulate(grads, *b, column_sums(g))?;
                }
            }
            Op::Mul { a, b } => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, ops::mul(g, self.value(*b))?)?;
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, ops::mul(g, self.value(*a))?)?;
                }
            }
            Op::ConcatCols { a, b } => {
                let ca = self.value(*a).cols();
                let cb = self.value(*b).cols();
                if self.rg(*a) {
                    self.accumulate(grads, *a, ops::slice_cols(g, 0, ca)?)?;
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, ops::slice_cols(g, ca, cb)?)?;
                }
            }
            Op::SliceCols { x, start } => {
                let xv = self.value(*x);
                let mut d = Tensor::zeros(xv.shape());
                let len = g.cols();
                for r in 0..g.rows() {
                    d.row_mut(r)[*start..*start + len].copy_from_slice(g.row(r));
                }
                self.accumulate(grads, *x, d)?;
            }
            Op::RepeatRows(x) => {
                self.accumulate(grads, *x, column_sums(g))?;
            }
            Op::Sum(x) => {
                let d = Tensor::filled(self.value(*x).shape(), g.item());
                self.accumulate(grads, *x, d)?;
            }
            Op::Mean(x) => {
                let xv = self.value(*x);
                let n = T::from_usize(xv.len()).unwrap();
                self.accumulate(grads, *x, Tensor::filled(xv.shape(), g.item() / n))?;
            }
            Op::Scale { x, factor } => {
                let f = *factor;
                self.accumulate(grads, *x, g.map(|v| v * f))?;
            }
            Op::MaxOverRows { x, argmax } => {
                let mut d = Tensor::zeros(self.value(*x).shape());
                let cols = d.cols();
                for (c, &r) in argmax.iter().enumerate() {
                    d.data_mut()[r * cols + c] = g.data()[c];
                }
                self.accumulate(grads, *x, d)?;
            }
            Op::MaxNormalize { x, argmax } => {
                let xv = self.value(*x);
                let mut d = g.clone();
                for (r, &m) in argmax.iter().enumerate() {
                    let top = xv.get(r, m);
                    if top <= T::zero() {
                        continue;
                    }
                    let xr = xv.row(r);
                    let gr = g.row(r);
                    let mut through_max = T::zero();
                    let dr = d.row_mut(r);
                    for j in 0..dr.len() {
                        if j == m {
                            continue;
                        }
                        dr[j] = gr[j] / top;
                        through_max = through_max + gr[j] * xr[j];
                    }
                    dr[m] = -through_max / (top * top);
                }
                self.accumulate(grads, *x, d)?;
            }
            Op::Custom { inputs, rule } => {
                let vals: Vec<&Tensor<T>> = inputs.iter().map(|&v| self.value(v)).collect();
                let needs: Vec<bool> = inputs.iter().map(|&v| self.rg(v)).collect();
                let outs = rule.backward(&vals, y, g, &needs);
                for (v, gi) in inputs.iter().zip(outs) {
                    if let Some(gi) = gi {
                        self.accumulate(grads, *v, gi)?;
                    }
                }
            }
        }
        Ok(())
    }
}

fn column_sums<T: Real>(g: &Tensor<T>) -> Tensor<T> {
    let mut s = vec![T::zero(); g.cols()];
    for r in 0..g.rows() {
        for (acc, &v) in s.iter_mut().zip(g.row(r)) {
            *acc = *acc + v;
        }
    }
    Tensor::vector(s)
}

/// Adjoints indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros shaped like `like` when nothing reached it.
    pub fn take_or_zeros(&mut self, v: Var, like: &Tensor<T>) -> Tensor<T> {
        self.grads
            .get_mut(v.0)
            .and_then(Option::take)
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff_check;

    #[test]
    fn relu_negative_branch_has_zero_adjoint() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::scalar(-3.0));
        let y = tape.relu(x);
        assert_eq!(tape.value(y).item(), 0.0);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 0.0);
    }

    #[test]
    fn relu_at_zero_has_zero_subgradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::scalar(0.0));
        let y = tape.relu(x);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 0.0);
    }

    #[test]
    fn tanh_at_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::scalar(0.0));
        let y = tape.tanh(x);
        assert_eq!(tape.value(y).item(), 0.0);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 1.0);
    }

    #[test]
    fn shape_mismatch_names_op() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[2, 3]));
        let w = tape.param(Tensor::zeros(&[4, 5]));
        let err = tape.linear(x, w, None).unwrap_err();
        match err {
            Error::ShapeMismatch { op, left, right } => {
                assert_eq!(op, "linear");
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![4, 5]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((*seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }

    fn random(shape: &[usize], seed: &mut u64) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| lcg(seed)).collect()).unwrap()
    }

    #[test]
    fn linear_gradient_matches_central_differences() {
        let mut seed = 7;
        let x = random(&[5, 3], &mut seed);
        let w0 = random(&[4, 3], &mut seed);
        let b = random(&[1, 4], &mut seed);
        let loss = |w: &Tensor<f64>| -> Result<f64> {
            let y = ops::linear(&x, w, Some(&b))?;
            Ok(y.data().iter().map(|v| v.sin()).sum())
        };
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let wv = tape.param(w0.clone());
        let bv = tape.constant(b.clone());
        let y = tape.linear(xv, wv, Some(bv)).unwrap();
        // d/dy sum(sin(y)) = cos(y): feed through a custom weighting
        let cosw = tape.value(y).map(f64::cos);
        let c = tape.constant(cosw);
        let prod = tape.mul(y, c).unwrap();
        let l = tape.sum(prod).unwrap();
        let g = tape.backward(l).unwrap();
        let err = finite_diff_check(loss, &w0, g.get(wv).unwrap(), 1e-6).unwrap();
        assert!(err < 1e-6, "rel err {err}");
    }

    #[test]
    fn every_primitive_matches_finite_differences() {
        let mut seed = 11;
        let a0 = random(&[3, 4], &mut seed).map(|v| v + 1.5);
        let row = random(&[1, 4], &mut seed);
        let build = |tape: &mut Tape<f64>, a: Var| -> Result<Var> {
            let r = tape.constant(row.clone());
            let s = tape.add(a, r)?;
            let t = tape.tanh(s);
            let sg = tape.sigmoid(a);
            let m = tape.mul(t, sg)?;
            let cat = tape.concat_cols(m, a)?;
            let sl = tape.slice_cols(cat, 2, 4)?;
            let rl = tape.relu(sl);
            let mn = tape.max_normalize(rl)?;
            let mx = tape.max_over_rows(mn)?;
            let rep = tape.repeat_rows(mx, 2)?;
            let sc = tape.scale(rep, 0.7)?;
            let me = tape.mean(sc)?;
            let su = tape.sum(a)?;
            let su = tape.scale(su, 0.01)?;
            tape.add_scalars(&[me, su])
        };
        let mut tape = Tape::new();
        let av = tape.param(a0.clone());
        let l = build(&mut tape, av).unwrap();
        let g = tape.backward(l).unwrap();
        let f = |a: &Tensor<f64>| -> Result<f64> {
            let mut t = Tape::new();
            let v = t.constant(a.clone());
            let l = build(&mut t, v)?;
            Ok(t.value(l).item())
        };
        let err = finite_diff_check(f, &a0, g.get(av).unwrap(), 1e-6).unwrap();
        assert!(err < 1e-6, "rel err {err}");
    }

    #[test]
    fn max_over_rows_is_permutation_invariant_bitwise() {
        let mut seed = 3;
        let x = random(&[6, 5], &mut seed);
        let perm = [4, 2, 0, 5, 1, 3];
        let rows: Vec<Vec<f64>> = perm.iter().map(|&i| x.row(i).to_vec()).collect();
        let xp = Tensor::from_rows(&rows).unwrap();
        let (a, _) = ops::max_over_rows(&x).unwrap();
        let (b, _) = ops::max_over_rows(&xp).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn max_ties_route_to_lowest_index() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap());
        let m = tape.max_over_rows(x).unwrap();
        let s = tape.sum(m).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn taped_forward_equals_eager_forward() {
        let mut seed = 5;
        let x = random(&[4, 3], &mut seed).cast::<f32>();
        let w = random(&[6, 3], &mut seed).cast::<f32>();
        let eager = ops::max_normalize_rows(&ops::relu(&ops::linear(&x, &w, None).unwrap()))
            .unwrap()
            .0;
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let wv = tape.param(w);
        let y = tape.linear(xv, wv, None).unwrap();
        let r = tape.relu(y);
        let n = tape.max_normalize(r).unwrap();
        assert_eq!(tape.value(n), &eager);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::zeros(&[2, 2]));
        assert!(tape.backward(x).is_err());
    }
}
