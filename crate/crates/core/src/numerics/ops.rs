//! Forward kernels shared by the eager paths and the tape.
//!
//! All inputs are 2-D. The only broadcast supported is a `[1, d]` row
//! against an `[n, d]` matrix.

use super::{Real, Tensor};
use crate::error::{Error, Result};

fn mismatch<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Error {
    Error::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn require_matrix<T: Real>(op: &'static str, x: &Tensor<T>) -> Result<()> {
    if x.shape().len() != 2 {
        return Err(Error::ShapeMismatch {
            op,
            left: x.shape().to_vec(),
            right: vec![],
        });
    }
    Ok(())
}

pub(crate) fn ensure_finite<T: Real>(op: &'static str, t: Tensor<T>) -> Result<Tensor<T>> {
    if t.is_finite() {
        Ok(t)
    } else {
        Err(Error::NonFinite { op })
    }
}

/// Fixed-association dot product; eight independent lanes so it vectorizes.
#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] = acc[l] + x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail = tail + x * y;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

/// Squared Euclidean distance with the same lane layout as [`dot`].
#[inline]
pub fn sq_dist<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            let d = x[l] - y[l];
            acc[l] = acc[l] + d * d;
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        let d = x - y;
        tail = tail + d * d;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// `x · Wᵀ (+ b)` for `x: [n, in]`, `W: [out, in]`, `b: [1, out]`.
pub fn linear<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    require_matrix("linear", x)?;
    require_matrix("linear", w)?;
    if x.cols() != w.cols() {
        return Err(mismatch("linear", x, w));
    }
    let (n, out) = (x.rows(), w.rows());
    if let Some(b) = b {
        if b.shape() != [1, out] {
            return Err(mismatch("linear(bias)", w, b));
        }
    }
    let mut y = Vec::with_capacity(n * out);
    for i in 0..n {
        let xi = x.row(i);
        for o in 0..out {
            let mut v = dot(xi, w.row(o));
            if let Some(b) = b {
                v = v + b.data()[o];
            }
            y.push(v);
        }
    }
    ensure_finite("linear", Tensor::matrix(n, out, y)?)
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn sigmoid<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| T::one() / (T::one() + (-v).exp()))
}

pub fn tanh<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.tanh())
}

/// Elementwise sum; `b` may be a `[1, cols]` row broadcast over `a`.
pub fn add<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    require_matrix("add", a)?;
    require_matrix("add", b)?;
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
        return ensure_finite("add", Tensor::new(a.shape().to_vec(), data)?);
    }
    if b.rows() == 1 && b.cols() == a.cols() {
        let mut out = a.clone();
        for r in 0..a.rows() {
            for (v, &bv) in out.row_mut(r).iter_mut().zip(b.data()) {
                *v = *v + bv;
            }
        }
        return ensure_finite("add", out);
    }
    Err(mismatch("add", a, b))
}

pub fn mul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(mismatch("mul", a, b));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
    ensure_finite("mul", Tensor::new(a.shape().to_vec(), data)?)
}

pub fn concat_cols<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    require_matrix("concat", a)?;
    require_matrix("concat", b)?;
    if a.rows() != b.rows() {
        return Err(mismatch("concat", a, b));
    }
    let cols = a.cols() + b.cols();
    let mut data = Vec::with_capacity(a.rows() * cols);
    for r in 0..a.rows() {
        data.extend_from_slice(a.row(r));
        data.extend_from_slice(b.row(r));
    }
    Tensor::matrix(a.rows(), cols, data)
}

pub fn slice_cols<T: Real>(x: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    require_matrix("slice_cols", x)?;
    if start + len > x.cols() {
        return Err(Error::ShapeMismatch {
            op: "slice_cols",
            left: x.shape().to_vec(),
            right: vec![start, len],
        });
    }
    let mut data = Vec::with_capacity(x.rows() * len);
    for r in 0..x.rows() {
        data.extend_from_slice(&x.row(r)[start..start + len]);
    }
    Tensor::matrix(x.rows(), len, data)
}

pub fn repeat_rows<T: Real>(x: &Tensor<T>, n: usize) -> Result<Tensor<T>> {
    if x.shape().len() != 2 || x.rows() != 1 {
        return Err(Error::ShapeMismatch {
            op: "repeat_rows",
            left: x.shape().to_vec(),
            right: vec![1, x.cols()],
        });
    }
    let mut data = Vec::with_capacity(n * x.cols());
    for _ in 0..n {
        data.extend_from_slice(x.data());
    }
    Tensor::matrix(n, x.cols(), data)
}

pub fn sum<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.data().iter().fold(T::zero(), |a, &b| a + b);
    ensure_finite("sum", Tensor::scalar(s))
}

pub fn mean<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.is_empty() {
        return Err(Error::Empty("mean"));
    }
    let s = x.data().iter().fold(T::zero(), |a, &b| a + b);
    ensure_finite("mean", Tensor::scalar(s / T::from_usize(x.len()).unwrap()))
}

pub fn scale<T: Real>(x: &Tensor<T>, factor: T) -> Result<Tensor<T>> {
    ensure_finite("scale", x.map(|v| v * factor))
}

/// Column-wise max over rows: `[n, d] -> [1, d]` plus the winning row per
/// column (lowest row index on ties).
pub fn max_over_rows<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    require_matrix("max_over_rows", x)?;
    if x.rows() == 0 {
        return Err(Error::Empty("max_over_rows"));
    }
    let d = x.cols();
    let mut best = x.row(0).to_vec();
    let mut arg = vec![0usize; d];
    for r in 1..x.rows() {
        for (c, &v) in x.row(r).iter().enumerate() {
            if v > best[c] {
                best[c] = v;
                arg[c] = r;
            }
        }
    }
    Ok((Tensor::vector(best), arg))
}

/// Index of the largest element, lowest index on ties.
pub fn argmax<T: Real>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Divides each row by its maximum element. Rows whose maximum is not
/// positive are returned unchanged. Also returns the per-row argmax.
pub fn max_normalize_rows<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    require_matrix("max_normalize", x)?;
    let mut out = x.clone();
    let mut arg = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = out.row_mut(r);
        let m = argmax(row);
        let top = row[m];
        if top > T::zero() {
            for v in row.iter_mut() {
                *v = *v / top;
            }
        }
        arg.push(m);
    }
    Ok((ensure_finite("max_normalize", out)?, arg))
}
