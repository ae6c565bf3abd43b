//! Dense row-major `f64` tensors.
//!
//! Values are immutable after construction (the buffer sits behind an `Arc`),
//! so clones are cheap and tensors can be shared freely across threads. All
//! arithmetic allocates a fresh output buffer. Shape mismatches in these pure
//! kernels are programming errors and panic; the fallible, contract-checked
//! entry points required by callers live at module level (e.g. [`matmul`]).

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<[f64]>,
}

impl Tensor {
    /// Builds a tensor from a flat row-major buffer.
    pub fn from_vec(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Tensor {
        let shape = shape.into();
        let expect: usize = shape.iter().product();
        assert!(
            shape.iter().all(|&d| d > 0),
            "tensor dimensions must be positive: {shape:?}"
        );
        assert_eq!(
            expect,
            data.len(),
            "shape {shape:?} does not match buffer length {}",
            data.len()
        );
        Tensor {
            shape,
            data: data.into(),
        }
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::from_vec(vec![1], vec![v])
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Tensor {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, vec![0.0; n])
    }

    pub fn full(shape: impl Into<Vec<usize>>, v: f64) -> Tensor {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, vec![v; n])
    }

    pub fn eye(n: usize) -> Tensor {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Tensor::from_vec(vec![n, n], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data.to_vec()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    /// Element access for 2-D tensors.
    pub fn at2(&self, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.rank(), 2);
        self.data[i * self.shape[1] + j]
    }

    /// Row slice of a 2-D tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        assert_eq!(self.rank(), 2, "row() on tensor of shape {:?}", self.shape);
        let n = self.shape[1];
        &self.data[i * n..(i + 1) * n]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Same buffer under a new shape of equal length.
    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Tensor {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        assert_eq!(
            n,
            self.len(),
            "reshape {:?} -> {shape:?} changes length",
            self.shape
        );
        Tensor {
            shape,
            data: Arc::clone(&self.data),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        let data: Vec<f64> = self.data.iter().map(|&v| f(v)).collect();
        Tensor::from_vec(self.shape.clone(), data)
    }

    pub fn zip_map(&self, rhs: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        assert_eq!(
            self.shape, rhs.shape,
            "zip_map on mismatched shapes {:?} vs {:?}",
            self.shape, rhs.shape
        );
        let data: Vec<f64> = self
            .data
            .iter()
            .zip(rhs.data.iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Tensor::from_vec(self.shape.clone(), data)
    }

    pub fn add(&self, rhs: &Tensor) -> Tensor {
        self.zip_map(rhs, |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Tensor) -> Tensor {
        self.zip_map(rhs, |a, b| a - b)
    }

    pub fn mul(&self, rhs: &Tensor) -> Tensor {
        self.zip_map(rhs, |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|v| c * v)
    }

    /// Adds `rhs` whose shape is a suffix of `self`'s shape, broadcasting it
    /// over the leading dimensions.
    pub fn add_broadcast(&self, rhs: &Tensor) -> Tensor {
        let k = rhs.len();
        assert!(
            self.shape.ends_with(rhs.shape()) && self.len() % k == 0,
            "broadcast add: {:?} += {:?}",
            self.shape,
            rhs.shape
        );
        let mut data = self.to_vec();
        for chunk in data.chunks_mut(k) {
            for (o, &b) in chunk.iter_mut().zip(rhs.data.iter()) {
                *o += b;
            }
        }
        Tensor::from_vec(self.shape.clone(), data)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.len() as f64
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// `(m,k) x (k,n) -> (m,n)`.
    pub fn matmul(&self, rhs: &Tensor) -> Tensor {
        assert_eq!(self.rank(), 2, "matmul lhs rank {:?}", self.shape);
        assert_eq!(rhs.rank(), 2, "matmul rhs rank {:?}", rhs.shape);
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, n) = (rhs.shape[0], rhs.shape[1]);
        assert_eq!(k, k2, "matmul inner dims {k} vs {k2}");
        let mut out = vec![0.0; m * n];
        matmul_into(&self.data, &rhs.data, &mut out, m, k, n);
        Tensor::from_vec(vec![m, n], out)
    }

    /// `A x B^T`: `(m,k) x (n,k) -> (m,n)`.
    pub fn matmul_nt(&self, rhs: &Tensor) -> Tensor {
        assert_eq!(self.rank(), 2);
        assert_eq!(rhs.rank(), 2);
        let (m, k) = (self.shape[0], self.shape[1]);
        let (n, k2) = (rhs.shape[0], rhs.shape[1]);
        assert_eq!(k, k2, "matmul_nt inner dims {k} vs {k2}");
        let mut out = vec![0.0; m * n];
        matmul_nt_into(&self.data, &rhs.data, &mut out, m, k, n);
        Tensor::from_vec(vec![m, n], out)
    }

    /// `A^T x B`: `(k,m) x (k,n) -> (m,n)`.
    pub fn matmul_tn(&self, rhs: &Tensor) -> Tensor {
        assert_eq!(self.rank(), 2);
        assert_eq!(rhs.rank(), 2);
        let (k, m) = (self.shape[0], self.shape[1]);
        let (k2, n) = (rhs.shape[0], rhs.shape[1]);
        assert_eq!(k, k2, "matmul_tn inner dims {k} vs {k2}");
        let mut out = vec![0.0; m * n];
        matmul_tn_into(&self.data, &rhs.data, &mut out, m, k, n);
        Tensor::from_vec(vec![m, n], out)
    }

    /// Batched `(b,m,k) x (b,k,n) -> (b,m,n)`.
    pub fn bmm(&self, rhs: &Tensor) -> Tensor {
        let (b, m, k) = dims3(self);
        let (b2, k2, n) = dims3(rhs);
        assert_eq!(b, b2, "bmm batch dims");
        assert_eq!(k, k2, "bmm inner dims");
        let mut out = vec![0.0; b * m * n];
        for i in 0..b {
            matmul_into(
                &self.data[i * m * k..(i + 1) * m * k],
                &rhs.data[i * k * n..(i + 1) * k * n],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        Tensor::from_vec(vec![b, m, n], out)
    }

    /// Batched `A x B^T`: `(b,m,k) x (b,n,k) -> (b,m,n)`.
    pub fn bmm_nt(&self, rhs: &Tensor) -> Tensor {
        let (b, m, k) = dims3(self);
        let (b2, n, k2) = dims3(rhs);
        assert_eq!(b, b2, "bmm_nt batch dims");
        assert_eq!(k, k2, "bmm_nt inner dims");
        let mut out = vec![0.0; b * m * n];
        for i in 0..b {
            matmul_nt_into(
                &self.data[i * m * k..(i + 1) * m * k],
                &rhs.data[i * n * k..(i + 1) * n * k],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        Tensor::from_vec(vec![b, m, n], out)
    }

    /// Batched `A^T x B`: `(b,k,m) x (b,k,n) -> (b,m,n)`.
    pub fn bmm_tn(&self, rhs: &Tensor) -> Tensor {
        let (b, k, m) = dims3(self);
        let (b2, k2, n) = dims3(rhs);
        assert_eq!(b, b2, "bmm_tn batch dims");
        assert_eq!(k, k2, "bmm_tn inner dims");
        let mut out = vec![0.0; b * m * n];
        for i in 0..b {
            matmul_tn_into(
                &self.data[i * k * m..(i + 1) * k * m],
                &rhs.data[i * k * n..(i + 1) * k * n],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        Tensor::from_vec(vec![b, m, n], out)
    }

    /// 2-D transpose.
    pub fn transpose2(&self) -> Tensor {
        assert_eq!(self.rank(), 2);
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Tensor::from_vec(vec![n, m], out)
    }

    /// Reorders axes; the output is contiguous in the new order.
    pub fn permute(&self, axes: &[usize]) -> Tensor {
        let r = self.rank();
        assert_eq!(axes.len(), r, "permute axes {axes:?} for rank {r}");
        let mut seen = vec![false; r];
        for &a in axes {
            assert!(a < r && !seen[a], "invalid permutation {axes:?}");
            seen[a] = true;
        }
        let in_strides = strides(&self.shape);
        let out_shape: Vec<usize> = axes.iter().map(|&a| self.shape[a]).collect();
        let out_strides = strides(&out_shape);
        let mut out = vec![0.0; self.len()];
        let mut idx = vec![0usize; r];
        for (flat_out, slot) in out.iter_mut().enumerate() {
            let mut rem = flat_out;
            for d in 0..r {
                idx[d] = rem / out_strides[d];
                rem %= out_strides[d];
            }
            let mut flat_in = 0;
            for d in 0..r {
                flat_in += idx[d] * in_strides[axes[d]];
            }
            *slot = self.data[flat_in];
        }
        Tensor::from_vec(out_shape, out)
    }

    /// Concatenates tensors along `axis`; all other dims must agree.
    pub fn concat(axis: usize, parts: &[&Tensor]) -> Tensor {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let r = parts[0].rank();
        assert!(axis < r, "concat axis {axis} for rank {r}");
        let mut out_shape = parts[0].shape.clone();
        out_shape[axis] = parts.iter().map(|p| p.shape[axis]).sum();
        for p in parts {
            assert_eq!(p.rank(), r, "concat rank mismatch");
            for d in 0..r {
                if d != axis {
                    assert_eq!(p.shape[d], parts[0].shape[d], "concat dim {d} mismatch");
                }
            }
        }
        let outer: usize = out_shape[..axis].iter().product();
        let inner: usize = out_shape[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for p in parts {
                let rows = p.shape[axis];
                let start = o * rows * inner;
                out.extend_from_slice(&p.data[start..start + rows * inner]);
            }
        }
        Tensor::from_vec(out_shape, out)
    }

    /// Copies the `start..end` range along `axis`.
    pub fn slice_axis(&self, axis: usize, start: usize, end: usize) -> Tensor {
        let r = self.rank();
        assert!(axis < r && start < end && end <= self.shape[axis]);
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let rows = self.shape[axis];
        let mut out_shape = self.shape.clone();
        out_shape[axis] = end - start;
        let mut out = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            let base = (o * rows + start) * inner;
            out.extend_from_slice(&self.data[base..base + (end - start) * inner]);
        }
        Tensor::from_vec(out_shape, out)
    }

    /// Average-pools `(b, l, c)` over groups of `factor` along the middle
    /// axis to `(b, l/factor, c)`.
    pub fn avg_pool_time(&self, factor: usize) -> Tensor {
        let (b, l, c) = dims3(self);
        assert!(factor >= 1 && l % factor == 0, "pool {l} by {factor}");
        let lo = l / factor;
        let mut out = vec![0.0; b * lo * c];
        let inv = 1.0 / factor as f64;
        for bi in 0..b {
            for t in 0..l {
                let src = &self.data[(bi * l + t) * c..(bi * l + t + 1) * c];
                let dst = &mut out[(bi * lo + t / factor) * c..(bi * lo + t / factor + 1) * c];
                for (o, &v) in dst.iter_mut().zip(src) {
                    *o += v * inv;
                }
            }
        }
        Tensor::from_vec(vec![b, lo, c], out)
    }

    /// Nearest-neighbor upsampling of `(b, l, c)` to `(b, l*factor, c)`.
    pub fn upsample_time(&self, factor: usize) -> Tensor {
        let (b, l, c) = dims3(self);
        assert!(factor >= 1);
        let lo = l * factor;
        let mut out = Vec::with_capacity(b * lo * c);
        for bi in 0..b {
            for t in 0..l {
                let src = &self.data[(bi * l + t) * c..(bi * l + t + 1) * c];
                for _ in 0..factor {
                    out.extend_from_slice(src);
                }
            }
        }
        Tensor::from_vec(vec![b, lo, c], out)
    }
}

pub(crate) fn dims3(t: &Tensor) -> (usize, usize, usize) {
    assert_eq!(t.rank(), 3, "expected rank-3 tensor, got {:?}", t.shape());
    (t.shape()[0], t.shape()[1], t.shape()[2])
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        s[d] = s[d + 1] * shape[d + 1];
    }
    s
}

/// `out += a x b` kernel over raw row-major buffers (ikj order so the inner
/// loop runs over contiguous slices).
fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (l, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[l * n..(l + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

fn matmul_nt_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (j, o) in orow.iter_mut().enumerate() {
            let brow = &b[j * k..(j + 1) * k];
            *o += arow.iter().zip(brow).map(|(&x, &y)| x * y).sum::<f64>();
        }
    }
}

fn matmul_tn_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    // a is (k,m), b is (k,n); accumulate rank-1 updates.
    for l in 0..k {
        let arow = &a[l * m..(l + 1) * m];
        let brow = &b[l * n..(l + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// Contract-checked matrix product: inner dimensions must agree.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 {
        return Err(Error::shape(format!(
            "matmul expects two matrices, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if a.shape()[1] != b.shape()[0] {
        return Err(Error::shape(format!(
            "matmul inner dimensions disagree: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(a.matmul(b))
}

/// Renders a shape for error messages.
pub fn shape_msg(shape: &[usize]) -> String {
    format!("{shape:?}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_matmul() {
        let m = Tensor::from_vec(vec![3, 3], (1..=9).map(|v| v as f64).collect());
        let id = Tensor::eye(3);
        assert_eq!(id.matmul(&m), m);
        assert_eq!(m.matmul(&id), m);
    }

    #[test]
    fn hand_matmul() {
        let a = Tensor::from_vec(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let b = Tensor::from_vec(vec![2, 1], vec![0.0, 1.0]);
        let c = a.matmul(&b);
        assert_eq!(c.to_vec(), vec![2.0, 4.0]);
    }

    #[test]
    fn matmul_shape_error() {
        let a = Tensor::zeros(vec![2, 3]);
        let b = Tensor::zeros(vec![2, 3]);
        assert!(matches!(matmul(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn transpose_variants_agree() {
        let a = Tensor::from_vec(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Tensor::from_vec(vec![4, 3], (0..12).map(|v| v as f64 * 0.5).collect());
        let nt = a.matmul_nt(&b);
        let reference = a.matmul(&b.transpose2());
        assert_eq!(nt, reference);
        let c = Tensor::from_vec(vec![2, 4], (0..8).map(|v| v as f64).collect());
        let tn = a.matmul_tn(&c);
        let reference = a.transpose2().matmul(&c);
        assert_eq!(tn, reference);
    }

    #[test]
    fn permute_roundtrip() {
        let t = Tensor::from_vec(vec![2, 3, 4], (0..24).map(|v| v as f64).collect());
        let p = t.permute(&[2, 0, 1]);
        assert_eq!(p.shape(), &[4, 2, 3]);
        let back = p.permute(&[1, 2, 0]);
        assert_eq!(back, t);
    }

    #[test]
    fn concat_slice_roundtrip() {
        let a = Tensor::from_vec(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let b = Tensor::from_vec(vec![2, 3], vec![5.0, 6.0, 7.0, 8.0, 9.0, 10.0]);
        let cat = Tensor::concat(1, &[&a, &b]);
        assert_eq!(cat.shape(), &[2, 5]);
        assert_eq!(cat.slice_axis(1, 0, 2), a);
        assert_eq!(cat.slice_axis(1, 2, 5), b);
    }

    #[test]
    fn pool_and_upsample() {
        let t = Tensor::from_vec(vec![1, 4, 1], vec![1.0, 3.0, 5.0, 7.0]);
        let p = t.avg_pool_time(2);
        assert_eq!(p.to_vec(), vec![2.0, 6.0]);
        let u = p.upsample_time(2);
        assert_eq!(u.to_vec(), vec![2.0, 2.0, 6.0, 6.0]);
    }
}
