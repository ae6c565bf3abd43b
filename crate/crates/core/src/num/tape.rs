//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! The op set is exactly what the denoiser, the VQ-VAE and the embedding
//! trainer need; this is not a general-purpose autodiff. A [`Tape`] records
//! one forward computation; [`Tape::backward`] replays it in reverse and
//! returns gradients for every leaf created with [`Tape::var`]. Nodes whose
//! inputs are all constants skip closure recording entirely, so running a
//! forward pass with constant parameters (sampling) carries no tape overhead
//! beyond the arithmetic itself.
//!
//! Gradients are accumulated per node and interior buffers are freed as the
//! sweep passes them, keeping peak memory proportional to the widest layer
//! rather than the whole graph.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;
#[cfg(not(feature = "std"))]
use num_traits::Float;

use super::tensor::{dims3, Tensor};

const GELU_COEF: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_CUBIC: f64 = 0.044_715;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    id: usize,
}

type BackFn = Box<dyn Fn(&Tensor, &mut GradBuf)>;

struct Node {
    value: Tensor,
    needs_grad: bool,
    back: Option<BackFn>,
}

/// Per-node gradient accumulator produced by [`Tape::backward`].
pub struct GradBuf {
    slots: Vec<Option<Vec<f64>>>,
}

impl GradBuf {
    fn acc(&mut self, id: usize, contrib: &Tensor) {
        match &mut self.slots[id] {
            Some(buf) => {
                debug_assert_eq!(buf.len(), contrib.len());
                for (o, &v) in buf.iter_mut().zip(contrib.data()) {
                    *o += v;
                }
            }
            slot @ None => *slot = Some(contrib.to_vec()),
        }
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    fn push(&self, value: Tensor, needs_grad: bool, back: Option<BackFn>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            needs_grad,
            back,
        });
        Var {
            id: nodes.len() - 1,
        }
    }

    /// Inserts a value that does not require gradients.
    pub fn constant(&self, t: Tensor) -> Var {
        self.push(t, false, None)
    }

    /// Inserts a differentiable leaf.
    pub fn var(&self, t: Tensor) -> Var {
        self.push(t, true, None)
    }

    pub fn value(&self, v: Var) -> Tensor {
        self.nodes.borrow()[v.id].value.clone()
    }

    pub fn shape_of(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.id].value.shape().to_vec()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes.borrow()[v.id].needs_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Runs the reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> GradBuf {
        let nodes = self.nodes.borrow();
        assert_eq!(
            nodes[loss.id].value.len(),
            1,
            "backward from non-scalar node of shape {:?}",
            nodes[loss.id].value.shape()
        );
        let mut buf = GradBuf {
            slots: vec![None; nodes.len()],
        };
        buf.slots[loss.id] = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.needs_grad {
                buf.slots[id] = None;
                continue;
            }
            let Some(back) = &node.back else { continue };
            let Some(g) = buf.slots[id].take() else {
                continue;
            };
            let g = Tensor::from_vec(node.value.shape().to_vec(), g);
            back(&g, &mut buf);
        }
        buf
    }

    /// Gradient of a leaf after [`Tape::backward`]; zeros if the leaf never
    /// influenced the loss.
    pub fn grad(&self, buf: &GradBuf, v: Var) -> Tensor {
        let shape = self.shape_of(v);
        match &buf.slots[v.id] {
            Some(data) => Tensor::from_vec(shape, data.clone()),
            None => Tensor::zeros(shape),
        }
    }

    // ---- arithmetic ----

    pub fn add(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let out = va.add(&vb);
        let needs = self.needs(a) || self.needs(b);
        let (na, nb) = (self.needs(a), self.needs(b));
        let back: Option<BackFn> = needs.then(|| {
            Box::new(move |g: &Tensor, buf: &mut GradBuf| {
                if na {
                    buf.acc(a.id, g);
                }
                if nb {
                    buf.acc(b.id, g);
                }
            }) as BackFn
        });
        self.push(out, needs, back)
    }

    /// Adds `b` (whose shape is a suffix of `a`'s) with broadcasting.
    pub fn add_bias(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let out = va.add_broadcast(&vb);
        let needs = self.needs(a) || self.needs(b);
        let (na, nb) = (self.needs(a), self.needs(b));
        let bshape = vb.shape().to_vec();
        let back: Option<BackFn> = needs.then(|| {
            Box::new(move |g: &Tensor, buf: &mut GradBuf| {
                if na {
                    buf.acc(a.id, g);
                }
                if nb {
                    let k: usize = bshape.iter().product();
                    let mut acc = vec![0.0; k];
                    for chunk in g.data().chunks(k) {
                        for (o, &v) in acc.iter_mut().zip(chunk) {
                            *o += v;
                        }
                    }
                    buf.acc(b.id, &Tensor::from_vec(bshape.clone(), acc));
                }
            }) as BackFn
        });
        self.push(out, needs, back)
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let out = va.sub(&vb);
        let needs = self.needs(a) || self.needs(b);
        let (na, nb) = (self.needs(a), self.needs(b));
        let back: Option<BackFn> = needs.then(|| {
            Box::new(move |g: &Tensor, buf: &mut GradBuf| {
                if na {
                    buf.acc(a.id, g);
                }
                if nb {
                    buf.acc(b.id, &g.scale(-1.0));
                }
            }) as BackFn
        });
        self.push(out, needs, back)
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let out = va.mul(&vb);
        let needs = self.needs(a) || self.needs(b);
        let (na, nb) = (self.needs(a), self.needs(b));
        let back: Option<BackFn> = needs.then(|| {
            Box::new(move |g: &Tensor, buf: &mut GradBuf| {
                if na {
                    buf.acc(a.id, &g.mul(&vb));
                }
                if nb {
                    buf.acc(b.id, &g.mul(&va));
                }
            }) as BackFn
        });
        self.push(out, needs, back)
    }

    /// `k * a + c` elementwise.
    pub fn affine(&self, a: Var, k: f64, c: f64) -> Var {
        let out = self.value(a).map(|x| k * x + c);
        let needs = self.needs(a);
        let back: Option<BackFn> = needs.then(|| {
            Box::new(move |g: &Tensor, buf: &mut GradBuf| {
                buf.acc(a.id, &g.scale(k));
            }) as BackFn
        });
        self.push(out, needs, back)
    }

    pub fn scale(&self, a: Var, k: f64) -> Var {
        self.affine(a, k, 0.0)
    }

    // ---- linear algebra ----

    /// `a x b` where `a` is `(m,k)` or `(batch.., k)` (flattened over leading
    /// dims) and `b` is `(k,n)`.
    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(vb.rank(), 2, "matmul rhs must be a matrix");
        let k = *va.shape().last().expect("matmul lhs rank");
        assert_eq!(k, vb.shape()[0], "matmul inner dims");
        let rows = va.len() / k;
        let flat = va.reshape(vec![rows, k]);
        let out_flat = flat.matmul(&vb);
        let mut out_shape = va.shape().to_vec();
        *out_shape.last_mut().unwrap() = vb.shape()[1];
        let out = out_flat.reshape(out_shape);
        let needs = self.needs(a) || self.needs(b);
        let (na, nb) = (self.needs(a), self.needs(b));
        let a_shape = va.shape().to_vec();
        let back: Option<BackFn> = needs.then(|| {
            Box::new(move |g: &Tensor, buf: &mut GradBuf| {
                let n = vb.shape()[1];
                let g_flat = g.reshape(vec![g.len() / n, n]);
                if na {
                    let ga = g_flat.matmul_nt(&vb).reshape(a_shape.clone());
                    buf.acc(a.id, &ga);
                }
                if nb {
                    buf.acc(b.id, &flat.matmul_tn(&g_flat));
                }
            }) as BackFn
        });
        self.push(out, needs, back)
    }

    /// Batched `(b,m,k) x (b,k,n)`.
    pub fn bmm(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let out = va.bmm(&vb);
        let needs = self.needs(a) || self.needs(b);
        let (na, nb) = (self.needs(a), self.needs(b));
        let back: Option<BackFn> = needs.then(|| {
            Box::new(move |g: &Tensor, buf: &mut GradBuf| {
                if na {
                    buf.acc(a.id, &g.bmm_nt(&vb));
                }
                if nb {
                    buf.acc(b.id, &va.bmm_tn(g));
                }
            }) as BackFn
        });
        self.push(out, needs, back)
    }

    /// Batched `a x b^T`: `(b,m,k) x (b,n,k) -> (b,m,n)`.
    pub fn bmm_nt(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let out = va.bmm_nt(&vb);
        let needs = self.needs(a) || self.needs(b);
        let (na, nb) = (self.needs(a), self.needs(b));
        let back: Option<BackFn> = needs.then(|| {
            Box::new(move |g: &Tensor, buf: &mut GradBuf| {
                if na {
                    buf.acc(a.id, &g.bmm(&vb));
                }
                if nb {
                    buf.acc(b.id, &g.bmm_tn(&va));
                }
            }) as BackFn
        });
        self.push(out, needs, back)
    }

    // ---- shape plumbing ----

    pub fn reshape(&self, a: Var, shape: impl Into<Vec<usize>>) -> Var {
        let shape = shape.into();
        let va = self.value(a);
        let orig = va.shape().to_vec();
        let out = va.reshape(shape);
        let needs = self.needs(a);
        let back: Option<BackFn> = needs.then(|| {
            Box::new(move |g: &Tensor, buf: &mut GradBuf| {
                buf.acc(a.id, &g.reshape(orig.clone()));
            }) as BackFn
        });
        self.push(out, needs, back)
    }

    pub fn permute(&self, a: Var, axes: &[usize]) -> Var {
        let va = self.value(a);
        let out = va.permute(axes);
        let mut inverse = vec![0usize; axes.len()];
        for (i, &ax) in axes.iter().enumerate() {
            inverse[ax] = i;
        }
        let needs = self.needs(a);
        let back: Option<BackFn> = needs.then(|| {
            Box::new(move |g: &Tensor, buf: &mut GradBuf| {
                buf.acc(a.id, &g.permute(&inverse));
            }) as BackFn
        });
        self.push(out, needs, back)
    }

    pub fn concat(&self, axis: usize, parts: &[Var]) -> Var {
        let values: Vec<Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let refs: Vec<&Tensor> = values.iter().collect();
        let out = Tensor::concat(axis, &refs);
        let needs = parts.iter().any(|&p| self.needs(p));
        let ids: Vec<(usize, bool, usize)> = parts
            .iter()
            .zip(&values)
            .map(|(&p, v)| (p.id, self.needs(p), v.shape()[axis]))
            .collect();
        let back: Option<BackFn> = needs.then(|| {
            Box::new(move |g: &Tensor, buf: &mut GradBuf| {
                let mut start = 0;
                for &(id, needed, width) in &ids {
                    if needed {
                        buf.acc(id, &g.slice_axis(axis, start, start + width));
                    }
                    start += width;
                }
            }) as BackFn
        });
        self.push(out, needs, back)
    }

    pub fn slice_axis(&self, a: Var, axis: usize, start: usize, end: usize) -> Var {
        let va = self.value(a);
        let out = va.slice_axis(axis, start, end);
        let needs = self.needs(a);
        let full_shape = va.shape().to_vec();
        let back: Option<BackFn> = needs.then(|| {
            Box::new(move |g: &Tensor, buf: &mut GradBuf| {
                // Scatter the slice gradient back into a zero tensor.
                let outer: usize = full_shape[..axis].iter().product();
                let inner: usize = full_shape[axis + 1..].iter().product();
                let rows = full_shape[axis];
                let mut acc = vec![0.0; outer * rows * inner];
                let width = end - start;
                for o in 0..outer {
                    let src = &g.data()[o * width * inner..(o + 1) * width * inner];
                    let dst_base = (o * rows + start) * inner;
                    acc[dst_base..dst_base + width * inner].copy_from_slice(src);
                }
                buf.acc(a.id, &Tensor::from_vec(full_shape.clone(), acc));
            }) as BackFn
        });
        self.push(out, needs, back)
    }

    pub fn avg_pool_time(&self, a: Var, factor: usize) -> Var {
        let va = self.value(a);
        let out = va.avg_pool_time(factor);
        let needs = self.needs(a);
        let back: Option<BackFn> = needs.then(|| {
            Box::new(move |g: &Tensor, buf: &mut GradBuf| {
                buf.acc(a.id, &g.upsample_time(factor).scale(1.0 / factor as f64));
            }) as BackFn
        });
        self.push(out, needs, back)
    }

    pub fn upsample_time(&self, a: Var, factor: usize) -> Var {
        let va = self.value(a);
        let out = va.upsample_time(factor);
        let needs = self.needs(a);
        let back: Option<BackFn> = needs.then(|| {
            Box::new(move |g: &Tensor, buf: &mut GradBuf| {
                // Sum-pool the upstream gradient over each replicated group.
                buf.acc(a.id, &g.avg_pool_time(factor).scale(factor as f64));
            }) as BackFn
        });
        self.push(out, needs, back)
    }

    /// Row lookup: `table` is `(v, d)`, output is `(len(indices), d)`.
    pub fn embedding(&self, table: Var, indices: &[usize]) -> Var {
        let vt = self.value(table);
        assert_eq!(vt.rank(), 2, "embedding table must be 2-D");
        let (v, d) = (vt.shape()[0], vt.shape()[1]);
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            assert!(i < v, "embedding index {i} out of range {v}");
            out.extend_from_slice(vt.row(i));
        }
        let out = Tensor::from_vec(vec![indices.len(), d], out);
        let needs = self.needs(table);
        let idx: Vec<usize> = indices.to_vec();
        let back: Option<BackFn> = needs.then(|| {
            Box::new(move |g: &Tensor, buf: &mut GradBuf| {
                let mut acc = vec![0.0; v * d];
                for (r, &i) in idx.iter().enumerate() {
                    let src = &g.data()[r * d..(r + 1) * d];
                    let dst = &mut acc[i * d..(i + 1) * d];
                    for (o, &x) in dst.iter_mut().zip(src) {
                        *o += x;
                    }
                }
                buf.acc(table.id, &Tensor::from_vec(vec![v, d], acc));
            }) as BackFn
        });
        self.push(out, needs, back)
    }

    // ---- nonlinearities ----

    pub fn relu(&self, a: Var) -> Var {
        let va = self.value(a);
        let out = va.map(|x| x.max(0.0));
        let needs = self.needs(a);
        let back: Option<BackFn> = needs.then(|| {
            Box::new(move |g: &Tensor, buf: &mut GradBuf| {
                buf.acc(a.id, &g.zip_map(&va, |gv, x| if x > 0.0 { gv } else { 0.0 }));
            }) as BackFn
        });
        self.push(out, needs, back)
    }

    pub fn gelu(&self, a: Var) -> Var {
        let va = self.value(a);
        let out = va.map(|x| {
            let u = GELU_COEF * (x + GELU_CUBIC * x * x * x);
            0.5 * x * (1.0 + u.tanh())
        });
        let needs = self.needs(a);
        let back: Option<BackFn> = needs.then(|| {
            Box::new(move |g: &Tensor, buf: &mut GradBuf| {
                let d = va.map(|x| {
                    let u = GELU_COEF * (x + GELU_CUBIC * x * x * x);
                    let t = u.tanh();
                    0.5 * (1.0 + t)
                        + 0.5 * x * (1.0 - t * t) * GELU_COEF * (1.0 + 3.0 * GELU_CUBIC * x * x)
                });
                buf.acc(a.id, &g.mul(&d));
            }) as BackFn
        });
        self.push(out, needs, back)
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        let va = self.value(a);
        let out = va.map(sigmoid_scalar);
        let needs = self.needs(a);
        let s = out.clone();
        let back: Option<BackFn> = needs.then(|| {
            Box::new(move |g: &Tensor, buf: &mut GradBuf| {
                buf.acc(a.id, &g.zip_map(&s, |gv, sv| gv * sv * (1.0 - sv)));
            }) as BackFn
        });
        self.push(out, needs, back)
    }

    pub fn softmax_last(&self, a: Var) -> Var {
        let va = self.value(a);
        let d = *va.shape().last().expect("softmax on scalar");
        let mut out = va.to_vec();
        for row in out.chunks_mut(d) {
            softmax_row(row);
        }
        let out = Tensor::from_vec(va.shape().to_vec(), out);
        let needs = self.needs(a);
        let s = out.clone();
        let back: Option<BackFn> = needs.then(|| {
            Box::new(move |g: &Tensor, buf: &mut GradBuf| {
                let mut acc = g.to_vec();
                for (grow, srow) in acc.chunks_mut(d).zip(s.data().chunks(d)) {
                    let dot: f64 = grow.iter().zip(srow).map(|(&gv, &sv)| gv * sv).sum();
                    for (gv, &sv) in grow.iter_mut().zip(srow) {
                        *gv = sv * (*gv - dot);
                    }
                }
                buf.acc(a.id, &Tensor::from_vec(s.shape().to_vec(), acc));
            }) as BackFn
        });
        self.push(out, needs, back)
    }

    /// Layer normalization over the last dimension with learned gain/bias.
    pub fn layer_norm(&self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let vx = self.value(x);
        let vg = self.value(gamma);
        let vb = self.value(beta);
        let d = *vx.shape().last().expect("layer_norm on scalar");
        assert_eq!(vg.len(), d, "layer_norm gamma length");
        assert_eq!(vb.len(), d, "layer_norm beta length");
        let rows = vx.len() / d;
        let mut out = vec![0.0; vx.len()];
        let mut xhat = vec![0.0; vx.len()];
        let mut inv_sigma = vec![0.0; rows];
        for r in 0..rows {
            let src = &vx.data()[r * d..(r + 1) * d];
            let mu = src.iter().sum::<f64>() / d as f64;
            let var = src.iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_sigma[r] = inv;
            for (j, &v) in src.iter().enumerate() {
                let h = (v - mu) * inv;
                xhat[r * d + j] = h;
                out[r * d + j] = h * vg.data()[j] + vb.data()[j];
            }
        }
        let out = Tensor::from_vec(vx.shape().to_vec(), out);
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let (nx, ng, nb) = (self.needs(x), self.needs(gamma), self.needs(beta));
        let x_shape = vx.shape().to_vec();
        let back: Option<BackFn> = needs.then(|| {
            Box::new(move |g: &Tensor, buf: &mut GradBuf| {
                let gd = g.data();
                if ng || nb {
                    let mut ggamma = vec![0.0; d];
                    let mut gbeta = vec![0.0; d];
                    for r in 0..rows {
                        for j in 0..d {
                            ggamma[j] += gd[r * d + j] * xhat[r * d + j];
                            gbeta[j] += gd[r * d + j];
                        }
                    }
                    if ng {
                        buf.acc(gamma.id, &Tensor::from_vec(vec![d], ggamma));
                    }
                    if nb {
                        buf.acc(beta.id, &Tensor::from_vec(vec![d], gbeta));
                    }
                }
                if nx {
                    let mut gx = vec![0.0; rows * d];
                    for r in 0..rows {
                        let mut mean_gy = 0.0;
                        let mut mean_gyh = 0.0;
                        for j in 0..d {
                            let gy = gd[r * d + j] * vg.data()[j];
                            mean_gy += gy;
                            mean_gyh += gy * xhat[r * d + j];
                        }
                        mean_gy /= d as f64;
                        mean_gyh /= d as f64;
                        for j in 0..d {
                            let gy = gd[r * d + j] * vg.data()[j];
                            gx[r * d + j] =
                                inv_sigma[r] * (gy - mean_gy - xhat[r * d + j] * mean_gyh);
                        }
                    }
                    buf.acc(x.id, &Tensor::from_vec(x_shape.clone(), gx));
                }
            }) as BackFn
        });
        self.push(out, needs, back)
    }

    // ---- gradient routing ----

    /// Identity on the value, zero gradient through it.
    pub fn stop_gradient(&self, a: Var) -> Var {
        self.constant(self.value(a))
    }

    /// Straight-through estimator: forwards `quantized`'s value, routes the
    /// gradient to `encoder_out` unchanged.
    pub fn straight_through(&self, quantized: Var, encoder_out: Var) -> Var {
        let vq = self.value(quantized);
        assert_eq!(vq.shape(), self.value(encoder_out).shape());
        let needs = self.needs(encoder_out);
        let back: Option<BackFn> = needs.then(|| {
            Box::new(move |g: &Tensor, buf: &mut GradBuf| {
                buf.acc(encoder_out.id, g);
            }) as BackFn
        });
        self.push(vq, needs, back)
    }

    // ---- convolution ----

    /// 1-D convolution: `x` is `(b, c_in, l)`, `w` is `(c_out, c_in, k)`,
    /// `bias` is `(c_out)`; zero padding.
    pub fn conv1d(&self, x: Var, w: Var, bias: Var, stride: usize, pad: usize) -> Var {
        let vx = self.value(x);
        let vw = self.value(w);
        let vb = self.value(bias);
        let (b, c_in, l) = dims3(&vx);
        let (c_out, c_in2, k) = dims3(&vw);
        assert_eq!(c_in, c_in2, "conv1d channel mismatch");
        assert_eq!(vb.len(), c_out, "conv1d bias length");
        assert!(l + 2 * pad >= k, "conv1d kernel longer than padded input");
        let l_out = (l + 2 * pad - k) / stride + 1;
        let mut out = vec![0.0; b * c_out * l_out];
        for bi in 0..b {
            for co in 0..c_out {
                for lo in 0..l_out {
                    let mut acc = vb.data()[co];
                    for ci in 0..c_in {
                        let xrow = &vx.data()[(bi * c_in + ci) * l..(bi * c_in + ci + 1) * l];
                        let wrow = &vw.data()[(co * c_in + ci) * k..(co * c_in + ci + 1) * k];
                        for (kk, &wv) in wrow.iter().enumerate() {
                            let li = lo * stride + kk;
                            if li >= pad && li - pad < l {
                                acc += wv * xrow[li - pad];
                            }
                        }
                    }
                    out[(bi * c_out + co) * l_out + lo] = acc;
                }
            }
        }
        let out = Tensor::from_vec(vec![b, c_out, l_out], out);
        let needs = self.needs(x) || self.needs(w) || self.needs(bias);
        let (nx, nw, nb) = (self.needs(x), self.needs(w), self.needs(bias));
        let back: Option<BackFn> = needs.then(|| {
            Box::new(move |g: &Tensor, buf: &mut GradBuf| {
                let gd = g.data();
                let mut gx = vec![0.0; b * c_in * l];
                let mut gw = vec![0.0; c_out * c_in * k];
                let mut gb = vec![0.0; c_out];
                for bi in 0..b {
                    for co in 0..c_out {
                        for lo in 0..l_out {
                            let gv = gd[(bi * c_out + co) * l_out + lo];
                            if gv == 0.0 {
                                continue;
                            }
                            gb[co] += gv;
                            for ci in 0..c_in {
                                for kk in 0..k {
                                    let li = lo * stride + kk;
                                    if li >= pad && li - pad < l {
                                        let xi = (bi * c_in + ci) * l + (li - pad);
                                        let wi = (co * c_in + ci) * k + kk;
                                        if nx {
                                            gx[xi] += gv * vw.data()[wi];
                                        }
                                        if nw {
                                            gw[wi] += gv * vx.data()[xi];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                if nx {
                    buf.acc(x.id, &Tensor::from_vec(vec![b, c_in, l], gx));
                }
                if nw {
                    buf.acc(w.id, &Tensor::from_vec(vec![c_out, c_in, k], gw));
                }
                if nb {
                    buf.acc(bias.id, &Tensor::from_vec(vec![c_out], gb));
                }
            }) as BackFn
        });
        self.push(out, needs, back)
    }

    // ---- reductions and losses ----

    pub fn mean_all(&self, a: Var) -> Var {
        let va = self.value(a);
        let n = va.len() as f64;
        let out = Tensor::scalar(va.mean());
        let needs = self.needs(a);
        let shape = va.shape().to_vec();
        let back: Option<BackFn> = needs.then(|| {
            Box::new(move |g: &Tensor, buf: &mut GradBuf| {
                buf.acc(a.id, &Tensor::full(shape.clone(), g.item() / n));
            }) as BackFn
        });
        self.push(out, needs, back)
    }

    /// Squared Euclidean norm of the whole tensor.
    pub fn sq_norm(&self, a: Var) -> Var {
        let va = self.value(a);
        let out = Tensor::scalar(va.sq_norm());
        let needs = self.needs(a);
        let back: Option<BackFn> = needs.then(|| {
            Box::new(move |g: &Tensor, buf: &mut GradBuf| {
                buf.acc(a.id, &va.scale(2.0 * g.item()));
            }) as BackFn
        });
        self.push(out, needs, back)
    }

    /// Mean squared error against a fixed target.
    pub fn mse(&self, pred: Var, target: &Tensor) -> Var {
        let vp = self.value(pred);
        assert_eq!(vp.shape(), target.shape(), "mse shape mismatch");
        let diff = vp.sub(target);
        let n = diff.len() as f64;
        let out = Tensor::scalar(diff.sq_norm() / n);
        let needs = self.needs(pred);
        let back: Option<BackFn> = needs.then(|| {
            Box::new(move |g: &Tensor, buf: &mut GradBuf| {
                buf.acc(pred.id, &diff.scale(2.0 * g.item() / n));
            }) as BackFn
        });
        self.push(out, needs, back)
    }

    /// Mean cross-entropy of integer targets under rows of logits. `logits`
    /// is `(..., n)` flattened to rows; `targets` has one class per row.
    pub fn cross_entropy_logits(&self, logits: Var, targets: &[usize]) -> Var {
        let vl = self.value(logits);
        let n = *vl.shape().last().expect("cross_entropy on scalar");
        let rows = vl.len() / n;
        assert_eq!(rows, targets.len(), "cross_entropy target count");
        let mut probs = vl.to_vec();
        let mut total = 0.0;
        for (r, row) in probs.chunks_mut(n).enumerate() {
            let t = targets[r];
            assert!(t < n, "target class {t} out of range {n}");
            let (_, lse) = softmax_row(row);
            total += lse - vl.data()[r * n + t];
        }
        let out = Tensor::scalar(total / rows as f64);
        let needs = self.needs(logits);
        let shape = vl.shape().to_vec();
        let tg: Vec<usize> = targets.to_vec();
        let back: Option<BackFn> = needs.then(|| {
            Box::new(move |g: &Tensor, buf: &mut GradBuf| {
                let mut acc = probs.clone();
                let scale = g.item() / rows as f64;
                for (r, row) in acc.chunks_mut(n).enumerate() {
                    row[tg[r]] -= 1.0;
                    for v in row.iter_mut() {
                        *v *= scale;
                    }
                }
                buf.acc(logits.id, &Tensor::from_vec(shape.clone(), acc));
            }) as BackFn
        });
        self.push(out, needs, back)
    }

    /// Mean over rows of `KL(q || p)` where `p` comes from the tape and `q`
    /// is a fixed target distribution. `p` is floored before the log.
    pub fn kl_to_target(&self, p: Var, q: &Tensor, floor: f64) -> Var {
        let vp = self.value(p);
        assert_eq!(vp.shape(), q.shape(), "kl shape mismatch");
        let n = *vp.shape().last().expect("kl on scalar");
        let rows = vp.len() / n;
        let mut total = 0.0;
        for (prow, qrow) in vp.data().chunks(n).zip(q.data().chunks(n)) {
            for (&pv, &qv) in prow.iter().zip(qrow) {
                if qv > 0.0 {
                    total += qv * (qv.ln() - pv.max(floor).ln());
                }
            }
        }
        let out = Tensor::scalar(total / rows as f64);
        let needs = self.needs(p);
        let qc = q.clone();
        let back: Option<BackFn> = needs.then(|| {
            Box::new(move |g: &Tensor, buf: &mut GradBuf| {
                let scale = g.item() / rows as f64;
                let gp = vp.zip_map(&qc, |pv, qv| {
                    if qv > 0.0 && pv > floor {
                        -qv / pv * scale
                    } else {
                        0.0
                    }
                });
                buf.acc(p.id, &gp);
            }) as BackFn
        });
        self.push(out, needs, back)
    }

    /// Mean binary cross-entropy with logits against fixed targets in [0,1].
    pub fn bce_logits(&self, logits: Var, targets: &Tensor) -> Var {
        let vl = self.value(logits);
        assert_eq!(vl.shape(), targets.shape(), "bce shape mismatch");
        let n = vl.len() as f64;
        let mut total = 0.0;
        for (&x, &t) in vl.data().iter().zip(targets.data()) {
            total += x.max(0.0) - x * t + (-x.abs()).exp().ln_1p();
        }
        let out = Tensor::scalar(total / n);
        let needs = self.needs(logits);
        let tc = targets.clone();
        let back: Option<BackFn> = needs.then(|| {
            Box::new(move |g: &Tensor, buf: &mut GradBuf| {
                let scale = g.item() / n;
                let gl = vl.zip_map(&tc, |x, t| (sigmoid_scalar(x) - t) * scale);
                buf.acc(logits.id, &gl);
            }) as BackFn
        });
        self.push(out, needs, back)
    }

    /// Mixes per-row kernels by a belief: `out[t,j] = sum_c belief[t,c] *
    /// kernels[t,c,j]` with constant `kernels` of shape `(t, n, n)`.
    pub fn mixture(&self, belief: Var, kernels: &Tensor) -> Var {
        let vb = self.value(belief);
        assert_eq!(vb.rank(), 2, "mixture belief must be (t, n)");
        let (t_len, n) = (vb.shape()[0], vb.shape()[1]);
        assert_eq!(kernels.shape(), &[t_len, n, n], "mixture kernel shape");
        let mut out = vec![0.0; t_len * n];
        for t in 0..t_len {
            let brow = &vb.data()[t * n..(t + 1) * n];
            let orow = &mut out[t * n..(t + 1) * n];
            for (c, &bw) in brow.iter().enumerate() {
                if bw == 0.0 {
                    continue;
                }
                let krow = &kernels.data()[(t * n + c) * n..(t * n + c + 1) * n];
                for (o, &kv) in orow.iter_mut().zip(krow) {
                    *o += bw * kv;
                }
            }
        }
        let out = Tensor::from_vec(vec![t_len, n], out);
        let needs = self.needs(belief);
        let kc = kernels.clone();
        let back: Option<BackFn> = needs.then(|| {
            Box::new(move |g: &Tensor, buf: &mut GradBuf| {
                let mut acc = vec![0.0; t_len * n];
                for t in 0..t_len {
                    let grow = &g.data()[t * n..(t + 1) * n];
                    for c in 0..n {
                        let krow = &kc.data()[(t * n + c) * n..(t * n + c + 1) * n];
                        acc[t * n + c] = grow.iter().zip(krow).map(|(&gv, &kv)| gv * kv).sum();
                    }
                }
                buf.acc(belief.id, &Tensor::from_vec(vec![t_len, n], acc));
            }) as BackFn
        });
        self.push(out, needs, back)
    }
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// In-place softmax over one row; returns `(max, log-sum-exp)`.
fn softmax_row(row: &mut [f64]) -> (f64, f64) {
    let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut z = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        z += *v;
    }
    for v in row.iter_mut() {
        *v /= z;
    }
    (m, m + z.ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simple_chain_gradient() {
        // f(x) = mean((3x + 1)^2), df/dx = 6(3x+1)/n
        let tape = Tape::new();
        let x = tape.var(Tensor::from_vec(vec![3], vec![0.5, -1.0, 2.0]));
        let y = tape.affine(x, 3.0, 1.0);
        let sq = tape.mul(y, y);
        let loss = tape.mean_all(sq);
        let buf = tape.backward(loss);
        let gx = tape.grad(&buf, x);
        for (g, &xv) in gx.data().iter().zip([0.5, -1.0, 2.0].iter()) {
            let want = 6.0 * (3.0 * xv + 1.0) / 3.0;
            assert!((g - want).abs() < 1e-12);
        }
    }

    #[test]
    fn constants_do_not_record() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::from_vec(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let b = tape.constant(Tensor::eye(2));
        let c = tape.matmul(a, b);
        let nodes = tape.nodes.borrow();
        assert!(nodes[c.id].back.is_none());
        assert!(!nodes[c.id].needs_grad);
    }

    #[test]
    fn matmul_gradients_match_manual() {
        // loss = sum(A B) => dA = ones x B^T, dB = A^T x ones
        let tape = Tape::new();
        let a = tape.var(Tensor::from_vec(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let b = tape.var(Tensor::from_vec(vec![3, 2], vec![0.5, 1.0, -1.0, 2.0, 0.0, 3.0]));
        let c = tape.matmul(a, b);
        let n = tape.value(c).len() as f64;
        let loss = tape.mean_all(c);
        let buf = tape.backward(loss);
        let ga = tape.grad(&buf, a);
        let gb = tape.grad(&buf, b);
        let ones = Tensor::full(vec![2, 2], 1.0 / n);
        let want_a = ones.matmul_nt(&tape.value(b));
        let want_b = tape.value(a).matmul_tn(&ones);
        assert!(ga.sub(&want_a).max_abs() < 1e-12);
        assert!(gb.sub(&want_b).max_abs() < 1e-12);
    }

    #[test]
    fn straight_through_passes_gradient() {
        let tape = Tape::new();
        let ze = tape.var(Tensor::from_vec(vec![2], vec![0.3, 0.7]));
        let zq = tape.constant(Tensor::from_vec(vec![2], vec![0.0, 1.0]));
        let st = tape.straight_through(zq, ze);
        assert_eq!(tape.value(st).to_vec(), vec![0.0, 1.0]);
        let sq = tape.sq_norm(st);
        let buf = tape.backward(sq);
        let g = tape.grad(&buf, ze);
        // d/d ze of ||zq||^2 via straight-through = 2 * zq
        assert_eq!(g.to_vec(), vec![0.0, 2.0]);
    }

    #[test]
    fn uniform_logits_cross_entropy_is_ln_n() {
        let tape = Tape::new();
        let logits = tape.var(Tensor::zeros(vec![5, 4]));
        let loss = tape.cross_entropy_logits(logits, &[0, 1, 2, 3, 0]);
        assert!((tape.value(loss).item() - (4.0f64).ln()).abs() < 1e-12);
    }
}
