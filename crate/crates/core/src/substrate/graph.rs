//! Reverse-mode autodiff over a flat operation tape.
//!
//! A [`Graph`] records one computation: leaves (parameters and constants) and
//! derived nodes. [`Graph::backward`] walks the tape in reverse and
//! accumulates gradients in the forward element order of every tensor, so two
//! runs of the same graph produce bit-identical gradients.

use std::sync::Arc;

use super::conv::{
    conv2d_backward_bias, conv2d_backward_input, conv2d_backward_weight, conv2d_forward,
    out_extent,
};
use super::sample::{sample_box_backward, sample_box_forward, SampleBox};
use super::tensor::Tensor;
use super::{fl, Scalar};
use crate::error::{Error, Result};

pub type VarId = usize;

enum Op<T: Scalar> {
    Leaf,
    Add(VarId, VarId),
    Sub(VarId, VarId),
    Mul(VarId, VarId),
    Div(VarId, VarId),
    Neg(VarId),
    AddConst(VarId, T),
    MulConst(VarId, T),
    /// Tensor plus a one-element tensor, broadcast.
    BroadcastAdd(VarId, VarId),
    /// Tensor times a one-element tensor, broadcast.
    BroadcastMul(VarId, VarId),
    Relu(VarId),
    Sigmoid(VarId),
    Softplus(VarId),
    Ln(VarId),
    Sqrt(VarId),
    Abs(VarId),
    ClampMin(VarId, T),
    Sum(VarId),
    /// Keep `x` where the mask is true, replace by a constant elsewhere.
    FillMasked {
        x: VarId,
        mask: Arc<Vec<bool>>,
    },
    Conv2d {
        x: VarId,
        w: VarId,
        b: VarId,
        stride: usize,
        pad: usize,
    },
    ConcatChannels(Vec<VarId>),
    CropBilinear {
        x: VarId,
        bx: SampleBox,
    },
    CropInt {
        x: VarId,
        top: usize,
        left: usize,
        h: usize,
        w: usize,
    },
    /// Every second pixel along both spatial axes.
    Subsample2(VarId),
    Gather {
        x: VarId,
        idx: Arc<Vec<usize>>,
    },
}

struct Node<T: Scalar> {
    op: Op<T>,
    value: Tensor<T>,
    needs_grad: bool,
}

/// Gradients keyed by the [`VarId`] they belong to.
pub struct Grads<T> {
    by_var: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Grads<T> {
    pub fn get(&self, id: VarId) -> Option<&Tensor<T>> {
        self.by_var.get(id).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: VarId) -> Option<Tensor<T>> {
        self.by_var.get_mut(id).and_then(|g| g.take())
    }
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: VarId) -> &Tensor<T> {
        &self.nodes[id].value
    }

    pub fn needs_grad(&self, id: VarId) -> bool {
        self.nodes[id].needs_grad
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, needs_grad: bool) -> VarId {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        self.nodes.len() - 1
    }

    fn any_needs(&self, ids: &[VarId]) -> bool {
        ids.iter().any(|&i| self.nodes[i].needs_grad)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> VarId {
        self.push(Op::Leaf, value, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> VarId {
        self.leaf(value, false)
    }

    pub fn scalar_const(&mut self, v: T) -> VarId {
        self.constant(Tensor::scalar(v))
    }

    fn same_shape(&self, a: VarId, b: VarId, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(format!(
                "{what}: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    fn zip_ew(&mut self, a: VarId, b: VarId, f: impl Fn(T, T) -> T, op: Op<T>) -> VarId {
        let shape = self.value(a).shape().to_vec();
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let needs = self.any_needs(&[a, b]);
        self.push(op, Tensor::new(shape, data).expect("zip shape"), needs)
    }

    fn map_ew(&mut self, a: VarId, f: impl Fn(T) -> T, op: Op<T>) -> VarId {
        let value = self.value(a).map(f);
        let needs = self.nodes[a].needs_grad;
        self.push(op, value, needs)
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.same_shape(a, b, "add")?;
        Ok(self.zip_ew(a, b, |x, y| x + y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.same_shape(a, b, "sub")?;
        Ok(self.zip_ew(a, b, |x, y| x - y, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.same_shape(a, b, "mul")?;
        Ok(self.zip_ew(a, b, |x, y| x * y, Op::Mul(a, b)))
    }

    pub fn div(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.same_shape(a, b, "div")?;
        Ok(self.zip_ew(a, b, |x, y| x / y, Op::Div(a, b)))
    }

    pub fn neg(&mut self, a: VarId) -> VarId {
        self.map_ew(a, |x| -x, Op::Neg(a))
    }

    pub fn add_const(&mut self, a: VarId, c: T) -> VarId {
        self.map_ew(a, |x| x + c, Op::AddConst(a, c))
    }

    pub fn mul_const(&mut self, a: VarId, c: T) -> VarId {
        self.map_ew(a, |x| x * c, Op::MulConst(a, c))
    }

    /// `a + s` with `s` a one-element tensor broadcast over `a`.
    pub fn shift_by(&mut self, a: VarId, s: VarId) -> Result<VarId> {
        let sv = self.value(s).item()?;
        let value = self.value(a).map(|x| x + sv);
        let needs = self.any_needs(&[a, s]);
        Ok(self.push(Op::BroadcastAdd(a, s), value, needs))
    }

    /// `a * s` with `s` a one-element tensor broadcast over `a`.
    pub fn scale_by(&mut self, a: VarId, s: VarId) -> Result<VarId> {
        let sv = self.value(s).item()?;
        let value = self.value(a).map(|x| x * sv);
        let needs = self.any_needs(&[a, s]);
        Ok(self.push(Op::BroadcastMul(a, s), value, needs))
    }

    pub fn relu(&mut self, a: VarId) -> VarId {
        self.map_ew(a, |x| if x > T::zero() { x } else { T::zero() }, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: VarId) -> VarId {
        self.map_ew(a, sigmoid_stable, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: VarId) -> VarId {
        self.map_ew(a, softplus_stable, Op::Softplus(a))
    }

    pub fn ln(&mut self, a: VarId) -> VarId {
        self.map_ew(a, |x| x.ln(), Op::Ln(a))
    }

    pub fn sqrt(&mut self, a: VarId) -> VarId {
        self.map_ew(a, |x| x.sqrt(), Op::Sqrt(a))
    }

    pub fn abs(&mut self, a: VarId) -> VarId {
        self.map_ew(a, |x| x.abs(), Op::Abs(a))
    }

    pub fn square(&mut self, a: VarId) -> Result<VarId> {
        self.mul(a, a)
    }

    pub fn clamp_min(&mut self, a: VarId, floor: T) -> VarId {
        self.map_ew(a, |x| if x < floor { floor } else { x }, Op::ClampMin(a, floor))
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, a: VarId) -> VarId {
        let mut acc = T::zero();
        for &v in self.value(a).data() {
            acc += v;
        }
        let needs = self.nodes[a].needs_grad;
        self.push(Op::Sum(a), Tensor::scalar(acc), needs)
    }

    pub fn mean(&mut self, a: VarId) -> VarId {
        let n = self.value(a).len();
        let s = self.sum(a);
        self.mul_const(s, T::one() / fl::<T>(n as f64))
    }

    /// Replace elements where `mask` is false by `fill`; identity elsewhere.
    /// Breaks NaN propagation from invalid pixels before nonlinearities.
    pub fn fill_masked(&mut self, a: VarId, mask: Arc<Vec<bool>>, fill: T) -> Result<VarId> {
        if mask.len() != self.value(a).len() {
            return Err(Error::shape(format!(
                "fill_masked: mask has {} entries for {} elements",
                mask.len(),
                self.value(a).len()
            )));
        }
        let shape = self.value(a).shape().to_vec();
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(mask.iter())
            .map(|(&v, &m)| if m { v } else { fill })
            .collect();
        let needs = self.nodes[a].needs_grad;
        Ok(self.push(
            Op::FillMasked { x: a, mask },
            Tensor::new(shape, data).expect("fill shape"),
            needs,
        ))
    }

    /// Sum of elements where `mask` is true.
    pub fn masked_sum(&mut self, a: VarId, mask: Arc<Vec<bool>>) -> Result<VarId> {
        let zeroed = self.fill_masked(a, mask, T::zero())?;
        Ok(self.sum(zeroed))
    }

    pub fn conv2d(
        &mut self,
        x: VarId,
        w: VarId,
        b: VarId,
        stride: usize,
        pad: usize,
    ) -> Result<VarId> {
        let value = conv2d_forward(self.value(x), self.value(w), self.value(b), stride, pad)?;
        let needs = self.any_needs(&[x, w, b]);
        Ok(self.push(Op::Conv2d { x, w, b, stride, pad }, value, needs))
    }

    pub fn concat_channels(&mut self, parts: &[VarId]) -> Result<VarId> {
        if parts.is_empty() {
            return Err(Error::config("concat of zero tensors"));
        }
        let (n0, _, h0, w0) = self.value(parts[0]).dims4()?;
        let mut c_total = 0;
        for &p in parts {
            let (n, c, h, w) = self.value(p).dims4()?;
            if (n, h, w) != (n0, h0, w0) {
                return Err(Error::shape(format!(
                    "concat: ({n},{c},{h},{w}) incompatible with ({n0},_,{h0},{w0})"
                )));
            }
            c_total += c;
        }
        let plane = h0 * w0;
        let mut data = Vec::with_capacity(n0 * c_total * plane);
        for ni in 0..n0 {
            for &p in parts {
                let (_, c, _, _) = self.value(p).dims4()?;
                let src = self.value(p).data();
                data.extend_from_slice(&src[ni * c * plane..(ni + 1) * c * plane]);
            }
        }
        let needs = self.any_needs(parts);
        Ok(self.push(
            Op::ConcatChannels(parts.to_vec()),
            Tensor::new(vec![n0, c_total, h0, w0], data)?,
            needs,
        ))
    }

    pub fn resize_bilinear(&mut self, x: VarId, out_h: usize, out_w: usize) -> Result<VarId> {
        self.crop_bilinear(x, SampleBox::full(), out_h, out_w)
    }

    pub fn crop_bilinear(
        &mut self,
        x: VarId,
        bx: SampleBox,
        out_h: usize,
        out_w: usize,
    ) -> Result<VarId> {
        let value = sample_box_forward(self.value(x), &bx, out_h, out_w)?;
        let needs = self.nodes[x].needs_grad;
        Ok(self.push(Op::CropBilinear { x, bx }, value, needs))
    }

    /// Integer spatial window, no interpolation.
    pub fn crop_int(
        &mut self,
        x: VarId,
        top: usize,
        left: usize,
        h: usize,
        w: usize,
    ) -> Result<VarId> {
        let (n, c, ih, iw) = self.value(x).dims4()?;
        if top + h > ih || left + w > iw || h == 0 || w == 0 {
            return Err(Error::shape(format!(
                "crop_int: window {top},{left} {h}x{w} outside {ih}x{iw}"
            )));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(n * c * h * w);
        for p in 0..n * c {
            let plane = &src[p * ih * iw..(p + 1) * ih * iw];
            for y in 0..h {
                let row = &plane[(top + y) * iw + left..(top + y) * iw + left + w];
                data.extend_from_slice(row);
            }
        }
        let needs = self.nodes[x].needs_grad;
        Ok(self.push(
            Op::CropInt { x, top, left, h, w },
            Tensor::new(vec![n, c, h, w], data)?,
            needs,
        ))
    }

    /// Every second pixel (stride-2 subsampling) along both spatial axes.
    pub fn subsample2(&mut self, x: VarId) -> Result<VarId> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let oh = h.div_ceil(2);
        let ow = w.div_ceil(2);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(n * c * oh * ow);
        for p in 0..n * c {
            let plane = &src[p * h * w..(p + 1) * h * w];
            for y in (0..h).step_by(2) {
                for x_ in (0..w).step_by(2) {
                    data.push(plane[y * w + x_]);
                }
            }
        }
        let needs = self.nodes[x].needs_grad;
        Ok(self.push(
            Op::Subsample2(x),
            Tensor::new(vec![n, c, oh, ow], data)?,
            needs,
        ))
    }

    /// Pick elements by flat index; output is 1-D.
    pub fn gather(&mut self, x: VarId, idx: Arc<Vec<usize>>) -> Result<VarId> {
        let len = self.value(x).len();
        if let Some(&bad) = idx.iter().find(|&&i| i >= len) {
            return Err(Error::shape(format!("gather index {bad} out of {len}")));
        }
        if idx.is_empty() {
            return Err(Error::config("gather with empty index set"));
        }
        let src = self.value(x).data();
        let data: Vec<T> = idx.iter().map(|&i| src[i]).collect();
        let needs = self.nodes[x].needs_grad;
        let n = idx.len();
        Ok(self.push(Op::Gather { x, idx }, Tensor::new(vec![n], data)?, needs))
    }

    pub fn check_finite(&self, id: VarId, what: &str) -> Result<()> {
        if !self.value(id).all_finite() {
            return Err(Error::NonFinite(what.to_string()));
        }
        Ok(())
    }

    /// Smallest distance of any non-smooth op input (relu, abs, clamp) to
    /// its kink, or `None` when the graph contains no such ops. Gradient
    /// verification uses this to certify the evaluation point sits away
    /// from non-differentiable points.
    pub fn nonsmooth_margin(&self) -> Option<f64> {
        let mut margin: Option<f64> = None;
        let mut update = |d: f64| {
            margin = Some(match margin {
                Some(m) => m.min(d),
                None => d,
            });
        };
        for node in &self.nodes {
            match &node.op {
                Op::Relu(a) | Op::Abs(a) => {
                    for v in self.value(*a).data() {
                        update(v.to_f64().unwrap_or(0.0).abs());
                    }
                }
                Op::ClampMin(a, floor) => {
                    let f = floor.to_f64().unwrap_or(0.0);
                    for v in self.value(*a).data() {
                        update((v.to_f64().unwrap_or(0.0) - f).abs());
                    }
                }
                _ => {}
            }
        }
        margin
    }

    /// Reverse pass from a scalar root. Returns one gradient per variable
    /// that transitively required one.
    pub fn backward(&self, root: VarId) -> Result<Grads<T>> {
        if self.value(root).len() != 1 {
            return Err(Error::shape(format!(
                "backward root must be scalar, got {:?}",
                self.value(root).shape()
            )));
        }
        self.check_finite(root, "backward root (loss)")?;
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root] = Some(Tensor::scalar(T::one()));

        for i in (0..=root).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.accumulate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Grads { by_var: grads })
    }

    fn accumulate(&self, i: VarId, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.add_grad(*a, grads, |dst| ew_add(dst, g.data()));
                self.add_grad(*b, grads, |dst| ew_add(dst, g.data()));
            }
            Op::Sub(a, b) => {
                self.add_grad(*a, grads, |dst| ew_add(dst, g.data()));
                self.add_grad(*b, grads, |dst| ew_sub(dst, g.data()));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.add_grad(*a, grads, |dst| ew_add_prod(dst, g.data(), bv));
                self.add_grad(*b, grads, |dst| ew_add_prod(dst, g.data(), av));
            }
            Op::Div(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.add_grad(*a, grads, |dst| {
                    for ((d, &gv), &b_) in dst.iter_mut().zip(g.data()).zip(bv) {
                        *d += gv / b_;
                    }
                });
                self.add_grad(*b, grads, |dst| {
                    for (((d, &gv), &a_), &b_) in dst.iter_mut().zip(g.data()).zip(av).zip(bv) {
                        *d -= gv * a_ / (b_ * b_);
                    }
                });
            }
            Op::Neg(a) => self.add_grad(*a, grads, |dst| ew_sub(dst, g.data())),
            Op::AddConst(a, _) => self.add_grad(*a, grads, |dst| ew_add(dst, g.data())),
            Op::MulConst(a, c) => {
                let c = *c;
                self.add_grad(*a, grads, |dst| {
                    for (d, &gv) in dst.iter_mut().zip(g.data()) {
                        *d += gv * c;
                    }
                });
            }
            Op::BroadcastAdd(a, s) => {
                self.add_grad(*a, grads, |dst| ew_add(dst, g.data()));
                let total: T = g.data().iter().copied().fold(T::zero(), |acc, v| acc + v);
                self.add_grad(*s, grads, |dst| dst[0] += total);
            }
            Op::BroadcastMul(a, s) => {
                let sv = self.value(*s).item()?;
                let av = self.value(*a).data();
                self.add_grad(*a, grads, |dst| {
                    for (d, &gv) in dst.iter_mut().zip(g.data()) {
                        *d += gv * sv;
                    }
                });
                let mut total = T::zero();
                for (&gv, &a_) in g.data().iter().zip(av) {
                    total += gv * a_;
                }
                self.add_grad(*s, grads, |dst| dst[0] += total);
            }
            Op::Relu(a) => {
                let av = self.value(*a).data();
                self.add_grad(*a, grads, |dst| {
                    for ((d, &gv), &x) in dst.iter_mut().zip(g.data()).zip(av) {
                        if x > T::zero() {
                            *d += gv;
                        }
                    }
                });
            }
            Op::Sigmoid(a) => {
                let yv = node.value.data();
                self.add_grad(*a, grads, |dst| {
                    for ((d, &gv), &y) in dst.iter_mut().zip(g.data()).zip(yv) {
                        *d += gv * y * (T::one() - y);
                    }
                });
            }
            Op::Softplus(a) => {
                let av = self.value(*a).data();
                self.add_grad(*a, grads, |dst| {
                    for ((d, &gv), &x) in dst.iter_mut().zip(g.data()).zip(av) {
                        *d += gv * sigmoid_stable(x);
                    }
                });
            }
            Op::Ln(a) => {
                let av = self.value(*a).data();
                self.add_grad(*a, grads, |dst| {
                    for ((d, &gv), &x) in dst.iter_mut().zip(g.data()).zip(av) {
                        *d += gv / x;
                    }
                });
            }
            Op::Sqrt(a) => {
                let yv = node.value.data();
                let half = fl::<T>(0.5);
                self.add_grad(*a, grads, |dst| {
                    for ((d, &gv), &y) in dst.iter_mut().zip(g.data()).zip(yv) {
                        *d += gv * half / y;
                    }
                });
            }
            Op::Abs(a) => {
                let av = self.value(*a).data();
                self.add_grad(*a, grads, |dst| {
                    for ((d, &gv), &x) in dst.iter_mut().zip(g.data()).zip(av) {
                        // subgradient 0 at the kink
                        if x > T::zero() {
                            *d += gv;
                        } else if x < T::zero() {
                            *d -= gv;
                        }
                    }
                });
            }
            Op::ClampMin(a, floor) => {
                let av = self.value(*a).data();
                let floor = *floor;
                self.add_grad(*a, grads, |dst| {
                    for ((d, &gv), &x) in dst.iter_mut().zip(g.data()).zip(av) {
                        if x > floor {
                            *d += gv;
                        }
                    }
                });
            }
            Op::Sum(a) => {
                let gv = g.data()[0];
                self.add_grad(*a, grads, |dst| {
                    for d in dst.iter_mut() {
                        *d += gv;
                    }
                });
            }
            Op::FillMasked { x, mask } => {
                let mask = mask.clone();
                self.add_grad(*x, grads, |dst| {
                    for ((d, &gv), &m) in dst.iter_mut().zip(g.data()).zip(mask.iter()) {
                        if m {
                            *d += gv;
                        }
                    }
                });
            }
            Op::Conv2d { x, w, b, stride, pad } => {
                if self.nodes[*x].needs_grad {
                    let dx = conv2d_backward_input(
                        g,
                        self.value(*w),
                        self.value(*x).shape(),
                        *stride,
                        *pad,
                    )?;
                    self.add_grad(*x, grads, |dst| ew_add(dst, dx.data()));
                }
                if self.nodes[*w].needs_grad {
                    let dw = conv2d_backward_weight(
                        g,
                        self.value(*x),
                        self.value(*w).shape(),
                        *stride,
                        *pad,
                    )?;
                    self.add_grad(*w, grads, |dst| ew_add(dst, dw.data()));
                }
                if self.nodes[*b].needs_grad {
                    let db = conv2d_backward_bias(g)?;
                    self.add_grad(*b, grads, |dst| ew_add(dst, db.data()));
                }
            }
            Op::ConcatChannels(parts) => {
                let (n, c_total, h, w) = node.value.dims4()?;
                let plane = h * w;
                let mut offset_c = 0;
                for &p in parts {
                    let (_, c, _, _) = self.value(p).dims4()?;
                    if self.nodes[p].needs_grad {
                        let gd = g.data();
                        let oc = offset_c;
                        self.add_grad(p, grads, |dst| {
                            for ni in 0..n {
                                let src_base = (ni * c_total + oc) * plane;
                                let dst_base = ni * c * plane;
                                for k in 0..c * plane {
                                    dst[dst_base + k] += gd[src_base + k];
                                }
                            }
                        });
                    }
                    offset_c += c;
                }
            }
            Op::CropBilinear { x, bx } => {
                let dx = sample_box_backward(g, bx, self.value(*x).shape())?;
                self.add_grad(*x, grads, |dst| ew_add(dst, dx.data()));
            }
            Op::CropInt { x, top, left, h, w } => {
                let (n, c, ih, iw) = self.value(*x).dims4()?;
                let gd = g.data();
                let (top, left, h, w) = (*top, *left, *h, *w);
                self.add_grad(*x, grads, |dst| {
                    for p in 0..n * c {
                        for y in 0..h {
                            let src = &gd[(p * h + y) * w..(p * h + y + 1) * w];
                            let base = p * ih * iw + (top + y) * iw + left;
                            for (k, &gv) in src.iter().enumerate() {
                                dst[base + k] += gv;
                            }
                        }
                    }
                });
            }
            Op::Subsample2(x) => {
                let (n, c, ih, iw) = self.value(*x).dims4()?;
                let (_, _, oh, ow) = node.value.dims4()?;
                let gd = g.data();
                self.add_grad(*x, grads, |dst| {
                    for p in 0..n * c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                dst[p * ih * iw + (oy * 2) * iw + ox * 2] +=
                                    gd[(p * oh + oy) * ow + ox];
                            }
                        }
                    }
                });
            }
            Op::Gather { x, idx } => {
                let idx = idx.clone();
                let gd = g.data();
                self.add_grad(*x, grads, |dst| {
                    for (&i, &gv) in idx.iter().zip(gd) {
                        dst[i] += gv;
                    }
                });
            }
        }
        Ok(())
    }

    fn add_grad(&self, target: VarId, grads: &mut [Option<Tensor<T>>], apply: impl FnOnce(&mut [T])) {
        if !self.nodes[target].needs_grad {
            return;
        }
        let slot = &mut grads[target];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(self.value(target).shape().to_vec()));
        }
        apply(slot.as_mut().unwrap().data_mut());
    }
}

#[inline]
fn ew_add<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[inline]
fn ew_sub<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d -= s;
    }
}

#[inline]
fn ew_add_prod<T: Scalar>(dst: &mut [T], a: &[T], b: &[T]) {
    for ((d, &x), &y) in dst.iter_mut().zip(a).zip(b) {
        *d += x * y;
    }
}

#[inline]
fn sigmoid_stable<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
fn softplus_stable<T: Scalar>(x: T) -> T {
    // ln(1 + e^x) = max(x, 0) + ln(1 + e^-|x|)
    let m = if x > T::zero() { x } else { T::zero() };
    m + (-x.abs()).exp().ln_1p()
}

/// Output spatial extent of a conv given input extent, kernel, stride, pad.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    out_extent(input, kernel, stride, pad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::filled(vec![4], 1.0), true);
        let sq = g.square(x).unwrap();
        let loss = g.sum(sq);
        let grads = g.backward(loss).unwrap();
        let gx = grads.get(x).unwrap();
        assert!(gx.data().iter().all(|&v| (v - 2.0).abs() < 1e-12));
    }

    #[test]
    fn broadcast_ops_gradients() {
        // loss = sum((x * s) + t), d/ds = sum(x), d/dt = n
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
        let s = g.leaf(Tensor::scalar(2.0), true);
        let t = g.leaf(Tensor::scalar(0.5), true);
        let xs = g.scale_by(x, s).unwrap();
        let y = g.shift_by(xs, t).unwrap();
        let loss = g.sum(y);
        assert!((g.value(loss).item().unwrap() - 13.5).abs() < 1e-12);
        let grads = g.backward(loss).unwrap();
        assert!((grads.get(s).unwrap().data()[0] - 6.0).abs() < 1e-12);
        assert!((grads.get(t).unwrap().data()[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn masked_sum_skips_invalid() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::new(vec![4], vec![1.0, f64::NAN, 3.0, 4.0]).unwrap(), true);
        let mask = Arc::new(vec![true, false, true, false]);
        let s = g.masked_sum(x, mask).unwrap();
        assert!((g.value(s).item().unwrap() - 4.0).abs() < 1e-12);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn concat_splits_gradient() {
        let mut g = Graph::<f64>::new();
        let a = g.leaf(Tensor::filled(vec![1, 2, 2, 2], 1.0), true);
        let b = g.leaf(Tensor::filled(vec![1, 1, 2, 2], 2.0), true);
        let cat = g.concat_channels(&[a, b]).unwrap();
        assert_eq!(g.value(cat).shape(), &[1, 3, 2, 2]);
        let doubled = g.mul_const(cat, 3.0);
        let loss = g.sum(doubled);
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(a).unwrap().data().iter().all(|&v| v == 3.0));
        assert!(grads.get(b).unwrap().data().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn subsample_and_crop_shapes() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::zeros(vec![1, 1, 5, 7]), true);
        let s = g.subsample2(x).unwrap();
        assert_eq!(g.value(s).shape(), &[1, 1, 3, 4]);
        let c = g.crop_int(x, 1, 2, 3, 4).unwrap();
        assert_eq!(g.value(c).shape(), &[1, 1, 3, 4]);
        assert!(g.crop_int(x, 3, 4, 3, 4).is_err());
    }

    #[test]
    fn backward_rejects_nonfinite_and_nonscalar() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::filled(vec![2], 1.0), true);
        assert!(g.backward(x).is_err());
        let y = g.leaf(Tensor::scalar(f64::NAN), true);
        assert!(g.backward(y).is_err());
    }
}
