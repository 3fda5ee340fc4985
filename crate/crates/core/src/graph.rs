//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation of one forward pass. Nodes are
//! appended after their parents, so index order is a topological order and
//! [`Graph::backward`] walks it in reverse, visiting each node once.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{
    area_downsample, area_downsample_backward, conv2d_backward, conv2d_forward, resize_bilinear,
    resize_bilinear_backward, Dims, Real, Tensor,
};
use crate::warp::{self, Stream};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Constant,
    Leaf,
    Param,
    Conv2d { stride: usize, pad: usize },
    LeakyRelu { slope: T },
    Sigmoid,
    Resize,
    AreaDownsample { factor: usize },
    Concat,
    SliceChannels { start: usize },
    SoftmaxGroups { group: usize },
    Add,
    Sub,
    Mul,
    Scale { factor: T },
    BilinearSample,
    AttentionWarp,
    Gram,
    MeanAbsDiff,
    Sum,
    Mean,
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Leaf => "leaf",
            Op::Param => "param",
            Op::Conv2d { .. } => "conv2d",
            Op::LeakyRelu { .. } => "leaky_relu",
            Op::Sigmoid => "sigmoid",
            Op::Resize => "resize_bilinear",
            Op::AreaDownsample { .. } => "area_downsample",
            Op::Concat => "concat_channels",
            Op::SliceChannels { .. } => "slice_channels",
            Op::SoftmaxGroups { .. } => "softmax_groups",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Scale { .. } => "scale",
            Op::BilinearSample => "bilinear_sample",
            Op::AttentionWarp => "attention_warp",
            Op::Gram => "gram",
            Op::MeanAbsDiff => "mean_abs_diff",
            Op::Sum => "sum",
            Op::Mean => "mean",
        }
    }

    fn is_leaf(&self) -> bool {
        matches!(self, Op::Constant | Op::Leaf | Op::Param)
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    parents: Vec<Var>,
    requires_grad: bool,
}

/// Computation graph of one forward pass.
pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
    params: HashMap<(u64, ParamId), Var>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Bytes held by node values; a rough peak-memory estimate of a pass.
    pub fn value_bytes(&self) -> usize {
        self.nodes.iter().map(|n| n.value.len()).sum::<usize>() * std::mem::size_of::<T>()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> Dims {
        self.nodes[v.0].value.dims()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: Vec<Var>) -> Result<Var> {
        let name = op.name();
        let value = value.check_finite(name)?;
        let requires_grad = match op {
            Op::Constant => false,
            Op::Leaf => true,
            Op::Param => unreachable!("params are pushed by Graph::param"),
            _ => parents.iter().any(|p| self.nodes[p.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            parents,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A value that never receives gradients (inputs, targets). Non-finite
    /// entries are caught by the first operation that consumes it.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Constant,
            parents: Vec::new(),
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Like [`Graph::constant`] but rejects non-finite values up front.
    pub fn try_constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push(value, Op::Constant, Vec::new())
    }

    /// A free variable whose gradient is reported by [`Gradients::get`].
    pub fn leaf(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push(value, Op::Leaf, Vec::new())
    }

    /// Binds a stored parameter. Repeated calls return the same node, so a
    /// parameter used in several places accumulates all path gradients.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let key = (store.uid(), id);
        if let Some(&v) = self.params.get(&key) {
            return v;
        }
        let p = store.get(id);
        self.nodes.push(Node {
            value: p.value.clone(),
            op: Op::Param,
            parents: Vec::new(),
            requires_grad: p.trainable,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(key, v);
        v
    }

    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let out = conv2d_forward(
            self.value(x),
            self.value(weight),
            bias.map(|b| self.value(b)),
            stride,
            pad,
        )?;
        let mut parents = vec![x, weight];
        parents.extend(bias);
        self.push(out, Op::Conv2d { stride, pad }, parents)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&slope) {
            return Err(Error::Contract(format!("leaky_relu slope {slope} outside [0, 1)")));
        }
        let s = T::of(slope);
        let out = self.value(x).map(|v| if v >= T::zero() { v } else { s * v });
        self.push(out, Op::LeakyRelu { slope: s }, vec![x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| T::one() / (T::one() + (-v).exp()));
        self.push(out, Op::Sigmoid, vec![x])
    }

    /// 2x bilinear upsampling (align-corners).
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let d = self.dims(x);
        self.resize(x, 2 * d.h, 2 * d.w)
    }

    pub fn resize(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        if h == 0 || w == 0 {
            return Err(Error::shape("resize_bilinear", format!("target {h}x{w}")));
        }
        let out = resize_bilinear(self.value(x), h, w);
        self.push(out, Op::Resize, vec![x])
    }

    pub fn area_downsample(&mut self, x: Var, factor: usize) -> Result<Var> {
        let out = area_downsample(self.value(x), factor)?;
        self.push(out, Op::AreaDownsample { factor }, vec![x])
    }

    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let vals: Vec<&Tensor<T>> = xs.iter().map(|&v| self.value(v)).collect();
        let out = Tensor::concat_channels(&vals)?;
        self.push(out, Op::Concat, xs.to_vec())
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let out = self.value(x).channels(start, len)?;
        self.push(out, Op::SliceChannels { start }, vec![x])
    }

    /// Softmax over each contiguous group of `group` channels, per pixel.
    pub fn softmax_groups(&mut self, x: Var, group: usize) -> Result<Var> {
        let d = self.dims(x);
        if group == 0 || !d.c.is_multiple_of(group) {
            return Err(Error::shape(
                "softmax_groups",
                format!("{} channels not divisible into groups of {group}", d.c),
            ));
        }
        let xv = self.value(x);
        let mut out = Tensor::zeros(d);
        let plane = d.plane();
        for n in 0..d.n {
            let xs = xv.item_slice(n);
            let os = out.item_slice_mut(n);
            for g in 0..d.c / group {
                for p in 0..plane {
                    let idx = |k: usize| (g * group + k) * plane + p;
                    let m = (0..group).fold(T::neg_infinity(), |m, k| m.max(xs[idx(k)]));
                    let mut z = T::zero();
                    for k in 0..group {
                        let e = (xs[idx(k)] - m).exp();
                        os[idx(k)] = e;
                        z += e;
                    }
                    for k in 0..group {
                        os[idx(k)] = os[idx(k)] / z;
                    }
                }
            }
        }
        self.push(out, Op::SoftmaxGroups { group }, vec![x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |p, q| p + q)?;
        self.push(out, Op::Add, vec![a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |p, q| p - q)?;
        self.push(out, Op::Sub, vec![a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |p, q| p * q)?;
        self.push(out, Op::Mul, vec![a, b])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let f = T::of(factor);
        let out = self.value(x).map(|v| v * f);
        self.push(out, Op::Scale { factor: f }, vec![x])
    }

    /// Single-flow bilinear warp.
    pub fn bilinear_sample(&mut self, x: Var, flow: Var) -> Result<Var> {
        let out = warp::bilinear_sample(self.value(x), self.value(flow))?;
        self.push(out, Op::BilinearSample, vec![x, flow])
    }

    /// Joint-softmax attention warp over `(x, flow, logits)` streams.
    pub fn attention_warp(&mut self, streams: &[(Var, Var, Var)]) -> Result<Var> {
        let out = {
            let s: Vec<Stream<'_, T>> = streams
                .iter()
                .map(|&(x, f, a)| Stream::new(self.value(x), self.value(f), self.value(a)))
                .collect();
            warp::attention_warp(&s)?
        };
        let parents = streams.iter().flat_map(|&(x, f, a)| [x, f, a]).collect();
        self.push(out, Op::AttentionWarp, parents)
    }

    /// Deformable attention warping of one stream.
    pub fn daw_warp(&mut self, x: Var, flow: Var, logits: Var) -> Result<Var> {
        self.attention_warp(&[(x, flow, logits)])
    }

    /// Per-item Gram matrix `F F^T / (C H W)`, shaped `(n, 1, C, C)`.
    pub fn gram(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.dims();
        let hw = d.plane();
        let norm = T::one() / T::of((d.c * hw).max(1) as f64);
        let mut out = Tensor::zeros(Dims::new(d.n, 1, d.c, d.c));
        for n in 0..d.n {
            let xs = xv.item_slice(n);
            // SAFETY: xs is c x hw row-major; out item is c x c.
            unsafe {
                T::gemm(
                    d.c,
                    hw,
                    d.c,
                    norm,
                    xs.as_ptr(),
                    hw as isize,
                    1,
                    xs.as_ptr(),
                    1,
                    hw as isize,
                    T::zero(),
                    out.item_slice_mut(n).as_mut_ptr(),
                    d.c as isize,
                    1,
                );
            }
        }
        self.push(out, Op::Gram, vec![x])
    }

    /// Mean absolute difference, a 1x1x1x1 scalar.
    pub fn mean_abs_diff(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.dims() != bv.dims() {
            return Err(Error::mismatch("mean_abs_diff", av.dims(), bv.dims()));
        }
        let n = T::of(av.len().max(1) as f64);
        let s: T = av.data().iter().zip(bv.data()).map(|(&p, &q)| (p - q).abs()).sum();
        self.push(Tensor::scalar(s / n), Op::MeanAbsDiff, vec![a, b])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum, vec![x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).mean();
        self.push(Tensor::scalar(s), Op::Mean, vec![x])
    }

    /// Propagates gradients from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let ld = self.dims(loss);
        if ld != Dims::scalar() {
            return Err(Error::Contract(format!("backward needs a scalar loss, got {ld}")));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::scalar(T::one()));
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if node.op.is_leaf() || !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let need: Vec<bool> = node.parents.iter().map(|p| self.nodes[p.0].requires_grad).collect();
            let contributions = self.node_backward(node, &g, &need)?;
            for (&p, c) in node.parents.iter().zip(contributions) {
                if let Some(c) = c {
                    accumulate(&mut grads, p, c)?;
                }
            }
        }
        let mut leaf_grads = HashMap::new();
        for (i, g) in grads.into_iter().enumerate() {
            if let Some(g) = g {
                if self.nodes[i].op.is_leaf() {
                    leaf_grads.insert(Var(i), g);
                }
            }
        }
        Ok(Gradients {
            grads: leaf_grads,
            params: self.params.clone(),
        })
    }

    /// Backward pass that writes each parameter's gradient into `store`.
    /// Parameters not reachable from `loss` get zero gradients.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        self.backward(loss)?.write_params(store);
        Ok(())
    }

    fn node_backward(&self, node: &Node<T>, g: &Tensor<T>, need: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        let val = |k: usize| &self.nodes[node.parents[k].0].value;
        let out = &node.value;
        Ok(match &node.op {
            Op::Constant | Op::Leaf | Op::Param => Vec::new(),
            Op::Conv2d { stride, pad } => {
                let has_bias = node.parents.len() == 3;
                let grads = conv2d_backward(
                    val(0),
                    val(1),
                    g,
                    *stride,
                    *pad,
                    [need[0], need[1], has_bias && need[2]],
                )?;
                let mut v = vec![grads.dx, grads.dw];
                if has_bias {
                    v.push(grads.db);
                }
                v
            }
            Op::LeakyRelu { slope } => {
                let s = *slope;
                vec![Some(val(0).zip_map(g, |x, gv| if x >= T::zero() { gv } else { s * gv })?)]
            }
            Op::Sigmoid => vec![Some(out.zip_map(g, |y, gv| gv * y * (T::one() - y))?)],
            Op::Resize => vec![Some(resize_bilinear_backward(g, val(0).dims()))],
            Op::AreaDownsample { factor } => {
                vec![Some(area_downsample_backward(g, *factor, val(0).dims()))]
            }
            Op::Concat => {
                let mut start = 0;
                let mut v = Vec::with_capacity(node.parents.len());
                for (k, &nd) in need.iter().enumerate() {
                    let c = val(k).dims().c;
                    v.push(if nd { Some(g.channels(start, c)?) } else { None });
                    start += c;
                }
                v
            }
            Op::SliceChannels { start } => {
                let d = val(0).dims();
                let mut dx = Tensor::zeros(d);
                let len = g.dims().c;
                let plane = d.plane();
                for n in 0..d.n {
                    dx.item_slice_mut(n)[start * plane..(start + len) * plane].copy_from_slice(g.item_slice(n));
                }
                vec![Some(dx)]
            }
            Op::SoftmaxGroups { group } => {
                let d = out.dims();
                let plane = d.plane();
                let mut dx = Tensor::zeros(d);
                for n in 0..d.n {
                    let ys = out.item_slice(n);
                    let gs = g.item_slice(n);
                    let ds = dx.item_slice_mut(n);
                    for grp in 0..d.c / group {
                        for p in 0..plane {
                            let idx = |k: usize| (grp * group + k) * plane + p;
                            let dot: T = (0..*group).map(|k| ys[idx(k)] * gs[idx(k)]).sum();
                            for k in 0..*group {
                                ds[idx(k)] = ys[idx(k)] * (gs[idx(k)] - dot);
                            }
                        }
                    }
                }
                vec![Some(dx)]
            }
            Op::Add => vec![need[0].then(|| g.clone()), need[1].then(|| g.clone())],
            Op::Sub => vec![need[0].then(|| g.clone()), need[1].then(|| g.map(|v| -v))],
            Op::Mul => vec![
                if need[0] { Some(g.zip_map(val(1), |a, b| a * b)?) } else { None },
                if need[1] { Some(g.zip_map(val(0), |a, b| a * b)?) } else { None },
            ],
            Op::Scale { factor } => {
                let f = *factor;
                vec![Some(g.map(|v| v * f))]
            }
            Op::BilinearSample => {
                let (dx, df) = warp::bilinear_sample_backward(val(0), val(1), g, [need[0], need[1]])?;
                vec![dx, df]
            }
            Op::AttentionWarp => {
                let streams: Vec<Stream<'_, T>> = (0..node.parents.len() / 3)
                    .map(|s| Stream::new(val(3 * s), val(3 * s + 1), val(3 * s + 2)))
                    .collect();
                let needs: Vec<[bool; 3]> = need.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
                warp::attention_warp_backward(&streams, g, &needs)?
                    .into_iter()
                    .flat_map(|(a, b, c)| [a, b, c])
                    .collect()
            }
            Op::Gram => {
                let x = val(0);
                let d = x.dims();
                let hw = d.plane();
                let norm = T::one() / T::of((d.c * hw).max(1) as f64);
                let mut dx = Tensor::zeros(d);
                for n in 0..d.n {
                    let gs = g.item_slice(n);
                    // (G + G^T) as one matrix, then dX = sym * X * norm.
                    let sym: Vec<T> = (0..d.c * d.c)
                        .map(|idx| {
                            let (i, j) = (idx / d.c, idx % d.c);
                            gs[i * d.c + j] + gs[j * d.c + i]
                        })
                        .collect();
                    // SAFETY: sym is c x c, x item is c x hw, dx item is c x hw.
                    unsafe {
                        T::gemm(
                            d.c,
                            d.c,
                            hw,
                            norm,
                            sym.as_ptr(),
                            d.c as isize,
                            1,
                            x.item_slice(n).as_ptr(),
                            hw as isize,
                            1,
                            T::zero(),
                            dx.item_slice_mut(n).as_mut_ptr(),
                            hw as isize,
                            1,
                        );
                    }
                }
                vec![Some(dx)]
            }
            Op::MeanAbsDiff => {
                let (a, b) = (val(0), val(1));
                let scale = g.item() / T::of(a.len().max(1) as f64);
                let sign = a.zip_map(b, |p, q| {
                    let d = p - q;
                    if d > T::zero() {
                        scale
                    } else if d < T::zero() {
                        -scale
                    } else {
                        T::zero()
                    }
                })?;
                let neg = need[1].then(|| sign.map(|v| -v));
                vec![need[0].then_some(sign), neg]
            }
            Op::Sum => vec![Some(Tensor::full(val(0).dims(), g.item()))],
            Op::Mean => {
                let x = val(0);
                vec![Some(Tensor::full(x.dims(), g.item() / T::of(x.len().max(1) as f64)))]
            }
        })
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) -> Result<()> {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

/// Gradients of leaf nodes after [`Graph::backward`].
pub struct Gradients<T: Real = f32> {
    grads: HashMap<Var, Tensor<T>>,
    params: HashMap<(u64, ParamId), Var>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of a leaf or parameter node; `None` when it was not reached.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(&v)
    }

    /// Overwrites the gradient of every parameter in `store`: the gradient
    /// of its graph node, or zeros when it was unused or unreachable.
    pub fn write_params(&self, store: &mut ParamStore<T>) {
        let uid = store.uid();
        let ids: Vec<ParamId> = store.iter().map(|(id, _)| id).collect();
        for id in ids {
            let p = store.get_mut(id);
            match self.params.get(&(uid, id)).and_then(|v| self.grads.get(v)) {
                Some(g) => p.grad.data_mut().copy_from_slice(g.data()),
                None => p.grad.fill(T::zero()),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(dims: Dims, v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(dims, v.to_vec()).unwrap()
    }

    #[test]
    fn linear_case_gradient_is_input() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", t(Dims::new(1, 1, 1, 3), &[0.5, -1.0, 2.0]), true).unwrap();
        let mut g = Graph::new();
        let x = g.constant(t(Dims::new(1, 1, 1, 3), &[3.0, 4.0, 5.0]));
        let wv = g.param(&store, w);
        let prod = g.mul(wv, x).unwrap();
        let loss = g.sum(prod).unwrap();
        g.backward_into(loss, &mut store).unwrap();
        assert_eq!(store.get(w).grad.data(), &[3.0, 4.0, 5.0]);
    }

    #[test]
    fn reused_parameter_accumulates() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", Tensor::scalar(1.5), true).unwrap();
        let unused = store.add("unused", Tensor::scalar(1.0), true).unwrap();
        store.get_mut(unused).grad.fill(9.0);
        let mut g = Graph::new();
        let a = g.param(&store, w);
        let b = g.param(&store, w);
        assert_eq!(a, b);
        let y = g.add(a, b).unwrap();
        g.backward_into(y, &mut store).unwrap();
        assert_eq!(store.get(w).grad.item(), 2.0);
        assert_eq!(store.get(unused).grad.item(), 0.0);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor::zeros(Dims::new(1, 2, 1, 1))).unwrap();
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn non_finite_values_are_errors() {
        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor::full(Dims::scalar(), 1e30)).unwrap();
        let y = g.mul(x, x).unwrap_err();
        assert!(matches!(y, Error::NonFinite { op: "mul" }));
        assert!(g.try_constant(Tensor::full(Dims::scalar(), f32::NAN)).is_err());
    }

    #[test]
    fn leaky_relu_values() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(Dims::new(1, 1, 1, 3), &[-1.0, 0.0, 2.0])).unwrap();
        let y = g.leaky_relu(x, 0.1).unwrap();
        assert_eq!(g.value(y).data(), &[-0.1, 0.0, 2.0]);
        let r = g.leaky_relu(x, 0.0).unwrap();
        assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);
        assert!(g.leaky_relu(x, 1.0).is_err());
    }

    #[test]
    fn softmax_groups_values() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(Dims::new(1, 4, 1, 1), &[0.0, 0.0, 3f64.ln(), 0.0])).unwrap();
        let y = g.softmax_groups(x, 2).unwrap();
        let v = g.value(y).data();
        assert!((v[0] - 0.5).abs() < 1e-15 && (v[1] - 0.5).abs() < 1e-15);
        assert!((v[2] - 0.75).abs() < 1e-15 && (v[3] - 0.25).abs() < 1e-15);
        assert!(matches!(g.softmax_groups(x, 3), Err(Error::Shape { .. })));
    }

    #[test]
    fn concat_shapes_and_split_gradient() {
        let mut g = Graph::<f64>::new();
        let a = g.leaf(Tensor::full(Dims::new(1, 2, 4, 4), 1.0)).unwrap();
        let b = g.leaf(Tensor::full(Dims::new(1, 3, 4, 4), 2.0)).unwrap();
        let c = g.concat_channels(&[a, b]).unwrap();
        assert_eq!(g.dims(c), Dims::new(1, 5, 4, 4));
        let single = g.concat_channels(&[a]).unwrap();
        assert_eq!(g.value(single), g.value(a));
        let loss = g.sum(c).unwrap();
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(a).unwrap().data().iter().all(|&v| v == 1.0));
        assert_eq!(grads.get(b).unwrap().dims(), Dims::new(1, 3, 4, 4));
        let bad = g.leaf(Tensor::zeros(Dims::new(1, 1, 3, 4))).unwrap();
        assert!(g.concat_channels(&[a, bad]).is_err());
    }

    #[test]
    fn gram_of_single_channel() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(Dims::new(1, 1, 2, 2), &[1.0, 2.0, 3.0, 4.0])).unwrap();
        let gm = g.gram(x).unwrap();
        assert_eq!(g.value(gm).item(), 7.5);
    }

    #[test]
    fn backward_is_deterministic() {
        let run = || {
            let mut g = Graph::<f32>::new();
            let x = g.leaf(Tensor::from_fn(Dims::new(1, 2, 5, 5), |_, c, y, x| (c + y * x) as f32 * 0.1)).unwrap();
            let w = g.leaf(Tensor::from_fn(Dims::new(3, 2, 3, 3), |o, c, y, x| ((o + c + y + x) % 3) as f32 - 1.0)).unwrap();
            let y = g.conv2d(x, w, None, 1, 1).unwrap();
            let z = g.leaky_relu(y, 0.1).unwrap();
            let loss = g.mean(z).unwrap();
            let grads = g.backward(loss).unwrap();
            (grads.get(x).unwrap().clone(), grads.get(w).unwrap().clone())
        };
        assert_eq!(run(), run());
    }
}
