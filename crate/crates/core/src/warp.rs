//! Differentiable warping with deformable attention flows.
//!
//! A flow tensor holds `2K` channels laid out as `(dx_0, dy_0, dx_1, dy_1, ...)`
//! in normalized coordinates: `(-1, -1)` is the centre of the top-left pixel
//! and `(+1, +1)` the centre of the bottom-right one. A pixel at column `j`
//! therefore samples column `j + dx * (W - 1) / 2`. Samples falling outside
//! the image read zeros.
//!
//! An attention tensor holds `K` logits. Warping with `K` samples combines
//! the bilinear samples with the per-pixel softmax of the logits. Several
//! streams can be merged under one joint softmax, which is how the self- and
//! cross-warped streams are fused before decoding.

use crate::error::{Error, Result};
use crate::tensor::{resize_bilinear, upsample2x, Dims, Real, Tensor};

/// `2K` offset channels in normalized coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField<T: Real = f32> {
    offsets: Tensor<T>,
}

impl<T: Real> FlowField<T> {
    pub fn new(offsets: Tensor<T>) -> Result<Self> {
        let c = offsets.dims().c;
        if c == 0 || !c.is_multiple_of(2) {
            return Err(Error::shape(
                "flow_field",
                format!("flow needs an even, nonzero channel count, got {}", offsets.dims()),
            ));
        }
        Ok(FlowField { offsets })
    }

    pub fn zeros(n: usize, samples: usize, h: usize, w: usize) -> Self {
        FlowField {
            offsets: Tensor::zeros(Dims::new(n, 2 * samples, h, w)),
        }
    }

    pub fn samples(&self) -> usize {
        self.offsets.dims().c / 2
    }

    pub fn offsets(&self) -> &Tensor<T> {
        &self.offsets
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.offsets
    }

    /// Doubles the resolution. Offsets are in normalized units, so values are
    /// interpolated but not rescaled.
    pub fn upsample(&self) -> Self {
        FlowField {
            offsets: upsample2x(&self.offsets),
        }
    }

    /// Resizes to an arbitrary resolution (align-corners bilinear).
    pub fn resize(&self, h: usize, w: usize) -> Self {
        FlowField {
            offsets: resize_bilinear(&self.offsets, h, w),
        }
    }
}

/// `K` pre-softmax attention logits per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMaps<T: Real = f32> {
    logits: Tensor<T>,
}

impl<T: Real> AttentionMaps<T> {
    pub fn new(logits: Tensor<T>) -> Result<Self> {
        if logits.dims().c == 0 {
            return Err(Error::shape("attention_maps", "zero logit channels"));
        }
        Ok(AttentionMaps { logits })
    }

    pub fn samples(&self) -> usize {
        self.logits.dims().c
    }

    pub fn logits(&self) -> &Tensor<T> {
        &self.logits
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.logits
    }

    pub fn upsample(&self) -> Self {
        AttentionMaps {
            logits: upsample2x(&self.logits),
        }
    }

    pub fn resize(&self, h: usize, w: usize) -> Self {
        AttentionMaps {
            logits: resize_bilinear(&self.logits, h, w),
        }
    }
}

/// Upsamples offsets and logits together by 2x.
pub fn upsample_flow<T: Real>(
    flow: &FlowField<T>,
    attn: &AttentionMaps<T>,
) -> (FlowField<T>, AttentionMaps<T>) {
    (flow.upsample(), attn.upsample())
}

/// One warped stream: source tensor, its flow, and its attention logits.
#[derive(Clone, Copy)]
pub struct Stream<'a, T> {
    pub x: &'a Tensor<T>,
    pub flow: &'a Tensor<T>,
    pub logits: &'a Tensor<T>,
}

impl<'a, T: Real> Stream<'a, T> {
    pub fn new(x: &'a Tensor<T>, flow: &'a Tensor<T>, logits: &'a Tensor<T>) -> Self {
        Stream { x, flow, logits }
    }

    fn samples(&self) -> usize {
        self.logits.dims().c
    }
}

fn check_streams<T: Real>(op: &'static str, streams: &[Stream<'_, T>]) -> Result<Dims> {
    let first = streams
        .first()
        .ok_or_else(|| Error::shape(op, "no streams"))?;
    let d = first.x.dims();
    for s in streams {
        let xd = s.x.dims();
        if xd != d {
            return Err(Error::mismatch(op, d, xd));
        }
        let fd = s.flow.dims();
        let ad = s.logits.dims();
        if fd.n != d.n || fd.h != d.h || fd.w != d.w {
            return Err(Error::mismatch(op, xd, fd));
        }
        if ad.n != d.n || ad.h != d.h || ad.w != d.w {
            return Err(Error::mismatch(op, xd, ad));
        }
        if ad.c == 0 || fd.c != 2 * ad.c {
            return Err(Error::shape(
                op,
                format!(
                    "flow {fd} carries {} samples but attention {ad} carries {}",
                    fd.c as f64 / 2.0,
                    ad.c
                ),
            ));
        }
    }
    Ok(d)
}

/// Bilinear footprint of one sampling position. Corners outside the image
/// point at the extra zero pixel of a [`Hwc`] copy.
#[derive(Clone, Copy)]
struct Footprint<T> {
    idx: [usize; 4],
    w: [T; 4],
    fx: T,
    fy: T,
}

impl<T: Real> Footprint<T> {
    /// Position of pixel `(i, j)` displaced by a normalized offset.
    #[inline]
    #[allow(clippy::too_many_arguments)]
    fn new(i: usize, j: usize, dx: T, dy: T, sx: T, sy: T, h: usize, w: usize) -> Self {
        let px = T::of(j as f64) + dx * sx;
        let py = T::of(i as f64) + dy * sy;
        let fx0 = px.floor();
        let fy0 = py.floor();
        let (x0, y0) = (fx0.to_f64() as isize, fy0.to_f64() as isize);
        let (fx, fy) = (px - fx0, py - fy0);
        let mut idx = [h * w; 4];
        for (q, (y, x)) in [(y0, x0), (y0, x0 + 1), (y0 + 1, x0), (y0 + 1, x0 + 1)].into_iter().enumerate() {
            if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
                idx[q] = y as usize * w + x as usize;
            }
        }
        let one = T::one();
        Footprint {
            idx,
            w: [(one - fx) * (one - fy), fx * (one - fy), (one - fx) * fy, fx * fy],
            fx,
            fy,
        }
    }
}

/// Channels-last copy of one batch item with a trailing zero pixel, so that
/// every corner read is a contiguous run of channel values.
struct Hwc<T> {
    c: usize,
    data: Vec<T>,
}

impl<T: Real> Hwc<T> {
    fn zeros(c: usize, plane: usize) -> Self {
        Hwc {
            c,
            data: vec![T::zero(); (plane + 1) * c],
        }
    }

    fn from_planar(item: &[T], c: usize, plane: usize) -> Self {
        let mut h = Self::zeros(c, plane);
        for ch in 0..c {
            for (p, &v) in item[ch * plane..(ch + 1) * plane].iter().enumerate() {
                h.data[p * c + ch] = v;
            }
        }
        h
    }

    fn add_to_planar(&self, item: &mut [T], plane: usize) {
        let c = self.c;
        for ch in 0..c {
            for (p, o) in item[ch * plane..(ch + 1) * plane].iter_mut().enumerate() {
                *o += self.data[p * c + ch];
            }
        }
    }

    #[inline]
    fn corners(&self, fp: &Footprint<T>) -> [&[T]; 4] {
        let c = self.c;
        fp.idx.map(|i| &self.data[i * c..(i + 1) * c])
    }
}

/// `out[c] += scale * interp(c)` over all channels.
#[inline]
fn accumulate<T: Real>(out: &mut [T], scale: T, fp: &Footprint<T>, x: &Hwc<T>) {
    let [r0, r1, r2, r3] = x.corners(fp);
    let [w0, w1, w2, w3] = fp.w;
    for c in 0..out.len() {
        out[c] += scale * (w0 * r0[c] + w1 * r1[c] + w2 * r2[c] + w3 * r3[c]);
    }
}

/// Returns `(sum g*interp, sum g*d/dx, sum g*d/dy)` over channels, slopes in pixels.
#[inline]
fn contract<T: Real>(g: &[T], fp: &Footprint<T>, x: &Hwc<T>) -> (T, T, T) {
    let [r0, r1, r2, r3] = x.corners(fp);
    let [w0, w1, w2, w3] = fp.w;
    let one = T::one();
    let (ax, bx) = (one - fp.fy, fp.fy);
    let (ay, by) = (one - fp.fx, fp.fx);
    let (mut dot, mut gx, mut gy) = (T::zero(), T::zero(), T::zero());
    for c in 0..g.len() {
        let (v0, v1, v2, v3) = (r0[c], r1[c], r2[c], r3[c]);
        dot += g[c] * (w0 * v0 + w1 * v1 + w2 * v2 + w3 * v3);
        gx += g[c] * (ax * (v1 - v0) + bx * (v3 - v2));
        gy += g[c] * (ay * (v2 - v0) + by * (v3 - v1));
    }
    (dot, gx, gy)
}

/// `dx[corner][c] += (scale * g[c]) * w_corner`.
#[inline]
fn scatter<T: Real>(dx: &mut Hwc<T>, scale: T, g: &[T], fp: &Footprint<T>) {
    let c = dx.c;
    for (q, &i) in fp.idx.iter().enumerate() {
        let wq = fp.w[q];
        let row = &mut dx.data[i * c..(i + 1) * c];
        for (r, &gc) in row.iter_mut().zip(g) {
            *r += scale * gc * wq;
        }
    }
}

fn gather_channels<T: Real>(item: &[T], c: usize, plane: usize, p: usize, out: &mut [T]) {
    for (ch, o) in out.iter_mut().enumerate().take(c) {
        *o = item[ch * plane + p];
    }
}

fn scatter_channels<T: Real>(vals: &[T], item: &mut [T], plane: usize, p: usize) {
    for (ch, &v) in vals.iter().enumerate() {
        item[ch * plane + p] = v;
    }
}

#[inline]
fn scales<T: Real>(d: Dims) -> (T, T) {
    (
        T::of((d.w.max(1) - 1) as f64 / 2.0),
        T::of((d.h.max(1) - 1) as f64 / 2.0),
    )
}

#[inline]
fn softmax_into<T: Real>(logits: &[T], out: &mut [T]) {
    let m = logits.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut z = T::zero();
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - m).exp();
        z += *o;
    }
    for o in out.iter_mut() {
        *o = *o / z;
    }
}

/// Gathers the logits of all streams at one pixel into `buf`.
fn gather_logits<T: Real>(streams: &[Stream<'_, T>], n: usize, p: usize, buf: &mut Vec<T>) {
    buf.clear();
    for s in streams {
        let k = s.samples();
        let item = s.logits.item_slice(n);
        let plane = s.logits.dims().plane();
        buf.extend((0..k).map(|kk| item[kk * plane + p]));
    }
}

/// Per-pixel weights of the joint softmax over all streams' samples,
/// shaped `(n, K_total, h, w)`.
pub fn attention_weights<T: Real>(streams: &[Stream<'_, T>]) -> Result<Tensor<T>> {
    let d = check_streams("attention_weights", streams)?;
    let ktot: usize = streams.iter().map(|s| s.samples()).sum();
    let plane = d.plane();
    let mut out = Tensor::zeros(Dims::new(d.n, ktot, d.h, d.w));
    let (mut lg, mut wt) = (Vec::new(), vec![T::zero(); ktot]);
    for n in 0..d.n {
        for p in 0..plane {
            gather_logits(streams, n, p, &mut lg);
            softmax_into(&lg, &mut wt);
            let item = out.item_slice_mut(n);
            for (k, &w) in wt.iter().enumerate() {
                item[k * plane + p] = w;
            }
        }
    }
    Ok(out)
}

/// Samples every stream at its offsets and sums them with the joint softmax
/// weights of all logits. One stream is deformable attention warping; two
/// streams is the two-stream merge.
pub fn attention_warp<T: Real>(streams: &[Stream<'_, T>]) -> Result<Tensor<T>> {
    let d = check_streams("attention_warp", streams)?;
    let ktot: usize = streams.iter().map(|s| s.samples()).sum();
    let plane = d.plane();
    let (sx, sy) = scales::<T>(d);
    let mut out = Tensor::zeros(d);
    let (mut lg, mut wt) = (Vec::new(), vec![T::zero(); ktot]);
    let mut taps: Vec<(usize, Footprint<T>)> = Vec::with_capacity(ktot);
    let mut acc = vec![T::zero(); d.c];
    for n in 0..d.n {
        let xs: Vec<Hwc<T>> = streams
            .iter()
            .map(|s| Hwc::from_planar(s.x.item_slice(n), d.c, plane))
            .collect();
        for i in 0..d.h {
            for j in 0..d.w {
                let p = i * d.w + j;
                gather_logits(streams, n, p, &mut lg);
                softmax_into(&lg, &mut wt);
                taps.clear();
                for (si, s) in streams.iter().enumerate() {
                    let fl = s.flow.item_slice(n);
                    for k in 0..s.samples() {
                        let (dx, dy) = (fl[2 * k * plane + p], fl[(2 * k + 1) * plane + p]);
                        taps.push((si, Footprint::new(i, j, dx, dy, sx, sy, d.h, d.w)));
                    }
                }
                acc.fill(T::zero());
                for ((si, fp), &wk) in taps.iter().zip(&wt) {
                    accumulate(&mut acc, wk, fp, &xs[*si]);
                }
                scatter_channels(&acc, out.item_slice_mut(n), plane, p);
            }
        }
    }
    Ok(out)
}

/// Gradients for one stream of [`attention_warp`]: `(dx, dflow, dlogits)`.
pub type StreamGrads<T> = (Option<Tensor<T>>, Option<Tensor<T>>, Option<Tensor<T>>);

pub fn attention_warp_backward<T: Real>(
    streams: &[Stream<'_, T>],
    gout: &Tensor<T>,
    need: &[[bool; 3]],
) -> Result<Vec<StreamGrads<T>>> {
    let d = check_streams("attention_warp", streams)?;
    if gout.dims() != d {
        return Err(Error::mismatch("attention_warp", d, gout.dims()));
    }
    let ktot: usize = streams.iter().map(|s| s.samples()).sum();
    let plane = d.plane();
    let (sx, sy) = scales::<T>(d);
    let mut grads: Vec<StreamGrads<T>> = streams
        .iter()
        .zip(need)
        .map(|(s, nd)| {
            (
                nd[0].then(|| Tensor::zeros(s.x.dims())),
                nd[1].then(|| Tensor::zeros(s.flow.dims())),
                nd[2].then(|| Tensor::zeros(s.logits.dims())),
            )
        })
        .collect();
    let (mut lg, mut wt) = (Vec::new(), vec![T::zero(); ktot]);
    let mut dots = vec![T::zero(); ktot];
    let mut gbuf = vec![T::zero(); d.c];
    for n in 0..d.n {
        let gs = gout.item_slice(n);
        let xs: Vec<Hwc<T>> = streams
            .iter()
            .map(|s| Hwc::from_planar(s.x.item_slice(n), d.c, plane))
            .collect();
        let mut dxs: Vec<Option<Hwc<T>>> = grads
            .iter()
            .map(|g| g.0.as_ref().map(|_| Hwc::zeros(d.c, plane)))
            .collect();
        for i in 0..d.h {
            for j in 0..d.w {
                let p = i * d.w + j;
                gather_logits(streams, n, p, &mut lg);
                softmax_into(&lg, &mut wt);
                gather_channels(gs, d.c, plane, p, &mut gbuf);
                let mut widx = 0;
                for (si, (s, g)) in streams.iter().zip(grads.iter_mut()).enumerate() {
                    let fl = s.flow.item_slice(n);
                    for k in 0..s.samples() {
                        let wk = wt[widx];
                        let (fdx, fdy) = (fl[2 * k * plane + p], fl[(2 * k + 1) * plane + p]);
                        let fp = Footprint::new(i, j, fdx, fdy, sx, sy, d.h, d.w);
                        let (dot, gx, gy) = contract(&gbuf, &fp, &xs[si]);
                        dots[widx] = dot;
                        if let Some(df) = g.1.as_mut() {
                            let fs = df.item_slice_mut(n);
                            fs[2 * k * plane + p] += wk * gx * sx;
                            fs[(2 * k + 1) * plane + p] += wk * gy * sy;
                        }
                        if let Some(dx) = dxs[si].as_mut() {
                            scatter(dx, wk, &gbuf, &fp);
                        }
                        widx += 1;
                    }
                }
                let mean: T = wt.iter().zip(&dots).map(|(&w, &v)| w * v).sum();
                let mut widx = 0;
                for (s, g) in streams.iter().zip(grads.iter_mut()) {
                    let k = s.samples();
                    if let Some(dl) = g.2.as_mut() {
                        let ls = dl.item_slice_mut(n);
                        for kk in 0..k {
                            ls[kk * plane + p] += wt[widx + kk] * (dots[widx + kk] - mean);
                        }
                    }
                    widx += k;
                }
            }
        }
        for (g, dx) in grads.iter_mut().zip(&dxs) {
            if let (Some(t), Some(h)) = (g.0.as_mut(), dx) {
                h.add_to_planar(t.item_slice_mut(n), plane);
            }
        }
    }
    Ok(grads)
}

/// Plain single-flow warp: `out(p) = x(p + o_p)` by bilinear interpolation.
pub fn bilinear_sample<T: Real>(x: &Tensor<T>, flow: &Tensor<T>) -> Result<Tensor<T>> {
    check_single_flow(x, flow)?;
    let d = x.dims();
    let plane = d.plane();
    let (sx, sy) = scales::<T>(d);
    let mut out = Tensor::zeros(d);
    let mut buf = vec![T::zero(); d.c];
    for n in 0..d.n {
        let xs = Hwc::from_planar(x.item_slice(n), d.c, plane);
        let fl = flow.item_slice(n);
        let os = out.item_slice_mut(n);
        for i in 0..d.h {
            for j in 0..d.w {
                let p = i * d.w + j;
                let fp = Footprint::new(i, j, fl[p], fl[plane + p], sx, sy, d.h, d.w);
                let [r0, r1, r2, r3] = xs.corners(&fp);
                let [w0, w1, w2, w3] = fp.w;
                for (c, b) in buf.iter_mut().enumerate() {
                    *b = w0 * r0[c] + w1 * r1[c] + w2 * r2[c] + w3 * r3[c];
                }
                scatter_channels(&buf, os, plane, p);
            }
        }
    }
    Ok(out)
}

fn check_single_flow<T: Real>(x: &Tensor<T>, flow: &Tensor<T>) -> Result<()> {
    let (d, fd) = (x.dims(), flow.dims());
    if fd.c != 2 || fd.n != d.n || fd.h != d.h || fd.w != d.w {
        return Err(Error::mismatch("bilinear_sample", d, fd));
    }
    Ok(())
}

/// Gradients of [`bilinear_sample`] with respect to `x` and `flow`.
pub fn bilinear_sample_backward<T: Real>(
    x: &Tensor<T>,
    flow: &Tensor<T>,
    gout: &Tensor<T>,
    need: [bool; 2],
) -> Result<(Option<Tensor<T>>, Option<Tensor<T>>)> {
    check_single_flow(x, flow)?;
    let d = x.dims();
    let plane = d.plane();
    let (sx, sy) = scales::<T>(d);
    let mut dx = need[0].then(|| Tensor::zeros(d));
    let mut dflow = need[1].then(|| Tensor::zeros(flow.dims()));
    let mut gbuf = vec![T::zero(); d.c];
    for n in 0..d.n {
        let xs = Hwc::from_planar(x.item_slice(n), d.c, plane);
        let mut dxh = dx.as_ref().map(|_| Hwc::zeros(d.c, plane));
        let fl = flow.item_slice(n);
        let gs = gout.item_slice(n);
        for i in 0..d.h {
            for j in 0..d.w {
                let p = i * d.w + j;
                let fp = Footprint::new(i, j, fl[p], fl[plane + p], sx, sy, d.h, d.w);
                gather_channels(gs, d.c, plane, p, &mut gbuf);
                if let Some(df) = dflow.as_mut() {
                    let (_, gx, gy) = contract(&gbuf, &fp, &xs);
                    let fs = df.item_slice_mut(n);
                    fs[p] += gx * sx;
                    fs[plane + p] += gy * sy;
                }
                if let Some(h) = dxh.as_mut() {
                    scatter(h, T::one(), &gbuf, &fp);
                }
            }
        }
        if let (Some(t), Some(h)) = (dx.as_mut(), dxh) {
            h.add_to_planar(t.item_slice_mut(n), plane);
        }
    }
    Ok((dx, dflow))
}

/// Deformable attention warping of one tensor.
pub fn daw_warp<T: Real>(x: &Tensor<T>, flow: &FlowField<T>, attn: &AttentionMaps<T>) -> Result<Tensor<T>> {
    attention_warp(&[Stream::new(x, flow.offsets(), attn.logits())])
}

/// Joint-softmax merge of the self-warped reference and cross-warped source.
pub fn merge_two_streams<T: Real>(
    x_ref: &Tensor<T>,
    x_src: &Tensor<T>,
    flow_ref: &FlowField<T>,
    flow_src: &FlowField<T>,
    attn_ref: &AttentionMaps<T>,
    attn_src: &AttentionMaps<T>,
) -> Result<Tensor<T>> {
    if flow_ref.samples() != flow_src.samples() {
        return Err(Error::shape(
            "merge_two_streams",
            format!("streams carry {} and {} samples", flow_ref.samples(), flow_src.samples()),
        ));
    }
    attention_warp(&[
        Stream::new(x_ref, flow_ref.offsets(), attn_ref.logits()),
        Stream::new(x_src, flow_src.offsets(), attn_src.logits()),
    ])
}

/// Normalized coordinate of index `i` along an axis of `size` pixels.
pub fn normalized_coord(i: f64, size: usize) -> f64 {
    if size <= 1 {
        0.0
    } else {
        2.0 * i / (size - 1) as f64 - 1.0
    }
}

/// Pixel displacement corresponding to a normalized offset.
pub fn offset_to_pixels(offset: f64, size: usize) -> f64 {
    offset * (size.max(1) - 1) as f64 / 2.0
}

/// Normalized offset corresponding to a pixel displacement.
pub fn pixels_to_offset(pixels: f64, size: usize) -> f64 {
    if size <= 1 {
        0.0
    } else {
        2.0 * pixels / (size - 1) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(dims: Dims, v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(dims, v.to_vec()).unwrap()
    }

    #[test]
    fn zero_flow_is_identity() {
        let x = Tensor::<f32>::from_fn(Dims::new(2, 3, 4, 5), |n, c, y, x| (n + 2 * c + 3 * y + 5 * x) as f32 * 0.1);
        let flow = Tensor::zeros(Dims::new(2, 2, 4, 5));
        assert_eq!(bilinear_sample(&x, &flow).unwrap(), x);
    }

    #[test]
    fn integer_displacement() {
        let x = t(Dims::new(1, 1, 1, 2), &[10.0, 20.0]);
        let flow = t(Dims::new(1, 2, 1, 2), &[2.0, 0.0, 0.0, 0.0]);
        let y = bilinear_sample(&x, &flow).unwrap();
        assert_eq!(y.data(), &[20.0, 20.0]);
    }

    #[test]
    fn cell_centre_averages_four_pixels() {
        let x = t(Dims::new(1, 1, 2, 2), &[1.0, 2.0, 3.0, 4.0]);
        let mut flow = Tensor::zeros(Dims::new(1, 2, 2, 2));
        flow.set(0, 0, 0, 0, 1.0);
        flow.set(0, 1, 0, 0, 1.0);
        let y = bilinear_sample(&x, &flow).unwrap();
        assert!((y.at(0, 0, 0, 0) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn out_of_bounds_reads_zero() {
        let x = t(Dims::new(1, 1, 1, 3), &[1.0, 1.0, 1.0]);
        // Pixel 2 moved half a pixel right: half of its mass falls off the edge.
        let flow = t(Dims::new(1, 2, 1, 3), &[0.0, 0.0, 0.5, 0.0, 0.0, 0.0]);
        let y = bilinear_sample(&x, &flow).unwrap();
        assert!((y.at(0, 0, 0, 2) - 0.5).abs() < 1e-12);
        let far = t(Dims::new(1, 2, 1, 3), &[9.0, 9.0, 9.0, 0.0, 0.0, 0.0]);
        assert!(bilinear_sample(&x, &far).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_samples_with_uneven_logits() {
        let x = t(Dims::new(1, 1, 2, 2), &[1.0, 2.0, 3.0, 4.0]);
        // At pixel (0,0): sample 0 stays, sample 1 jumps to (1,1).
        let mut flow = Tensor::zeros(Dims::new(1, 4, 2, 2));
        flow.set(0, 2, 0, 0, 2.0);
        flow.set(0, 3, 0, 0, 2.0);
        let mut logits = Tensor::zeros(Dims::new(1, 2, 2, 2));
        logits.set(0, 0, 0, 0, 3f64.ln());
        let y = daw_warp(&x, &FlowField::new(flow).unwrap(), &AttentionMaps::new(logits).unwrap()).unwrap();
        assert!((y.at(0, 0, 0, 0) - (0.75 * 1.0 + 0.25 * 4.0)).abs() < 1e-12);
    }

    #[test]
    fn flow_and_attention_sample_count_must_agree() {
        let x = Tensor::<f32>::zeros(Dims::new(1, 1, 2, 2));
        let flow = Tensor::zeros(Dims::new(1, 4, 2, 2));
        let logits = Tensor::zeros(Dims::new(1, 3, 2, 2));
        let err = attention_warp(&[Stream::new(&x, &flow, &logits)]).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
        assert!(FlowField::new(Tensor::<f32>::zeros(Dims::new(1, 3, 2, 2))).is_err());
    }

    #[test]
    fn equal_logits_zero_flow_merge_is_mean() {
        let a = Tensor::<f64>::from_fn(Dims::new(1, 2, 3, 3), |_, c, y, x| (c + y * x) as f64);
        let b = Tensor::<f64>::from_fn(Dims::new(1, 2, 3, 3), |_, c, y, x| (2 * c + y + x) as f64 * 0.5);
        let f = FlowField::zeros(1, 3, 3, 3);
        let l = AttentionMaps::new(Tensor::full(Dims::new(1, 3, 3, 3), 0.7)).unwrap();
        let m = merge_two_streams(&a, &b, &f, &f, &l, &l).unwrap();
        let want = a.zip_map(&b, |p, q| (p + q) / 2.0).unwrap();
        assert!(m.max_abs_diff(&want).unwrap() < 1e-12);
    }

    #[test]
    fn coordinate_helpers_roundtrip() {
        assert_eq!(normalized_coord(0.0, 5), -1.0);
        assert_eq!(normalized_coord(4.0, 5), 1.0);
        assert_eq!(offset_to_pixels(pixels_to_offset(1.5, 9), 9), 1.5);
        assert_eq!(normalized_coord(0.0, 1), 0.0);
    }
}
