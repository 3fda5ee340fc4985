//! 2-D convolution via im2col + GEMM.

use super::{Dims, Real, Tensor};
use crate::error::{Error, Result};

/// Upper bound on the im2col scratch buffer, in elements.
const COL_BUDGET: usize = 1 << 21;

#[derive(Clone, Copy, Debug)]
struct Geom {
    ic: usize,
    oc: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geom {
    fn new(x: Dims, w: Dims, stride: usize, pad: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::shape("conv2d", "stride must be >= 1"));
        }
        if w.c != x.c {
            return Err(Error::shape(
                "conv2d",
                format!("input {x} has {} channels but weight {w} expects {}", x.c, w.c),
            ));
        }
        let ph = x.h + 2 * pad;
        let pw = x.w + 2 * pad;
        if ph < w.h || pw < w.w {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {}x{} larger than padded input {ph}x{pw} (input {x})", w.h, w.w),
            ));
        }
        Ok(Geom {
            ic: x.c,
            oc: w.n,
            h: x.h,
            w: x.w,
            kh: w.h,
            kw: w.w,
            stride,
            pad,
            oh: (ph - w.h) / stride + 1,
            ow: (pw - w.w) / stride + 1,
        })
    }

    fn k(&self) -> usize {
        self.ic * self.kh * self.kw
    }

    fn rows_per_chunk(&self) -> usize {
        (COL_BUDGET / (self.k() * self.ow).max(1)).clamp(1, self.oh)
    }
}

/// Output spatial size of a convolution.
pub fn conv_out_size(size: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (size + 2 * pad - kernel) / stride + 1
}

/// Fills `col` (rows `k`, columns = pixels of output rows `oy0..oy1`).
/// Output columns `[lo, hi)` whose input column for kernel offset `kx` is in bounds.
fn valid_cols(g: &Geom, kx: usize) -> (usize, usize) {
    let lo = g.pad.saturating_sub(kx).div_ceil(g.stride).min(g.ow);
    let hi = if g.w + g.pad > kx {
        ((g.w - 1 + g.pad - kx) / g.stride + 1).min(g.ow)
    } else {
        0
    };
    (lo, hi.max(lo))
}

fn im2col<T: Real>(x: &[T], g: &Geom, oy0: usize, oy1: usize, col: &mut Vec<T>) {
    col.clear();
    let zero = T::zero();
    for c in 0..g.ic {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let (lo, hi) = valid_cols(g, kx);
                for oy in oy0..oy1 {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize || lo == hi {
                        col.resize(col.len() + g.ow, zero);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    col.resize(col.len() + lo, zero);
                    let ix0 = lo * g.stride + kx - g.pad;
                    if g.stride == 1 {
                        col.extend_from_slice(&src[ix0..ix0 + hi - lo]);
                    } else {
                        col.extend((0..hi - lo).map(|i| src[ix0 + i * g.stride]));
                    }
                    col.resize(col.len() + g.ow - hi, zero);
                }
            }
        }
    }
}

fn col2im<T: Real>(col: &[T], g: &Geom, oy0: usize, oy1: usize, dx: &mut [T]) {
    let len = (oy1 - oy0) * g.ow;
    for c in 0..g.ic {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let (lo, hi) = valid_cols(g, kx);
                if lo == hi {
                    continue;
                }
                let ix0 = lo * g.stride + kx - g.pad;
                let r = (c * g.kh + ky) * g.kw + kx;
                let src = &col[r * len..(r + 1) * len];
                for (ri, oy) in (oy0..oy1).enumerate() {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let srow = &src[ri * g.ow + lo..ri * g.ow + hi];
                    if g.stride == 1 {
                        for (d, &v) in dst[ix0..ix0 + hi - lo].iter_mut().zip(srow) {
                            *d += v;
                        }
                    } else {
                        for (i, &v) in srow.iter().enumerate() {
                            dst[ix0 + i * g.stride] += v;
                        }
                    }
                }
            }
        }
    }
}

/// `y = conv(x, weight) + bias` with weight dims `(out, in, kh, kw)`.
pub fn conv2d_forward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = Geom::new(x.dims(), weight.dims(), stride, pad)?;
    if let Some(b) = bias {
        if b.len() != g.oc {
            return Err(Error::shape(
                "conv2d",
                format!("bias {} does not match {} output channels", b.dims(), g.oc),
            ));
        }
    }
    let n = x.dims().n;
    let out_dims = Dims::new(n, g.oc, g.oh, g.ow);
    let mut out: Tensor<T> = Tensor::zeros(out_dims);
    let k = g.k();
    let rows = g.rows_per_chunk();
    let mut col = Vec::with_capacity(k * rows * g.ow);
    let opix = g.oh * g.ow;
    for b in 0..n {
        let xs = x.item_slice(b);
        let ys = out.item_slice_mut(b);
        let mut oy0 = 0;
        while oy0 < g.oh {
            let oy1 = (oy0 + rows).min(g.oh);
            let len = (oy1 - oy0) * g.ow;
            im2col(xs, &g, oy0, oy1, &mut col);
            // SAFETY: extents follow from the geometry computed above.
            unsafe {
                T::gemm(
                    g.oc,
                    k,
                    len,
                    T::one(),
                    weight.data().as_ptr(),
                    k as isize,
                    1,
                    col.as_ptr(),
                    len as isize,
                    1,
                    T::zero(),
                    ys.as_mut_ptr().add(oy0 * g.ow),
                    opix as isize,
                    1,
                );
            }
            oy0 = oy1;
        }
        if let Some(bias) = bias {
            for (o, &bv) in bias.data().iter().enumerate() {
                ys[o * opix..(o + 1) * opix].iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    Ok(out)
}

pub struct ConvGrads<T> {
    pub dx: Option<Tensor<T>>,
    pub dw: Option<Tensor<T>>,
    pub db: Option<Tensor<T>>,
}

/// Gradients of [`conv2d_forward`] given the output gradient.
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    gout: &Tensor<T>,
    stride: usize,
    pad: usize,
    need: [bool; 3],
) -> Result<ConvGrads<T>> {
    let g = Geom::new(x.dims(), weight.dims(), stride, pad)?;
    let n = x.dims().n;
    let [need_dx, need_dw, need_db] = need;
    let k = g.k();
    let opix = g.oh * g.ow;
    let rows = g.rows_per_chunk();

    let mut dx = need_dx.then(|| Tensor::zeros(x.dims()));
    let mut dw = need_dw.then(|| Tensor::zeros(weight.dims()));
    let db = need_db.then(|| {
        let mut db = Tensor::zeros(Dims::new(1, g.oc, 1, 1));
        for b in 0..n {
            let gs = gout.item_slice(b);
            for (o, acc) in db.data_mut().iter_mut().enumerate() {
                *acc += gs[o * opix..(o + 1) * opix].iter().copied().sum::<T>();
            }
        }
        db
    });

    if need_dx || need_dw {
        let mut col = Vec::with_capacity(k * rows * g.ow);
        let mut dcol = if need_dx {
            vec![T::zero(); k * rows * g.ow]
        } else {
            Vec::new()
        };
        for b in 0..n {
            let gs = gout.item_slice(b);
            let mut oy0 = 0;
            while oy0 < g.oh {
                let oy1 = (oy0 + rows).min(g.oh);
                let len = (oy1 - oy0) * g.ow;
                if let Some(dw) = dw.as_mut() {
                    im2col(x.item_slice(b), &g, oy0, oy1, &mut col);
                    // SAFETY: dw is oc x k, gout chunk is oc x len (row stride opix),
                    // col^T is len x k.
                    unsafe {
                        T::gemm(
                            g.oc,
                            len,
                            k,
                            T::one(),
                            gs.as_ptr().add(oy0 * g.ow),
                            opix as isize,
                            1,
                            col.as_ptr(),
                            1,
                            len as isize,
                            T::one(),
                            dw.data_mut().as_mut_ptr(),
                            k as isize,
                            1,
                        );
                    }
                }
                if let Some(dx) = dx.as_mut() {
                    // SAFETY: weight^T is k x oc, gout chunk is oc x len, dcol is k x len.
                    unsafe {
                        T::gemm(
                            k,
                            g.oc,
                            len,
                            T::one(),
                            weight.data().as_ptr(),
                            1,
                            k as isize,
                            gs.as_ptr().add(oy0 * g.ow),
                            opix as isize,
                            1,
                            T::zero(),
                            dcol.as_mut_ptr(),
                            len as isize,
                            1,
                        );
                    }
                    col2im(&dcol[..k * len], &g, oy0, oy1, dx.item_slice_mut(b));
                }
                oy0 = oy1;
            }
        }
    }
    Ok(ConvGrads { dx, dw, db })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct seven-loop convolution.
    fn naive(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], stride: usize, pad: usize) -> Tensor<f64> {
        let (xd, wd) = (x.dims(), w.dims());
        let oh = conv_out_size(xd.h, wd.h, stride, pad);
        let ow = conv_out_size(xd.w, wd.w, stride, pad);
        Tensor::from_fn(Dims::new(xd.n, wd.n, oh, ow), |n, o, oy, ox| {
            let mut acc = b[o];
            for c in 0..xd.c {
                for ky in 0..wd.h {
                    for kx in 0..wd.w {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < xd.h && (ix as usize) < xd.w {
                            acc += x.at(n, c, iy as usize, ix as usize) * w.at(o, c, ky, kx);
                        }
                    }
                }
            }
            acc
        })
    }

    fn pseudo(dims: Dims, seed: u64) -> Tensor<f64> {
        let mut s = seed;
        Tensor::from_fn(dims, |_, _, _, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 33) as f64 / (1u64 << 31) as f64) - 0.5
        })
    }

    #[test]
    fn matches_direct_convolution() {
        for &(stride, pad, k) in &[(1, 0, 1), (1, 1, 3), (2, 1, 3), (1, 3, 7), (2, 0, 2), (3, 2, 5)] {
            let x = pseudo(Dims::new(2, 3, 9, 7), 1 + k as u64);
            let w = pseudo(Dims::new(4, 3, k, k), 7);
            let b = [0.1, -0.2, 0.3, 0.0];
            let bt = Tensor::from_vec(Dims::new(1, 4, 1, 1), b.to_vec()).unwrap();
            let fast = conv2d_forward(&x, &w, Some(&bt), stride, pad).unwrap();
            let slow = naive(&x, &w, &b, stride, pad);
            assert_eq!(fast.dims(), slow.dims());
            assert!(fast.max_abs_diff(&slow).unwrap() < 1e-12, "stride {stride} pad {pad} k {k}");
        }
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        // <conv(x), g> = <x, conv^T(g)> and <conv_w(w), g> = <w, dW>.
        let x = pseudo(Dims::new(2, 3, 6, 5), 3);
        let w = pseudo(Dims::new(2, 3, 3, 3), 4);
        let y = conv2d_forward(&x, &w, None, 2, 1).unwrap();
        let gout = pseudo(y.dims(), 5);
        let grads = conv2d_backward(&x, &w, &gout, 2, 1, [true, true, true]).unwrap();
        let dot = |a: &Tensor<f64>, b: &Tensor<f64>| -> f64 {
            a.data().iter().zip(b.data()).map(|(p, q)| p * q).sum()
        };
        let lhs = dot(&y, &gout);
        assert!((lhs - dot(&x, grads.dx.as_ref().unwrap())).abs() < 1e-10);
        assert!((lhs - dot(&w, grads.dw.as_ref().unwrap())).abs() < 1e-10);
        assert!((grads.db.unwrap().sum() - gout.sum()).abs() < 1e-12);
    }

    #[test]
    fn chunked_im2col_matches_unchunked() {
        // Large enough that rows_per_chunk < oh.
        let x = pseudo(Dims::new(1, 64, 40, 40), 9);
        let w = pseudo(Dims::new(2, 64, 7, 7), 10);
        let g = Geom::new(x.dims(), w.dims(), 1, 3).unwrap();
        assert!(g.rows_per_chunk() < g.oh);
        let fast = conv2d_forward(&x, &w, None, 1, 3).unwrap();
        let slow = naive(&x, &w, &[0.0, 0.0], 1, 3);
        assert!(fast.max_abs_diff(&slow).unwrap() < 1e-10);
    }

    #[test]
    fn channel_mismatch_names_both_shapes() {
        let x = Tensor::<f32>::zeros(Dims::new(1, 2, 4, 4));
        let w = Tensor::<f32>::zeros(Dims::new(1, 3, 3, 3));
        let msg = conv2d_forward(&x, &w, None, 1, 1).unwrap_err().to_string();
        assert!(msg.contains("1x2x4x4") && msg.contains("1x3x3x3"), "{msg}");
    }
}
