//! Bilinear resizing (align-corners) and area downsampling.

use super::{Dims, Real, Tensor};
use crate::error::{Error, Result};

/// Per-output-index source cell `(i0, i1, frac)` for an align-corners resize.
fn axis_table<T: Real>(src: usize, dst: usize) -> Vec<(usize, usize, T)> {
    (0..dst)
        .map(|o| {
            if src == 1 || dst == 1 {
                return (0, 0, T::zero());
            }
            // Exact rational position o * (src-1) / (dst-1).
            let num = o * (src - 1);
            let den = dst - 1;
            let i0 = num / den;
            let frac = T::of((num % den) as f64 / den as f64);
            (i0, (i0 + 1).min(src - 1), frac)
        })
        .collect()
}

/// Bilinearly resizes every plane to `oh x ow`. Corner pixels map onto corner
/// pixels, which keeps normalized coordinates consistent across scales.
pub fn resize_bilinear<T: Real>(x: &Tensor<T>, oh: usize, ow: usize) -> Tensor<T> {
    let d = x.dims();
    let ty = axis_table::<T>(d.h, oh);
    let tx = axis_table::<T>(d.w, ow);
    let mut out = Tensor::zeros(Dims::new(d.n, d.c, oh, ow));
    for n in 0..d.n {
        for c in 0..d.c {
            let src = x.plane(n, c);
            let dst = out.plane_mut(n, c);
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                let r0 = &src[y0 * d.w..(y0 + 1) * d.w];
                let r1 = &src[y1 * d.w..(y1 + 1) * d.w];
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let top = r0[x0] + fx * (r0[x1] - r0[x0]);
                    let bot = r1[x0] + fx * (r1[x1] - r1[x0]);
                    dst[oy * ow + ox] = top + fy * (bot - top);
                }
            }
        }
    }
    out
}

/// Adjoint of [`resize_bilinear`].
pub fn resize_bilinear_backward<T: Real>(gout: &Tensor<T>, input: Dims) -> Tensor<T> {
    let g = gout.dims();
    let ty = axis_table::<T>(input.h, g.h);
    let tx = axis_table::<T>(input.w, g.w);
    let mut dx = Tensor::zeros(input);
    let one = T::one();
    for n in 0..g.n {
        for c in 0..g.c {
            let src = gout.plane(n, c);
            let dst = dx.plane_mut(n, c);
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let gv = src[oy * g.w + ox];
                    let top = gv * (one - fy);
                    let bot = gv * fy;
                    dst[y0 * input.w + x0] += top * (one - fx);
                    dst[y0 * input.w + x1] += top * fx;
                    dst[y1 * input.w + x0] += bot * (one - fx);
                    dst[y1 * input.w + x1] += bot * fx;
                }
            }
        }
    }
    dx
}

/// 2x bilinear upsampling.
pub fn upsample2x<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let d = x.dims();
    resize_bilinear(x, 2 * d.h, 2 * d.w)
}

/// Mean over non-overlapping `factor x factor` blocks.
pub fn area_downsample<T: Real>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let d = x.dims();
    if factor == 0 || !d.h.is_multiple_of(factor) || !d.w.is_multiple_of(factor) {
        return Err(Error::shape(
            "area_downsample",
            format!("{d} not divisible by factor {factor}"),
        ));
    }
    if factor == 1 {
        return Ok(x.clone());
    }
    let (oh, ow) = (d.h / factor, d.w / factor);
    let scale = T::one() / T::of((factor * factor) as f64);
    let mut out = Tensor::zeros(Dims::new(d.n, d.c, oh, ow));
    for n in 0..d.n {
        for c in 0..d.c {
            let src = x.plane(n, c);
            let dst = out.plane_mut(n, c);
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = T::zero();
                    for y in oy * factor..(oy + 1) * factor {
                        for xx in ox * factor..(ox + 1) * factor {
                            acc += src[y * d.w + xx];
                        }
                    }
                    dst[oy * ow + ox] = acc * scale;
                }
            }
        }
    }
    Ok(out)
}

pub fn area_downsample_backward<T: Real>(gout: &Tensor<T>, factor: usize, input: Dims) -> Tensor<T> {
    let scale = T::one() / T::of((factor * factor) as f64);
    debug_assert_eq!(gout.dims().h * factor, input.h);
    Tensor::from_fn(input, |n, c, y, x| gout.at(n, c, y / factor, x / factor) * scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upsample_constant_and_scalar() {
        let x = Tensor::<f32>::full(Dims::new(1, 1, 1, 1), 5.0);
        let y = upsample2x(&x);
        assert_eq!(y.dims(), Dims::new(1, 1, 2, 2));
        assert!(y.data().iter().all(|&v| v == 5.0));

        let x = Tensor::<f32>::full(Dims::new(1, 2, 4, 3), 0.3);
        assert!(upsample2x(&x).data().iter().all(|&v| v == 0.3));
    }

    #[test]
    fn upsample_row_thirds() {
        let x = Tensor::<f64>::from_vec(Dims::new(1, 1, 1, 2), vec![0.0, 1.0]).unwrap();
        let y = upsample2x(&x);
        let expect = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        for (a, b) in y.data()[..4].iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{:?}", y.data());
        }
    }

    #[test]
    fn resize_backward_is_adjoint() {
        let x = Tensor::<f64>::from_fn(Dims::new(2, 2, 3, 4), |n, c, y, x| {
            ((n * 7 + c * 5 + y * 3 + x) % 11) as f64 - 5.0
        });
        let y = resize_bilinear(&x, 7, 5);
        let g = Tensor::<f64>::from_fn(y.dims(), |n, c, y, x| ((n + c * 3 + y * 2 + x * 5) % 7) as f64);
        let dx = resize_bilinear_backward(&g, x.dims());
        let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(dx.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn area_downsample_means_blocks() {
        let x = Tensor::<f32>::from_vec(Dims::new(1, 1, 2, 4), vec![1., 2., 3., 4., 5., 6., 7., 8.]).unwrap();
        let y = area_downsample(&x, 2).unwrap();
        assert_eq!(y.data(), &[3.5, 5.5]);
        assert!(area_downsample(&x, 3).is_err());
    }
}
