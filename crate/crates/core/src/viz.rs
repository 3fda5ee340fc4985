//! Colour-wheel rendering of flow fields and grayscale attention tiles.
//!
//! Hue encodes direction (0° points right, 90° down, in image coordinates)
//! and saturation the magnitude relative to the largest displacement, so a
//! zero flow renders white.

use crate::error::{Error, Result};
use crate::tensor::{Dims, Real, Tensor};
use crate::warp::offset_to_pixels;

/// White gap between tiles, in pixels.
pub const GUTTER: usize = 2;

/// RGB in `[0, 1]` of a pixel displacement; `max_mag` maps to full saturation.
pub fn flow_color(dx: f64, dy: f64, max_mag: f64) -> [f64; 3] {
    let mag = dx.hypot(dy);
    if mag == 0.0 || max_mag <= 0.0 {
        return [1.0; 3];
    }
    let hue = dy.atan2(dx).to_degrees().rem_euclid(360.0);
    hsv_to_rgb(hue, (mag / max_mag).min(1.0), 1.0)
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Hue in degrees and saturation of an RGB colour.
pub fn rgb_to_hue_sat(rgb: [f64; 3]) -> (f64, f64) {
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    if d == 0.0 {
        return (0.0, 0.0);
    }
    let h = if max == r {
        60.0 * ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / d + 2.0)
    } else {
        60.0 * ((r - g) / d + 4.0)
    };
    (h, if max == 0.0 { 0.0 } else { d / max })
}

/// Largest per-pixel displacement over all samples, in pixels.
pub fn max_displacement<T: Real>(flow: &Tensor<T>) -> Result<f64> {
    let d = check_flow(flow)?;
    let mut best = 0.0f64;
    for n in 0..d.n {
        for k in 0..d.c / 2 {
            for y in 0..d.h {
                for x in 0..d.w {
                    let dx = offset_to_pixels(flow.at(n, 2 * k, y, x).to_f64(), d.w);
                    let dy = offset_to_pixels(flow.at(n, 2 * k + 1, y, x).to_f64(), d.h);
                    best = best.max(dx.hypot(dy));
                }
            }
        }
    }
    Ok(best)
}

fn check_flow<T: Real>(flow: &Tensor<T>) -> Result<Dims> {
    let d = flow.dims();
    if d.c == 0 || !d.c.is_multiple_of(2) {
        return Err(Error::Format(format!(
            "flow tensor needs an even, nonzero channel count, got {d}"
        )));
    }
    Ok(d)
}

/// Places `rows x cols` tiles of `h x w` on a white canvas.
fn canvas(rows: usize, cols: usize, h: usize, w: usize) -> Tensor<f64> {
    let dims = Dims::new(
        1,
        3,
        rows * h + (rows - 1) * GUTTER,
        cols * w + (cols - 1) * GUTTER,
    );
    Tensor::full(dims, 1.0)
}

fn put(out: &mut Tensor<f64>, row: usize, col: usize, h: usize, w: usize, px: impl Fn(usize, usize) -> [f64; 3]) {
    let d = out.dims();
    let plane = d.plane();
    let (oy, ox) = (row * (h + GUTTER), col * (w + GUTTER));
    let s = out.item_slice_mut(0);
    for y in 0..h {
        for x in 0..w {
            let rgb = px(y, x);
            let i = (oy + y) * d.w + ox + x;
            for (c, v) in rgb.into_iter().enumerate() {
                s[c * plane + i] = v;
            }
        }
    }
}

/// Renders every sample of every batch item: one row per item, one colour
/// tile per flow sample, followed by the softmax weights of `logits` as
/// grayscale tiles when given. Saturation is shared across the whole image.
pub fn render_flow<T: Real>(flow: &Tensor<T>, logits: Option<&Tensor<T>>) -> Result<Tensor<f64>> {
    let d = check_flow(flow)?;
    let k = d.c / 2;
    if let Some(a) = logits {
        let ad = a.dims();
        if (ad.n, ad.c, ad.h, ad.w) != (d.n, k, d.h, d.w) {
            return Err(Error::Format(format!(
                "attention tensor {ad} does not match flow {d} ({k} samples)"
            )));
        }
    }
    let max_mag = max_displacement(flow)?;
    let cols = if logits.is_some() { 2 * k } else { k };
    let mut out = canvas(d.n, cols, d.h, d.w);
    for n in 0..d.n {
        for s in 0..k {
            put(&mut out, n, s, d.h, d.w, |y, x| {
                let dx = offset_to_pixels(flow.at(n, 2 * s, y, x).to_f64(), d.w);
                let dy = offset_to_pixels(flow.at(n, 2 * s + 1, y, x).to_f64(), d.h);
                flow_color(dx, dy, max_mag)
            });
        }
        if let Some(a) = logits {
            for s in 0..k {
                put(&mut out, n, k + s, d.h, d.w, |y, x| {
                    let l: Vec<f64> = (0..k).map(|j| a.at(n, j, y, x).to_f64()).collect();
                    let m = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = l.iter().map(|v| (v - m).exp()).sum();
                    [(l[s] - m).exp() / z; 3]
                });
            }
        }
    }
    Ok(out)
}

/// Renders a standalone colour-wheel legend of `size x size` pixels.
pub fn color_wheel(size: usize) -> Tensor<f64> {
    let r = (size as f64 - 1.0) / 2.0;
    Tensor::from_fn(Dims::new(1, 3, size, size), |_, c, y, x| {
        let (dx, dy) = (x as f64 - r, y as f64 - r);
        if dx.hypot(dy) > r {
            1.0
        } else {
            flow_color(dx, dy, r)[c]
        }
    })
}
