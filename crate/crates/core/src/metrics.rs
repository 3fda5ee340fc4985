//! Paired image quality metrics.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// PSNR reported for identical images in aggregates.
pub const PSNR_CAP: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_pair<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::mismatch(op, a.dims(), b.dims()));
    }
    Ok(())
}

/// PSNR of item `n`; `+inf` for identical images.
pub fn psnr<T: Real>(a: &Tensor<T>, b: &Tensor<T>, n: usize, max_value: f64) -> Result<f64> {
    check_pair("psnr", a, b)?;
    let (x, y) = (a.item_slice(n), b.item_slice(n));
    let mse = x
        .iter()
        .zip(y)
        .map(|(&p, &q)| (Real::to_f64(p) - Real::to_f64(q)).powi(2))
        .sum::<f64>()
        / x.len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (max_value * max_value / mse).log10()
    })
}

fn luma<T: Real>(t: &Tensor<T>, n: usize) -> Vec<f64> {
    let d = t.dims();
    let plane = d.plane();
    let s = t.item_slice(n);
    match d.c {
        1 => s.iter().map(|v| Real::to_f64(*v)).collect(),
        3 => (0..plane)
            .map(|i| 0.299 * Real::to_f64(s[i]) + 0.587 * Real::to_f64(s[plane + i]) + 0.114 * Real::to_f64(s[2 * plane + i]))
            .collect(),
        _ => s[..plane].iter().map(|v| Real::to_f64(*v)).collect(),
    }
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut g = [0.0; SSIM_WINDOW];
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.map(|v| v / s)
}

/// Separable valid-mode filtering of an `h x w` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x0 in 0..ow {
            rows[y * ow + x0] = (0..SSIM_WINDOW).map(|k| g[k] * x[y * w + x0 + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y0 in 0..oh {
        for x0 in 0..ow {
            out[y0 * ow + x0] = (0..SSIM_WINDOW).map(|k| g[k] * rows[(y0 + k) * ow + x0]).sum();
        }
    }
    out
}

/// Mean SSIM over valid 11x11 Gaussian windows of the luma of item `n`,
/// for images with values in `[0, 1]`.
pub fn ssim<T: Real>(a: &Tensor<T>, b: &Tensor<T>, n: usize) -> Result<f64> {
    check_pair("ssim", a, b)?;
    let d = a.dims();
    if d.h < SSIM_WINDOW || d.w < SSIM_WINDOW {
        return Err(Error::shape(
            "ssim",
            format!("image {}x{} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window", d.h, d.w),
        ));
    }
    let (x, y) = (luma(a, n), luma(b, n));
    let g = gaussian_window();
    let f = |v: &[f64]| filter_valid(v, d.h, d.w, &g);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
    let (mx, my, sxx, syy, sxy) = (f(&x), f(&y), f(&xx), f(&yy), f(&xy));
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cxy = sxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / mx.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub ssim: f64,
    /// `None` when the images are identical.
    pub psnr: Option<f64>,
}

impl ImageMetrics {
    pub fn psnr_capped(&self) -> f64 {
        self.psnr.map_or(PSNR_CAP, |p| p.min(PSNR_CAP))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub images: Vec<ImageMetrics>,
    pub mean_ssim: f64,
    pub mean_psnr: f64,
    pub count: usize,
}

impl MetricReport {
    pub fn push_batch<T: Real>(&mut self, out: &Tensor<T>, target: &Tensor<T>) -> Result<()> {
        for n in 0..out.dims().n {
            let p = psnr(out, target, n, 1.0)?;
            self.images.push(ImageMetrics {
                ssim: ssim(out, target, n)?,
                psnr: p.is_finite().then_some(p),
            });
        }
        self.finish();
        Ok(())
    }

    fn finish(&mut self) {
        self.count = self.images.len();
        let n = self.count.max(1) as f64;
        self.mean_ssim = self.images.iter().map(|m| m.ssim).sum::<f64>() / n;
        self.mean_psnr = self.images.iter().map(ImageMetrics::psnr_capped).sum::<f64>() / n;
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("image      ssim     psnr\n");
        for (i, m) in self.images.iter().enumerate() {
            let p = m.psnr.map_or("inf".to_string(), |p| format!("{p:.3}"));
            let _ = writeln!(s, "{i:>5}  {:>8.5} {:>8}", m.ssim, p);
        }
        let _ = writeln!(s, " mean  {:>8.5} {:>8.3}  (n={})", self.mean_ssim, self.mean_psnr, self.count);
        s
    }

    pub fn write(&self, json: &Path, text: &Path) -> Result<()> {
        std::fs::write(json, serde_json::to_string_pretty(self)?)?;
        std::fs::write(text, self.to_text())?;
        Ok(())
    }
}
