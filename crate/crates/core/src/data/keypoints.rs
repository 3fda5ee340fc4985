//! Pose keypoints: 18-point OpenPose ordering, heatmap rendering, upper-body masking.

use serde_json::Value;

use crate::error::{Error, Result};
use crate::tensor::{Dims, Real, Tensor};

pub const NUM_KEYPOINTS: usize = 18;

pub const NOSE: usize = 0;
pub const NECK: usize = 1;
pub const R_SHOULDER: usize = 2;
pub const R_ELBOW: usize = 3;
pub const R_WRIST: usize = 4;
pub const L_SHOULDER: usize = 5;
pub const L_ELBOW: usize = 6;
pub const L_WRIST: usize = 7;
pub const R_HIP: usize = 8;
pub const R_KNEE: usize = 9;
pub const R_ANKLE: usize = 10;
pub const L_HIP: usize = 11;
pub const L_KNEE: usize = 12;
pub const L_ANKLE: usize = 13;
pub const R_EYE: usize = 14;
pub const L_EYE: usize = 15;
pub const R_EAR: usize = 16;
pub const L_EAR: usize = 17;

/// Keypoints whose bounding box defines the masked upper body.
pub const TORSO: [usize; 4] = [R_SHOULDER, L_SHOULDER, R_HIP, L_HIP];

/// Pixel position (pixel centers at integer coordinates) and confidence.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
}

impl Keypoint {
    pub fn visible(&self) -> bool {
        self.confidence > 0.0
    }
}

/// Parses a keypoint file: either 18 `[x, y, c]` triples or a flat array of 54 numbers.
pub fn parse_keypoints(text: &str) -> Result<Vec<Keypoint>> {
    let v: Value = serde_json::from_str(text)?;
    let bad = |m: String| Error::Data(format!("keypoint file: {m}"));
    let arr = v.as_array().ok_or_else(|| bad("expected a JSON array".into()))?;
    let num = |v: &Value| v.as_f64().ok_or_else(|| bad(format!("non-numeric value {v}")));
    let kps = if arr.len() == 3 * NUM_KEYPOINTS && arr.iter().all(Value::is_number) {
        arr.chunks(3)
            .map(|c| {
                Ok(Keypoint {
                    x: num(&c[0])?,
                    y: num(&c[1])?,
                    confidence: num(&c[2])?,
                })
            })
            .collect::<Result<Vec<_>>>()?
    } else if arr.len() == NUM_KEYPOINTS {
        arr.iter()
            .map(|t| match t.as_array().map(Vec::as_slice) {
                Some([x, y, c]) => Ok(Keypoint {
                    x: num(x)?,
                    y: num(y)?,
                    confidence: num(c)?,
                }),
                _ => Err(bad(format!("expected an [x, y, confidence] triple, got {t}"))),
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        return Err(bad(format!("expected {NUM_KEYPOINTS} triples, got {} entries", arr.len())));
    };
    if kps.iter().any(|k| !(k.x.is_finite() && k.y.is_finite() && k.confidence.is_finite())) {
        return Err(bad("non-finite coordinate".into()));
    }
    Ok(kps)
}

pub fn keypoints_to_json(kps: &[Keypoint]) -> String {
    let triples: Vec<[f64; 3]> = kps.iter().map(|k| [k.x, k.y, k.confidence]).collect();
    serde_json::to_string(&triples).expect("numbers serialize")
}

/// One Gaussian channel per keypoint with peak 1 at the keypoint; invisible
/// keypoints give all-zero channels. Output is `(1, len, h, w)`.
pub fn render_heatmaps<T: Real>(kps: &[Keypoint], h: usize, w: usize, sigma: f64) -> Result<Tensor<T>> {
    if !(sigma > 0.0) {
        return Err(Error::Config(format!("heatmap sigma must be positive, got {sigma}")));
    }
    let inv = 1.0 / (2.0 * sigma * sigma);
    Ok(Tensor::from_fn(Dims::new(1, kps.len(), h, w), |_, c, y, x| {
        let k = &kps[c];
        if !k.visible() {
            return T::zero();
        }
        let (dx, dy) = (x as f64 - k.x, y as f64 - k.y);
        T::of((-(dx * dx + dy * dy) * inv).exp())
    }))
}

/// Inclusive pixel box.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaskBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl MaskBox {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..=self.x1).contains(&x) && (self.y0..=self.y1).contains(&y)
    }

    pub fn area(&self) -> usize {
        (self.x1 - self.x0 + 1) * (self.y1 - self.y0 + 1)
    }
}

/// Fill value of masked pixels.
pub const MASK_FILL: f64 = 0.5;

/// Box around the torso keypoints dilated by `margin` pixels, clipped to the image.
pub fn torso_box(kps: &[Keypoint], h: usize, w: usize, margin: f64) -> Result<MaskBox> {
    if kps.len() != NUM_KEYPOINTS {
        return Err(Error::Data(format!("expected {NUM_KEYPOINTS} keypoints, got {}", kps.len())));
    }
    let torso: Vec<&Keypoint> = TORSO.iter().map(|&i| &kps[i]).collect();
    if let Some(i) = TORSO.iter().find(|&&i| !kps[i].visible()) {
        return Err(Error::Data(format!("torso keypoint {i} is missing")));
    }
    let fold = |f: fn(f64, f64) -> f64, init: f64, g: fn(&Keypoint) -> f64| torso.iter().map(|k| g(k)).fold(init, f);
    let xmin = fold(f64::min, f64::INFINITY, |k| k.x) - margin;
    let xmax = fold(f64::max, f64::NEG_INFINITY, |k| k.x) + margin;
    let ymin = fold(f64::min, f64::INFINITY, |k| k.y) - margin;
    let ymax = fold(f64::max, f64::NEG_INFINITY, |k| k.y) + margin;
    let clip = |v: f64, n: usize| v.clamp(0.0, (n - 1) as f64) as usize;
    if xmax < 0.0 || ymax < 0.0 || xmin > (w - 1) as f64 || ymin > (h - 1) as f64 {
        return Err(Error::Data("torso lies outside the image".into()));
    }
    Ok(MaskBox {
        x0: clip(xmin.floor(), w),
        y0: clip(ymin.floor(), h),
        x1: clip(xmax.ceil(), w),
        y1: clip(ymax.ceil(), h),
    })
}

/// Fills the torso box of every channel with [`MASK_FILL`].
pub fn mask_upper_body<T: Real>(person: &Tensor<T>, kps: &[Keypoint], margin: f64) -> Result<(Tensor<T>, MaskBox)> {
    let d = person.dims();
    let b = torso_box(kps, d.h, d.w, margin)?;
    let fill = T::of(MASK_FILL);
    let masked = Tensor::from_fn(d, |n, c, y, x| if b.contains(x, y) { fill } else { person.at(n, c, y, x) });
    Ok((masked, b))
}
