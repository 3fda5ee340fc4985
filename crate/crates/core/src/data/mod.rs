//! Training data: the procedural generator, directory datasets and batching.

pub mod image_io;
pub mod keypoints;
pub mod manifest;
pub mod synth;

use std::path::Path;

pub use image_io::{load_image, save_image};
pub use keypoints::{mask_upper_body, parse_keypoints, render_heatmaps, Keypoint, MaskBox};
pub use manifest::{load_manifest, DatasetManifest, LoadOptions, ManifestEntry, ValidationReport};
pub use synth::{generate_pair, Difficulty, SynthOptions, SyntheticDataset, SyntheticPair, TextureKind};

use crate::error::{Error, Result};
use crate::model::TryOnBatch;
use crate::tensor::Tensor;

/// Default keypoint heatmap spread, in pixels.
pub const HEATMAP_SIGMA: f64 = 3.0;

/// One training or evaluation example, each image `(1, 3, h, w)`.
#[derive(Clone, Debug)]
pub struct Sample {
    pub garment: Tensor,
    pub person_masked: Tensor,
    pub keypoints: Vec<Keypoint>,
    pub target: Tensor,
}

/// Stacks samples into network inputs and the target batch.
pub fn make_batch(samples: &[&Sample], sigma: f64) -> Result<(TryOnBatch, Tensor)> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Contract("make_batch needs at least one sample".into()))?;
    let d = first.target.dims();
    let heat = samples
        .iter()
        .map(|s| render_heatmaps(&s.keypoints, d.h, d.w, sigma))
        .collect::<Result<Vec<Tensor>>>()?;
    let stack = |f: fn(&Sample) -> &Tensor| Tensor::stack(&samples.iter().map(|s| f(s)).collect::<Vec<_>>());
    Ok((
        TryOnBatch {
            person_masked: stack(|s| &s.person_masked)?,
            keypoints: Tensor::stack(&heat.iter().collect::<Vec<_>>())?,
            garment: stack(|s| &s.garment)?,
        },
        stack(|s| &s.target)?,
    ))
}

/// Writes a sample in the directory layout read by [`load_manifest`].
pub fn write_sample(root: &Path, stem: &str, s: &Sample) -> Result<()> {
    for sub in ["image", "cloth", "pose"] {
        std::fs::create_dir_all(root.join(sub))?;
    }
    save_image(&s.target, 0, &root.join("image").join(format!("{stem}.png")))?;
    save_image(&s.garment, 0, &root.join("cloth").join(format!("{stem}.png")))?;
    std::fs::write(
        root.join("pose").join(format!("{stem}.json")),
        keypoints::keypoints_to_json(&s.keypoints),
    )?;
    Ok(())
}
