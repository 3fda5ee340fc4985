//! Directory datasets laid out as `image/`, `cloth/` and `pose/`.
//!
//! For every `image/<stem>.png` the loader expects `cloth/<stem>.png` and
//! `pose/<stem>.json`. Entries with missing or unreadable files are left out
//! and listed in the [`ValidationReport`].

use std::fs;
use std::path::{Path, PathBuf};

use super::image_io::load_image;
use super::keypoints::{mask_upper_body, parse_keypoints};
use super::Sample;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub stem: String,
    /// Paths relative to the root.
    pub person: PathBuf,
    pub garment: PathBuf,
    pub keypoints: PathBuf,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    /// `(stem, reason)` of excluded entries.
    pub excluded: Vec<(String, String)>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.excluded.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub split: String,
    pub entries: Vec<ManifestEntry>,
    pub report: ValidationReport,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoadOptions {
    /// Abort on the first invalid entry instead of excluding it.
    pub strict: bool,
    /// Required `(h, w)` of every image, if any.
    pub dims: Option<(usize, usize)>,
    /// Mask dilation in pixels.
    pub mask_margin: f64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            strict: false,
            dims: None,
            mask_margin: 3.0,
        }
    }
}

fn stems(dir: &Path) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir)? {
        let p = e?.path();
        if p.extension().and_then(|e| e.to_str()).map(|e| e.eq_ignore_ascii_case("png")) == Some(true) {
            if let Some(s) = p.file_stem().and_then(|s| s.to_str()) {
                out.push(s.to_string());
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Discovers and validates entries under `root`.
pub fn load_manifest(root: &Path, split: &str, opts: &LoadOptions) -> Result<DatasetManifest> {
    for sub in ["image", "cloth", "pose"] {
        if !root.join(sub).is_dir() {
            return Err(Error::Data(format!("{} has no {sub}/ directory", root.display())));
        }
    }
    let mut manifest = DatasetManifest {
        root: root.to_path_buf(),
        split: split.to_string(),
        entries: Vec::new(),
        report: ValidationReport::default(),
    };
    for stem in stems(&root.join("image"))? {
        let entry = ManifestEntry {
            person: Path::new("image").join(format!("{stem}.png")),
            garment: Path::new("cloth").join(format!("{stem}.png")),
            keypoints: Path::new("pose").join(format!("{stem}.json")),
            stem,
        };
        match load_entry(root, &entry, opts) {
            Ok(_) => manifest.entries.push(entry),
            Err(e) if opts.strict => {
                return Err(Error::Data(format!("entry {}: {e}", entry.stem)));
            }
            Err(e) => {
                log::warn!("excluding {}: {e}", entry.stem);
                manifest.report.excluded.push((entry.stem, e.to_string()));
            }
        }
    }
    if manifest.entries.is_empty() {
        let msg = format!("no usable entries under {}", root.display());
        log::warn!("{msg}");
        manifest.report.warnings.push(msg);
    }
    Ok(manifest)
}

/// Reads one entry into a [`Sample`]; the target is the person image itself.
pub fn load_entry(root: &Path, e: &ManifestEntry, opts: &LoadOptions) -> Result<Sample> {
    let person = load_image(&root.join(&e.person))?;
    let garment = load_image(&root.join(&e.garment))?;
    let text = fs::read_to_string(root.join(&e.keypoints))
        .map_err(|err| Error::Data(format!("{}: {err}", e.keypoints.display())))?;
    let keypoints = parse_keypoints(&text)?;
    let (pd, gd) = (person.dims(), garment.dims());
    if pd != gd {
        return Err(Error::Data(format!("person {pd} and garment {gd} differ in size")));
    }
    if let Some((h, w)) = opts.dims {
        if (pd.h, pd.w) != (h, w) {
            return Err(Error::Data(format!("image is {}x{}, expected {h}x{w}", pd.h, pd.w)));
        }
    }
    let (person_masked, _) = mask_upper_body(&person, &keypoints, opts.mask_margin)?;
    Ok(Sample {
        garment,
        person_masked,
        keypoints,
        target: person,
    })
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn load(&self, i: usize, opts: &LoadOptions) -> Result<Sample> {
        load_entry(&self.root, &self.entries[i], opts)
    }
}
