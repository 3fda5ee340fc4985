//! Checkpoint directories: `manifest.txt`, `params/*.daft` and `optim/*.daft`.
//!
//! The manifest lists every parameter with dtype and dims, the training
//! progress counters and a snapshot of the run configuration. Parameters are
//! restored by name, so a checkpoint only loads into the architecture it was
//! written from.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::Sdafn;
use crate::optim::AdamW;
use crate::tensor::{read_tensor_file, write_tensor_file, Real, Tensor};

const MAGIC: &str = "daflow-checkpoint 1";
const CONFIG_MARKER: &str = "[config]";

/// Position in the training schedule.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Progress {
    /// Optimizer steps taken.
    pub step: u64,
    /// Current epoch (0-based).
    pub epoch: usize,
    /// Batches of `epoch` already consumed.
    pub batch: usize,
}

fn file_name(name: &str) -> String {
    name.replace(['/', '\\'], "_")
}

/// Writes model, optimizer state and progress to `dir`.
pub fn save<T: Real>(dir: &Path, config: &RunConfig, model: &Sdafn<T>, optim: &AdamW<T>, progress: Progress) -> Result<()> {
    fs::create_dir_all(dir.join("params"))?;
    fs::create_dir_all(dir.join("optim"))?;
    optim.check_compatible(model.params())?;
    let mut m = String::new();
    let _ = writeln!(m, "{MAGIC}");
    let _ = writeln!(m, "step {}", progress.step);
    let _ = writeln!(m, "epoch {}", progress.epoch);
    let _ = writeln!(m, "batch {}", progress.batch);
    let _ = writeln!(m, "optim_step {}", optim.t);
    for (i, (_, p)) in model.params().iter().enumerate() {
        let f = file_name(&p.name);
        let rel = format!("params/{f}.daft");
        write_tensor_file(&p.value, dir.join(&rel))?;
        write_tensor_file(&optim.m[i], dir.join(format!("optim/{f}.m.daft")))?;
        write_tensor_file(&optim.v[i], dir.join(format!("optim/{f}.v.daft")))?;
        let _ = writeln!(m, "param {} {} {} {}", p.name, T::DTYPE.name(), p.value.dims(), rel);
    }
    let _ = writeln!(m, "{CONFIG_MARKER}");
    m.push_str(&config.to_text());
    fs::write(dir.join("manifest.txt"), m)?;
    Ok(())
}

/// Contents of a checkpoint directory.
pub struct Checkpoint<T: Real = f32> {
    pub dir: PathBuf,
    pub config: RunConfig,
    pub model: Sdafn<T>,
    pub optim: AdamW<T>,
    pub progress: Progress,
}

struct Manifest {
    progress: Progress,
    optim_step: u64,
    params: Vec<(String, String)>,
    config: String,
}

fn parse_manifest(text: &str) -> Result<Manifest> {
    let bad = |m: String| Error::Format(format!("checkpoint manifest: {m}"));
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(MAGIC) {
        return Err(bad("missing header".into()));
    }
    let mut out = Manifest {
        progress: Progress::default(),
        optim_step: 0,
        params: Vec::new(),
        config: String::new(),
    };
    for line in lines.by_ref() {
        let words: Vec<&str> = line.split_whitespace().collect();
        let num = |s: &str| s.parse::<u64>().map_err(|_| bad(format!("bad number in {line:?}")));
        match words.as_slice() {
            [] => {}
            [m] if *m == CONFIG_MARKER => break,
            ["step", v] => out.progress.step = num(v)?,
            ["epoch", v] => out.progress.epoch = num(v)? as usize,
            ["batch", v] => out.progress.batch = num(v)? as usize,
            ["optim_step", v] => out.optim_step = num(v)?,
            ["param", name, _dtype, dims, rel] => out.params.push((name.to_string(), format!("{dims} {rel}"))),
            _ => return Err(bad(format!("unrecognized line {line:?}"))),
        }
    }
    out.config = lines.collect::<Vec<_>>().join("\n");
    Ok(out)
}

/// Loads a checkpoint, rebuilding the model from the stored configuration.
pub fn load<T: Real>(dir: &Path) -> Result<Checkpoint<T>> {
    let text = fs::read_to_string(dir.join("manifest.txt"))
        .map_err(|e| Error::Format(format!("cannot read {}/manifest.txt: {e}", dir.display())))?;
    let man = parse_manifest(&text)?;
    let config = RunConfig::from_text(&man.config)?;
    let mut model = Sdafn::<T>::new(config.model.clone(), config.seed)?;
    let mut optim = AdamW::new(config.optim, model.params());
    optim.t = man.optim_step;
    if man.params.len() != model.params().len() {
        return Err(Error::Format(format!(
            "checkpoint has {} parameters, architecture has {}",
            man.params.len(),
            model.params().len()
        )));
    }
    for (name, rest) in &man.params {
        let id = model
            .params()
            .id(name)
            .ok_or_else(|| Error::Format(format!("checkpoint parameter {name} is not part of the architecture")))?;
        let rel = rest.split_whitespace().nth(1).unwrap_or_default();
        let idx = model.params().iter().position(|(i, _)| i == id).expect("id from store");
        let f = file_name(name);
        let value: Tensor<T> = read_tensor_file(dir.join(rel))?;
        let m: Tensor<T> = read_tensor_file(dir.join(format!("optim/{f}.m.daft")))?;
        let v: Tensor<T> = read_tensor_file(dir.join(format!("optim/{f}.v.daft")))?;
        let p = model.params_mut().get_mut(id);
        if value.dims() != p.value.dims() {
            return Err(Error::Format(format!(
                "parameter {name}: checkpoint dims {} differ from architecture {}",
                value.dims(),
                p.value.dims()
            )));
        }
        p.value = value;
        optim.m[idx] = m;
        optim.v[idx] = v;
    }
    optim.check_compatible(model.params())?;
    Ok(Checkpoint {
        dir: dir.to_path_buf(),
        config,
        model,
        optim,
        progress: man.progress,
    })
}
