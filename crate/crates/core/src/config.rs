//! Run configuration as plain `key = value` text.

use std::collections::HashSet;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::losses::{LevelWeighting, LossWeights};
use crate::model::{DafnConfig, MergeMode};
use crate::optim::{AdamWConfig, LrSchedule};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Synthetic,
    Manifest,
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synthetic" => Ok(Task::Synthetic),
            "manifest" => Ok(Task::Manifest),
            o => Err(Error::Config(format!("unknown task {o:?}"))),
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Task::Synthetic => "synthetic",
            Task::Manifest => "manifest",
        })
    }
}

/// Mix of synthetic difficulties.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DifficultyMix {
    Easy,
    Hard,
    /// Alternating easy and hard.
    Mixed,
}

impl FromStr for DifficultyMix {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "easy" => Ok(DifficultyMix::Easy),
            "hard" => Ok(DifficultyMix::Hard),
            "mixed" => Ok(DifficultyMix::Mixed),
            o => Err(Error::Config(format!("unknown difficulty {o:?}"))),
        }
    }
}

impl std::fmt::Display for DifficultyMix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DifficultyMix::Easy => "easy",
            DifficultyMix::Hard => "hard",
            DifficultyMix::Mixed => "mixed",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: DafnConfig,
    pub task: Task,
    /// Dataset root for `task = manifest`.
    pub data_root: Option<PathBuf>,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub epochs: usize,
    pub batch_size: usize,
    /// Stop after this many optimizer steps; 0 disables the limit.
    pub max_steps: usize,
    /// Stop once the running per-pixel L1 of the final output falls below this; 0 disables.
    pub target_l1: f64,
    pub optim: AdamWConfig,
    pub schedule: LrSchedule,
    pub loss: LossWeights,
    pub level_weighting: LevelWeighting,
    /// Directory with an extractor manifest; the seeded random network when unset.
    pub extractor: Option<PathBuf>,
    pub extractor_seed: u64,
    pub train_pairs: usize,
    pub eval_pairs: usize,
    pub difficulty: DifficultyMix,
    pub heatmap_sigma: f64,
    pub mask_margin: f64,
    pub checkpoint_dir: PathBuf,
    pub output_dir: PathBuf,
    /// Epoch cadence of evaluation and checkpoints; 0 disables the periodic ones.
    pub eval_every: usize,
    pub checkpoint_every: usize,
    /// Step cadence of loss log records.
    pub log_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: DafnConfig::default(),
            task: Task::Synthetic,
            data_root: None,
            seed: 0,
            height: 256,
            width: 192,
            epochs: 200,
            batch_size: 8,
            max_steps: 0,
            target_l1: 0.0,
            optim: AdamWConfig::default(),
            schedule: LrSchedule::default(),
            loss: LossWeights::default(),
            level_weighting: LevelWeighting::NPlusOne,
            extractor: None,
            extractor_seed: 0,
            train_pairs: 2000,
            eval_pairs: 200,
            difficulty: DifficultyMix::Mixed,
            heatmap_sigma: crate::data::HEATMAP_SIGMA,
            mask_margin: 0.06,
            checkpoint_dir: PathBuf::from("checkpoints"),
            output_dir: PathBuf::from("runs"),
            eval_every: 1,
            checkpoint_every: 10,
            log_every: 10,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("invalid value {v:?} for {key}")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|s| parse(key, s.trim())).collect()
}

fn list(v: &[usize]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn opt_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    /// Sets one key. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let m = &mut self.model;
        match key {
            "levels" => m.levels = parse(key, v)?,
            "samples" => m.samples = parse(key, v)?,
            "fpn_channels" => m.fpn_channels = parse_list(key, v)?,
            "mfe_hidden" => m.mfe_hidden = parse_list(key, v)?,
            "mfe_kernels" => m.mfe_kernels = parse_list(key, v)?,
            "shallow_channels" => m.shallow_channels = parse_list(key, v)?,
            "single_branch" => m.single_branch = parse(key, v)?,
            "merge_mode" => m.merge_mode = v.parse::<MergeMode>()?,
            "keypoint_channels" => m.keypoint_channels = parse(key, v)?,
            "image_channels" => m.image_channels = parse(key, v)?,
            "slope" => m.slope = parse(key, v)?,
            "task" => self.task = v.parse()?,
            "data_root" => self.data_root = opt_path(v),
            "seed" => self.seed = parse(key, v)?,
            "height" => self.height = parse(key, v)?,
            "width" => self.width = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "max_steps" => self.max_steps = parse(key, v)?,
            "target_l1" => self.target_l1 = parse(key, v)?,
            "lr" => {
                self.optim.lr = parse(key, v)?;
                self.schedule.base_lr = self.optim.lr;
            }
            "lr_decay" => self.schedule.decay_factor = parse(key, v)?,
            "lr_decay_every" => self.schedule.decay_every = parse(key, v)?,
            "beta1" => self.optim.beta1 = parse(key, v)?,
            "beta2" => self.optim.beta2 = parse(key, v)?,
            "eps" => self.optim.eps = parse(key, v)?,
            "weight_decay" => self.optim.weight_decay = parse(key, v)?,
            "lambda_l1" => self.loss.l1 = parse(key, v)?,
            "lambda_perceptual" => self.loss.perceptual = parse(key, v)?,
            "lambda_style" => self.loss.style = parse(key, v)?,
            "level_weighting" => self.level_weighting = v.parse()?,
            "extractor" => self.extractor = opt_path(v),
            "extractor_seed" => self.extractor_seed = parse(key, v)?,
            "train_pairs" => self.train_pairs = parse(key, v)?,
            "eval_pairs" => self.eval_pairs = parse(key, v)?,
            "difficulty" => self.difficulty = v.parse()?,
            "heatmap_sigma" => self.heatmap_sigma = parse(key, v)?,
            "mask_margin" => self.mask_margin = parse(key, v)?,
            "checkpoint_dir" => self.checkpoint_dir = PathBuf::from(v),
            "output_dir" => self.output_dir = PathBuf::from(v),
            "eval_every" => self.eval_every = parse(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "log_every" => self.log_every = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Every key with its current value, in a stable order.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        fn s(v: impl Display) -> String {
            v.to_string()
        }
        let m = &self.model;
        vec![
            ("levels", s(m.levels)),
            ("samples", s(m.samples)),
            ("fpn_channels", list(&m.fpn_channels)),
            ("mfe_hidden", list(&m.mfe_hidden)),
            ("mfe_kernels", list(&m.mfe_kernels)),
            ("shallow_channels", list(&m.shallow_channels)),
            ("single_branch", s(m.single_branch)),
            ("merge_mode", s(m.merge_mode)),
            ("keypoint_channels", s(m.keypoint_channels)),
            ("image_channels", s(m.image_channels)),
            ("slope", s(m.slope)),
            ("task", s(self.task)),
            ("data_root", show_path(&self.data_root)),
            ("seed", s(self.seed)),
            ("height", s(self.height)),
            ("width", s(self.width)),
            ("epochs", s(self.epochs)),
            ("batch_size", s(self.batch_size)),
            ("max_steps", s(self.max_steps)),
            ("target_l1", s(self.target_l1)),
            ("lr", s(self.optim.lr)),
            ("lr_decay", s(self.schedule.decay_factor)),
            ("lr_decay_every", s(self.schedule.decay_every)),
            ("beta1", s(self.optim.beta1)),
            ("beta2", s(self.optim.beta2)),
            ("eps", s(self.optim.eps)),
            ("weight_decay", s(self.optim.weight_decay)),
            ("lambda_l1", s(self.loss.l1)),
            ("lambda_perceptual", s(self.loss.perceptual)),
            ("lambda_style", s(self.loss.style)),
            ("level_weighting", s(self.level_weighting)),
            ("extractor", show_path(&self.extractor)),
            ("extractor_seed", s(self.extractor_seed)),
            ("train_pairs", s(self.train_pairs)),
            ("eval_pairs", s(self.eval_pairs)),
            ("difficulty", s(self.difficulty)),
            ("heatmap_sigma", s(self.heatmap_sigma)),
            ("mask_margin", s(self.mask_margin)),
            ("checkpoint_dir", self.checkpoint_dir.display().to_string()),
            ("output_dir", self.output_dir.display().to_string()),
            ("eval_every", s(self.eval_every)),
            ("checkpoint_every", s(self.checkpoint_every)),
            ("log_every", s(self.log_every)),
        ]
    }

    pub fn to_text(&self) -> String {
        self.pairs().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Applies `key = value` lines on top of `self`. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {line:?}", i + 1)))?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key {k:?}", i + 1)));
            }
            self.set(k, v.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", i + 1, strip_prefix(&e))))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    /// Applies `key=value` overrides such as command-line `--set` flags.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.model.check_input_dims(self.height, self.width)?;
        self.loss.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.task == Task::Manifest && self.data_root.is_none() {
            return Err(Error::Config("task = manifest needs data_root".into()));
        }
        if !(self.optim.lr > 0.0) || !(self.heatmap_sigma > 0.0) {
            return Err(Error::Config("lr and heatmap_sigma must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.optim.beta1) || !(0.0..1.0).contains(&self.optim.beta2) {
            return Err(Error::Config("betas must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Small model and data sizes for CPU experiments at 64x48.
    pub fn toy(samples: usize) -> Self {
        RunConfig {
            model: DafnConfig::toy(samples),
            height: 64,
            width: 48,
            epochs: 20,
            batch_size: 4,
            ..RunConfig::default()
        }
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reference_hyperparameters() {
        let c = RunConfig::default();
        assert_eq!(c.batch_size, 8);
        assert_eq!(c.optim.lr, 5e-5);
        assert_eq!(c.loss, LossWeights { l1: 1.0, perceptual: 1.0, style: 100.0 });
        assert_eq!(c.schedule.decay_every, 50);
        c.validate().unwrap();
    }

    #[test]
    fn text_roundtrip() {
        let mut c = RunConfig::toy(3);
        c.data_root = Some("data/x".into());
        c.model.merge_mode = MergeMode::Concat;
        let back = RunConfig::from_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_unknown_and_duplicate_keys() {
        assert!(matches!(RunConfig::from_text("bogus = 1"), Err(Error::Config(_))));
        assert!(RunConfig::from_text("seed = 1\nseed = 2").is_err());
        assert!(RunConfig::from_text("seed 1").is_err());
        assert!(RunConfig::from_text("height = 100").is_err());
        let c = RunConfig::from_text("# comment\nseed = 7  # trailing\n\nfpn_channels = 8, 8,8,8,8").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.model.fpn_channels, [8; 5]);
    }
}
