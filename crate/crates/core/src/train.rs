//! Training loop, evaluation and run logs.
//!
//! Each step runs the network on one batch, compares the coarse previews of
//! levels `1..N-1` and the final output against area-downsampled targets,
//! and applies one AdamW update. Batch order is drawn per epoch from the run
//! seed, so a resumed run sees exactly the batches an uninterrupted one would.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::Serialize;
use serde_json::json;

use crate::checkpoint::{self, Progress};
use crate::config::{DifficultyMix, RunConfig, Task};
use crate::data::{load_manifest, make_batch, Difficulty, LoadOptions, Sample, SyntheticDataset};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::losses::{total_loss, LevelLosses, PerceptualExtractor};
use crate::metrics::MetricReport;
use crate::model::{Sdafn, TryOnBatch};
use crate::optim::AdamW;
use crate::rng::{fork_indexed, Purpose};
use crate::tensor::{area_downsample, Tensor};

/// Synthetic sets are kept in memory below this many bytes.
const CACHE_LIMIT: usize = 1 << 30;

/// Source of training or evaluation samples.
pub enum Dataset {
    InMemory(Vec<Sample>),
    Synthetic(SyntheticDataset),
    Manifest(crate::data::DatasetManifest, LoadOptions),
}

impl Dataset {
    pub fn len(&self) -> usize {
        match self {
            Dataset::InMemory(v) => v.len(),
            Dataset::Synthetic(s) => s.len,
            Dataset::Manifest(m, _) => m.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> Result<Sample> {
        match self {
            Dataset::InMemory(v) => Ok(v[i].clone()),
            Dataset::Synthetic(s) => Ok(s.get(i).sample()),
            Dataset::Manifest(m, o) => m.load(i, o),
        }
    }

    /// Materializes a synthetic set when it fits the cache budget.
    pub fn cached(self) -> Self {
        match self {
            Dataset::Synthetic(s) if s.len * s.h * s.w * 9 * 4 <= CACHE_LIMIT => {
                Dataset::InMemory((0..s.len).map(|i| s.get(i).sample()).collect())
            }
            other => other,
        }
    }
}

fn synthetic(cfg: &RunConfig, seed: u64, len: usize) -> SyntheticDataset {
    let mut s = SyntheticDataset::new(seed, len, cfg.height, cfg.width);
    s.difficulty = match cfg.difficulty {
        DifficultyMix::Easy => Some(Difficulty::Easy),
        DifficultyMix::Hard => Some(Difficulty::Hard),
        DifficultyMix::Mixed => None,
    };
    s.mask_margin = cfg.mask_margin;
    s
}

/// Seed of the held-out synthetic set, disjoint from the training stream.
pub fn eval_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

/// Training and evaluation sets described by `cfg`.
pub fn datasets(cfg: &RunConfig) -> Result<(Dataset, Option<Dataset>)> {
    match cfg.task {
        Task::Synthetic => {
            let train = Dataset::Synthetic(synthetic(cfg, cfg.seed, cfg.train_pairs)).cached();
            let eval = (cfg.eval_pairs > 0)
                .then(|| Dataset::Synthetic(synthetic(cfg, eval_seed(cfg.seed), cfg.eval_pairs)).cached());
            Ok((train, eval))
        }
        Task::Manifest => {
            let root = cfg.data_root.as_ref().ok_or_else(|| Error::Config("task = manifest needs data_root".into()))?;
            let opts = LoadOptions {
                strict: false,
                dims: Some((cfg.height, cfg.width)),
                mask_margin: cfg.mask_margin * cfg.width as f64,
            };
            let split = |name: &str| -> Result<Option<Dataset>> {
                let dir = root.join(name);
                if !dir.is_dir() {
                    return Ok(None);
                }
                let m = load_manifest(&dir, name, &opts)?;
                Ok(Some(Dataset::Manifest(m, opts)))
            };
            let train = match split("train")? {
                Some(d) => d,
                None => Dataset::Manifest(load_manifest(root, "train", &opts)?, opts),
            };
            Ok((train, split("test")?))
        }
    }
}

/// Loss record of one optimizer step.
#[derive(Clone, Debug, Serialize)]
pub struct StepStats {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    /// Per-pixel L1 of the final output.
    pub l1: f64,
    pub levels: Vec<LevelStats>,
}

#[derive(Clone, Debug, Serialize)]
pub struct LevelStats {
    pub l1: f64,
    pub perceptual: Option<f64>,
    pub style: Option<f64>,
}

impl From<&LevelLosses> for LevelStats {
    fn from(l: &LevelLosses) -> Self {
        LevelStats {
            l1: l.l1,
            perceptual: l.perceptual,
            style: l.style,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub progress: Progress,
    pub last: Option<StepStats>,
    pub stopped_early: bool,
    pub eval: Option<MetricReport>,
    pub seconds: f64,
}

/// JSON-lines log with a human-readable mirror.
pub struct RunLog {
    json: BufWriter<File>,
    text: BufWriter<File>,
}

impl RunLog {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let open = |name: &str| -> Result<BufWriter<File>> {
            let f = fs::OpenOptions::new().create(true).append(true).open(dir.join(name))?;
            Ok(BufWriter::new(f))
        };
        Ok(RunLog {
            json: open("train_log.jsonl")?,
            text: open("train_log.txt")?,
        })
    }

    pub fn record(&mut self, value: serde_json::Value, human: &str) -> Result<()> {
        writeln!(self.json, "{value}")?;
        writeln!(self.text, "{human}")?;
        self.json.flush()?;
        self.text.flush()?;
        Ok(())
    }
}

pub struct Trainer {
    pub config: RunConfig,
    pub model: Sdafn,
    pub optim: AdamW,
    pub progress: Progress,
    extractor: Option<PerceptualExtractor>,
    train: Dataset,
    eval: Option<Dataset>,
    log: Option<RunLog>,
}

impl Trainer {
    /// Fresh model and the datasets named by `config`.
    pub fn new(config: RunConfig) -> Result<Self> {
        let (train, eval) = datasets(&config)?;
        Self::with_datasets(config, train, eval)
    }

    pub fn with_datasets(config: RunConfig, train: Dataset, eval: Option<Dataset>) -> Result<Self> {
        config.validate()?;
        let model = Sdafn::new(config.model.clone(), config.seed)?;
        let optim = AdamW::new(config.optim, model.params());
        Ok(Trainer {
            extractor: extractor(&config)?,
            config,
            model,
            optim,
            progress: Progress::default(),
            train,
            eval,
            log: None,
        })
    }

    /// Continues from a checkpoint. Everything except the architecture may
    /// differ from the checkpoint's own configuration.
    pub fn resume(config: RunConfig, dir: &Path, train: Dataset, eval: Option<Dataset>) -> Result<Self> {
        let ck = checkpoint::load::<f32>(dir)?;
        if ck.config.model != config.model {
            return Err(Error::Config(format!(
                "checkpoint {} was written for a different architecture",
                dir.display()
            )));
        }
        let mut t = Self::with_datasets(config, train, eval)?;
        t.model = ck.model;
        t.optim = ck.optim;
        t.optim.config = t.config.optim;
        t.progress = ck.progress;
        Ok(t)
    }

    /// Writes JSON and text logs under `config.output_dir`.
    pub fn enable_log(&mut self) -> Result<()> {
        self.log = Some(RunLog::create(&self.config.output_dir)?);
        Ok(())
    }

    pub fn train_set(&self) -> &Dataset {
        &self.train
    }

    pub fn eval_set(&self) -> Option<&Dataset> {
        self.eval.as_ref()
    }

    fn batches_per_epoch(&self) -> usize {
        self.train.len().div_ceil(self.config.batch_size)
    }

    /// Sample order of `epoch`.
    pub fn epoch_order(&self, epoch: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.train.len()).collect();
        idx.shuffle(&mut fork_indexed(self.config.seed, Purpose::Order, epoch as u64));
        idx
    }

    /// One optimizer step on `batch`.
    pub fn step(&mut self, batch: &TryOnBatch, target: &Tensor) -> Result<StepStats> {
        let lr = self.config.schedule.lr_at(self.progress.epoch);
        let mut g = Graph::new();
        let out = self.model.forward(&mut g, batch)?;
        let n = self.config.model.levels;
        let mut scales = out.previews[..n - 1].to_vec();
        scales.push(out.image);
        let mut targets = Vec::with_capacity(n);
        for level in 1..n {
            let t = area_downsample(target, self.config.model.level_factor(level))?;
            targets.push(g.try_constant(t)?);
        }
        targets.push(g.try_constant(target.clone())?);
        let total = total_loss(
            &mut g,
            &scales,
            &targets,
            &self.config.loss,
            self.config.level_weighting,
            self.extractor.as_ref(),
        )?;
        let loss = g.value(total.loss).item() as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite { op: "total_loss" });
        }
        g.backward_into(total.loss, self.model.params_mut())?;
        drop(g);
        self.optim.step(self.model.params_mut(), lr)?;
        self.progress.step += 1;
        Ok(StepStats {
            step: self.progress.step,
            epoch: self.progress.epoch,
            lr,
            loss,
            l1: total.levels.last().map_or(f64::NAN, |l| l.l1),
            levels: total.levels.iter().map(LevelStats::from).collect(),
        })
    }

    fn batch_at(&self, order: &[usize], b: usize) -> Result<(TryOnBatch, Tensor)> {
        let bs = self.config.batch_size;
        let samples = order[b * bs..((b + 1) * bs).min(order.len())]
            .iter()
            .map(|&i| self.train.get(i))
            .collect::<Result<Vec<_>>>()?;
        make_batch(&samples.iter().collect::<Vec<_>>(), self.config.heatmap_sigma)
    }

    /// Predictions and metrics over `ds`.
    pub fn evaluate(&self, ds: &Dataset) -> Result<MetricReport> {
        evaluate(&self.model, ds, self.config.batch_size, self.config.heatmap_sigma)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        checkpoint::save(dir, &self.config, &self.model, &self.optim, self.progress)
    }

    fn checkpoint_path(&self, name: &str) -> PathBuf {
        self.config.checkpoint_dir.join(name)
    }

    fn log(&mut self, value: serde_json::Value, human: String) -> Result<()> {
        log::info!("{human}");
        match &mut self.log {
            Some(l) => l.record(value, &human),
            None => Ok(()),
        }
    }

    fn log_step(&mut self, s: &StepStats) -> Result<()> {
        let human = format!(
            "step {:>6} epoch {:>4} lr {:.2e} loss {:.5} l1 {:.5}",
            s.step, s.epoch, s.lr, s.loss, s.l1
        );
        let mut v = serde_json::to_value(s)?;
        v["kind"] = json!("step");
        self.log(v, human)
    }

    fn run_eval(&mut self) -> Result<Option<MetricReport>> {
        let Some(ds) = &self.eval else { return Ok(None) };
        if ds.is_empty() {
            return Ok(None);
        }
        let report = self.evaluate(ds)?;
        let human = format!(
            "eval  step {:>6} epoch {:>4} ssim {:.4} psnr {:.3} (n={})",
            self.progress.step, self.progress.epoch, report.mean_ssim, report.mean_psnr, report.count
        );
        self.log(
            json!({"kind": "eval", "step": self.progress.step, "epoch": self.progress.epoch,
                   "ssim": report.mean_ssim, "psnr": report.mean_psnr, "count": report.count}),
            human,
        )?;
        Ok(Some(report))
    }

    /// Trains until `epochs`, `max_steps` or `target_l1` stops it, then
    /// writes the final checkpoint and evaluation. With `epochs = 0` only the
    /// initial checkpoint is written.
    pub fn run(&mut self) -> Result<TrainSummary> {
        let start = Instant::now();
        let cfg = self.config.clone();
        if self.train.is_empty() {
            return Err(Error::Data("training set is empty".into()));
        }
        if cfg.epochs == 0 {
            self.save(&self.checkpoint_path("initial"))?;
            return Ok(TrainSummary {
                progress: self.progress,
                last: None,
                stopped_early: false,
                eval: None,
                seconds: start.elapsed().as_secs_f64(),
            });
        }
        let per_epoch = self.batches_per_epoch();
        let mut last = None;
        let mut stopped_early = false;
        'epochs: while self.progress.epoch < cfg.epochs {
            let order = self.epoch_order(self.progress.epoch);
            while self.progress.batch < per_epoch {
                if cfg.max_steps > 0 && self.progress.step >= cfg.max_steps as u64 {
                    break 'epochs;
                }
                let (batch, target) = self.batch_at(&order, self.progress.batch)?;
                let s = self.step(&batch, &target)?;
                self.progress.batch += 1;
                if cfg.log_every > 0 && (s.step % cfg.log_every as u64 == 0 || s.step == 1) {
                    self.log_step(&s)?;
                }
                let done = cfg.target_l1 > 0.0 && s.l1 < cfg.target_l1;
                last = Some(s);
                if done {
                    stopped_early = true;
                    break 'epochs;
                }
            }
            self.progress.epoch += 1;
            self.progress.batch = 0;
            let e = self.progress.epoch;
            if cfg.eval_every > 0 && e.is_multiple_of(cfg.eval_every) && e < cfg.epochs {
                self.run_eval()?;
            }
            if cfg.checkpoint_every > 0 && e.is_multiple_of(cfg.checkpoint_every) && e < cfg.epochs {
                self.save(&self.checkpoint_path(&format!("epoch_{e:04}")))?;
            }
        }
        if let Some(s) = &last {
            if s.step % cfg.log_every.max(1) as u64 != 0 {
                self.log_step(&s.clone())?;
            }
        }
        self.save(&self.checkpoint_path("final"))?;
        let eval = self.run_eval()?;
        if let Some(r) = &eval {
            fs::create_dir_all(&cfg.output_dir)?;
            r.write(&cfg.output_dir.join("metrics.json"), &cfg.output_dir.join("metrics.txt"))?;
        }
        Ok(TrainSummary {
            progress: self.progress,
            last,
            stopped_early,
            eval,
            seconds: start.elapsed().as_secs_f64(),
        })
    }
}

fn extractor(cfg: &RunConfig) -> Result<Option<PerceptualExtractor>> {
    if cfg.loss.perceptual == 0.0 && cfg.loss.style == 0.0 {
        return Ok(None);
    }
    Ok(Some(match &cfg.extractor {
        Some(dir) => PerceptualExtractor::load(dir)?,
        None => PerceptualExtractor::random(cfg.extractor_seed),
    }))
}

/// Predicts every sample of `ds` and scores it against its target.
pub fn evaluate(model: &Sdafn, ds: &Dataset, batch_size: usize, sigma: f64) -> Result<MetricReport> {
    let mut report = MetricReport::default();
    let bs = batch_size.max(1);
    for start in (0..ds.len()).step_by(bs) {
        let samples = (start..(start + bs).min(ds.len()))
            .map(|i| ds.get(i))
            .collect::<Result<Vec<_>>>()?;
        let (batch, target) = make_batch(&samples.iter().collect::<Vec<_>>(), sigma)?;
        let p = model.predict(&batch)?;
        report.push_batch(&p.image, &target)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> RunConfig {
        let mut c = RunConfig::toy(2);
        c.model.fpn_channels = vec![4, 4, 4, 4];
        c.model.mfe_hidden = vec![4, 4, 4, 4];
        c.model.mfe_kernels = vec![3, 3, 3, 3];
        c.model.shallow_channels = vec![4, 4];
        c.train_pairs = 3;
        c.eval_pairs = 0;
        c.batch_size = 2;
        c.epochs = 2;
        c.eval_every = 0;
        c.checkpoint_every = 0;
        c
    }

    #[test]
    fn epoch_zero_writes_initial_checkpoint_only() {
        let dir = tempfile_dir("e0");
        let mut c = tiny();
        c.epochs = 0;
        c.checkpoint_dir = dir.clone();
        let mut t = Trainer::new(c).unwrap();
        let s = t.run().unwrap();
        assert_eq!(s.progress.step, 0);
        let entries: Vec<_> = fs::read_dir(&dir).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(entries, vec![std::ffi::OsString::from("initial")]);
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn partial_batches_and_step_count() {
        let dir = tempfile_dir("steps");
        let mut c = tiny();
        c.checkpoint_dir = dir.clone();
        let mut t = Trainer::new(c).unwrap();
        let s = t.run().unwrap();
        assert_eq!(s.progress.step, 4);
        assert_eq!(s.progress.epoch, 2);
        assert!(s.last.unwrap().loss.is_finite());
        fs::remove_dir_all(&dir).unwrap();
    }

    fn tempfile_dir(tag: &str) -> PathBuf {
        std::env::temp_dir().join(format!("daflow-train-{tag}-{}", std::process::id()))
    }
}
