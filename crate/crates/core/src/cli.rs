//! Command implementations behind the `dafnet` binary.
//!
//! Exit codes: 0 on success, 1 when a verification fails (gradient check,
//! non-finite training values), 2 for usage, configuration and I/O errors.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::checkpoint;
use crate::config::RunConfig;
use crate::data::{
    load_manifest, make_batch, render_heatmaps, save_image, write_sample, Difficulty, Keypoint, LoadOptions, Sample,
    SyntheticDataset, TextureKind,
};
use crate::error::{Error, Result};
use crate::gradcheck::{self, GradcheckOptions};
use crate::graph::Graph;
use crate::metrics::MetricReport;
use crate::model::{Prediction, Sdafn};
use crate::tensor::{read_tensor_file, write_tensor_file, Tensor};
use crate::train::{self, Dataset, Trainer};
use crate::viz;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "dafnet", version, about = "Deformable attention flow virtual try-on")]
pub struct Cli {
    /// Only print warnings and errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model from a key=value config file.
    Train(TrainArgs),
    /// Run a checkpoint on a dataset directory or synthetic pairs.
    Infer(InferArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Render a flow tensor (and optional attention logits) as a PNG.
    VisualizeFlow(VisualizeArgs),
    /// Sweep the number of flow samples and report speed, memory and quality.
    Bench(BenchArgs),
    /// Write synthetic pairs in the dataset directory layout.
    GenData(GenDataArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Start from the small CPU preset instead of the full-size defaults.
    #[arg(long)]
    pub toy: bool,
    /// Override one key, e.g. `--set lr=1e-3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = if self.toy { RunConfig::toy(6) } else { RunConfig::default() };
        if let Some(p) = &self.config {
            let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
            cfg.apply_text(&text)?;
        }
        cfg.apply_overrides(&self.overrides)?;
        Ok(cfg)
    }
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Continue from this checkpoint directory.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset directory with image/, cloth/ and pose/.
    #[arg(long, conflicts_with = "synthetic")]
    pub data: Option<PathBuf>,
    /// Generate this many synthetic pairs instead of reading a directory.
    #[arg(long)]
    pub synthetic: Option<usize>,
    /// Seed of the synthetic pairs.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output resolution `HxW`; flows are estimated at the training size and upsampled.
    #[arg(long, value_parser = parse_resolution)]
    pub resolution: Option<(usize, usize)>,
    #[arg(long, default_value = "infer_out")]
    pub out: PathBuf,
    /// Also save the per-level coarse previews.
    #[arg(long)]
    pub previews: bool,
    /// Also save source flows as `.daft` and a colour-wheel PNG.
    #[arg(long)]
    pub flows: bool,
}

#[derive(Args, Debug, Clone)]
pub struct GradcheckArgs {
    /// Only check this op or group (tensor_core, warp_ops, losses, estimators).
    #[arg(long)]
    pub module: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 24)]
    pub probes: usize,
    /// Scale the analytic gradient of this op by 1.01 to exercise the failure path.
    #[arg(long)]
    pub corrupt: Option<String>,
    /// List the available cases and exit.
    #[arg(long)]
    pub list: bool,
}

#[derive(Args, Debug, Clone)]
pub struct VisualizeArgs {
    /// `(B, 2K, H, W)` flow tensor.
    #[arg(long)]
    pub flow: PathBuf,
    /// `(B, K, H, W)` attention logits.
    #[arg(long)]
    pub attention: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a colour-wheel legend of this size next to the output.
    #[arg(long)]
    pub wheel: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct BenchArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Sample counts to compare.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,6,8")]
    pub k: Vec<usize>,
    /// Directory holding one checkpoint per sample count, named `k<K>`.
    #[arg(long, conflicts_with = "train_small")]
    pub checkpoints: Option<PathBuf>,
    /// Train each model briefly on synthetic data before measuring.
    #[arg(long)]
    pub train_small: bool,
    /// Step budget per model for `--train-small`.
    #[arg(long, default_value_t = 300)]
    pub steps: usize,
    /// Forward passes timed per model; the fastest counts.
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    /// Directory for bench.json and bench.txt.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 48)]
    pub width: usize,
    /// easy, hard or mixed.
    #[arg(long, default_value = "mixed")]
    pub difficulty: String,
    /// stripes, checkers or solid; random when absent.
    #[arg(long)]
    pub texture: Option<String>,
    /// Also write ground-truth flows under flow/.
    #[arg(long)]
    pub gt_flow: bool,
}

fn parse_resolution(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("bad size in {s:?}"));
    Ok((p(h)?, p(w)?))
}

/// Exit code for an error: numeric and contract failures count as failed
/// verification, everything else as bad input.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonFinite { .. } | Error::Contract(_) => EXIT_VERIFY,
        _ => EXIT_USAGE,
    }
}

/// Parses `args` and runs the command. Returns the process exit code.
pub fn run_from_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = if cli.quiet { "warn" } else { "info" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
    match dispatch(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn dispatch(cmd: &Command) -> Result<i32> {
    match cmd {
        Command::Train(a) => cmd_train(a).map(|_| EXIT_OK),
        Command::Infer(a) => cmd_infer(a).map(|_| EXIT_OK),
        Command::Gradcheck(a) if a.list => {
            for (op, group) in gradcheck::case_names() {
                println!("{op:<20} {group}");
            }
            Ok(EXIT_OK)
        }
        Command::Gradcheck(a) => cmd_gradcheck(a).map(|r| if r.passed() { EXIT_OK } else { EXIT_VERIFY }),
        Command::VisualizeFlow(a) => cmd_visualize_flow(a).map(|_| EXIT_OK),
        Command::Bench(a) => cmd_bench(a).map(|_| EXIT_OK),
        Command::GenData(a) => cmd_gen_data(a).map(|_| EXIT_OK),
    }
}

pub fn cmd_train(a: &TrainArgs) -> Result<train::TrainSummary> {
    let cfg = a.config.resolve()?;
    fs::create_dir_all(&cfg.output_dir)?;
    fs::create_dir_all(&cfg.checkpoint_dir)?;
    fs::write(cfg.output_dir.join("config.txt"), cfg.to_text())?;
    let (train_set, eval_set) = train::datasets(&cfg)?;
    if let Dataset::Manifest(m, _) = &train_set {
        for (stem, why) in &m.report.excluded {
            eprintln!("skipped {stem}: {why}");
        }
    }
    let mut t = match &a.resume {
        Some(dir) => Trainer::resume(cfg, dir, train_set, eval_set)?,
        None => Trainer::with_datasets(cfg, train_set, eval_set)?,
    };
    t.enable_log()?;
    log::info!(
        "training {} params on {} samples from step {}",
        t.model.params().num_values(),
        t.train_set().len(),
        t.progress.step
    );
    let s = t.run()?;
    match &s.eval {
        Some(r) => println!(
            "done: {} steps in {:.1}s, eval ssim {:.4} psnr {:.2}",
            s.progress.step, s.seconds, r.mean_ssim, r.mean_psnr
        ),
        None => println!("done: {} steps in {:.1}s", s.progress.step, s.seconds),
    }
    Ok(s)
}

/// Keypoints scaled by `1 / factor` into a lower-resolution frame.
fn scale_keypoints(kps: &[Keypoint], factor: f64) -> Vec<Keypoint> {
    kps.iter()
        .map(|k| Keypoint {
            x: k.x / factor,
            y: k.y / factor,
            confidence: k.confidence,
        })
        .collect()
}

/// Runs the model on one sample, rendering at the sample's own resolution.
/// Previews are only available when that equals the training size.
pub fn infer_sample(model: &Sdafn, cfg: &RunConfig, s: &Sample) -> Result<(Prediction, Vec<Tensor>)> {
    let (batch, _) = make_batch(&[s], cfg.heatmap_sigma)?;
    let (h, w) = batch.hw();
    if (h, w) == (cfg.height, cfg.width) {
        let mut g = Graph::new();
        let out = model.forward(&mut g, &batch)?;
        let previews = out.previews.iter().map(|&v| g.value(v).clone()).collect();
        let p = Prediction {
            image: g.value(out.image).clone(),
            flow_src: g.value(out.flow_src).clone(),
            attn_src: g.value(out.attn_src).clone(),
            flow_ref: out.flow_ref.map(|v| g.value(v).clone()),
            attn_ref: out.attn_ref.map(|v| g.value(v).clone()),
        };
        return Ok((p, previews));
    }
    let factor = h as f64 / cfg.height as f64;
    let kp_low = render_heatmaps(&scale_keypoints(&s.keypoints, factor), cfg.height, cfg.width, cfg.heatmap_sigma)?;
    let p = model.infer_at_resolution(&batch, (cfg.height, cfg.width), Some(&kp_low))?;
    Ok((p, Vec::new()))
}

/// Deferred load of one inference input.
type Loader = Box<dyn Fn() -> Result<Sample>>;

/// Per-item results of [`cmd_infer`].
#[derive(Debug, Default)]
pub struct InferSummary {
    pub written: Vec<String>,
    pub skipped: Vec<(String, String)>,
    pub metrics: MetricReport,
}

pub fn cmd_infer(a: &InferArgs) -> Result<InferSummary> {
    let ck = checkpoint::load::<f32>(&a.checkpoint)?;
    let cfg = ck.config;
    let (h, w) = a.resolution.unwrap_or((cfg.height, cfg.width));
    if (h, w) != (cfg.height, cfg.width) && (h % cfg.height != 0 || w % cfg.width != 0 || h / cfg.height != w / cfg.width) {
        return Err(Error::Config(format!(
            "resolution {h}x{w} must be an integer multiple of the training size {}x{}",
            cfg.height, cfg.width
        )));
    }
    fs::create_dir_all(&a.out)?;
    let mut summary = InferSummary::default();
    let items: Vec<(String, Loader)> = match (&a.data, a.synthetic) {
        (Some(root), None) => {
            let opts = LoadOptions {
                strict: false,
                dims: Some((h, w)),
                mask_margin: cfg.mask_margin * w as f64,
            };
            let m = load_manifest(root, "infer", &opts)?;
            summary.skipped.extend(m.report.excluded.iter().cloned());
            let m = std::rc::Rc::new(m);
            (0..m.len())
                .map(|i| {
                    let m = m.clone();
                    (m.entries[i].stem.clone(), Box::new(move || m.load(i, &opts)) as Loader)
                })
                .collect()
        }
        (None, Some(n)) => {
            let mut ds = SyntheticDataset::new(a.seed, n, h, w);
            ds.mask_margin = cfg.mask_margin;
            let ds = std::rc::Rc::new(ds);
            (0..n)
                .map(|i| {
                    let ds = ds.clone();
                    (format!("synth_{i:04}"), Box::new(move || Ok(ds.get(i).sample())) as Loader)
                })
                .collect()
        }
        _ => return Err(Error::Config("infer needs exactly one of --data or --synthetic".into())),
    };
    for (stem, load) in &items {
        let r = load().and_then(|s| {
            let (p, previews) = infer_sample(&ck.model, &cfg, &s)?;
            save_image(&p.image, 0, &a.out.join(format!("{stem}.png")))?;
            if a.previews {
                for (n, t) in previews.iter().enumerate() {
                    save_image(t, 0, &a.out.join(format!("{stem}_level{}.png", n + 1)))?;
                }
            }
            if a.flows {
                write_tensor_file(&p.flow_src, a.out.join(format!("{stem}_flow.daft")))?;
                write_tensor_file(&p.attn_src, a.out.join(format!("{stem}_attn.daft")))?;
                let img = viz::render_flow(&p.flow_src, Some(&p.attn_src))?;
                save_image(&img, 0, &a.out.join(format!("{stem}_flow.png")))?;
            }
            summary.metrics.push_batch(&p.image, &s.target)?;
            Ok(())
        });
        match r {
            Ok(()) => summary.written.push(stem.clone()),
            Err(e) => summary.skipped.push((stem.clone(), e.to_string())),
        }
    }
    for (stem, why) in &summary.skipped {
        eprintln!("skipped {stem}: {why}");
    }
    if summary.metrics.count > 0 {
        summary
            .metrics
            .write(&a.out.join("metrics.json"), &a.out.join("metrics.txt"))?;
    }
    println!(
        "wrote {} images to {} ({} skipped), ssim {:.4} psnr {:.2}",
        summary.written.len(),
        a.out.display(),
        summary.skipped.len(),
        summary.metrics.mean_ssim,
        summary.metrics.mean_psnr
    );
    Ok(summary)
}

pub fn cmd_gradcheck(a: &GradcheckArgs) -> Result<gradcheck::GradcheckReport> {
    let report = gradcheck::run(&GradcheckOptions {
        seed: a.seed,
        eps: a.eps,
        tolerance: a.tolerance,
        probes: a.probes,
        filter: a.module.clone(),
        corrupt: a.corrupt.clone(),
    })?;
    print!("{}", report.to_text());
    Ok(report)
}

pub fn cmd_visualize_flow(a: &VisualizeArgs) -> Result<()> {
    let flow: Tensor<f64> = read_tensor_file(&a.flow)?;
    let attn = a.attention.as_deref().map(read_tensor_file::<f64>).transpose()?;
    let img = viz::render_flow(&flow, attn.as_ref())?;
    save_image(&img, 0, &a.out)?;
    if let Some(size) = a.wheel {
        let stem = a.out.file_stem().and_then(|s| s.to_str()).unwrap_or("flow");
        save_image(&viz::color_wheel(size), 0, &a.out.with_file_name(format!("{stem}_wheel.png")))?;
    }
    println!(
        "wrote {} (max displacement {:.2} px)",
        a.out.display(),
        viz::max_displacement(&flow)?
    );
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchRow {
    pub k: usize,
    pub params: usize,
    /// Fastest single-image forward pass, in milliseconds.
    pub forward_ms: f64,
    /// Bytes held by the forward graph's values.
    pub graph_bytes: usize,
    pub ssim: f64,
    pub psnr: f64,
    pub trained_steps: u64,
}

pub fn bench_table(rows: &[BenchRow]) -> String {
    let mut s = format!(
        "{:>3} {:>9} {:>11} {:>11} {:>8} {:>8} {:>7}\n",
        "K", "params", "forward_ms", "graph_MiB", "ssim", "psnr", "steps"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:>3} {:>9} {:>11.2} {:>11.2} {:>8.4} {:>8.2} {:>7}",
            r.k,
            r.params,
            r.forward_ms,
            r.graph_bytes as f64 / (1 << 20) as f64,
            r.ssim,
            r.psnr,
            r.trained_steps
        );
    }
    s
}

pub fn cmd_bench(a: &BenchArgs) -> Result<Vec<BenchRow>> {
    if a.k.is_empty() || a.k.contains(&0) {
        return Err(Error::Config("--k needs positive sample counts".into()));
    }
    let base = a.config.resolve()?;
    let mut rows = Vec::new();
    for &k in &a.k {
        let mut cfg = base.clone();
        cfg.model.samples = k;
        cfg.validate()?;
        let (model, steps) = if let Some(dir) = &a.checkpoints {
            let ck = checkpoint::load::<f32>(&dir.join(format!("k{k}")))?;
            if ck.config.model.samples != k {
                return Err(Error::Config(format!("{}/k{k} holds a K={} model", dir.display(), ck.config.model.samples)));
            }
            cfg = ck.config;
            (ck.model, ck.progress.step)
        } else if a.train_small {
            cfg.max_steps = a.steps;
            cfg.eval_pairs = 0;
            cfg.eval_every = 0;
            cfg.checkpoint_every = 0;
            let (train_set, _) = train::datasets(&cfg)?;
            let mut t = Trainer::with_datasets(cfg.clone(), train_set, None)?;
            let mut step = 0;
            'outer: for epoch in 0..cfg.epochs.max(1) {
                let order = t.epoch_order(epoch);
                for chunk in order.chunks(cfg.batch_size) {
                    if step >= a.steps {
                        break 'outer;
                    }
                    let samples = chunk.iter().map(|&i| t.train_set().get(i)).collect::<Result<Vec<_>>>()?;
                    let (b, target) = make_batch(&samples.iter().collect::<Vec<_>>(), cfg.heatmap_sigma)?;
                    t.step(&b, &target)?;
                    step += 1;
                }
            }
            (t.model, step as u64)
        } else {
            log::warn!("K={k}: no checkpoint given, measuring an untrained model");
            (Sdafn::new(cfg.model.clone(), cfg.seed)?, 0)
        };
        let eval_cfg = RunConfig {
            eval_pairs: base.eval_pairs.max(1),
            ..cfg.clone()
        };
        let (_, eval) = train::datasets(&eval_cfg)?;
        let eval = eval.ok_or_else(|| Error::Config("bench needs eval_pairs > 0".into()))?;
        let probe = eval.get(0)?;
        let (batch, _) = make_batch(&[&probe], cfg.heatmap_sigma)?;
        let mut best = f64::INFINITY;
        let mut bytes = 0;
        for _ in 0..a.reps.max(1) {
            let t0 = Instant::now();
            let mut g = Graph::new();
            model.forward(&mut g, &batch)?;
            best = best.min(t0.elapsed().as_secs_f64());
            bytes = g.value_bytes();
        }
        let report = train::evaluate(&model, &eval, cfg.batch_size, cfg.heatmap_sigma)?;
        let row = BenchRow {
            k,
            params: model.params().num_values(),
            forward_ms: best * 1e3,
            graph_bytes: bytes,
            ssim: report.mean_ssim,
            psnr: report.mean_psnr,
            trained_steps: steps,
        };
        log::info!("K={k}: {:.2} ms, ssim {:.4}", row.forward_ms, row.ssim);
        rows.push(row);
    }
    let table = bench_table(&rows);
    print!("{table}");
    if let Some(out) = &a.out {
        fs::create_dir_all(out)?;
        fs::write(out.join("bench.json"), serde_json::to_string_pretty(&rows)?)?;
        fs::write(out.join("bench.txt"), &table)?;
    }
    Ok(rows)
}

pub fn cmd_gen_data(a: &GenDataArgs) -> Result<()> {
    let mut ds = SyntheticDataset::new(a.seed, a.count, a.height, a.width);
    ds.difficulty = match a.difficulty.as_str() {
        "easy" => Some(Difficulty::Easy),
        "hard" => Some(Difficulty::Hard),
        "mixed" => None,
        o => return Err(Error::Config(format!("unknown difficulty {o:?}"))),
    };
    ds.texture = match a.texture.as_deref() {
        None => None,
        Some("stripes") => Some(TextureKind::Stripes),
        Some("checkers") => Some(TextureKind::Checkers),
        Some("solid") => Some(TextureKind::Solid),
        Some(o) => return Err(Error::Config(format!("unknown texture {o:?}"))),
    };
    if a.height < 8 || a.width < 8 {
        return Err(Error::Config("images must be at least 8x8".into()));
    }
    fs::create_dir_all(&a.out)?;
    for i in 0..a.count {
        let pair = ds.get(i);
        let stem = format!("{i:05}");
        write_sample(&a.out, &stem, &pair.sample())?;
        if a.gt_flow {
            fs::create_dir_all(a.out.join("flow"))?;
            write_tensor_file(&pair.gt_flow, a.out.join("flow").join(format!("{stem}.daft")))?;
        }
    }
    println!("wrote {} pairs to {}", a.count, a.out.display());
    Ok(())
}
