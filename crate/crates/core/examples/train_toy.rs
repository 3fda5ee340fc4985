//! Trains on synthetic pairs at 64x48 with logging, periodic evaluation and
//! checkpoints, then resumes for one more epoch from the final checkpoint.
//!
//! Usage: `train_toy [key=value ...]`, e.g. `train_toy epochs=20 train_pairs=2000`.

use daflow::config::RunConfig;
use daflow::train::{datasets, Trainer};

fn main() -> daflow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut cfg = RunConfig::toy(6);
    cfg.apply_overrides(&["train_pairs=200", "eval_pairs=40", "epochs=2", "log_every=10"].map(String::from))?;
    cfg.checkpoint_dir = "toy_run/checkpoints".into();
    cfg.output_dir = "toy_run/logs".into();
    cfg.apply_overrides(&std::env::args().skip(1).collect::<Vec<_>>())?;

    let mut t = Trainer::new(cfg.clone())?;
    t.enable_log()?;
    let s = t.run()?;
    if let Some(e) = &s.eval {
        println!("after {} steps: ssim {:.4}, psnr {:.2} dB", s.progress.step, e.mean_ssim, e.mean_psnr);
    }

    cfg.epochs += 1;
    let (train, eval) = datasets(&cfg)?;
    let mut t = Trainer::resume(cfg.clone(), &cfg.checkpoint_dir.join("final"), train, eval)?;
    let s = t.run()?;
    if let Some(e) = &s.eval {
        println!("resumed to {} steps: ssim {:.4}, psnr {:.2} dB", s.progress.step, e.mean_ssim, e.mean_psnr);
    }
    Ok(())
}
