//! Overfits one synthetic pair, the quickest sanity check that the network,
//! losses and optimizer fit together.
//!
//! Usage: `overfit [steps] [lr]`. Uses the toy widths so it finishes in about
//! a minute.

use daflow::config::RunConfig;
use daflow::data::{make_batch, save_image, Difficulty, SynthOptions};
use daflow::train::{Dataset, Trainer};

fn main() -> daflow::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map_or(400, |s| s.parse().expect("steps"));
    let lr = args.next().unwrap_or_else(|| "1e-3".into());

    let mut cfg = RunConfig::toy(4);
    cfg.batch_size = 1;
    cfg.epochs = steps;
    cfg.eval_pairs = 0;
    cfg.eval_every = 0;
    cfg.checkpoint_every = 0;
    cfg.log_every = 0;
    cfg.checkpoint_dir = std::env::temp_dir().join("daflow-overfit");
    cfg.set("lr", &lr)?;
    cfg.schedule.decay_every = 0;

    let pair = daflow::data::generate_pair(7, &SynthOptions::new(Difficulty::Easy, cfg.height, cfg.width)).sample();
    let (batch, target) = make_batch(&[&pair], cfg.heatmap_sigma)?;
    let mut t = Trainer::with_datasets(cfg, Dataset::InMemory(vec![pair]), None)?;
    for step in 1..=steps {
        let s = t.step(&batch, &target)?;
        if step % 50 == 0 || step == 1 {
            println!("step {step:>4}  loss {:.4}  l1 {:.4}", s.loss, s.l1);
        }
    }
    let out = t.model.predict(&batch)?.image;
    save_image(&out, 0, std::path::Path::new("overfit_result.png"))?;
    println!("wrote overfit_result.png");
    Ok(())
}
