//! Runs a network at 64x48 and renders at 128x96 by upsampling its flows,
//! which warps the full-resolution garment instead of upsampling pixels.
//!
//! Usage: `high_res_inference [checkpoint_dir]`. Without a checkpoint the
//! model is briefly trained first.

use std::path::Path;

use daflow::checkpoint;
use daflow::cli::infer_sample;
use daflow::config::RunConfig;
use daflow::data::{save_image, SyntheticDataset, TextureKind};
use daflow::tensor::resize_bilinear;
use daflow::train::Trainer;

fn main() -> daflow::Result<()> {
    let (model, cfg) = match std::env::args().nth(1) {
        Some(dir) => {
            let ck = checkpoint::load::<f32>(Path::new(&dir))?;
            (ck.model, ck.config)
        }
        None => {
            let mut cfg = RunConfig::toy(4);
            cfg.apply_overrides(&["train_pairs=64", "eval_pairs=0", "epochs=4", "checkpoint_every=0"].map(String::from))?;
            cfg.checkpoint_dir = std::env::temp_dir().join("daflow-highres");
            let mut t = Trainer::new(cfg.clone())?;
            t.run()?;
            (t.model, cfg)
        }
    };
    let mut ds = SyntheticDataset::new(123, 1, 2 * cfg.height, 2 * cfg.width);
    ds.texture = Some(TextureKind::Stripes);
    let sample = ds.get(0).sample();
    let (hi, _) = infer_sample(&model, &cfg, &sample)?;
    save_image(&hi.image, 0, Path::new("highres_flow.png"))?;

    let low = daflow::tensor::area_downsample(&sample.target, 2)?;
    save_image(&resize_bilinear(&low, 2 * cfg.height, 2 * cfg.width), 0, Path::new("highres_pixel_upsample.png"))?;
    save_image(&sample.target, 0, Path::new("highres_target.png"))?;
    println!("wrote highres_flow.png, highres_pixel_upsample.png and highres_target.png");
    Ok(())
}
