//! Generates a few synthetic try-on pairs and writes them as a dataset
//! directory plus a contact sheet of garment, masked person and target.

use std::path::PathBuf;

use daflow::data::{save_image, write_sample, Difficulty, SynthOptions};
use daflow::tensor::{Dims, Tensor};

fn main() -> daflow::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "synthetic_pairs".into()));
    let mut rows = Vec::new();
    for (i, difficulty) in [Difficulty::Easy, Difficulty::Hard, Difficulty::Hard].into_iter().enumerate() {
        let pair = daflow::data::generate_pair(i as u64, &SynthOptions::new(difficulty, 64, 48));
        println!(
            "pair {i}: {:?}, max garment displacement {:.1} px, mask {:?}",
            difficulty,
            pair.max_garment_displacement(),
            pair.mask_box
        );
        write_sample(&out, &format!("{i:03}"), &pair.sample())?;
        rows.push([pair.garment, pair.person_masked, pair.target]);
    }
    let sheet = tile(&rows);
    save_image(&sheet, 0, &out.join("contact_sheet.png"))?;
    println!("wrote {}", out.display());
    Ok(())
}

/// Lays out equally sized `(1, 3, h, w)` images in a grid.
fn tile(rows: &[[Tensor; 3]]) -> Tensor {
    let d = rows[0][0].dims();
    Tensor::from_fn(Dims::new(1, 3, d.h * rows.len(), d.w * 3), |_, c, y, x| {
        rows[y / d.h][x / d.w].at(0, c, y % d.h, x % d.w)
    })
}
