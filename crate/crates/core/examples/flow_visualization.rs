//! Renders a rotational flow, a constant flow and a colour-wheel legend.

use std::path::Path;

use daflow::data::save_image;
use daflow::tensor::{Dims, Tensor};
use daflow::viz::{color_wheel, render_flow};
use daflow::warp::pixels_to_offset;

fn main() -> daflow::Result<()> {
    let (h, w) = (48, 48);
    let c = (w as f64 - 1.0) / 2.0;
    // Sample 0 swirls around the centre, sample 1 points right everywhere.
    let flow = Tensor::<f64>::from_fn(Dims::new(1, 4, h, w), |_, ch, y, x| {
        let (dx, dy) = (x as f64 - c, y as f64 - c);
        match ch {
            0 => pixels_to_offset(-dy * 0.2, w),
            1 => pixels_to_offset(dx * 0.2, h),
            2 => pixels_to_offset(3.0, w),
            _ => 0.0,
        }
    });
    let logits = Tensor::<f64>::from_fn(Dims::new(1, 2, h, w), |_, ch, _, x| if ch == 0 { x as f64 / 8.0 - 3.0 } else { 0.0 });
    save_image(&render_flow(&flow, Some(&logits))?, 0, Path::new("flow_tiles.png"))?;
    save_image(&color_wheel(128), 0, Path::new("flow_wheel.png"))?;
    println!("wrote flow_tiles.png and flow_wheel.png");
    Ok(())
}
