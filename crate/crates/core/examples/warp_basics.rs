//! Bilinear warping and deformable attention warping on a small gradient image.
//!
//! Shifts a ramp by one pixel with a single flow, then blends two shifted
//! copies with attention logits and shows that one sample reduces to the
//! plain bilinear warp.

use daflow::tensor::{Dims, Tensor};
use daflow::warp::{bilinear_sample, daw_warp, pixels_to_offset, AttentionMaps, FlowField};

fn main() -> daflow::Result<()> {
    let (h, w) = (4, 6);
    let img = Tensor::<f32>::from_fn(Dims::new(1, 1, h, w), |_, _, _, x| x as f32);

    // Sample one pixel to the right everywhere.
    let dx = pixels_to_offset(1.0, w) as f32;
    let flow = Tensor::from_fn(Dims::new(1, 2, h, w), |_, c, _, _| if c == 0 { dx } else { 0.0 });
    let shifted = bilinear_sample(&img, &flow)?;
    println!("row 0 before: {:?}", &img.data()[..w]);
    println!("row 0 after:  {:?}", &shifted.data()[..w]);

    // Two samples: one pixel left and one pixel right, weighted 3:1 by their logits.
    let flow2 = Tensor::from_fn(Dims::new(1, 4, h, w), |_, c, _, _| match c {
        0 => -dx,
        2 => dx,
        _ => 0.0,
    });
    let logits = Tensor::from_fn(Dims::new(1, 2, h, w), |_, c, _, _| if c == 0 { 3f32.ln() } else { 0.0 });
    let blended = daw_warp(&img, &FlowField::new(flow2)?, &AttentionMaps::new(logits)?)?;
    println!("blend row 0:  {:?}", &blended.data()[..w]);

    let one = daw_warp(&img, &FlowField::new(flow.clone())?, &AttentionMaps::new(Tensor::zeros(Dims::new(1, 1, h, w)))?)?;
    println!("K=1 equals bilinear: {}", one == shifted);
    Ok(())
}
