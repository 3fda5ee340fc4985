use daflow::tensor::{Dims, Tensor};
use daflow::viz::{render_flow, rgb_to_hue_sat, GUTTER};
use daflow::warp::pixels_to_offset;

fn pixel(img: &Tensor<f64>, y: usize, x: usize) -> [f64; 3] {
    [img.at(0, 0, y, x), img.at(0, 1, y, x), img.at(0, 2, y, x)]
}

fn hue_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

#[test]
fn rotational_flow_sweeps_the_hue_circle() {
    let n = 41;
    let c = (n as f64 - 1.0) / 2.0;
    let flow = Tensor::<f64>::from_fn(Dims::new(1, 2, n, n), |_, ch, y, x| {
        let (dx, dy) = (x as f64 - c, y as f64 - c);
        // Tangential field: (-dy, dx).
        if ch == 0 {
            pixels_to_offset(-dy, n)
        } else {
            pixels_to_offset(dx, n)
        }
    });
    let img = render_flow(&flow, None).unwrap();
    // Walk a circle of radius 15 and check the hue changes continuously and
    // covers the whole wheel once.
    let steps = 360;
    let mut prev = None;
    let mut travelled = 0.0;
    for i in 0..=steps {
        let t = i as f64 / steps as f64 * std::f64::consts::TAU;
        let (x, y) = ((c + 15.0 * t.cos()).round() as usize, (c + 15.0 * t.sin()).round() as usize);
        let (h, s) = rgb_to_hue_sat(pixel(&img, y, x));
        assert!(s > 0.5, "saturation {s} at ({x}, {y})");
        if let Some(p) = prev {
            let gap = hue_gap(h, p);
            assert!(gap < 12.0, "hue jumps by {gap} at step {i}");
            travelled += gap;
        }
        prev = Some(h);
    }
    assert!((travelled - 360.0).abs() < 20.0, "hue travelled {travelled}");
}

#[test]
fn constant_rightward_flow_has_one_hue() {
    let flow = Tensor::<f64>::from_fn(Dims::new(1, 2, 6, 8), |_, c, _, _| if c == 0 { 0.4 } else { 0.0 });
    let img = render_flow(&flow, None).unwrap();
    for y in 0..6 {
        for x in 0..8 {
            let (h, s) = rgb_to_hue_sat(pixel(&img, y, x));
            assert!(hue_gap(h, 0.0) < 1e-9);
            assert!((s - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn tiles_follow_samples_and_batch() {
    let flow = Tensor::<f32>::zeros(Dims::new(2, 6, 5, 7));
    let logits = Tensor::<f32>::zeros(Dims::new(2, 3, 5, 7));
    let img = render_flow(&flow, Some(&logits)).unwrap();
    assert_eq!(img.dims(), Dims::new(1, 3, 2 * 5 + GUTTER, 6 * 7 + 5 * GUTTER));
    // A third of the weight per sample.
    assert!((img.at(0, 0, 0, 3 * (7 + GUTTER)) - 1.0 / 3.0).abs() < 1e-6);
    assert!(render_flow(&flow, Some(&Tensor::zeros(Dims::new(2, 2, 5, 7)))).is_err());
}
