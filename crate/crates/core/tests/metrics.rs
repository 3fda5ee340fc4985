use daflow::metrics::{psnr, ssim};
use daflow::tensor::{Dims, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// SSIM from the textbook definition: 2-D Gaussian window, centred
/// moments, no separable filtering.
fn ssim_oracle(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let d = a.dims();
    let luma = |t: &Tensor<f64>, y, x| 0.299 * t.at(0, 0, y, x) + 0.587 * t.at(0, 1, y, x) + 0.114 * t.at(0, 2, y, x);
    let mut win = [[0.0; 11]; 11];
    let mut z = 0.0;
    for (i, row) in win.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            z += *v;
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    let mut count = 0;
    for y0 in 0..=d.h - 11 {
        for x0 in 0..=d.w - 11 {
            let (mut mx, mut my) = (0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let w = win[i][j] / z;
                    mx += w * luma(a, y0 + i, x0 + j);
                    my += w * luma(b, y0 + i, x0 + j);
                }
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let w = win[i][j] / z;
                    let (p, q) = (luma(a, y0 + i, x0 + j) - mx, luma(b, y0 + i, x0 + j) - my);
                    vx += w * p * p;
                    vy += w * q * q;
                    cxy += w * p * q;
                }
            }
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    total / count as f64
}

fn random_image(seed: u64, h: usize, w: usize) -> Tensor<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(Dims::new(1, 3, h, w), |_, c, y, x| {
        (0.5 + 0.3 * ((x + 2 * y + c) as f64 * 0.4).sin() + r.random_range(-0.2..0.2)).clamp(0.0, 1.0)
    })
}

fn add_noise(t: &Tensor<f64>, seed: u64, amp: f64) -> Tensor<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(t.dims(), |n, c, y, x| (t.at(n, c, y, x) + r.random_range(-amp..amp)).clamp(0.0, 1.0))
}

#[test]
fn ssim_matches_direct_definition() {
    for seed in 0..4 {
        let a = random_image(seed, 16, 19);
        let b = add_noise(&a, seed + 100, 0.15);
        let (got, want) = (ssim(&a, &b, 0).unwrap(), ssim_oracle(&a, &b));
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }
}

#[test]
fn psnr_of_uniform_offset() {
    let a = Tensor::<f64>::full(Dims::new(1, 3, 8, 8), 0.25);
    let b = Tensor::<f64>::full(Dims::new(1, 3, 8, 8), 0.35);
    // MSE = 0.01 gives exactly 20 dB.
    assert!((psnr(&a, &b, 0, 1.0).unwrap() - 20.0).abs() < 1e-9);
}

#[test]
fn smaller_than_window_is_an_error() {
    let a = Tensor::<f32>::zeros(Dims::new(1, 3, 10, 30));
    assert!(ssim(&a, &a, 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn metrics_are_symmetric(seed in 0u64..1000, h in 11usize..20, w in 11usize..20) {
        let a = random_image(seed, h, w);
        let b = add_noise(&a, seed ^ 7, 0.2);
        prop_assert!((ssim(&a, &b, 0).unwrap() - ssim(&b, &a, 0).unwrap()).abs() < 1e-12);
        prop_assert_eq!(psnr(&a, &b, 0, 1.0).unwrap(), psnr(&b, &a, 0, 1.0).unwrap());
    }

    #[test]
    fn identical_images_score_perfectly(seed in 0u64..1000) {
        let a = random_image(seed, 12, 14);
        prop_assert!((ssim(&a, &a, 0).unwrap() - 1.0).abs() < 1e-12);
        prop_assert!(psnr(&a, &a, 0, 1.0).unwrap().is_infinite());
    }

    #[test]
    fn more_noise_scores_worse(seed in 0u64..1000) {
        let a = random_image(seed, 16, 16);
        let (lo, hi) = (add_noise(&a, seed + 1, 0.05), add_noise(&a, seed + 1, 0.3));
        prop_assert!(ssim(&a, &lo, 0).unwrap() > ssim(&a, &hi, 0).unwrap());
        prop_assert!(psnr(&a, &lo, 0, 1.0).unwrap() > psnr(&a, &hi, 0, 1.0).unwrap());
    }
}
