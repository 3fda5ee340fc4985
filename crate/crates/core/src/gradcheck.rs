//! Finite-difference verification of every differentiable operation.
//!
//! Each case builds a small graph in `f64`, reduces its output to the scalar
//! `sum(out * R)` for a fixed random `R`, and compares the reverse-mode
//! gradient against central differences at a sample of input coordinates.
//! The relative error of a coordinate is `|a - n| / max(|a|, |n|, floor)`,
//! where the floor is `1e-3` times the largest probed numeric gradient of
//! that input, so that coordinates with vanishing gradients do not turn
//! rounding noise into failures.

use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::losses::{self, LevelWeighting, LossWeights, PerceptualExtractor};
use crate::model::{DafnConfig, Sdafn, TryOnBatch};
use crate::rng::{fork_indexed, Purpose};
use crate::tensor::{Dims, Tensor};
use crate::warp::pixels_to_offset;

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckOptions {
    pub seed: u64,
    /// Central-difference step.
    pub eps: f64,
    /// Largest accepted relative error.
    pub tolerance: f64,
    /// Coordinates probed per input tensor.
    pub probes: usize,
    /// Only run cases whose op or group name equals this.
    pub filter: Option<String>,
    /// Test hook: perturb the analytic gradient of this op so it must fail.
    pub corrupt: Option<String>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            seed: 0,
            eps: 1e-5,
            tolerance: 1e-4,
            probes: 24,
            filter: None,
            corrupt: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OpResult {
    pub op: String,
    pub group: String,
    pub checked: usize,
    /// Coordinates left out because they sit on a non-differentiable point.
    pub skipped: usize,
    pub max_rel_err: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub results: Vec<OpResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        !self.results.is_empty() && self.results.iter().all(|r| r.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &OpResult> {
        self.results.iter().filter(|r| !r.passed)
    }

    pub fn worst(&self) -> f64 {
        self.results.iter().map(|r| r.max_rel_err).fold(0.0, f64::max)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{:<20} {:<12} {:>7} {:>7} {:>12}  result\n", "op", "group", "checked", "skipped", "max_rel_err");
        for r in &self.results {
            let _ = writeln!(
                s,
                "{:<20} {:<12} {:>7} {:>7} {:>12.3e}  {}",
                r.op,
                r.group,
                r.checked,
                r.skipped,
                r.max_rel_err,
                if r.passed { "pass" } else { "FAIL" }
            );
        }
        let failed = self.failures().count();
        let _ = writeln!(
            s,
            "{} ops, {} failed, worst {:.3e} (tolerance {:.0e})",
            self.results.len(),
            failed,
            self.worst(),
            self.tolerance
        );
        s
    }
}

type Rng64 = crate::rng::Rng;

fn randn(r: &mut Rng64, dims: Dims, scale: f64) -> Tensor<f64> {
    Tensor::from_fn(dims, |_, _, _, _| scale * r.sample::<f64, _>(StandardNormal))
}

fn uniform(r: &mut Rng64, dims: Dims, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(dims, |_, _, _, _| r.random_range(lo..hi))
}

/// Values at least `gap` away from zero.
fn away_from_zero(r: &mut Rng64, dims: Dims, gap: f64) -> Tensor<f64> {
    Tensor::from_fn(dims, |_, _, _, _| {
        let v: f64 = r.random_range(gap..1.5);
        if r.random::<bool>() {
            v
        } else {
            -v
        }
    })
}

/// `2K`-channel flow with displacements of up to `max_px` pixels.
fn random_flow(r: &mut Rng64, n: usize, k: usize, h: usize, w: usize, max_px: f64) -> Tensor<f64> {
    Tensor::from_fn(Dims::new(n, 2 * k, h, w), |_, c, _, _| {
        let px = r.random_range(-max_px..max_px);
        pixels_to_offset(px, if c % 2 == 0 { w } else { h })
    })
}

type Build = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>;

struct OpCase {
    op: &'static str,
    group: &'static str,
    inputs: Vec<Tensor<f64>>,
    build: Build,
}

fn op_case(
    op: &'static str,
    group: &'static str,
    inputs: Vec<Tensor<f64>>,
    build: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + 'static,
) -> OpCase {
    OpCase {
        op,
        group,
        inputs,
        build: Box::new(build),
    }
}

fn op_cases(seed: u64) -> Vec<OpCase> {
    let mut r = fork_indexed(seed, Purpose::Gradcheck, 0);
    let r = &mut r;
    let d = |c, h, w| Dims::new(2, c, h, w);
    let mut cases = vec![
        op_case(
            "conv2d",
            "tensor_core",
            vec![randn(r, d(3, 6, 7), 1.0), randn(r, Dims::new(4, 3, 3, 3), 0.3), randn(r, Dims::new(1, 4, 1, 1), 0.1)],
            |g, v| g.conv2d(v[0], v[1], Some(v[2]), 1, 1),
        ),
        op_case(
            "conv2d_stride2",
            "tensor_core",
            vec![randn(r, d(3, 7, 8), 1.0), randn(r, Dims::new(5, 3, 3, 3), 0.3), randn(r, Dims::new(1, 5, 1, 1), 0.1)],
            |g, v| g.conv2d(v[0], v[1], Some(v[2]), 2, 1),
        ),
        op_case(
            "conv2d_1x1",
            "tensor_core",
            vec![randn(r, d(4, 5, 5), 1.0), randn(r, Dims::new(3, 4, 1, 1), 0.3)],
            |g, v| g.conv2d(v[0], v[1], None, 1, 0),
        ),
        op_case("leaky_relu", "tensor_core", vec![away_from_zero(r, d(3, 4, 5), 0.05)], |g, v| {
            g.leaky_relu(v[0], 0.1)
        }),
        op_case("sigmoid", "tensor_core", vec![randn(r, d(3, 4, 5), 2.0)], |g, v| g.sigmoid(v[0])),
        op_case("upsample2x", "tensor_core", vec![randn(r, d(3, 4, 5), 1.0)], |g, v| g.upsample2x(v[0])),
        op_case("resize", "tensor_core", vec![randn(r, d(2, 4, 5), 1.0)], |g, v| g.resize(v[0], 7, 9)),
        op_case("area_downsample", "tensor_core", vec![randn(r, d(2, 8, 6), 1.0)], |g, v| {
            g.area_downsample(v[0], 2)
        }),
        op_case(
            "concat_channels",
            "tensor_core",
            vec![randn(r, d(2, 3, 4), 1.0), randn(r, d(3, 3, 4), 1.0)],
            |g, v| g.concat_channels(&[v[0], v[1]]),
        ),
        op_case("slice_channels", "tensor_core", vec![randn(r, d(5, 3, 4), 1.0)], |g, v| {
            g.slice_channels(v[0], 1, 3)
        }),
        op_case("softmax_groups", "tensor_core", vec![randn(r, d(6, 3, 4), 1.5)], |g, v| {
            g.softmax_groups(v[0], 3)
        }),
        op_case(
            "add",
            "tensor_core",
            vec![randn(r, d(2, 3, 4), 1.0), randn(r, d(2, 3, 4), 1.0)],
            |g, v| g.add(v[0], v[1]),
        ),
        op_case(
            "sub",
            "tensor_core",
            vec![randn(r, d(2, 3, 4), 1.0), randn(r, d(2, 3, 4), 1.0)],
            |g, v| g.sub(v[0], v[1]),
        ),
        op_case(
            "mul",
            "tensor_core",
            vec![randn(r, d(2, 3, 4), 1.0), randn(r, d(2, 3, 4), 1.0)],
            |g, v| g.mul(v[0], v[1]),
        ),
        op_case("scale", "tensor_core", vec![randn(r, d(2, 3, 4), 1.0)], |g, v| g.scale(v[0], -0.7)),
        op_case("sum", "tensor_core", vec![randn(r, d(2, 3, 4), 1.0)], |g, v| g.sum(v[0])),
        op_case("mean", "tensor_core", vec![randn(r, d(2, 3, 4), 1.0)], |g, v| g.mean(v[0])),
        op_case(
            "bilinear_sample",
            "warp_ops",
            vec![randn(r, d(3, 6, 7), 1.0), random_flow(r, 2, 1, 6, 7, 2.5)],
            |g, v| g.bilinear_sample(v[0], v[1]),
        ),
        op_case(
            "daw_warp",
            "warp_ops",
            vec![randn(r, d(3, 6, 7), 1.0), random_flow(r, 2, 3, 6, 7, 2.5), randn(r, d(3, 6, 7), 1.0)],
            |g, v| g.daw_warp(v[0], v[1], v[2]),
        ),
        op_case(
            "upsample_flow",
            "warp_ops",
            vec![randn(r, d(3, 6, 8), 1.0), random_flow(r, 2, 2, 3, 4, 1.5), randn(r, d(2, 3, 4), 1.0)],
            |g, v| {
                let f = g.upsample2x(v[1])?;
                let a = g.upsample2x(v[2])?;
                g.daw_warp(v[0], f, a)
            },
        ),
        op_case(
            "merge_two_streams",
            "warp_ops",
            vec![
                randn(r, d(3, 6, 7), 1.0),
                random_flow(r, 2, 2, 6, 7, 2.5),
                randn(r, d(2, 6, 7), 1.0),
                randn(r, d(3, 6, 7), 1.0),
                random_flow(r, 2, 2, 6, 7, 2.5),
                randn(r, d(2, 6, 7), 1.0),
            ],
            |g, v| g.attention_warp(&[(v[0], v[1], v[2]), (v[3], v[4], v[5])]),
        ),
        op_case("gram", "losses", vec![randn(r, d(4, 5, 6), 1.0)], |g, v| g.gram(v[0])),
    ];
    let a = uniform(r, d(3, 5, 6), 0.0, 1.0);
    let gap = away_from_zero(r, d(3, 5, 6), 0.02);
    let b = Tensor::from_fn(a.dims(), |n, c, y, x| a.at(n, c, y, x) + 0.2 * gap.at(n, c, y, x));
    cases.push(op_case("l1_loss", "losses", vec![a, b], |g, v| losses::l1_loss(g, v[0], v[1])));

    let ex = std::rc::Rc::new(PerceptualExtractor::<f64>::random(seed));
    let (ex1, ex2, ex3) = (ex.clone(), ex.clone(), ex);
    cases.push(op_case(
        "perceptual_loss",
        "losses",
        vec![uniform(r, d(3, 16, 16), 0.0, 1.0), uniform(r, d(3, 16, 16), 0.0, 1.0)],
        move |g, v| losses::perceptual_loss(g, v[0], v[1], &ex1),
    ));
    cases.push(op_case(
        "style_loss",
        "losses",
        vec![uniform(r, d(3, 16, 16), 0.0, 1.0), uniform(r, d(3, 16, 16), 0.0, 1.0)],
        move |g, v| losses::style_loss(g, v[0], v[1], &ex2),
    ));
    let mut total_inputs = Vec::new();
    for s in [4, 8, 16] {
        let p = uniform(r, d(3, s, s), 0.0, 1.0);
        let q = uniform(r, d(3, s, s), 0.0, 1.0);
        total_inputs.push(p);
        total_inputs.push(q);
    }
    cases.push(op_case("total_loss", "losses", total_inputs, move |g, v| {
        let previews = [v[0], v[2], v[4]];
        let targets = [v[1], v[3], v[5]];
        let t = losses::total_loss(
            g,
            &previews,
            &targets,
            &LossWeights::default(),
            LevelWeighting::NPlusOne,
            Some(&ex3),
        )?;
        Ok(t.loss)
    }));
    cases
}

/// Picks coordinates to probe in a tensor of `len` values.
fn probe_indices(r: &mut Rng64, len: usize, probes: usize) -> Vec<usize> {
    if len <= probes {
        (0..len).collect()
    } else {
        let mut v = sample(r, len, probes).into_vec();
        v.sort_unstable();
        v
    }
}

/// Compares analytic and numeric gradients; returns the worst relative error.
fn compare(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = numeric.iter().chain(analytic).fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-3 * scale).max(1e-12);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

fn finish(op: &str, group: &str, errs: &[(usize, f64)], opts: &GradcheckOptions) -> OpResult {
    let max_rel_err = errs.iter().map(|e| e.1).fold(0.0, f64::max);
    OpResult {
        op: op.to_string(),
        group: group.to_string(),
        checked: errs.iter().map(|e| e.0).sum(),
        skipped: 0,
        max_rel_err,
        passed: max_rel_err.is_finite() && max_rel_err < opts.tolerance,
    }
}

fn corruption(opts: &GradcheckOptions, op: &str) -> f64 {
    if opts.corrupt.as_deref() == Some(op) {
        1.01
    } else {
        1.0
    }
}

fn reduce(g: &mut Graph<f64>, out: Var, weights: &Tensor<f64>) -> Result<Var> {
    let w = g.try_constant(weights.clone())?;
    let p = g.mul(out, w)?;
    g.sum(p)
}

fn run_op_case(case: &OpCase, index: u64, opts: &GradcheckOptions) -> Result<OpResult> {
    let mut r = fork_indexed(opts.seed, Purpose::Gradcheck, 1000 + index);
    let eval = |inputs: &[Tensor<f64>], weights: Option<&Tensor<f64>>| -> Result<(Graph<f64>, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars = inputs.iter().map(|t| g.leaf(t.clone())).collect::<Result<Vec<_>>>()?;
        let out = (case.build)(&mut g, &vars)?;
        let out = match weights {
            Some(w) => reduce(&mut g, out, w)?,
            None => out,
        };
        Ok((g, vars, out))
    };
    let (g0, _, out0) = eval(&case.inputs, None)?;
    let weights = randn(&mut r, g0.dims(out0), 1.0);
    drop(g0);

    let (g, vars, loss) = eval(&case.inputs, Some(&weights))?;
    let grads = g.backward(loss)?;
    let factor = corruption(opts, case.op);
    let mut errs = Vec::new();
    for (i, v) in vars.iter().enumerate() {
        let grad = grads
            .get(*v)
            .ok_or_else(|| Error::Contract(format!("{}: input {i} received no gradient", case.op)))?;
        let idx = probe_indices(&mut r, case.inputs[i].len(), opts.probes);
        let mut analytic = Vec::with_capacity(idx.len());
        let mut numeric = Vec::with_capacity(idx.len());
        for &j in &idx {
            let mut inputs = case.inputs.clone();
            let base = inputs[i].data()[j];
            inputs[i].data_mut()[j] = base + opts.eps;
            let (gp, _, lp) = eval(&inputs, Some(&weights))?;
            inputs[i].data_mut()[j] = base - opts.eps;
            let (gm, _, lm) = eval(&inputs, Some(&weights))?;
            numeric.push((gp.value(lp).item() - gm.value(lm).item()) / (2.0 * opts.eps));
            analytic.push(grad.data()[j] * factor);
        }
        errs.push((idx.len(), compare(&analytic, &numeric)));
    }
    Ok(finish(case.op, case.group, &errs, opts))
}

/// Configuration of the model-level case: every estimator, pyramid and codec
/// layer, at a size where finite differences stay cheap.
pub fn tiny_model_config() -> DafnConfig {
    DafnConfig {
        levels: 3,
        samples: 2,
        fpn_channels: vec![4, 4, 6],
        mfe_hidden: vec![6, 4, 4, 4],
        mfe_kernels: vec![3, 3, 3, 3],
        shallow_channels: vec![4, 4],
        keypoint_channels: 2,
        ..DafnConfig::default()
    }
}

fn run_model_case(opts: &GradcheckOptions) -> Result<OpResult> {
    const OP: &str = "sdafn_forward";
    let mut r = fork_indexed(opts.seed, Purpose::Gradcheck, 1);
    let cfg = tiny_model_config();
    let mut model = Sdafn::<f64>::new(cfg.clone(), opts.seed)?;
    // Heads start at zero, which puts every sample on the pixel grid where
    // bilinear interpolation is not differentiable.
    for p in model.params_mut().iter_mut() {
        if p.name.contains(".head.") {
            p.value = randn(&mut r, p.value.dims(), 0.05);
        }
    }
    let (h, w) = (16, 16);
    let batch = TryOnBatch {
        person_masked: uniform(&mut r, Dims::new(1, 3, h, w), 0.0, 1.0),
        keypoints: uniform(&mut r, Dims::new(1, cfg.keypoint_channels, h, w), 0.0, 1.0),
        garment: uniform(&mut r, Dims::new(1, 3, h, w), 0.0, 1.0),
    };
    let mut reducers: Vec<Tensor<f64>> = Vec::new();
    let eval = |m: &Sdafn<f64>, reducers: &mut Vec<Tensor<f64>>, r: &mut Rng64| -> Result<(Graph<f64>, Var)> {
        let mut g = Graph::new();
        let out = m.forward(&mut g, &batch)?;
        let mut terms = out.previews.clone();
        terms.push(out.image);
        if reducers.is_empty() {
            *reducers = terms.iter().map(|&t| randn(r, g.dims(t), 1.0)).collect();
        }
        let mut total: Option<Var> = None;
        for (&t, w) in terms.iter().zip(reducers.iter()) {
            let s = reduce(&mut g, t, w)?;
            total = Some(match total {
                Some(a) => g.add(a, s)?,
                None => s,
            });
        }
        Ok((g, total.expect("at least one output")))
    };
    let (g, loss) = eval(&model, &mut reducers, &mut r)?;
    let grads = g.backward(loss)?;
    drop(g);
    grads.write_params(model.params_mut());
    let factor = corruption(opts, OP);
    let ids: Vec<_> = model.params().iter().map(|(id, _)| id).collect();
    let probes = (opts.probes / 8).max(2);
    let mut errs = Vec::new();
    let mut skipped = 0;
    for id in ids {
        let len = model.params().get(id).value.len();
        let idx = probe_indices(&mut r, len, probes);
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for &j in &idx {
            let mut m = model.clone();
            let base = m.params().get(id).value.data()[j];
            let mut fd = |h: f64| -> Result<f64> {
                m.params_mut().get_mut(id).value.data_mut()[j] = base + h;
                let (gp, lp) = eval(&m, &mut reducers, &mut r)?;
                m.params_mut().get_mut(id).value.data_mut()[j] = base - h;
                let (gm, lm) = eval(&m, &mut reducers, &mut r)?;
                Ok((gp.value(lp).item() - gm.value(lm).item()) / (2.0 * h))
            };
            let (n1, n2) = (fd(opts.eps)?, fd(2.0 * opts.eps)?);
            // A leaky ReLU or bilinear kink inside the stencil makes the two
            // step sizes disagree; such coordinates have no derivative to check.
            if (n1 - n2).abs() > 0.5 * opts.tolerance * n1.abs().max(n2.abs()).max(1e-6) {
                skipped += 1;
                continue;
            }
            numeric.push(n1);
            analytic.push(model.params().get(id).grad.data()[j] * factor);
        }
        let e = compare(&analytic, &numeric);
        log::debug!("{OP} {}: {e:.3e}", model.params().get(id).name);
        errs.push((analytic.len(), e));
    }
    let mut res = finish(OP, "estimators", &errs, opts);
    res.skipped = skipped;
    let checked = res.checked;
    if skipped * 10 > checked + skipped {
        res.passed = false;
    }
    Ok(res)
}

fn selected(opts: &GradcheckOptions, op: &str, group: &str) -> bool {
    opts.filter.as_deref().is_none_or(|f| f == op || f == group)
}

/// Names of all cases as `(op, group)`.
pub fn case_names() -> Vec<(String, String)> {
    let mut v: Vec<_> = op_cases(0)
        .iter()
        .map(|c| (c.op.to_string(), c.group.to_string()))
        .collect();
    v.push(("sdafn_forward".into(), "estimators".into()));
    v
}

/// Runs the suite. Errors only on malformed cases; failed checks are
/// reported in the result.
pub fn run(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let mut results = Vec::new();
    for (i, case) in op_cases(opts.seed).iter().enumerate() {
        if selected(opts, case.op, case.group) {
            results.push(run_op_case(case, i as u64, opts)?);
        }
    }
    if selected(opts, "sdafn_forward", "estimators") {
        results.push(run_model_case(opts)?);
    }
    if results.is_empty() {
        return Err(Error::Config(format!(
            "gradcheck filter {:?} matches no op or group",
            opts.filter.as_deref().unwrap_or_default()
        )));
    }
    Ok(GradcheckReport {
        tolerance: opts.tolerance,
        results,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compare_uses_floor() {
        assert_eq!(compare(&[1.0, 0.0], &[1.0, 1e-9]), 1e-9 / 1e-3);
        assert!(compare(&[2.0], &[1.0]) > 0.4);
    }

    #[test]
    fn unknown_filter_is_config_error() {
        let opts = GradcheckOptions {
            filter: Some("nope".into()),
            ..Default::default()
        };
        assert!(matches!(run(&opts), Err(Error::Config(_))));
    }
}
