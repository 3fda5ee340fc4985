//! Training objective: L1, perceptual and style losses over a cascade of scales.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{kaiming_conv, ParamId, ParamStore};
use crate::rng::{fork, Purpose};
use crate::tensor::{read_tensor_file, Dims, Real, Tensor};

/// Number of feature taps every extractor exposes.
pub const TAPS: usize = 5;

#[derive(Clone, Debug)]
pub enum Stage {
    Conv { weight: ParamId, bias: ParamId },
    Relu,
    /// 2x2 average pooling.
    Pool,
}

/// Frozen convolutional feature network with five tap points.
#[derive(Clone, Debug)]
pub struct PerceptualExtractor<T: Real = f32> {
    store: ParamStore<T>,
    stages: Vec<Stage>,
    /// Stage indices whose outputs are tapped, ascending.
    taps: [usize; TAPS],
    in_channels: usize,
}

impl<T: Real> PerceptualExtractor<T> {
    /// Seeded random network: five 3x3 conv+ReLU blocks with 2x2 average
    /// pooling between them, tapped after each ReLU.
    pub fn random(seed: u64) -> Self {
        let mut rng = fork(seed, Purpose::Extractor);
        let mut store = ParamStore::new();
        let mut stages = Vec::new();
        let mut taps = [0; TAPS];
        let mut prev = 3;
        for (i, &c) in [16usize, 32, 32, 64, 64].iter().enumerate() {
            if i > 0 {
                stages.push(Stage::Pool);
            }
            let weight = store
                .add(format!("conv{i}.weight"), kaiming_conv(&mut rng, Dims::new(c, prev, 3, 3), 0.0), false)
                .expect("unique names");
            let bias = store
                .add(format!("conv{i}.bias"), Tensor::zeros(Dims::new(1, c, 1, 1)), false)
                .expect("unique names");
            stages.push(Stage::Conv { weight, bias });
            stages.push(Stage::Relu);
            taps[i] = stages.len() - 1;
            prev = c;
        }
        PerceptualExtractor {
            store,
            stages,
            taps,
            in_channels: 3,
        }
    }

    /// Loads an extractor from a directory holding `manifest.txt` and tensor
    /// files. Manifest lines: `conv <weight> <bias>`, `relu`, `pool`, and one
    /// `taps i0 i1 i2 i3 i4` line of stage indices. `#` starts a comment.
    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join("manifest.txt"))?;
        let mut store = ParamStore::new();
        let mut stages = Vec::new();
        let mut taps = None;
        let mut in_channels = None;
        let mut prev_c: Option<usize> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |m: &str| Error::Format(format!("extractor manifest line {}: {m}", lineno + 1));
            let words: Vec<&str> = line.split_whitespace().collect();
            match words.as_slice() {
                ["conv", w, b] => {
                    let wt: Tensor<T> = read_tensor_file(dir.join(w))?;
                    let bt: Tensor<T> = read_tensor_file(dir.join(b))?;
                    let wd = wt.dims();
                    if wd.h != wd.w || wd.h.is_multiple_of(2) {
                        return Err(bad(&format!("kernel {wd} must be square and odd")));
                    }
                    if bt.len() != wd.n {
                        return Err(bad(&format!("bias has {} values for {} outputs", bt.len(), wd.n)));
                    }
                    if let Some(c) = prev_c {
                        if c != wd.c {
                            return Err(bad(&format!("expects {} input channels, previous conv gives {c}", wd.c)));
                        }
                    }
                    in_channels.get_or_insert(wd.c);
                    prev_c = Some(wd.n);
                    let i = stages.len();
                    let weight = store.add(format!("stage{i}.weight"), wt, false)?;
                    let bias = store.add(format!("stage{i}.bias"), bt.reshape(Dims::new(1, wd.n, 1, 1))?, false)?;
                    stages.push(Stage::Conv { weight, bias });
                }
                ["relu"] => stages.push(Stage::Relu),
                ["pool"] => stages.push(Stage::Pool),
                ["taps", rest @ ..] => {
                    let idx = rest
                        .iter()
                        .map(|s| s.parse::<usize>().map_err(|_| bad("tap index is not an integer")))
                        .collect::<Result<Vec<_>>>()?;
                    let arr: [usize; TAPS] = idx
                        .try_into()
                        .map_err(|_| bad(&format!("expected {TAPS} tap indices")))?;
                    taps = Some(arr);
                }
                _ => return Err(bad(&format!("unrecognized entry {line:?}"))),
            }
        }
        let taps = taps.ok_or_else(|| Error::Format("extractor manifest has no taps line".into()))?;
        if taps.windows(2).any(|w| w[0] >= w[1]) || taps[TAPS - 1] >= stages.len() {
            return Err(Error::Format(format!("tap indices {taps:?} must be ascending stage indices")));
        }
        Ok(PerceptualExtractor {
            store,
            stages,
            taps,
            in_channels: in_channels.ok_or_else(|| Error::Format("extractor has no conv layers".into()))?,
        })
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn taps(&self) -> [usize; TAPS] {
        self.taps
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    /// Smallest height/width the taps can be evaluated at.
    pub fn min_size(&self) -> usize {
        let pools = self.stages[..=self.taps[TAPS - 1]]
            .iter()
            .filter(|s| matches!(s, Stage::Pool))
            .count();
        1 << pools
    }

    pub fn applicable(&self, h: usize, w: usize) -> bool {
        let m = self.min_size();
        h >= m && w >= m && h.is_multiple_of(m) && w.is_multiple_of(m)
    }

    /// Tapped features of `x`.
    pub fn features(&self, g: &mut Graph<T>, x: Var) -> Result<Vec<Var>> {
        let d = g.dims(x);
        if !self.applicable(d.h, d.w) {
            return Err(Error::Config(format!(
                "input {}x{} too small or not divisible for the perceptual extractor (needs multiples of {})",
                d.h,
                d.w,
                self.min_size()
            )));
        }
        if d.c != self.in_channels {
            return Err(Error::shape(
                "perceptual_features",
                format!("extractor expects {} channels, got {d}", self.in_channels),
            ));
        }
        let mut feats = Vec::with_capacity(TAPS);
        let mut h = x;
        for (i, stage) in self.stages.iter().enumerate().take(self.taps[TAPS - 1] + 1) {
            h = match *stage {
                Stage::Conv { weight, bias } => {
                    let k = self.store.get(weight).value.dims().h;
                    let w = g.param(&self.store, weight);
                    let b = g.param(&self.store, bias);
                    g.conv2d(h, w, Some(b), 1, k / 2)?
                }
                Stage::Relu => g.leaky_relu(h, 0.0)?,
                Stage::Pool => g.area_downsample(h, 2)?,
            };
            if self.taps.contains(&i) {
                feats.push(h);
            }
        }
        Ok(feats)
    }
}

/// Mean absolute difference.
pub fn l1_loss<T: Real>(g: &mut Graph<T>, out: Var, target: Var) -> Result<Var> {
    g.mean_abs_diff(out, target)
}

pub fn perceptual_loss<T: Real>(g: &mut Graph<T>, out: Var, target: Var, ex: &PerceptualExtractor<T>) -> Result<Var> {
    let fo = ex.features(g, out)?;
    let ft = ex.features(g, target)?;
    sum_pairs(g, &fo, &ft, |g, a, b| g.mean_abs_diff(a, b))
}

pub fn style_loss<T: Real>(g: &mut Graph<T>, out: Var, target: Var, ex: &PerceptualExtractor<T>) -> Result<Var> {
    let fo = ex.features(g, out)?;
    let ft = ex.features(g, target)?;
    sum_pairs(g, &fo, &ft, |g, a, b| {
        let ga = g.gram(a)?;
        let gb = g.gram(b)?;
        g.mean_abs_diff(ga, gb)
    })
}

fn sum_pairs<T: Real>(
    g: &mut Graph<T>,
    a: &[Var],
    b: &[Var],
    mut f: impl FnMut(&mut Graph<T>, Var, Var) -> Result<Var>,
) -> Result<Var> {
    let mut total: Option<Var> = None;
    for (&x, &y) in a.iter().zip(b) {
        let term = f(g, x, y)?;
        total = Some(match total {
            Some(t) => g.add(t, term)?,
            None => term,
        });
    }
    Ok(total.expect("extractors have taps"))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub l1: f64,
    pub perceptual: f64,
    pub style: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            l1: 1.0,
            perceptual: 1.0,
            style: 100.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.l1, self.perceptual, self.style].iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config(format!("loss weights must be finite and nonnegative: {self:?}")));
        }
        Ok(())
    }
}

/// Per-scale multiplier in the total loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum LevelWeighting {
    /// `n + 1`.
    #[default]
    NPlusOne,
    /// `n - 1`, which silences the coarsest scale.
    NMinusOne,
}

impl LevelWeighting {
    pub fn factor(self, n: usize) -> f64 {
        match self {
            LevelWeighting::NPlusOne => (n + 1) as f64,
            LevelWeighting::NMinusOne => n as f64 - 1.0,
        }
    }
}

impl std::str::FromStr for LevelWeighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "n_plus_1" => Ok(LevelWeighting::NPlusOne),
            "n_minus_1" => Ok(LevelWeighting::NMinusOne),
            other => Err(Error::Config(format!("unknown level_weighting {other:?}"))),
        }
    }
}

impl std::fmt::Display for LevelWeighting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LevelWeighting::NPlusOne => "n_plus_1",
            LevelWeighting::NMinusOne => "n_minus_1",
        })
    }
}

/// Per-level loss values, for logging.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LevelLosses {
    pub l1: f64,
    pub perceptual: Option<f64>,
    pub style: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TotalLoss {
    pub loss: Var,
    pub levels: Vec<LevelLosses>,
}

/// Weighted sum over scales; `previews[n-1]` pairs with `targets[n-1]`,
/// `n = 1` the coarsest. Perceptual and style terms are skipped at scales the
/// extractor cannot evaluate, and whenever their weight is zero.
pub fn total_loss<T: Real>(
    g: &mut Graph<T>,
    previews: &[Var],
    targets: &[Var],
    weights: &LossWeights,
    weighting: LevelWeighting,
    ex: Option<&PerceptualExtractor<T>>,
) -> Result<TotalLoss> {
    weights.validate()?;
    if previews.len() != targets.len() || previews.is_empty() {
        return Err(Error::Contract(format!(
            "total_loss got {} previews and {} targets",
            previews.len(),
            targets.len()
        )));
    }
    let mut total: Option<Var> = None;
    let mut levels = Vec::with_capacity(previews.len());
    for (i, (&p, &t)) in previews.iter().zip(targets).enumerate() {
        let n = i + 1;
        let l1 = l1_loss(g, p, t)?;
        let mut rec = LevelLosses {
            l1: g.value(l1).item().to_f64(),
            ..LevelLosses::default()
        };
        let mut level = g.scale(l1, weights.l1)?;
        let d = g.dims(p);
        if let Some(ex) = ex.filter(|ex| ex.applicable(d.h, d.w)) {
            if weights.perceptual > 0.0 {
                let v = perceptual_loss(g, p, t, ex)?;
                rec.perceptual = Some(g.value(v).item().to_f64());
                let v = g.scale(v, weights.perceptual)?;
                level = g.add(level, v)?;
            }
            if weights.style > 0.0 {
                let v = style_loss(g, p, t, ex)?;
                rec.style = Some(g.value(v).item().to_f64());
                let v = g.scale(v, weights.style)?;
                level = g.add(level, v)?;
            }
        }
        let level = g.scale(level, weighting.factor(n))?;
        total = Some(match total {
            Some(acc) => g.add(acc, level)?,
            None => level,
        });
        levels.push(rec);
    }
    Ok(TotalLoss {
        loss: total.expect("nonempty"),
        levels,
    })
}
