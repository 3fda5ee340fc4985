//! One level of the coarse-to-fine flow cascade.

use rand::Rng;

use super::config::DafnConfig;
use super::layers::{split_refine, split_single, EstimatorRole, FlowEstimator};
use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::ParamStore;
use crate::tensor::Real;

/// Flows, attention logits and intermediates of a level for one stream.
#[derive(Clone, Copy, Debug)]
pub struct StreamState {
    /// Accumulated offsets `o^n`, `2K` channels.
    pub flow: Var,
    /// Final attention logits `a^n` (refine estimator output), `K` channels.
    pub attn: Var,
    /// Upsampled previous offsets `U(o^{n-1})`; `None` at the coarsest level.
    pub base: Option<Var>,
    /// Offsets from the first-stage estimator (self for reference, cross for source).
    pub first_residual: Var,
    /// Offsets from the refine estimator.
    pub refine_residual: Var,
    /// `first_residual + refine_residual`, added to `base` to form `flow`.
    pub residual_sum: Var,
    /// Logits emitted by the first-stage estimator.
    pub first_attn: Var,
    /// Features warped by the inherited flow.
    pub prewarped: Var,
    /// Features warped by the first-stage estimate.
    pub warped: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct LevelState {
    pub source: StreamState,
    /// Absent in single-branch mode.
    pub reference: Option<StreamState>,
    /// Raw refine estimator output.
    pub refine_out: Var,
}

/// Estimators of one cascade level.
#[derive(Clone, Debug)]
pub struct DafnBlock {
    pub level: usize,
    pub self_mfe: Option<FlowEstimator>,
    pub cross_mfe: FlowEstimator,
    pub refine_mfe: FlowEstimator,
    samples: usize,
}

impl DafnBlock {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, rng: &mut R, cfg: &DafnConfig, level: usize) -> Result<Self> {
        let c = cfg.level_channels(level);
        let k = cfg.samples;
        let make = |store: &mut ParamStore<T>, rng: &mut R, name: &str, role, cin, streams| {
            FlowEstimator::new(
                store,
                rng,
                &format!("level{level}.{name}"),
                role,
                cin,
                &cfg.mfe_hidden,
                &cfg.mfe_kernels,
                k,
                streams,
                cfg.slope,
            )
        };
        let self_mfe = if cfg.single_branch {
            None
        } else {
            Some(make(store, rng, "self", EstimatorRole::SelfFlow, c, 1)?)
        };
        let cross_mfe = make(store, rng, "cross", EstimatorRole::CrossFlow, 2 * c, 1)?;
        let streams = if cfg.single_branch { 1 } else { 2 };
        let refine_mfe = make(store, rng, "refine", EstimatorRole::Refine, 2 * c, streams)?;
        Ok(DafnBlock {
            level,
            self_mfe,
            cross_mfe,
            refine_mfe,
            samples: k,
        })
    }

    /// Runs the level on reference features `x_r` and source features `x_s`
    /// given the previous level's state.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x_r: Var,
        x_s: Var,
        prev: Option<&LevelState>,
    ) -> Result<LevelState> {
        let k = self.samples;

        let inherit = |g: &mut Graph<T>, x: Var, s: Option<&StreamState>| -> Result<(Var, Option<Var>)> {
            match s {
                None => Ok((x, None)),
                Some(s) => {
                    let flow = g.upsample2x(s.flow)?;
                    let attn = g.upsample2x(s.attn)?;
                    Ok((g.daw_warp(x, flow, attn)?, Some(flow)))
                }
            }
        };
        let (pre_s, base_s) = inherit(g, x_s, prev.map(|p| &p.source))?;

        let (pre_r, ref_first) = match &self.self_mfe {
            Some(mfe) => {
                let (pre_r, base_r) = inherit(g, x_r, prev.and_then(|p| p.reference.as_ref()))?;
                let out = mfe.forward(g, store, pre_r)?;
                let (d, a) = split_single(g, out, k)?;
                let w = g.daw_warp(pre_r, d, a)?;
                (w, Some((pre_r, base_r, d, a)))
            }
            None => (x_r, None),
        };

        let cross_in = g.concat_channels(&[pre_s, pre_r])?;
        let out = self.cross_mfe.forward(g, store, cross_in)?;
        let (d_s, a_s) = split_single(g, out, k)?;
        let w_s = g.daw_warp(pre_s, d_s, a_s)?;

        let refine_in = g.concat_channels(&[w_s, pre_r])?;
        let refine_out = self.refine_mfe.forward(g, store, refine_in)?;

        let finish = |g: &mut Graph<T>, base: Option<Var>, first: Var, refine: Var| -> Result<(Var, Var)> {
            let sum = g.add(first, refine)?;
            let flow = match base {
                Some(b) => g.add(b, sum)?,
                None => sum,
            };
            Ok((sum, flow))
        };

        if let Some((pre_r_in, base_r, d_r, a_r)) = ref_first {
            let [rs, rr, as_, ar] = split_refine(g, refine_out, k)?;
            let (sum_s, flow_s) = finish(g, base_s, d_s, rs)?;
            let (sum_r, flow_r) = finish(g, base_r, d_r, rr)?;
            Ok(LevelState {
                source: StreamState {
                    flow: flow_s,
                    attn: as_,
                    base: base_s,
                    first_residual: d_s,
                    refine_residual: rs,
                    residual_sum: sum_s,
                    first_attn: a_s,
                    prewarped: pre_s,
                    warped: w_s,
                },
                reference: Some(StreamState {
                    flow: flow_r,
                    attn: ar,
                    base: base_r,
                    first_residual: d_r,
                    refine_residual: rr,
                    residual_sum: sum_r,
                    first_attn: a_r,
                    prewarped: pre_r_in,
                    warped: pre_r,
                }),
                refine_out,
            })
        } else {
            let (rs, as_) = split_single(g, refine_out, k)?;
            let (sum_s, flow_s) = finish(g, base_s, d_s, rs)?;
            Ok(LevelState {
                source: StreamState {
                    flow: flow_s,
                    attn: as_,
                    base: base_s,
                    first_residual: d_s,
                    refine_residual: rs,
                    residual_sum: sum_s,
                    first_attn: a_s,
                    prewarped: pre_s,
                    warped: w_s,
                },
                reference: None,
                refine_out,
            })
        }
    }
}
