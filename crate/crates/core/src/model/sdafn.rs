//! The full try-on network: twin pyramids, flow cascade, shallow codec.

use super::config::{DafnConfig, MergeMode};
use super::dafn::{DafnBlock, LevelState};
use super::layers::{Pyramid, ShallowCodec};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::ParamStore;
use crate::rng::{fork, Purpose};
use crate::tensor::{area_downsample, resize_bilinear, Real, Tensor};

/// Network inputs, all `(B, C, H, W)` with values in `[0, 1]`.
#[derive(Clone, Debug)]
pub struct TryOnBatch<T: Real = f32> {
    /// Person image with the clothing region masked out.
    pub person_masked: Tensor<T>,
    /// One Gaussian heatmap per keypoint.
    pub keypoints: Tensor<T>,
    /// In-shop garment image.
    pub garment: Tensor<T>,
}

impl<T: Real> TryOnBatch<T> {
    pub fn batch(&self) -> usize {
        self.garment.dims().n
    }

    pub fn hw(&self) -> (usize, usize) {
        let d = self.garment.dims();
        (d.h, d.w)
    }
}

/// Graph handles for one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub image: Var,
    /// Merged raw images at each cascade level, coarsest first.
    pub previews: Vec<Var>,
    pub levels: Vec<LevelState>,
    /// Full-resolution flows and logits used by the decoder.
    pub flow_src: Var,
    pub attn_src: Var,
    pub flow_ref: Option<Var>,
    pub attn_ref: Option<Var>,
}

/// Tensors produced by [`Sdafn::predict`].
#[derive(Clone, Debug)]
pub struct Prediction<T: Real = f32> {
    pub image: Tensor<T>,
    pub flow_src: Tensor<T>,
    pub attn_src: Tensor<T>,
    pub flow_ref: Option<Tensor<T>>,
    pub attn_ref: Option<Tensor<T>>,
}

#[derive(Clone, Debug)]
pub struct Sdafn<T: Real = f32> {
    config: DafnConfig,
    store: ParamStore<T>,
    pyramid_ref: Pyramid,
    pyramid_src: Pyramid,
    blocks: Vec<DafnBlock>,
    encoder: ShallowCodec,
    decoder: ShallowCodec,
}

impl<T: Real> Sdafn<T> {
    pub fn new(config: DafnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = fork(seed, Purpose::Init);
        let mut store = ParamStore::new();
        let n = config.levels;
        let chans = &config.fpn_channels[..n];
        let s = config.slope;
        let pyramid_ref = Pyramid::new(&mut store, &mut rng, "fpn_ref", config.reference_channels(), chans, s)?;
        let pyramid_src = Pyramid::new(&mut store, &mut rng, "fpn_src", config.image_channels, chans, s)?;
        let blocks = (1..=n)
            .map(|level| DafnBlock::new(&mut store, &mut rng, &config, level))
            .collect::<Result<Vec<_>>>()?;
        let sc = &config.shallow_channels;
        let encoder = ShallowCodec::encoder(&mut store, &mut rng, "encoder", config.image_channels, sc, s)?;
        let dec_in = match config.merge_mode {
            MergeMode::Concat if !config.single_branch => 2 * sc[1],
            _ => sc[1],
        };
        let decoder = ShallowCodec::decoder(&mut store, &mut rng, "decoder", dec_in, sc[0], config.image_channels, s)?;
        Ok(Sdafn {
            config,
            store,
            pyramid_ref,
            pyramid_src,
            blocks,
            encoder,
            decoder,
        })
    }

    pub fn config(&self) -> &DafnConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn blocks(&self) -> &[DafnBlock] {
        &self.blocks
    }

    fn check_batch(&self, b: &TryOnBatch<T>) -> Result<()> {
        let gd = b.garment.dims();
        self.config.check_input_dims(gd.h, gd.w)?;
        if gd.c != self.config.image_channels {
            return Err(Error::shape("sdafn_forward", format!("garment {gd} has wrong channel count")));
        }
        let pd = b.person_masked.dims();
        if pd != gd {
            return Err(Error::mismatch("sdafn_forward", pd, gd));
        }
        let kd = b.keypoints.dims();
        if kd.c != self.config.keypoint_channels || kd.with_c(gd.c) != gd {
            return Err(Error::shape(
                "sdafn_forward",
                format!("keypoints {kd} incompatible with images {gd}"),
            ));
        }
        Ok(())
    }

    /// Builds the forward graph. Inputs become constants of `g`.
    pub fn forward(&self, g: &mut Graph<T>, batch: &TryOnBatch<T>) -> Result<ForwardOutput> {
        self.check_batch(batch)?;
        let person = g.try_constant(batch.person_masked.clone())?;
        let kp = g.try_constant(batch.keypoints.clone())?;
        let garment = g.try_constant(batch.garment.clone())?;

        let ref_in = g.concat_channels(&[person, kp])?;
        let feats_r = self.pyramid_ref.forward(g, &self.store, ref_in)?;
        let feats_s = self.pyramid_src.forward(g, &self.store, garment)?;

        let mut levels: Vec<LevelState> = Vec::with_capacity(self.blocks.len());
        let mut previews = Vec::with_capacity(self.blocks.len());
        for (i, block) in self.blocks.iter().enumerate() {
            let state = block.forward(g, &self.store, feats_r[i], feats_s[i], levels.last())?;
            let f = self.config.level_factor(block.level);
            let p = g.area_downsample(person, f)?;
            let q = g.area_downsample(garment, f)?;
            previews.push(self.merge(g, &state_flows(&state), p, q, true)?);
            levels.push(state);
        }

        let last = levels.last().expect("at least two levels");
        let up = |g: &mut Graph<T>, v: Option<Var>| v.map(|v| g.upsample2x(v)).transpose();
        let flows = Flows {
            flow_src: g.upsample2x(last.source.flow)?,
            attn_src: g.upsample2x(last.source.attn)?,
            flow_ref: up(g, last.reference.map(|r| r.flow))?,
            attn_ref: up(g, last.reference.map(|r| r.attn))?,
        };
        let image = self.render(g, &flows, person, garment)?;
        Ok(ForwardOutput {
            image,
            previews,
            levels,
            flow_src: flows.flow_src,
            attn_src: flows.attn_src,
            flow_ref: flows.flow_ref,
            attn_ref: flows.attn_ref,
        })
    }

    /// Warps both streams with `flows` and fuses them. Previews average the
    /// two streams in concat mode so the result stays image-like.
    fn merge(&self, g: &mut Graph<T>, flows: &Flows, person: Var, garment: Var, preview: bool) -> Result<Var> {
        let src = (garment, flows.flow_src, flows.attn_src);
        let Some((fr, ar)) = flows.flow_ref.zip(flows.attn_ref) else {
            return g.daw_warp(src.0, src.1, src.2);
        };
        let refs = (person, fr, ar);
        match self.config.merge_mode {
            MergeMode::JointSoftmax => g.attention_warp(&[refs, src]),
            MergeMode::Concat => {
                let wr = g.daw_warp(refs.0, refs.1, refs.2)?;
                let ws = g.daw_warp(src.0, src.1, src.2)?;
                if preview {
                    let s = g.add(wr, ws)?;
                    g.scale(s, 0.5)
                } else {
                    g.concat_channels(&[wr, ws])
                }
            }
        }
    }

    fn render(&self, g: &mut Graph<T>, flows: &Flows, person: Var, garment: Var) -> Result<Var> {
        let ep = self.encoder.forward(g, &self.store, person)?;
        let eg = self.encoder.forward(g, &self.store, garment)?;
        let merged = self.merge(g, flows, ep, eg, false)?;
        self.decoder.forward(g, &self.store, merged)
    }

    /// Forward pass without keeping the graph.
    pub fn predict(&self, batch: &TryOnBatch<T>) -> Result<Prediction<T>> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, batch)?;
        Ok(Prediction {
            image: g.value(out.image).clone(),
            flow_src: g.value(out.flow_src).clone(),
            attn_src: g.value(out.attn_src).clone(),
            flow_ref: out.flow_ref.map(|v| g.value(v).clone()),
            attn_ref: out.attn_ref.map(|v| g.value(v).clone()),
        })
    }

    /// Estimates flows at a lower resolution and renders at the batch's own
    /// resolution. `low_res` is the `(h, w)` the network runs at; the images
    /// are area-downsampled to it. `keypoints_low` overrides the downsampled
    /// heatmaps, e.g. with maps rendered natively at `low_res`.
    pub fn infer_at_resolution(
        &self,
        hi: &TryOnBatch<T>,
        low_res: (usize, usize),
        keypoints_low: Option<&Tensor<T>>,
    ) -> Result<Prediction<T>> {
        let (h, w) = hi.hw();
        if low_res == (h, w) {
            return self.predict(hi);
        }
        let (lh, lw) = low_res;
        if lh == 0 || h % lh != 0 || lw == 0 || w % lw != 0 || h / lh != w / lw {
            return Err(Error::Config(format!(
                "inference resolution {h}x{w} is not an integer multiple of {lh}x{lw}"
            )));
        }
        let f = h / lh;
        let lo = TryOnBatch {
            person_masked: area_downsample(&hi.person_masked, f)?,
            keypoints: match keypoints_low {
                Some(k) => k.clone(),
                None => area_downsample(&hi.keypoints, f)?,
            },
            garment: area_downsample(&hi.garment, f)?,
        };
        let p = self.predict(&lo)?;
        let up = |t: &Tensor<T>| resize_bilinear(t, h, w);
        let flows_t = [
            Some(up(&p.flow_src)),
            Some(up(&p.attn_src)),
            p.flow_ref.as_ref().map(up),
            p.attn_ref.as_ref().map(up),
        ];
        let mut g = Graph::new();
        let person = g.try_constant(hi.person_masked.clone())?;
        let garment = g.try_constant(hi.garment.clone())?;
        let mut c = |t: &Option<Tensor<T>>| t.clone().map(|t| g.constant(t));
        let flows = Flows {
            flow_src: c(&flows_t[0]).expect("source flow"),
            attn_src: c(&flows_t[1]).expect("source logits"),
            flow_ref: c(&flows_t[2]),
            attn_ref: c(&flows_t[3]),
        };
        let image = self.render(&mut g, &flows, person, garment)?;
        let [fs, as_, fr, ar] = flows_t;
        Ok(Prediction {
            image: g.value(image).clone(),
            flow_src: fs.expect("source flow"),
            attn_src: as_.expect("source logits"),
            flow_ref: fr,
            attn_ref: ar,
        })
    }

    /// Decodes the equal-weight mix of the encoded person and garment, which is
    /// what the untrained network produces.
    pub fn identity_render(&self, batch: &TryOnBatch<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let person = g.try_constant(batch.person_masked.clone())?;
        let garment = g.try_constant(batch.garment.clone())?;
        let ep = self.encoder.forward(&mut g, &self.store, person)?;
        let eg = self.encoder.forward(&mut g, &self.store, garment)?;
        let merged = if self.config.single_branch {
            eg
        } else if self.config.merge_mode == MergeMode::Concat {
            g.concat_channels(&[ep, eg])?
        } else {
            let s = g.add(ep, eg)?;
            g.scale(s, 0.5)?
        };
        let out = self.decoder.forward(&mut g, &self.store, merged)?;
        Ok(g.value(out).clone())
    }
}

#[derive(Clone, Copy, Debug)]
struct Flows {
    flow_src: Var,
    attn_src: Var,
    flow_ref: Option<Var>,
    attn_ref: Option<Var>,
}

fn state_flows(s: &LevelState) -> Flows {
    Flows {
        flow_src: s.source.flow,
        attn_src: s.source.attn,
        flow_ref: s.reference.map(|r| r.flow),
        attn_ref: s.reference.map(|r| r.attn),
    }
}
