use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// How the warped reference and source streams are fused before decoding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum MergeMode {
    /// One softmax over all `2K` samples of both streams.
    #[default]
    JointSoftmax,
    /// Each stream is warped with its own softmax and the results are
    /// concatenated along channels.
    Concat,
}

impl FromStr for MergeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint_softmax" => Ok(MergeMode::JointSoftmax),
            "concat" => Ok(MergeMode::Concat),
            other => Err(Error::Config(format!("unknown merge_mode {other:?}"))),
        }
    }
}

impl fmt::Display for MergeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MergeMode::JointSoftmax => "joint_softmax",
            MergeMode::Concat => "concat",
        })
    }
}

/// Architectural hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct DafnConfig {
    /// Pyramid levels `N`.
    pub levels: usize,
    /// Samples per pixel `K`.
    pub samples: usize,
    /// Channels of each pyramid encoding layer, finest (stride 2) first.
    /// Only the first `levels` entries are used.
    pub fpn_channels: Vec<usize>,
    /// Hidden widths of the four estimator convolutions.
    pub mfe_hidden: Vec<usize>,
    /// Kernel sizes of the four estimator convolutions.
    pub mfe_kernels: Vec<usize>,
    /// Hidden widths of the two-layer shallow encoder.
    pub shallow_channels: Vec<usize>,
    /// Drops the self-flow estimator and the reference stream.
    pub single_branch: bool,
    pub merge_mode: MergeMode,
    pub keypoint_channels: usize,
    pub image_channels: usize,
    /// LeakyReLU negative slope.
    pub slope: f64,
}

impl Default for DafnConfig {
    fn default() -> Self {
        DafnConfig {
            levels: 5,
            samples: 6,
            fpn_channels: vec![64, 96, 128, 256, 256],
            mfe_hidden: vec![256, 128, 64, 32],
            mfe_kernels: vec![3, 7, 7, 7],
            shallow_channels: vec![32, 64],
            single_branch: false,
            merge_mode: MergeMode::JointSoftmax,
            keypoint_channels: 18,
            image_channels: 3,
            slope: 0.1,
        }
    }
}

impl DafnConfig {
    /// Small widths for CPU-scale experiments at 64x48.
    pub fn toy(samples: usize) -> Self {
        DafnConfig {
            levels: 4,
            samples,
            fpn_channels: vec![16, 24, 32, 48],
            mfe_hidden: vec![48, 32, 24, 16],
            mfe_kernels: vec![3, 7, 7, 7],
            shallow_channels: vec![16, 24],
            ..DafnConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.levels < 2 {
            return err(format!("levels must be >= 2, got {}", self.levels));
        }
        if self.samples < 1 {
            return err("samples must be >= 1".into());
        }
        if self.fpn_channels.len() < self.levels {
            return err(format!(
                "fpn_channels has {} entries but {} levels are configured",
                self.fpn_channels.len(),
                self.levels
            ));
        }
        if self.mfe_hidden.len() != 4 || self.mfe_kernels.len() != 4 {
            return err("mfe_hidden and mfe_kernels must have 4 entries".into());
        }
        if self.mfe_kernels.iter().any(|k| k % 2 == 0) {
            return err(format!("mfe_kernels must be odd, got {:?}", self.mfe_kernels));
        }
        if self.shallow_channels.len() != 2 {
            return err("shallow_channels must have 2 entries".into());
        }
        let all = self
            .fpn_channels
            .iter()
            .chain(&self.mfe_hidden)
            .chain(&self.shallow_channels);
        if all.copied().any(|c| c == 0) || self.image_channels == 0 {
            return err("channel counts must be positive".into());
        }
        if !(0.0..1.0).contains(&self.slope) {
            return err(format!("slope {} outside [0, 1)", self.slope));
        }
        Ok(())
    }

    /// Required divisor of the input height and width.
    pub fn divisor(&self) -> usize {
        1 << self.levels
    }

    pub fn check_input_dims(&self, h: usize, w: usize) -> Result<()> {
        let d = self.divisor();
        if h == 0 || w == 0 || !h.is_multiple_of(d) || !w.is_multiple_of(d) {
            return Err(Error::Config(format!(
                "input {h}x{w} is not divisible by 2^{} = {d}",
                self.levels
            )));
        }
        Ok(())
    }

    /// Feature channels at cascade level `n` (1 = coarsest).
    pub fn level_channels(&self, n: usize) -> usize {
        self.fpn_channels[self.levels - n]
    }

    /// Downsampling factor of cascade level `n` relative to the input.
    pub fn level_factor(&self, n: usize) -> usize {
        1 << (self.levels - n + 1)
    }

    /// Channels entering the reference pyramid.
    pub fn reference_channels(&self) -> usize {
        self.image_channels + self.keypoint_channels
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = DafnConfig::default();
        c.validate().unwrap();
        assert_eq!(c.levels, 5);
        assert_eq!(c.samples, 6);
        assert_eq!(c.mfe_hidden, [256, 128, 64, 32]);
        assert_eq!(c.mfe_kernels, [3, 7, 7, 7]);
        assert_eq!(c.shallow_channels, [32, 64]);
        DafnConfig::toy(6).validate().unwrap();
    }

    #[test]
    fn invariants_enforced() {
        let bad = DafnConfig {
            levels: 1,
            ..DafnConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = DafnConfig {
            samples: 0,
            ..DafnConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = DafnConfig {
            mfe_hidden: vec![1, 2, 3],
            ..DafnConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn level_geometry() {
        let c = DafnConfig::default();
        assert_eq!(c.level_factor(1), 32);
        assert_eq!(c.level_factor(5), 2);
        assert_eq!(c.level_channels(5), 64);
        assert_eq!(c.level_channels(1), 256);
        assert!(c.check_input_dims(256, 192).is_ok());
        assert!(c.check_input_dims(250, 192).is_err());
        assert_eq!(c.reference_channels(), 21);
    }

    #[test]
    fn merge_mode_parses() {
        assert_eq!("concat".parse::<MergeMode>().unwrap(), MergeMode::Concat);
        assert_eq!(MergeMode::JointSoftmax.to_string(), "joint_softmax");
        assert!("avg".parse::<MergeMode>().is_err());
    }
}
