//! Network definition.

mod config;
mod dafn;
mod layers;
mod sdafn;

pub use config::{DafnConfig, MergeMode};
pub use dafn::{DafnBlock, LevelState, StreamState};
pub use layers::{Conv, EstimatorRole, FlowEstimator, Pyramid, ResBlock, ShallowCodec};
pub use sdafn::{ForwardOutput, Prediction, Sdafn, TryOnBatch};
