//! Deformable attention flows for single-stage virtual try-on.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] and [`graph`]: NCHW tensors and a reverse-mode autodiff engine.
//! * [`warp`]: bilinear warping, K-sample deformable attention warping and the
//!   joint-softmax merge of two warped streams.
//! * [`model`]: twin feature pyramids, the cascaded flow estimator and the
//!   shallow encoder/decoder.
//! * [`losses`], [`optim`], [`metrics`]: training objective, AdamW, SSIM/PSNR.
//! * [`data`]: a procedural try-on pair generator and a dataset directory loader.
//! * [`train`], [`checkpoint`], [`config`], [`viz`], [`gradcheck`], [`cli`]:
//!   the training loop and everything the `dafnet` binary exposes.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod viz;
pub mod warp;

pub use error::{Error, Result};
pub use graph::{Gradients, Graph, Var};
pub use params::{ParamId, ParamStore, Parameter};
pub use tensor::{Dims, Real, Tensor};
