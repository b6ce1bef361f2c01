//! Training-free orchestration of 4D human mesh recovery from video.
//!
//! The engine turns a frame sequence and per-human prompts into
//! per-identity mesh parameter trajectories:
//!
//! 1. a segmentation backend produces identity-consistent masklets,
//! 2. occluded frames are detected and refined with amodal completion,
//! 3. an HMR backend predicts parameters from padded batches of
//!    mask-prompted slots,
//! 4. shape and skeleton are locked to the first visible frame and pose
//!    channels are smoothed.
//!
//! Backends are reached over a small newline-delimited JSON protocol; the
//! [`protocol::mock`] backends make every stage runnable without models.

pub mod backend;
mod error;
pub mod frames;
pub mod hmr;
pub mod mask;
pub mod masklet;
pub mod metrics;
pub mod model;
pub mod occlusion;
pub mod pipeline;
pub mod protocol;
pub mod smooth;
pub mod synthetic;

pub use error::{Error, Result};
pub use mask::RleMask;
pub use model::{FrameRef, HumanPrompt, Masklet, MeshTrajectory, MhrParams, ParamLayout, ValidatedJob};
pub use pipeline::{PipelineConfig, PipelineError, Stage};
