//! Stage-facing backend contracts.
//!
//! The engine never looks inside the models. A segmentation backend owns
//! propagation, detection and matching; a completion backend owns amodal
//! mask completion and pixel recovery; an HMR backend owns the
//! mask-prompted encoder, decoder and parameter head.

use image::RgbImage;
use thiserror::Error;

use crate::mask::RleMask;
use crate::model::{FrameRef, HumanPrompt, MhrParams, ParamLayout};
use crate::protocol::message::{ProtocolError, WireMask};
use crate::protocol::transport::TransportError;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("backend protocol error: {0}")]
    Protocol(String),
    #[error("backend error {code}: {message}")]
    Remote { code: String, message: String },
    #[error("frame {frame}: expected {expected} instances, backend returned {got}")]
    IdentityCountMismatch { frame: usize, expected: usize, got: usize },
    #[error("parameter layout mismatch: {0}")]
    LayoutMismatch(String),
}

impl BackendError {
    /// True for failures reported by the backend or caused by malformed
    /// traffic, as opposed to an unreachable backend.
    pub fn is_protocol(&self) -> bool {
        !matches!(self, BackendError::Unavailable(_))
    }
}

impl From<TransportError> for BackendError {
    fn from(e: TransportError) -> Self {
        BackendError::Unavailable(e.to_string())
    }
}

impl From<ProtocolError> for BackendError {
    fn from(e: ProtocolError) -> Self {
        BackendError::Protocol(e.to_string())
    }
}

/// Identity bookkeeping for one segmentation session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegBackendSession {
    pub session_id: String,
    /// Fixed at session start; every per-frame response follows this order.
    pub humans: Vec<String>,
}

pub trait SegmentationBackend {
    fn start_session(&mut self, frames: &[FrameRef], prompts: &[HumanPrompt])
        -> Result<SegBackendSession, BackendError>;

    /// One optional mask per session human, in session order.
    fn segment_frame(
        &mut self,
        session: &SegBackendSession,
        frame_index: usize,
        image: &RgbImage,
    ) -> Result<Vec<Option<WireMask>>, BackendError>;
}

pub trait CompletionBackend {
    /// Amodal completion over a whole video for one human.
    fn complete_pass(
        &mut self,
        human_id: &str,
        frames: &[RgbImage],
        visible: &[Option<RleMask>],
    ) -> Result<Vec<Option<RleMask>>, BackendError>;

    /// Pixel recovery over an inclusive clip `[start, end]`.
    fn recover_clip(
        &mut self,
        human_id: &str,
        interval: (usize, usize),
        frames: &[RgbImage],
        visible: &[Option<RleMask>],
    ) -> Result<RecoveredClip, BackendError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveredClip {
    pub images: Vec<RgbImage>,
    pub masks: Vec<Option<RleMask>>,
}

/// One element of an HMR batch.
#[derive(Debug, Clone, Copy)]
pub struct SlotInput<'a> {
    pub image: &'a RgbImage,
    pub mask: &'a RleMask,
    pub valid: bool,
}

pub trait HmrBackend: Sync {
    fn layout(&self) -> &ParamLayout;

    /// One forward pass over all slots; returns one parameter set per slot.
    fn infer(&self, slots: &[SlotInput<'_>]) -> Result<Vec<MhrParams>, BackendError>;
}
