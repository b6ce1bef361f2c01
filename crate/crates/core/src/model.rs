//! Domain types shared by every stage.
//!
//! Frames are indexed from zero in memory. Files written for users carry
//! one-based frame numbers; the conversion happens at the file boundary.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mask::RleMask;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum JobError {
    #[error("video has no frames")]
    EmptyVideo,
    #[error("duplicate human id {0:?}")]
    DuplicateHumanId(String),
    #[error("prompt for {human_id:?} is out of bounds: {reason}")]
    PromptOutOfBounds { human_id: String, reason: String },
    #[error("frame {index} is {width}x{height}, expected {expected_width}x{expected_height}")]
    InconsistentFrameSize {
        index: usize,
        width: u32,
        height: u32,
        expected_width: u32,
        expected_height: u32,
    },
    #[error("frame indices are not dense: position {position} holds frame {index}")]
    NonDenseFrames { position: usize, index: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameRef {
    pub index: usize,
    pub path_or_id: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Box,
    Point,
    Mask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PromptPayload {
    /// `[x1, y1, x2, y2]` in pixels.
    Box {
        #[serde(rename = "box")]
        xyxy: [f64; 4],
    },
    Point { point: [f64; 2], positive: bool },
    Mask { mask: RleMask },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanPrompt {
    pub human_id: String,
    pub frame_index: usize,
    #[serde(flatten)]
    pub payload: PromptPayload,
}

impl HumanPrompt {
    pub fn kind(&self) -> PromptKind {
        match self.payload {
            PromptPayload::Box { .. } => PromptKind::Box,
            PromptPayload::Point { .. } => PromptKind::Point,
            PromptPayload::Mask { .. } => PromptKind::Mask,
        }
    }
}

/// A checked job: dense frames of one size and uniquely named, in-bounds prompts.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedJob {
    frames: Vec<FrameRef>,
    prompts: Vec<HumanPrompt>,
    width: u32,
    height: u32,
}

impl ValidatedJob {
    pub fn frames(&self) -> &[FrameRef] {
        &self.frames
    }

    pub fn prompts(&self) -> &[HumanPrompt] {
        &self.prompts
    }

    /// T
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    /// N
    pub fn num_humans(&self) -> usize {
        self.prompts.len()
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn human_ids(&self) -> impl Iterator<Item = &str> {
        self.prompts.iter().map(|p| p.human_id.as_str())
    }
}

pub fn validate_job(video: Vec<FrameRef>, prompts: Vec<HumanPrompt>) -> Result<ValidatedJob, JobError> {
    let first = video.first().ok_or(JobError::EmptyVideo)?;
    let (width, height) = (first.width, first.height);
    for (position, f) in video.iter().enumerate() {
        if f.index != position {
            return Err(JobError::NonDenseFrames {
                position,
                index: f.index,
            });
        }
        if (f.width, f.height) != (width, height) {
            return Err(JobError::InconsistentFrameSize {
                index: f.index,
                width: f.width,
                height: f.height,
                expected_width: width,
                expected_height: height,
            });
        }
    }

    let mut seen = HashSet::new();
    for p in &prompts {
        if !seen.insert(p.human_id.as_str()) {
            return Err(JobError::DuplicateHumanId(p.human_id.clone()));
        }
        let oob = |reason: String| JobError::PromptOutOfBounds {
            human_id: p.human_id.clone(),
            reason,
        };
        if p.frame_index >= video.len() {
            return Err(oob(format!(
                "frame {} beyond video of {} frames",
                p.frame_index,
                video.len()
            )));
        }
        let (w, h) = (width as f64, height as f64);
        let inside = |x: f64, y: f64| x.is_finite() && y.is_finite() && (0.0..=w).contains(&x) && (0.0..=h).contains(&y);
        match &p.payload {
            PromptPayload::Box { xyxy: [x1, y1, x2, y2] } => {
                if !inside(*x1, *y1) || !inside(*x2, *y2) {
                    return Err(oob(format!("box {:?} outside {width}x{height}", [x1, y1, x2, y2])));
                }
                if x1 > x2 || y1 > y2 {
                    return Err(oob(format!("box {:?} is inverted", [x1, y1, x2, y2])));
                }
            }
            PromptPayload::Point { point: [x, y], .. } => {
                if !inside(*x, *y) {
                    return Err(oob(format!("point ({x}, {y}) outside {width}x{height}")));
                }
            }
            PromptPayload::Mask { mask } => {
                if mask.dims() != (width, height) {
                    return Err(oob(format!(
                        "mask is {}x{}, video is {width}x{height}",
                        mask.width(),
                        mask.height()
                    )));
                }
            }
        }
    }

    Ok(ValidatedJob {
        frames: video,
        prompts,
        width,
        height,
    })
}

/// Per-identity sequence of optional masks, one slot per frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Masklet {
    pub human_id: String,
    pub masks: Vec<Option<RleMask>>,
}

impl Masklet {
    pub fn absent(human_id: impl Into<String>, len: usize) -> Self {
        Self {
            human_id: human_id.into(),
            masks: vec![None; len],
        }
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn presence(&self) -> Vec<bool> {
        self.masks.iter().map(Option::is_some).collect()
    }
}

/// Channel sizes of one frame's mesh parameters, announced by the HMR backend.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamLayout {
    pub pose: usize,
    pub shape: usize,
    pub camera: usize,
    pub skeleton: usize,
    pub hands: usize,
    /// Pose channels holding angles, unwrapped before smoothing.
    #[serde(default)]
    pub rotation_channels: BTreeSet<usize>,
}

impl ParamLayout {
    pub fn is_valid(&self) -> bool {
        [self.pose, self.shape, self.camera, self.skeleton, self.hands]
            .iter()
            .all(|&d| d > 0)
            && self.rotation_channels.iter().all(|&c| c < self.pose)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MhrParams {
    pub pose: Vec<f64>,
    pub shape: Vec<f64>,
    pub camera: Vec<f64>,
    pub skeleton: Vec<f64>,
    pub hands: Vec<f64>,
}

impl MhrParams {
    pub fn zeros(layout: &ParamLayout) -> Self {
        Self {
            pose: vec![0.0; layout.pose],
            shape: vec![0.0; layout.shape],
            camera: vec![0.0; layout.camera],
            skeleton: vec![0.0; layout.skeleton],
            hands: vec![0.0; layout.hands],
        }
    }

    pub fn matches(&self, layout: &ParamLayout) -> bool {
        self.pose.len() == layout.pose
            && self.shape.len() == layout.shape
            && self.camera.len() == layout.camera
            && self.skeleton.len() == layout.skeleton
            && self.hands.len() == layout.hands
    }

    pub fn is_finite(&self) -> bool {
        self.channels().all(|c| c.iter().all(|v| v.is_finite()))
    }

    fn channels(&self) -> impl Iterator<Item = &Vec<f64>> {
        [&self.pose, &self.shape, &self.camera, &self.skeleton, &self.hands].into_iter()
    }
}

/// Per-identity sequence of optional mesh parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshTrajectory {
    pub human_id: String,
    pub params: Vec<Option<MhrParams>>,
    pub layout: ParamLayout,
}

impl MeshTrajectory {
    pub fn absent(human_id: impl Into<String>, len: usize, layout: ParamLayout) -> Self {
        Self {
            human_id: human_id.into(),
            params: vec![None; len],
            layout,
        }
    }

    pub fn presence(&self) -> Vec<bool> {
        self.params.iter().map(Option::is_some).collect()
    }

    pub fn first_present(&self) -> Option<&MhrParams> {
        self.params.iter().flatten().next()
    }
}
