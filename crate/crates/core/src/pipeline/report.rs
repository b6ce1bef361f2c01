use serde::{Deserialize, Serialize};

use super::files::{Metadata, RefinedFile, ENGINE_VERSION};
use crate::error::Result;
use crate::hmr::{call_count, plan_batches, sequential_call_count, visibility};
use crate::metrics::jitter_metric;
use crate::model::{Masklet, MeshTrajectory};
use crate::occlusion::RefineOutput;

/// The parts of a refinement the summary needs, from memory or from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinedView {
    pub masklets: Vec<Masklet>,
    /// Per human: one-based flagged frames and inclusive intervals.
    pub humans: Vec<(Vec<usize>, Vec<[usize; 2]>)>,
}

impl RefinedView {
    pub fn from_output(out: &RefineOutput) -> Self {
        Self {
            masklets: out.masklets.clone(),
            humans: out
                .humans
                .iter()
                .map(|h| {
                    let flagged = h
                        .flags
                        .flags
                        .iter()
                        .enumerate()
                        .filter(|(_, &f)| f)
                        .map(|(t, _)| t + 1)
                        .collect();
                    let ivs = h.intervals.iter().map(|iv| [iv.start + 1, iv.end + 1]).collect();
                    (flagged, ivs)
                })
                .collect(),
        }
    }

    pub fn from_file(file: &RefinedFile) -> Result<Self> {
        Ok(Self {
            masklets: file.masklets()?,
            humans: file
                .refinement
                .iter()
                .map(|r| (r.flagged_frames.clone(), r.intervals.clone()))
                .collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanSummary {
    pub id: String,
    pub visible_frames: usize,
    pub flagged_frames: Vec<usize>,
    pub occlusion_intervals: Vec<[usize; 2]>,
    /// `null` when fewer than two adjacent frames are visible.
    pub jitter_raw: Option<f64>,
    pub jitter_smoothed: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmrSummary {
    pub batch_size: usize,
    pub calls: usize,
    pub sequential_calls: usize,
    pub valid_slots: usize,
    pub padded_slots: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendCalls {
    pub segmentation: usize,
    pub completion: usize,
    pub hmr: usize,
}

/// Everything in the report that is a pure function of the run's inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub engine_version: String,
    pub num_frames: usize,
    pub refiner_enabled: bool,
    pub humans: Vec<HumanSummary>,
    pub hmr: HmrSummary,
    /// Requests per backend, handshakes excluded.
    pub backend_calls: BackendCalls,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub segment_ms: f64,
    pub refine_ms: f64,
    pub hmr_ms: f64,
    pub smooth_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub summary: RunSummary,
    /// Wall-clock time; varies between runs.
    pub timings_ms: StageTimings,
}

pub fn summarize(
    metadata: &Metadata,
    masklets: &[Masklet],
    refined: Option<&RefinedView>,
    raw: &[MeshTrajectory],
    smoothed: &[MeshTrajectory],
) -> RunSummary {
    let t = metadata.num_frames;
    let hmr_masklets = refined.map_or(masklets, |r| &r.masklets[..]);
    let plan = plan_batches(&visibility(hmr_masklets, t), metadata.config.batch_size.max(1));
    let jitter = |trajs: &[MeshTrajectory], i: usize| trajs.get(i).and_then(|tr| jitter_metric(tr).ok());

    let humans = hmr_masklets
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let (flagged, ivs) = refined.and_then(|r| r.humans.get(i).cloned()).unwrap_or_default();
            HumanSummary {
                id: m.human_id.clone(),
                visible_frames: m.masks.iter().filter(|x| x.is_some()).count(),
                flagged_frames: flagged,
                occlusion_intervals: ivs,
                jitter_raw: jitter(raw, i),
                jitter_smoothed: jitter(smoothed, i),
            }
        })
        .collect::<Vec<_>>();

    let recover_calls: usize = humans.iter().map(|h| h.occlusion_intervals.len()).sum();
    let hmr = HmrSummary {
        batch_size: metadata.config.batch_size,
        calls: call_count(&plan),
        sequential_calls: sequential_call_count(&plan),
        valid_slots: plan.valid_slots(),
        padded_slots: plan.total_slots() - plan.valid_slots(),
    };
    RunSummary {
        engine_version: ENGINE_VERSION.to_string(),
        num_frames: t,
        refiner_enabled: refined.is_some(),
        backend_calls: BackendCalls {
            segmentation: 1 + t,
            completion: if refined.is_some() { masklets.len() + recover_calls } else { 0 },
            hmr: hmr.calls,
        },
        humans,
        hmr,
    }
}
