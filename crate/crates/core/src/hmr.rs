//! Padded batch planning and mask-prompted HMR dispatch.
//!
//! Frames are cut into consecutive chunks of at most `batch_size` frames.
//! Each chunk becomes a fixed `frames x slot_width` grid where `slot_width`
//! is the most humans visible in any of its frames; empty cells are padding
//! slots with an all-zero mask. One backend call serves a whole chunk, and
//! padding outputs are dropped. Because every slot carries its absolute
//! `(frame, human)` address, results can be scattered in any order.

use std::collections::HashMap;
use std::ops::Range;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use image::RgbImage;

use crate::backend::{HmrBackend, SlotInput};
use crate::error::{Error, Result};
use crate::frames::FrameSource;
use crate::mask::RleMask;
use crate::model::{Masklet, MeshTrajectory, MhrParams};
use crate::occlusion::RefinedEvidence;

pub const DEFAULT_BATCH_SIZE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub frame_index: usize,
    /// Index of the human in prompt order; `None` for padding.
    pub human: Option<usize>,
}

impl Slot {
    pub fn valid(&self) -> bool {
        self.human.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk {
    pub frames: Range<usize>,
    pub slot_width: usize,
    /// Row-major `frames.len() x slot_width`.
    pub slots: Vec<Slot>,
}

impl Chunk {
    pub fn valid_slots(&self) -> usize {
        self.slots.iter().filter(|s| s.valid()).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BatchPlan {
    pub chunks: Vec<Chunk>,
}

impl BatchPlan {
    pub fn valid_slots(&self) -> usize {
        self.chunks.iter().map(Chunk::valid_slots).sum()
    }

    pub fn total_slots(&self) -> usize {
        self.chunks.iter().map(|c| c.slots.len()).sum()
    }
}

/// `visibility[t][h]` says whether human `h` has a mask at frame `t`.
/// Chunks whose frames are all empty are elided.
pub fn plan_batches(visibility: &[Vec<bool>], batch_size: usize) -> BatchPlan {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let mut chunks = Vec::new();
    let mut start = 0;
    while start < visibility.len() {
        let end = (start + batch_size).min(visibility.len());
        let rows = &visibility[start..end];
        let slot_width = rows.iter().map(|r| r.iter().filter(|&&v| v).count()).max().unwrap_or(0);
        if slot_width > 0 {
            let mut slots = Vec::with_capacity(rows.len() * slot_width);
            for (offset, row) in rows.iter().enumerate() {
                let frame_index = start + offset;
                let visible: Vec<usize> = row.iter().enumerate().filter(|(_, &v)| v).map(|(h, _)| h).collect();
                slots.extend(visible.iter().map(|&h| Slot {
                    frame_index,
                    human: Some(h),
                }));
                slots.extend((visible.len()..slot_width).map(|_| Slot { frame_index, human: None }));
            }
            chunks.push(Chunk {
                frames: start..end,
                slot_width,
                slots,
            });
        }
        start = end;
    }
    BatchPlan { chunks }
}

/// Visibility table of a set of masklets, `[t][h]`.
pub fn visibility(masklets: &[Masklet], num_frames: usize) -> Vec<Vec<bool>> {
    (0..num_frames)
        .map(|t| masklets.iter().map(|m| m.masks[t].is_some()).collect())
        .collect()
}

/// Backend calls the plan needs.
pub fn call_count(plan: &BatchPlan) -> usize {
    plan.chunks.len()
}

/// Calls the one-slot-per-call baseline needs for the same work.
pub fn sequential_call_count(plan: &BatchPlan) -> usize {
    plan.valid_slots()
}

/// Everything the HMR stage reads: original frames, refined masklets and
/// per-human recovered pixels.
pub struct HmrInputs<'a> {
    pub frames: &'a dyn FrameSource,
    pub masklets: &'a [Masklet],
    pub evidence: &'a [RefinedEvidence],
}

impl HmrInputs<'_> {
    fn num_frames(&self) -> usize {
        self.frames.frames().len()
    }

    fn dims(&self) -> (u32, u32) {
        let f = &self.frames.frames()[0];
        (f.width, f.height)
    }

    fn evidence_by_human(&self) -> HashMap<&str, &RefinedEvidence> {
        self.evidence.iter().map(|e| (e.human_id.as_str(), e)).collect()
    }
}

type Scattered = Vec<(usize, usize, MhrParams)>;

fn run_chunk(
    inputs: &HmrInputs<'_>,
    evidence: &HashMap<&str, &RefinedEvidence>,
    chunk: &Chunk,
    backend: &dyn HmrBackend,
) -> Result<Scattered> {
    let frames: Vec<RgbImage> = chunk
        .frames
        .clone()
        .map(|t| inputs.frames.load(t))
        .collect::<Result<_, _>>()?;
    let (w, h) = inputs.dims();
    let pad_mask = RleMask::empty(w, h);
    let slots: Vec<SlotInput<'_>> = chunk
        .slots
        .iter()
        .map(|s| match s.human {
            Some(hi) => {
                let masklet = &inputs.masklets[hi];
                let refined_image = evidence
                    .get(masklet.human_id.as_str())
                    .and_then(|e| e.frames.get(&s.frame_index));
                SlotInput {
                    image: refined_image.unwrap_or(&frames[s.frame_index - chunk.frames.start]),
                    mask: masklet.masks[s.frame_index].as_ref().expect("planned from visibility"),
                    valid: true,
                }
            }
            None => SlotInput {
                image: &frames[0],
                mask: &pad_mask,
                valid: false,
            },
        })
        .collect();
    let thetas = backend.infer(&slots)?;
    if thetas.len() != slots.len() {
        return Err(crate::backend::BackendError::Protocol(format!(
            "hmr returned {} thetas for {} slots",
            thetas.len(),
            slots.len()
        ))
        .into());
    }
    Ok(chunk
        .slots
        .iter()
        .zip(thetas)
        .filter_map(|(s, theta)| s.human.map(|h| (s.frame_index, h, theta)))
        .collect())
}

fn assemble(inputs: &HmrInputs<'_>, backend: &dyn HmrBackend, results: Scattered) -> Result<Vec<MeshTrajectory>> {
    let layout = backend.layout();
    let mut trajectories: Vec<MeshTrajectory> = inputs
        .masklets
        .iter()
        .map(|m| MeshTrajectory::absent(m.human_id.clone(), inputs.num_frames(), layout.clone()))
        .collect();
    for (t, h, theta) in results {
        if !theta.matches(layout) {
            return Err(crate::backend::BackendError::LayoutMismatch(format!(
                "theta for {:?} at frame {t} does not match the handshake layout",
                inputs.masklets[h].human_id
            ))
            .into());
        }
        if !theta.is_finite() {
            return Err(Error::NonFinite {
                human_id: inputs.masklets[h].human_id.clone(),
                frame: t,
            });
        }
        trajectories[h].params[t] = Some(theta);
    }
    Ok(trajectories)
}

/// Executes a plan, one backend call per chunk, with up to `max_in_flight`
/// chunks dispatched concurrently.
pub fn run_hmr(
    inputs: &HmrInputs<'_>,
    plan: &BatchPlan,
    backend: &dyn HmrBackend,
    max_in_flight: usize,
) -> Result<Vec<MeshTrajectory>> {
    let evidence = inputs.evidence_by_human();
    let workers = max_in_flight.max(1).min(plan.chunks.len());
    let mut per_chunk: Vec<Option<Result<Scattered>>> = (0..plan.chunks.len()).map(|_| None).collect();

    if workers <= 1 {
        for (slot, chunk) in per_chunk.iter_mut().zip(&plan.chunks) {
            let r = run_chunk(inputs, &evidence, chunk, backend);
            let failed = r.is_err();
            *slot = Some(r);
            if failed {
                break;
            }
        }
    } else {
        let next = AtomicUsize::new(0);
        let collected = Mutex::new(&mut per_chunk);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(chunk) = plan.chunks.get(i) else { break };
                    let r = run_chunk(inputs, &evidence, chunk, backend);
                    collected.lock().unwrap()[i] = Some(r);
                });
            }
        });
    }

    let mut results = Vec::with_capacity(plan.valid_slots());
    for r in per_chunk.into_iter().flatten() {
        results.extend(r?);
    }
    assemble(inputs, backend, results)
}

/// Reference path: one backend call per visible `(frame, human)` pair, no padding.
pub fn run_hmr_sequential(inputs: &HmrInputs<'_>, backend: &dyn HmrBackend) -> Result<Vec<MeshTrajectory>> {
    let evidence = inputs.evidence_by_human();
    let mut results = Vec::new();
    for t in 0..inputs.num_frames() {
        for (h, masklet) in inputs.masklets.iter().enumerate() {
            let Some(mask) = &masklet.masks[t] else { continue };
            let frame;
            let image = match evidence.get(masklet.human_id.as_str()).and_then(|e| e.frames.get(&t)) {
                Some(img) => img,
                None => {
                    frame = inputs.frames.load(t)?;
                    &frame
                }
            };
            let mut thetas = backend.infer(&[SlotInput {
                image,
                mask,
                valid: true,
            }])?;
            let theta = thetas.pop().ok_or_else(|| {
                crate::backend::BackendError::Protocol("hmr returned no theta for a single slot".into())
            })?;
            results.push((t, h, theta));
        }
    }
    assemble(inputs, backend, results)
}
