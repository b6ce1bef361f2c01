//! Masklet generation: stream the video through a segmentation backend and
//! collect one identity-consistent mask track per prompted human.

use crate::backend::{BackendError, SegmentationBackend};
use crate::error::Result;
use crate::frames::FrameSource;
use crate::mask::{binarize, resample_nearest, RleMask};
use crate::model::{Masklet, ValidatedJob};
use crate::protocol::WireMask;

/// Frames are sent strictly in temporal order within one session, so a
/// memory-based backend can carry labels forward. Masklet `i` always belongs
/// to prompt `i`, whatever the per-frame visibility.
pub fn generate_masklets(
    job: &ValidatedJob,
    frames: &dyn FrameSource,
    backend: &mut dyn SegmentationBackend,
    threshold: f32,
) -> Result<Vec<Masklet>> {
    let session = backend.start_session(job.frames(), job.prompts())?;
    let n = job.num_humans();
    let mut masklets: Vec<Masklet> = job
        .human_ids()
        .map(|id| Masklet::absent(id, job.num_frames()))
        .collect();

    for frame in job.frames() {
        let image = frames.load(frame.index)?;
        let masks = backend.segment_frame(&session, frame.index, &image)?;
        if masks.len() != n {
            return Err(BackendError::IdentityCountMismatch {
                frame: frame.index,
                expected: n,
                got: masks.len(),
            }
            .into());
        }
        for (masklet, mask) in masklets.iter_mut().zip(masks) {
            masklet.masks[frame.index] = mask.map(|m| to_video_mask(m, job, threshold));
        }
    }
    Ok(masklets)
}

fn to_video_mask(mask: WireMask, job: &ValidatedJob, threshold: f32) -> RleMask {
    let binary = match mask {
        WireMask::Rle(m) => m,
        WireMask::Soft(p) => binarize(&p, threshold),
    };
    resample_nearest(&binary, job.width(), job.height())
}
