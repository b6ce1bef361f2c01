//! Occlusion-aware masklet refinement.
//!
//! A frame is occluded for a human when amodal completion makes the mask
//! strictly larger while its IoU with the visible mask stays strictly below
//! the threshold (0.7 by default). Occluded frames are grouped into clips,
//! each clip is sent back to the completion backend for pixel recovery, and
//! the completed mask and recovered pixels replace the visible evidence on
//! the flagged frames only.

use std::collections::BTreeMap;

use image::imageops::{resize, FilterType};
use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::backend::CompletionBackend;
use crate::error::{Error, Result};
use crate::frames::FrameSource;
use crate::mask::{area, iou, resample_nearest, MaskError, RleMask};
use crate::model::{Masklet, ValidatedJob};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.7;
pub const DEFAULT_MIN_AREA: u64 = 16;
pub const DEFAULT_MAX_GAP: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Resolution {
    pub width: u32,
    pub height: u32,
}

impl Default for Resolution {
    fn default() -> Self {
        Self {
            width: 1024,
            height: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcclusionConfig {
    pub iou_threshold: f64,
    /// Completed area needed to flag a frame with no visible mask.
    pub min_area: u64,
    /// Unflagged frames allowed between two runs merged into one clip.
    pub max_gap: usize,
    pub completion_resolution: Resolution,
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        Self {
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            min_area: DEFAULT_MIN_AREA,
            max_gap: DEFAULT_MAX_GAP,
            completion_resolution: Resolution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OcclusionFlags {
    pub human_id: String,
    pub flags: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OcclusionInterval {
    pub start: usize,
    /// Inclusive.
    pub end: usize,
}

impl OcclusionInterval {
    pub fn frames(&self) -> std::ops::RangeInclusive<usize> {
        self.start..=self.end
    }
}

/// Per-human replacement pixels and masks, keyed by frame index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RefinedEvidence {
    pub human_id: String,
    pub frames: BTreeMap<usize, RgbImage>,
    pub masks: BTreeMap<usize, RleMask>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HumanRefinement {
    pub flags: OcclusionFlags,
    pub intervals: Vec<OcclusionInterval>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineOutput {
    /// Only humans with at least one flagged frame.
    pub evidence: Vec<RefinedEvidence>,
    pub masklets: Vec<Masklet>,
    /// One entry per human, in masklet order.
    pub humans: Vec<HumanRefinement>,
}

impl RefineOutput {
    pub fn recover_calls(&self) -> usize {
        self.humans.iter().map(|h| h.intervals.len()).sum()
    }
}

pub fn detect_occlusion(visible: &RleMask, completed: &RleMask) -> Result<bool, MaskError> {
    detect_occlusion_with(visible, completed, DEFAULT_IOU_THRESHOLD)
}

pub fn detect_occlusion_with(visible: &RleMask, completed: &RleMask, iou_threshold: f64) -> Result<bool, MaskError> {
    let overlap = iou(completed, visible)?;
    Ok(area(completed) > area(visible) && overlap < iou_threshold)
}

pub fn compute_flags(masklet: &Masklet, completed: &Masklet, config: &OcclusionConfig) -> Result<OcclusionFlags> {
    if masklet.len() != completed.len() {
        return Err(Error::LengthMismatch(format!(
            "masklet {:?} has {} frames, completion has {}",
            masklet.human_id,
            masklet.len(),
            completed.len()
        )));
    }
    let flags = masklet
        .masks
        .iter()
        .zip(&completed.masks)
        .map(|pair| match pair {
            (_, None) => Ok(false),
            (Some(v), Some(c)) if !v.is_empty() => detect_occlusion_with(v, c, config.iou_threshold),
            // nothing visible: flag if completion found enough of the person
            (_, Some(c)) => Ok(area(c) >= config.min_area),
        })
        .collect::<Result<_, MaskError>>()?;
    Ok(OcclusionFlags {
        human_id: masklet.human_id.clone(),
        flags,
    })
}

/// Maximal runs of flagged frames; runs separated by at most `max_gap`
/// unflagged frames are merged.
pub fn group_occluded_frames(flags: &OcclusionFlags, max_gap: usize) -> Vec<OcclusionInterval> {
    let mut out: Vec<OcclusionInterval> = Vec::new();
    for (t, _) in flags.flags.iter().enumerate().filter(|(_, &f)| f) {
        match out.last_mut() {
            Some(last) if t - last.end - 1 <= max_gap => last.end = t,
            _ => out.push(OcclusionInterval { start: t, end: t }),
        }
    }
    out
}

fn to_resolution(img: &RgbImage, res: Resolution) -> RgbImage {
    if img.dimensions() == (res.width, res.height) {
        return img.clone();
    }
    resize(img, res.width, res.height, FilterType::Nearest)
}

/// Runs the refinement for every human. Humans are independent; frames
/// outside the flagged set are never modified.
pub fn refine(
    job: &ValidatedJob,
    frames: &dyn FrameSource,
    masklets: &[Masklet],
    backend: &mut dyn CompletionBackend,
    config: &OcclusionConfig,
) -> Result<RefineOutput> {
    let res = config.completion_resolution;
    let (vw, vh) = (job.width(), job.height());
    let work_frames = job
        .frames()
        .iter()
        .map(|f| frames.load(f.index).map(|img| to_resolution(&img, res)))
        .collect::<Result<Vec<_>, _>>()?;

    let mut out = RefineOutput {
        evidence: Vec::new(),
        masklets: Vec::with_capacity(masklets.len()),
        humans: Vec::with_capacity(masklets.len()),
    };

    for masklet in masklets {
        if masklet.len() != job.num_frames() {
            return Err(Error::LengthMismatch(format!(
                "masklet {:?} has {} frames, video has {}",
                masklet.human_id,
                masklet.len(),
                job.num_frames()
            )));
        }
        let visible_work: Vec<Option<RleMask>> = masklet
            .masks
            .iter()
            .map(|m| m.as_ref().map(|m| resample_nearest(m, res.width, res.height)))
            .collect();

        let completed_work = backend.complete_pass(&masklet.human_id, &work_frames, &visible_work)?;
        let completed = Masklet {
            human_id: masklet.human_id.clone(),
            masks: completed_work
                .iter()
                .map(|m| m.as_ref().map(|m| resample_nearest(m, vw, vh)))
                .collect(),
        };
        let flags = compute_flags(masklet, &completed, config)?;
        let intervals = group_occluded_frames(&flags, config.max_gap);

        let mut evidence = RefinedEvidence {
            human_id: masklet.human_id.clone(),
            ..Default::default()
        };
        let mut refined = masklet.clone();
        for interval in &intervals {
            let clip = interval.frames();
            let recovered = backend.recover_clip(
                &masklet.human_id,
                (interval.start, interval.end),
                &work_frames[clip.clone()],
                &visible_work[clip.clone()],
            )?;
            for (k, t) in clip.enumerate() {
                if !flags.flags[t] {
                    continue;
                }
                let completed_mask = completed.masks[t].clone().expect("flagged frames have a completion");
                let image = to_resolution(&recovered.images[k], Resolution { width: vw, height: vh });
                let mask = recovered.masks[k]
                    .as_ref()
                    .map(|m| resample_nearest(m, vw, vh))
                    .unwrap_or_else(|| completed_mask.clone());
                evidence.frames.insert(t, image);
                evidence.masks.insert(t, mask);
                refined.masks[t] = Some(completed_mask);
            }
        }

        if !evidence.frames.is_empty() {
            out.evidence.push(evidence);
        }
        out.masklets.push(refined);
        out.humans.push(HumanRefinement { flags, intervals });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::frames::MemoryFrames;
    use crate::mask::{rect_mask, rle_decode};
    use crate::model::{validate_job, HumanPrompt, PromptPayload};
    use crate::protocol::mock::{completion_client, MockScript};

    fn flags(bits: &[u8]) -> OcclusionFlags {
        OcclusionFlags {
            human_id: "a".into(),
            flags: bits.iter().map(|&b| b == 1).collect(),
        }
    }

    #[test]
    fn predicate_fixtures() {
        let v = rect_mask(20, 20, 0, 0, 10, 5);
        assert!(!detect_occlusion(&v, &v).unwrap());
        // same area, shifted: area condition fails although IoU is low
        let shifted = rect_mask(20, 20, 10, 10, 20, 15);
        assert!(!detect_occlusion(&v, &shifted).unwrap());
        // visible 50 px inside completed 200 px: IoU 0.25
        let completed = rect_mask(20, 20, 0, 0, 10, 20);
        assert!(detect_occlusion(&v, &completed).unwrap());
        assert!(detect_occlusion(&v, &RleMask::empty(3, 3)).is_err());
    }

    #[test]
    fn predicate_threshold_is_strict() {
        // visible 7 px inside completed 10 px: IoU exactly 0.7, not occluded
        let v = rect_mask(10, 1, 0, 0, 7, 1);
        let c = rect_mask(10, 1, 0, 0, 10, 1);
        assert_eq!(iou(&v, &c).unwrap(), 0.7);
        assert!(!detect_occlusion(&v, &c).unwrap());
        let v6 = rect_mask(10, 1, 0, 0, 6, 1);
        assert!(detect_occlusion(&v6, &c).unwrap());
    }

    #[test]
    fn grouping() {
        let f = flags(&[0, 1, 1, 0, 0, 1]);
        let iv = |s, e| OcclusionInterval { start: s, end: e };
        assert_eq!(group_occluded_frames(&f, 0), vec![iv(1, 2), iv(5, 5)]);
        assert_eq!(group_occluded_frames(&f, 2), vec![iv(1, 5)]);
        assert_eq!(group_occluded_frames(&f, 1), vec![iv(1, 2), iv(5, 5)]);
        assert!(group_occluded_frames(&flags(&[0, 0, 0]), 2).is_empty());
        assert_eq!(group_occluded_frames(&flags(&[1, 1]), 0), vec![iv(0, 1)]);
    }

    #[test]
    fn flag_rules() {
        let cfg = OcclusionConfig::default();
        let v = rect_mask(20, 20, 0, 0, 10, 5);
        let big = rect_mask(20, 20, 0, 0, 10, 20);
        let m = |masks: Vec<Option<RleMask>>| Masklet { human_id: "a".into(), masks };
        let same = compute_flags(&m(vec![Some(v.clone()); 3]), &m(vec![Some(v.clone()); 3]), &cfg).unwrap();
        assert_eq!(same.flags, vec![false; 3]);
        let one = compute_flags(
            &m(vec![Some(v.clone()); 3]),
            &m(vec![Some(v.clone()), Some(big.clone()), Some(v.clone())]),
            &cfg,
        )
        .unwrap();
        assert_eq!(one.flags, vec![false, true, false]);
        // hidden entirely: completion area 100 >= 16
        let hidden = rect_mask(20, 20, 0, 0, 10, 10);
        let small = rect_mask(20, 20, 0, 0, 3, 3);
        let f = compute_flags(
            &m(vec![None, None, Some(RleMask::empty(20, 20)), None]),
            &m(vec![Some(hidden.clone()), None, Some(hidden), Some(small)]),
            &cfg,
        )
        .unwrap();
        assert_eq!(f.flags, vec![true, false, true, false]);
        assert!(matches!(
            compute_flags(&m(vec![None]), &m(vec![None, None]), &cfg),
            Err(Error::LengthMismatch(_))
        ));
    }

    fn scene(t: usize, humans: &[&str]) -> (ValidatedJob, MemoryFrames) {
        let frames = MemoryFrames::new(vec![RgbImage::from_pixel(16, 16, image::Rgb([90, 90, 90])); t]);
        let prompts = humans
            .iter()
            .map(|id| HumanPrompt {
                human_id: id.to_string(),
                frame_index: 0,
                payload: PromptPayload::Point { point: [1.0, 1.0], positive: true },
            })
            .collect();
        (validate_job(frames.frames().to_vec(), prompts).unwrap(), frames)
    }

    fn config() -> OcclusionConfig {
        OcclusionConfig {
            completion_resolution: Resolution { width: 32, height: 32 },
            ..Default::default()
        }
    }

    #[test]
    fn no_occlusion_is_a_no_op() {
        let (job, frames) = scene(4, &["a"]);
        let masklets = vec![Masklet {
            human_id: "a".into(),
            masks: vec![Some(rect_mask(16, 16, 2, 2, 8, 8)), None, Some(rect_mask(16, 16, 3, 2, 9, 8)), None],
        }];
        let mut backend = completion_client(Arc::new(MockScript::default())).unwrap();
        let out = refine(&job, &frames, &masklets, &mut backend, &config()).unwrap();
        assert_eq!(out.masklets, masklets);
        assert!(out.evidence.is_empty());
        assert!(out.humans[0].intervals.is_empty());
        // running again on the output changes nothing
        let again = refine(&job, &frames, &out.masklets, &mut backend, &config()).unwrap();
        assert_eq!(again, out);
    }

    #[test]
    fn scripted_occlusion_replaces_exactly_flagged_frames() {
        let t = 8;
        let (job, frames) = scene(t, &["a", "b"]);
        let full = rect_mask(16, 16, 2, 2, 8, 14);
        let visible_part = rect_mask(16, 16, 2, 2, 8, 5);
        let a_vis: Vec<_> = (0..t)
            .map(|k| Some(if (3..=5).contains(&k) { visible_part.clone() } else { full.clone() }))
            .collect();
        let b_vis: Vec<_> = (0..t).map(|_| Some(rect_mask(16, 16, 10, 2, 14, 12))).collect();
        let mut script = MockScript::default();
        script.completion.amodal.insert(
            "a".into(),
            (0..t).map(|k| (3..=5).contains(&k).then(|| full.clone())).collect(),
        );
        let masklets = vec![
            Masklet { human_id: "a".into(), masks: a_vis.clone() },
            Masklet { human_id: "b".into(), masks: b_vis.clone() },
        ];
        let mut backend = completion_client(Arc::new(script.clone())).unwrap();
        let out = refine(&job, &frames, &masklets, &mut backend, &config()).unwrap();

        let h = &out.humans[0];
        assert_eq!(h.flags.flags, (0..t).map(|k| (3..=5).contains(&k)).collect::<Vec<_>>());
        assert_eq!(h.intervals, vec![OcclusionInterval { start: 3, end: 5 }]);
        assert_eq!(out.masklets[0].masks, vec![Some(full.clone()); t]);
        assert_eq!(out.masklets[1], masklets[1]);
        assert!(out.humans[1].intervals.is_empty());

        assert_eq!(out.evidence.len(), 1);
        let ev = &out.evidence[0];
        assert_eq!(ev.frames.keys().copied().collect::<Vec<_>>(), vec![3, 4, 5]);
        assert_eq!(ev.masks.keys().copied().collect::<Vec<_>>(), vec![3, 4, 5]);
        // recovered pixels painted where the person was hidden
        let img = &ev.frames[&4];
        let hidden = rle_decode(&full);
        let shown = rle_decode(&visible_part);
        for (x, y, px) in img.enumerate_pixels() {
            let expect = if hidden.get(x, y) && !shown.get(x, y) {
                script.completion.fill
            } else {
                [90, 90, 90]
            };
            assert_eq!(px.0, expect, "pixel {x},{y}");
        }
        for (vis, refined) in masklets[0].masks.iter().zip(&out.masklets[0].masks) {
            assert!(area(refined.as_ref().unwrap()) >= area(vis.as_ref().unwrap()));
        }
    }

    #[test]
    fn gap_frames_are_sent_but_not_replaced() {
        let t = 6;
        let (job, frames) = scene(t, &["a"]);
        let full = rect_mask(16, 16, 2, 2, 8, 14);
        let part = rect_mask(16, 16, 2, 2, 8, 4);
        let occluded = [1usize, 4];
        let vis: Vec<_> = (0..t)
            .map(|k| Some(if occluded.contains(&k) { part.clone() } else { full.clone() }))
            .collect();
        let mut script = MockScript::default();
        script
            .completion
            .amodal
            .insert("a".into(), (0..t).map(|k| occluded.contains(&k).then(|| full.clone())).collect());
        let masklets = vec![Masklet { human_id: "a".into(), masks: vis }];
        let mut backend = completion_client(Arc::new(script)).unwrap();
        let out = refine(&job, &frames, &masklets, &mut backend, &config()).unwrap();
        assert_eq!(out.humans[0].intervals, vec![OcclusionInterval { start: 1, end: 4 }]);
        assert_eq!(out.evidence[0].frames.keys().copied().collect::<Vec<_>>(), vec![1, 4]);
        assert_eq!(out.recover_calls(), 1);
    }
}
