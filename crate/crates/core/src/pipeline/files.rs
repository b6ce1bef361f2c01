//! On-disk formats. Frame numbers in files are one-based.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::mask::RleMask;
use crate::model::{HumanPrompt, Masklet, MeshTrajectory, MhrParams, ParamLayout, PromptPayload};
use crate::occlusion::{OcclusionInterval, RefineOutput, RefinedEvidence};

pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const MASKLETS_FILE: &str = "masklets.json";
pub const REFINED_FILE: &str = "refined.json";
pub const RAW_TRAJECTORIES_FILE: &str = "raw_trajectories.json";
pub const TRAJECTORIES_FILE: &str = "trajectories.json";
pub const REPORT_FILE: &str = "report.json";
pub const EVIDENCE_DIR: &str = "evidence";

/// One entry of the user prompts file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub id: String,
    pub frame: usize,
    #[serde(flatten)]
    pub payload: PromptPayload,
}

pub fn read_prompts(path: &Path) -> Result<Vec<HumanPrompt>> {
    let records: Vec<PromptRecord> = read_json(path)?;
    records
        .into_iter()
        .map(|r| {
            if r.frame == 0 {
                return Err(Error::Format(format!(
                    "{}: prompt {:?} has frame 0; frames are numbered from 1",
                    path.display(),
                    r.id
                )));
            }
            Ok(HumanPrompt {
                human_id: r.id,
                frame_index: r.frame - 1,
                payload: r.payload,
            })
        })
        .collect()
}

pub fn write_prompts(path: &Path, prompts: &[HumanPrompt]) -> Result<()> {
    let records: Vec<PromptRecord> = prompts
        .iter()
        .map(|p| PromptRecord {
            id: p.human_id.clone(),
            frame: p.frame_index + 1,
            payload: p.payload.clone(),
        })
        .collect();
    write_json(path, &records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    pub engine_version: String,
    pub num_frames: usize,
    pub width: u32,
    pub height: u32,
    pub humans: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout: Option<ParamLayout>,
    pub config: PipelineConfig,
}

impl Metadata {
    pub fn new(num_frames: usize, width: u32, height: u32, humans: Vec<String>, config: &PipelineConfig) -> Self {
        Self {
            engine_version: ENGINE_VERSION.to_string(),
            num_frames,
            width,
            height,
            humans,
            layout: None,
            config: config.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskFrame {
    pub frame: usize,
    pub mask: Option<RleMask>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskletRecord {
    pub id: String,
    pub frames: Vec<MaskFrame>,
}

impl MaskletRecord {
    fn from_masklet(m: &Masklet) -> Self {
        Self {
            id: m.human_id.clone(),
            frames: m
                .masks
                .iter()
                .enumerate()
                .map(|(t, mask)| MaskFrame {
                    frame: t + 1,
                    mask: mask.clone(),
                })
                .collect(),
        }
    }

    fn to_masklet(&self, meta: &Metadata) -> Result<Masklet> {
        check_frames(&self.id, self.frames.iter().map(|f| f.frame), meta.num_frames)?;
        for f in &self.frames {
            if let Some(m) = &f.mask {
                if m.dims() != (meta.width, meta.height) {
                    return Err(Error::Format(format!(
                        "mask for {:?} at frame {} is {}x{}, video is {}x{}",
                        self.id,
                        f.frame,
                        m.width(),
                        m.height(),
                        meta.width,
                        meta.height
                    )));
                }
            }
        }
        Ok(Masklet {
            human_id: self.id.clone(),
            masks: self.frames.iter().map(|f| f.mask.clone()).collect(),
        })
    }
}

fn check_frames(id: &str, frames: impl Iterator<Item = usize>, num_frames: usize) -> Result<()> {
    let got: Vec<usize> = frames.collect();
    if got.len() != num_frames || got.iter().enumerate().any(|(i, &f)| f != i + 1) {
        return Err(Error::Format(format!(
            "{id:?} must list frames 1..={num_frames} in order"
        )));
    }
    Ok(())
}

fn check_humans(meta: &Metadata, ids: impl Iterator<Item = String>) -> Result<()> {
    let ids: Vec<String> = ids.collect();
    if ids != meta.humans {
        return Err(Error::Format(format!(
            "records {ids:?} do not match metadata humans {:?}",
            meta.humans
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskletFile {
    pub metadata: Metadata,
    pub masklets: Vec<MaskletRecord>,
}

impl MaskletFile {
    pub fn new(metadata: Metadata, masklets: &[Masklet]) -> Self {
        Self {
            metadata,
            masklets: masklets.iter().map(MaskletRecord::from_masklet).collect(),
        }
    }

    pub fn masklets(&self) -> Result<Vec<Masklet>> {
        check_humans(&self.metadata, self.masklets.iter().map(|m| m.id.clone()))?;
        self.masklets.iter().map(|r| r.to_masklet(&self.metadata)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvidenceRecord {
    pub frame: usize,
    /// Relative to the directory holding the refined file.
    pub image: String,
    pub mask: RleMask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefinementRecord {
    pub id: String,
    pub flagged_frames: Vec<usize>,
    /// Inclusive `[start, end]` pairs.
    pub intervals: Vec<[usize; 2]>,
    pub evidence: Vec<EvidenceRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefinedFile {
    pub metadata: Metadata,
    pub masklets: Vec<MaskletRecord>,
    pub refinement: Vec<RefinementRecord>,
}

fn evidence_name(human: usize, frame: usize) -> String {
    format!("{EVIDENCE_DIR}/h{human:03}_f{:04}.png", frame + 1)
}

impl RefinedFile {
    /// The file plus the evidence images it references, keyed by relative path.
    pub fn new(metadata: Metadata, out: &RefineOutput) -> (Self, BTreeMap<String, RgbImage>) {
        let mut images = BTreeMap::new();
        let by_human: BTreeMap<&str, &RefinedEvidence> =
            out.evidence.iter().map(|e| (e.human_id.as_str(), e)).collect();
        let refinement = out
            .humans
            .iter()
            .enumerate()
            .map(|(i, h)| {
                let evidence = by_human
                    .get(h.flags.human_id.as_str())
                    .map(|e| {
                        e.masks
                            .iter()
                            .map(|(&t, mask)| {
                                let name = evidence_name(i, t);
                                images.insert(name.clone(), e.frames[&t].clone());
                                EvidenceRecord {
                                    frame: t + 1,
                                    image: name,
                                    mask: mask.clone(),
                                }
                            })
                            .collect()
                    })
                    .unwrap_or_default();
                RefinementRecord {
                    id: h.flags.human_id.clone(),
                    flagged_frames: h
                        .flags
                        .flags
                        .iter()
                        .enumerate()
                        .filter(|(_, &f)| f)
                        .map(|(t, _)| t + 1)
                        .collect(),
                    intervals: h.intervals.iter().map(|iv| [iv.start + 1, iv.end + 1]).collect(),
                    evidence,
                }
            })
            .collect();
        let file = Self {
            metadata,
            masklets: out.masklets.iter().map(MaskletRecord::from_masklet).collect(),
            refinement,
        };
        (file, images)
    }

    pub fn masklets(&self) -> Result<Vec<Masklet>> {
        check_humans(&self.metadata, self.masklets.iter().map(|m| m.id.clone()))?;
        self.masklets.iter().map(|r| r.to_masklet(&self.metadata)).collect()
    }

    /// Zero-based intervals per human, in file order.
    pub fn intervals(&self) -> Vec<(String, Vec<OcclusionInterval>)> {
        self.refinement
            .iter()
            .map(|r| {
                let ivs = r
                    .intervals
                    .iter()
                    .map(|&[s, e]| OcclusionInterval {
                        start: s.saturating_sub(1),
                        end: e.saturating_sub(1),
                    })
                    .collect();
                (r.id.clone(), ivs)
            })
            .collect()
    }

    /// Loads the evidence images from `base` (the refined file's directory).
    pub fn evidence(&self, base: &Path) -> Result<Vec<RefinedEvidence>> {
        let mut out = Vec::new();
        for r in &self.refinement {
            if r.evidence.is_empty() {
                continue;
            }
            let mut e = RefinedEvidence {
                human_id: r.id.clone(),
                ..Default::default()
            };
            for rec in &r.evidence {
                if rec.frame == 0 || rec.frame > self.metadata.num_frames {
                    return Err(Error::Format(format!(
                        "evidence frame {} out of range for {:?}",
                        rec.frame, r.id
                    )));
                }
                let path = base.join(&rec.image);
                let img = image::open(&path)
                    .map_err(|err| Error::Format(format!("{}: {err}", path.display())))?
                    .to_rgb8();
                if img.dimensions() != (self.metadata.width, self.metadata.height) {
                    return Err(Error::Format(format!(
                        "{}: evidence image does not match the video size",
                        path.display()
                    )));
                }
                e.frames.insert(rec.frame - 1, img);
                e.masks.insert(rec.frame - 1, rec.mask.clone());
            }
            out.push(e);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryStage {
    Raw,
    Smoothed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaFrame {
    pub frame: usize,
    pub theta: Option<MhrParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryRecord {
    pub id: String,
    pub frames: Vec<ThetaFrame>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryFile {
    pub stage: TrajectoryStage,
    pub metadata: Metadata,
    pub trajectories: Vec<TrajectoryRecord>,
}

impl TrajectoryFile {
    pub fn new(stage: TrajectoryStage, mut metadata: Metadata, trajectories: &[MeshTrajectory]) -> Self {
        if let Some(t) = trajectories.first() {
            metadata.layout = Some(t.layout.clone());
        }
        Self {
            stage,
            metadata,
            trajectories: trajectories
                .iter()
                .map(|t| TrajectoryRecord {
                    id: t.human_id.clone(),
                    frames: t
                        .params
                        .iter()
                        .enumerate()
                        .map(|(i, p)| ThetaFrame {
                            frame: i + 1,
                            theta: p.clone(),
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn trajectories(&self) -> Result<Vec<MeshTrajectory>> {
        check_humans(&self.metadata, self.trajectories.iter().map(|t| t.id.clone()))?;
        let layout = match (&self.metadata.layout, self.trajectories.is_empty()) {
            (Some(l), _) => l.clone(),
            (None, true) => return Ok(Vec::new()),
            (None, false) => return Err(Error::Format("trajectory file has no layout".into())),
        };
        self.trajectories
            .iter()
            .map(|r| {
                check_frames(&r.id, r.frames.iter().map(|f| f.frame), self.metadata.num_frames)?;
                for f in &r.frames {
                    if let Some(p) = &f.theta {
                        if !p.matches(&layout) {
                            return Err(Error::Format(format!(
                                "theta for {:?} at frame {} does not match the layout",
                                r.id, f.frame
                            )));
                        }
                        if !p.is_finite() {
                            return Err(Error::NonFinite {
                                human_id: r.id.clone(),
                                frame: f.frame - 1,
                            });
                        }
                    }
                }
                Ok(MeshTrajectory {
                    human_id: r.id.clone(),
                    params: r.frames.iter().map(|f| f.theta.clone()).collect(),
                    layout: layout.clone(),
                })
            })
            .collect()
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Pretty JSON with a trailing newline.
pub fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("file types serialize");
    bytes.push(b'\n');
    bytes
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_bytes(path, &to_json_bytes(value))
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    std::fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write_png(path: &Path, img: &RgbImage) -> Result<()> {
    let mut buf = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut buf), image::ImageFormat::Png)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    write_bytes(path, &buf)
}

/// Writes a refined file and its evidence images next to it.
pub fn write_refined(path: &Path, file: &RefinedFile, images: &BTreeMap<String, RgbImage>) -> Result<()> {
    let base = base_dir(path);
    for (name, img) in images {
        write_png(&base.join(name), img)?;
    }
    write_json(path, file)
}

pub fn base_dir(path: &Path) -> PathBuf {
    path.parent()
        .filter(|d| !d.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::rect_mask;
    use crate::protocol::mock::default_layout;

    fn meta(t: usize, humans: &[&str]) -> Metadata {
        Metadata::new(t, 8, 8, humans.iter().map(|s| s.to_string()).collect(), &PipelineConfig::default())
    }

    #[test]
    fn prompts_are_one_based() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.json");
        std::fs::write(&p, r#"[{"id":"a","kind":"box","frame":1,"box":[1,2,3,4]}]"#).unwrap();
        let prompts = read_prompts(&p).unwrap();
        assert_eq!(prompts[0].frame_index, 0);
        assert_eq!(prompts[0].payload, PromptPayload::Box { xyxy: [1.0, 2.0, 3.0, 4.0] });
        write_prompts(&p, &prompts).unwrap();
        assert_eq!(read_prompts(&p).unwrap(), prompts);
        std::fs::write(&p, r#"[{"id":"a","kind":"box","frame":0,"box":[1,2,3,4]}]"#).unwrap();
        assert!(matches!(read_prompts(&p), Err(Error::Format(_))));
    }

    #[test]
    fn masklet_file_roundtrip_and_checks() {
        let m = Masklet {
            human_id: "a".into(),
            masks: vec![Some(rect_mask(8, 8, 0, 0, 2, 2)), None],
        };
        let file = MaskletFile::new(meta(2, &["a"]), std::slice::from_ref(&m));
        let json = String::from_utf8(to_json_bytes(&file)).unwrap();
        assert!(json.contains("\"frame\": 2,\n          \"mask\": null"));
        let back: MaskletFile = serde_json::from_str(&json).unwrap();
        assert_eq!(back.masklets().unwrap(), vec![m.clone()]);

        let mut bad = file.clone();
        bad.metadata.num_frames = 3;
        assert!(bad.masklets().is_err());
        let mut bad = file.clone();
        bad.metadata.humans = vec!["b".into()];
        assert!(bad.masklets().is_err());
        let mut bad = file;
        bad.metadata.width = 9;
        assert!(bad.masklets().is_err());
    }

    #[test]
    fn trajectory_nulls_and_validation() {
        let layout = default_layout();
        let traj = MeshTrajectory {
            human_id: "a".into(),
            params: vec![None, Some(MhrParams::zeros(&layout))],
            layout: layout.clone(),
        };
        let file = TrajectoryFile::new(TrajectoryStage::Raw, meta(2, &["a"]), std::slice::from_ref(&traj));
        let json = String::from_utf8(to_json_bytes(&file)).unwrap();
        assert!(json.contains("\"theta\": null"));
        let back: TrajectoryFile = serde_json::from_str(&json).unwrap();
        assert_eq!(back.trajectories().unwrap(), vec![traj]);

        let mut bad = back.clone();
        bad.trajectories[0].frames[1].theta.as_mut().unwrap().pose.pop();
        assert!(bad.trajectories().is_err());
        let mut bad = back;
        bad.trajectories[0].frames[1].theta.as_mut().unwrap().pose[0] = f64::INFINITY;
        assert!(matches!(bad.trajectories(), Err(Error::NonFinite { frame: 1, .. })));
    }
}
