//! End-to-end orchestration: masklets, occlusion refinement, batched HMR,
//! then shape lock and smoothing. Each stage is also callable on its own so
//! the CLI can run them over files.

mod backends;
mod config;
pub mod files;
mod report;

use std::fmt;
use std::path::Path;
use std::time::Instant;

pub use backends::{connect_completion, connect_hmr, connect_segmentation, load_script, BackendSpec, Backends, DynClient};
pub use config::{BackendsConfig, PipelineConfig};
pub use report::{summarize, HmrSummary, HumanSummary, RunReport, RunSummary, StageTimings};

use crate::backend::{CompletionBackend, HmrBackend, SegmentationBackend};
use crate::error::{Error, Result};
use crate::frames::{DirFrames, FrameSource};
use crate::hmr::{plan_batches, run_hmr, visibility, HmrInputs};
use crate::masklet::generate_masklets;
use crate::model::{validate_job, Masklet, MeshTrajectory, ValidatedJob};
use crate::occlusion::{refine, RefineOutput, RefinedEvidence};
use crate::smooth::{lock_shape, smooth_trajectory};
use files::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Load,
    Segment,
    Refine,
    Hmr,
    Smooth,
    Write,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Load => "load",
            Stage::Segment => "segment",
            Stage::Refine => "refine",
            Stage::Hmr => "hmr",
            Stage::Smooth => "smooth",
            Stage::Write => "write",
        })
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage} stage failed: {error}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub error: Error,
}

pub trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, PipelineError>;
}

impl<T, E: Into<Error>> AtStage<T> for std::result::Result<T, E> {
    fn at(self, stage: Stage) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError {
            stage,
            error: e.into(),
        })
    }
}

/// Reads a frame directory and a prompts file into a validated job.
pub fn load_job(frames_dir: &Path, prompts: &Path) -> Result<(ValidatedJob, DirFrames)> {
    let frames = DirFrames::open(frames_dir)?;
    let prompts = read_prompts(prompts)?;
    let job = validate_job(frames.frames().to_vec(), prompts)?;
    Ok((job, frames))
}

pub fn stage_segment(
    job: &ValidatedJob,
    frames: &dyn FrameSource,
    config: &PipelineConfig,
    backend: &mut dyn SegmentationBackend,
) -> Result<Vec<Masklet>> {
    generate_masklets(job, frames, backend, config.binarize_threshold)
}

pub fn stage_refine(
    job: &ValidatedJob,
    frames: &dyn FrameSource,
    masklets: &[Masklet],
    config: &PipelineConfig,
    backend: &mut dyn CompletionBackend,
) -> Result<RefineOutput> {
    refine(job, frames, masklets, backend, &config.occlusion())
}

pub fn stage_hmr(
    frames: &dyn FrameSource,
    masklets: &[Masklet],
    evidence: &[RefinedEvidence],
    config: &PipelineConfig,
    backend: &dyn HmrBackend,
) -> Result<Vec<MeshTrajectory>> {
    let num_frames = frames.frames().len();
    if let Some(m) = masklets.iter().find(|m| m.len() != num_frames) {
        return Err(Error::LengthMismatch(format!(
            "masklet {:?} has {} frames, video has {num_frames}",
            m.human_id,
            m.len()
        )));
    }
    let plan = plan_batches(&visibility(masklets, num_frames), config.batch_size);
    let inputs = HmrInputs {
        frames,
        masklets,
        evidence,
    };
    run_hmr(&inputs, &plan, backend, config.hmr_in_flight)
}

/// Locks shape and skeleton to the first visible frame, then smooths.
pub fn stage_smooth(raw: &[MeshTrajectory], config: &PipelineConfig) -> Result<Vec<MeshTrajectory>> {
    raw.iter()
        .map(|t| Ok(smooth_trajectory(&lock_shape(t), &config.smoothing)?))
        .collect()
}

/// Everything a run produces, held in memory until written.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metadata: Metadata,
    pub masklets: Vec<Masklet>,
    pub refined: Option<RefineOutput>,
    pub raw: Vec<MeshTrajectory>,
    pub smoothed: Vec<MeshTrajectory>,
    pub timings: StageTimings,
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1000.0
}

pub fn run_pipeline(
    job: &ValidatedJob,
    frames: &dyn FrameSource,
    config: &PipelineConfig,
    backends: &mut Backends,
) -> Result<RunOutput, PipelineError> {
    config.validate().at(Stage::Load)?;
    let mut timings = StageTimings::default();
    let start = Instant::now();

    let t = Instant::now();
    let masklets = stage_segment(job, frames, config, backends.segmentation.as_mut()).at(Stage::Segment)?;
    timings.segment_ms = ms_since(t);

    let refined = if config.refiner_enabled {
        let t = Instant::now();
        let backend = backends
            .completion
            .as_deref_mut()
            .ok_or_else(|| Error::Config("refiner enabled but no completion backend".into()))
            .at(Stage::Refine)?;
        let out = stage_refine(job, frames, &masklets, config, backend).at(Stage::Refine)?;
        timings.refine_ms = ms_since(t);
        Some(out)
    } else {
        None
    };

    let t = Instant::now();
    let (hmr_masklets, evidence) = match &refined {
        Some(r) => (&r.masklets[..], &r.evidence[..]),
        None => (&masklets[..], &[][..]),
    };
    let raw = stage_hmr(frames, hmr_masklets, evidence, config, backends.hmr.as_ref()).at(Stage::Hmr)?;
    timings.hmr_ms = ms_since(t);

    let t = Instant::now();
    let smoothed = stage_smooth(&raw, config).at(Stage::Smooth)?;
    timings.smooth_ms = ms_since(t);
    timings.total_ms = ms_since(start);

    let metadata = Metadata::new(
        job.num_frames(),
        job.width(),
        job.height(),
        job.human_ids().map(str::to_string).collect(),
        config,
    );
    Ok(RunOutput {
        metadata,
        masklets,
        refined,
        raw,
        smoothed,
        timings,
    })
}

impl RunOutput {
    pub fn summary(&self) -> RunSummary {
        summarize(
            &self.metadata,
            &self.masklets,
            self.refined.as_ref().map(|r| RefinedView::from_output(r)).as_ref(),
            &self.raw,
            &self.smoothed,
        )
    }

    /// Writes every output file into `dir`. Nothing is written before the
    /// whole run has succeeded.
    pub fn write(&self, dir: &Path) -> Result<RunReport> {
        let report = RunReport {
            summary: self.summary(),
            timings_ms: self.timings,
        };
        write_json(&dir.join(MASKLETS_FILE), &MaskletFile::new(self.metadata.clone(), &self.masklets))?;
        if let Some(r) = &self.refined {
            let (file, images) = RefinedFile::new(self.metadata.clone(), r);
            write_refined(&dir.join(REFINED_FILE), &file, &images)?;
        }
        write_json(
            &dir.join(RAW_TRAJECTORIES_FILE),
            &TrajectoryFile::new(TrajectoryStage::Raw, self.metadata.clone(), &self.raw),
        )?;
        write_json(
            &dir.join(TRAJECTORIES_FILE),
            &TrajectoryFile::new(TrajectoryStage::Smoothed, self.metadata.clone(), &self.smoothed),
        )?;
        write_json(&dir.join(REPORT_FILE), &report)?;
        Ok(report)
    }
}

pub use report::RefinedView;

/// Recomputes the run summary from the files in a run directory.
pub fn summarize_dir(dir: &Path) -> Result<RunSummary> {
    let masklet_file: MaskletFile = read_json(&dir.join(MASKLETS_FILE))?;
    let masklets = masklet_file.masklets()?;
    let refined_path = dir.join(REFINED_FILE);
    let refined = if refined_path.exists() {
        let file: RefinedFile = read_json(&refined_path)?;
        Some(RefinedView::from_file(&file)?)
    } else {
        None
    };
    let raw_file: TrajectoryFile = read_json(&dir.join(RAW_TRAJECTORIES_FILE))?;
    let smooth_file: TrajectoryFile = read_json(&dir.join(TRAJECTORIES_FILE))?;
    Ok(summarize(
        &smooth_file.metadata,
        &masklets,
        refined.as_ref(),
        &raw_file.trajectories()?,
        &smooth_file.trajectories()?,
    ))
}

#[cfg(test)]
mod tests;
