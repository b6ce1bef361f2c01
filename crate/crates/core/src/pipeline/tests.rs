use std::sync::Arc;

use super::*;
use crate::backend::BackendError;
use crate::frames::MemoryFrames;
use crate::hmr::run_hmr_sequential;
use crate::occlusion::Resolution;
use crate::protocol::mock::{completion_client, hmr_client, segmentation_client, MockScript};
use crate::synthetic::{pillar, render, Scene};

fn config() -> PipelineConfig {
    PipelineConfig {
        batch_size: 4,
        hmr_in_flight: 2,
        completion_resolution: Resolution { width: 32, height: 24 },
        ..Default::default()
    }
}

fn backends(script: &MockScript, connections: usize) -> Backends {
    let script = Arc::new(script.clone());
    Backends {
        segmentation: Box::new(segmentation_client(Arc::clone(&script)).unwrap()),
        completion: Some(Box::new(completion_client(Arc::clone(&script)).unwrap())),
        hmr: Box::new(hmr_client(script, connections, None).unwrap()),
    }
}

fn job(scene: &Scene) -> (ValidatedJob, MemoryFrames) {
    let frames = MemoryFrames::new(scene.frames.clone());
    let job = validate_job(frames.frames().to_vec(), scene.prompts.clone()).unwrap();
    (job, frames)
}

fn run(scene: &Scene, config: &PipelineConfig) -> RunOutput {
    let (job, frames) = job(scene);
    run_pipeline(&job, &frames, config, &mut backends(&scene.script, config.hmr_in_flight)).unwrap()
}

fn trajectory_bytes(out: &RunOutput) -> Vec<u8> {
    to_json_bytes(&TrajectoryFile::new(TrajectoryStage::Smoothed, out.metadata.clone(), &out.smoothed))
}

#[test]
fn refiner_off_matches_sequential_reference() {
    let scene = render(&pillar(6, None));
    let cfg = PipelineConfig {
        refiner_enabled: false,
        ..config()
    };
    let out = run(&scene, &cfg);

    // reference: scripted tracks straight into one-slot-per-call HMR
    let (job, frames) = job(&scene);
    let masklets: Vec<Masklet> = job
        .human_ids()
        .map(|id| Masklet {
            human_id: id.to_string(),
            masks: scene.script.segmentation.tracks[id].clone(),
        })
        .collect();
    let hmr = hmr_client(Arc::new(scene.script.clone()), 1, None).unwrap();
    let inputs = HmrInputs {
        frames: &frames,
        masklets: &masklets,
        evidence: &[],
    };
    let raw = run_hmr_sequential(&inputs, &hmr).unwrap();
    let smoothed: Vec<MeshTrajectory> = raw
        .iter()
        .map(|t| smooth_trajectory(&lock_shape(t), &cfg.smoothing).unwrap())
        .collect();
    let reference = to_json_bytes(&TrajectoryFile::new(TrajectoryStage::Smoothed, out.metadata.clone(), &smoothed));
    assert_eq!(trajectory_bytes(&out), reference);
    assert_eq!(out.raw, raw);
}

#[test]
fn scripted_occlusion_yields_one_interval() {
    // frames 2..=4 one-based
    let scene = render(&pillar(6, Some([1, 3])));
    let cfg = PipelineConfig {
        completion_resolution: Resolution { width: 64, height: 48 },
        ..config()
    };
    let out = run(&scene, &cfg);
    let summary = out.summary();
    assert_eq!(summary.humans[0].occlusion_intervals, vec![[2, 4]]);
    assert_eq!(summary.humans[0].flagged_frames, vec![2, 3, 4]);
    assert!(summary.humans[1].occlusion_intervals.is_empty());
    assert_eq!(summary.backend_calls.completion, 2 + 1);
    for (m, t) in out.masklets.iter().zip(&out.smoothed) {
        assert_eq!(m.presence(), t.presence());
    }
    // the refined masklet carries the full rectangle on the flagged frames
    let refined = out.refined.as_ref().unwrap();
    for t in 1..=3 {
        assert_eq!(refined.masklets[0].masks[t], scene.amodal[0][t]);
    }
}

#[test]
fn refiner_is_a_noop_without_occlusion() {
    let scene = render(&pillar(6, None));
    let on = run(&scene, &config());
    let off = run(
        &scene,
        &PipelineConfig {
            refiner_enabled: false,
            ..config()
        },
    );
    assert_eq!(on.raw, off.raw);
    assert_eq!(on.smoothed, off.smoothed);
    assert_eq!(on.summary().humans, off.summary().humans);
}

#[test]
fn shape_is_locked_per_identity() {
    // without refinement the occluded frames show a narrower box, so raw
    // shape predictions vary
    let scene = render(&pillar(8, Some([2, 4])));
    let out = run(
        &scene,
        &PipelineConfig {
            refiner_enabled: false,
            ..config()
        },
    );
    for t in &out.smoothed {
        let first = t.first_present().unwrap();
        for p in t.params.iter().flatten() {
            assert_eq!(p.shape, first.shape);
            assert_eq!(p.skeleton, first.skeleton);
        }
    }
    assert!(out.raw[0].params.iter().flatten().any(|p| p.shape != out.raw[0].first_present().unwrap().shape));
}

#[test]
fn written_run_round_trips_through_the_summary() {
    let scene = render(&pillar(6, Some([1, 3])));
    let out = run(&scene, &config());
    let dir = tempfile::tempdir().unwrap();
    let report = out.write(dir.path()).unwrap();
    assert_eq!(summarize_dir(dir.path()).unwrap(), report.summary);
    let refined: RefinedFile = read_json(&dir.path().join(REFINED_FILE)).unwrap();
    let evidence = refined.evidence(dir.path()).unwrap();
    assert_eq!(evidence, out.refined.as_ref().unwrap().evidence);
    let again = run(&scene, &config());
    assert_eq!(trajectory_bytes(&again), trajectory_bytes(&out));
}

struct DeadHmr(crate::model::ParamLayout);

impl HmrBackend for DeadHmr {
    fn layout(&self) -> &crate::model::ParamLayout {
        &self.0
    }

    fn infer(&self, _: &[crate::backend::SlotInput<'_>]) -> Result<Vec<crate::model::MhrParams>, BackendError> {
        Err(BackendError::Unavailable("gone".into()))
    }
}

#[test]
fn failures_name_their_stage() {
    let scene = render(&pillar(4, None));
    let (job, frames) = job(&scene);
    let mut b = backends(&scene.script, 1);
    b.hmr = Box::new(DeadHmr(scene.script.hmr.layout.clone()));
    let err = run_pipeline(&job, &frames, &config(), &mut b).unwrap_err();
    assert_eq!(err.stage, Stage::Hmr);
    assert!(matches!(err.error, Error::Backend(BackendError::Unavailable(_))));

    let mut b = backends(&scene.script, 1);
    b.completion = None;
    let err = run_pipeline(&job, &frames, &config(), &mut b).unwrap_err();
    assert_eq!(err.stage, Stage::Refine);

    let bad = PipelineConfig {
        batch_size: 0,
        ..config()
    };
    let err = run_pipeline(&job, &frames, &bad, &mut backends(&scene.script, 1)).unwrap_err();
    assert_eq!(err.stage, Stage::Load);
}
