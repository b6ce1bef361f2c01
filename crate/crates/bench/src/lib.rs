//! Shared fixtures for the criterion benches.

use std::sync::Arc;

use body4d::frames::{FrameSource, MemoryFrames};
use body4d::mask::{rle_encode, Bitmap, RleMask};
use body4d::model::{validate_job, ValidatedJob};
use body4d::pipeline::{Backends, PipelineConfig};
use body4d::protocol::mock::{completion_client, hmr_client, segmentation_client};
use body4d::synthetic::{crossing, render, Scene};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Blobby random bitmap: rows of runs, so RLE has realistic run counts.
pub fn random_bitmap(rng: &mut ChaCha8Rng, width: u32, height: u32) -> Bitmap {
    let (cx, cy) = (rng.random_range(0..width) as i64, rng.random_range(0..height) as i64);
    let r = rng.random_range(width.min(height) / 8..=width.min(height) / 2).max(1) as i64;
    Bitmap::from_fn(width, height, |x, y| {
        let (dx, dy) = (x as i64 - cx, y as i64 - cy);
        dx * dx + dy * dy <= r * r
    })
}

pub fn random_mask(rng: &mut ChaCha8Rng, width: u32, height: u32) -> RleMask {
    rle_encode(&random_bitmap(rng, width, height))
}

/// Per-human, per-frame visibility with dropouts.
pub fn random_visibility(rng: &mut ChaCha8Rng, humans: usize, frames: usize, p: f64) -> Vec<Vec<bool>> {
    (0..humans).map(|_| (0..frames).map(|_| rng.random_bool(p)).collect()).collect()
}

/// Smooth signal plus uniform noise.
pub fn noisy_series(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|t| (t as f64 * 0.05).sin() + rng.random_range(-0.1..0.1)).collect()
}

pub struct SceneJob {
    pub scene: Scene,
    pub frames: MemoryFrames,
    pub job: ValidatedJob,
}

pub fn crossing_job(num_frames: usize) -> SceneJob {
    let scene = render(&crossing(num_frames));
    let frames = MemoryFrames::new(scene.frames.clone());
    let job = validate_job(frames.frames().to_vec(), scene.prompts.clone()).expect("synthetic job is valid");
    SceneJob { scene, frames, job }
}

pub fn mock_backends(scene: &Scene, config: &PipelineConfig) -> Backends {
    let script = Arc::new(scene.script.clone());
    Backends {
        segmentation: Box::new(segmentation_client(Arc::clone(&script)).expect("mock handshake")),
        completion: Some(Box::new(completion_client(Arc::clone(&script)).expect("mock handshake"))),
        hmr: Box::new(hmr_client(script, config.hmr_in_flight, None).expect("mock handshake")),
    }
}
