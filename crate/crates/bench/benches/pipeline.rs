use std::hint::black_box;
use std::sync::Arc;

use body4d::hmr::{plan_batches, run_hmr, run_hmr_sequential, visibility, HmrInputs};
use body4d::mask::{iou, rle_decode, rle_encode};
use body4d::pipeline::{run_pipeline, PipelineConfig};
use body4d::protocol::mock::hmr_client;
use body4d::smooth::{kalman_smooth, SmoothingConfig};
use body4d_bench::{crossing_job, mock_backends, noisy_series, random_bitmap, random_mask, random_visibility, rng};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn masks(c: &mut Criterion) {
    let mut r = rng(1);
    let bitmap = random_bitmap(&mut r, 128, 128);
    let rle = rle_encode(&bitmap);
    let other = random_mask(&mut r, 128, 128);
    c.bench_function("rle_encode_128", |b| b.iter(|| rle_encode(black_box(&bitmap))));
    c.bench_function("rle_decode_128", |b| b.iter(|| rle_decode(black_box(&rle))));
    c.bench_function("iou_128", |b| b.iter(|| iou(black_box(&rle), black_box(&other))));
}

fn planning(c: &mut Criterion) {
    let vis = random_visibility(&mut rng(2), 6, 300, 0.7);
    let mut g = c.benchmark_group("plan_batches");
    for batch in [1, 8, 32] {
        g.bench_with_input(BenchmarkId::from_parameter(batch), &batch, |b, &batch| {
            b.iter(|| plan_batches(black_box(&vis), batch))
        });
    }
    g.finish();
}

fn smoothing(c: &mut Criterion) {
    let series = noisy_series(&mut rng(3), 1000);
    let cfg = SmoothingConfig::default();
    c.bench_function("kalman_smooth_1000", |b| b.iter(|| kalman_smooth(black_box(&series), &cfg)));
}

fn hmr(c: &mut Criterion) {
    let sj = crossing_job(30);
    let script = Arc::new(sj.scene.script.clone());
    let masklets: Vec<_> = sj
        .job
        .human_ids()
        .map(|id| body4d::Masklet {
            human_id: id.to_string(),
            masks: sj.scene.script.segmentation.tracks[id].clone(),
        })
        .collect();
    let inputs = HmrInputs {
        frames: &sj.frames,
        masklets: &masklets,
        evidence: &[],
    };
    let plan = plan_batches(&visibility(&masklets, 30), 32);
    let batched = hmr_client(Arc::clone(&script), 2, None).unwrap();
    let sequential = hmr_client(script, 1, None).unwrap();
    let mut g = c.benchmark_group("hmr_mock");
    g.bench_function("batched", |b| b.iter(|| run_hmr(&inputs, &plan, &batched, 2).unwrap()));
    g.bench_function("sequential", |b| b.iter(|| run_hmr_sequential(&inputs, &sequential).unwrap()));
    g.finish();
}

fn end_to_end(c: &mut Criterion) {
    let sj = crossing_job(30);
    let config = PipelineConfig::default();
    let mut g = c.benchmark_group("pipeline");
    g.sample_size(10);
    g.bench_function("crossing_30", |b| {
        b.iter(|| {
            let mut backends = mock_backends(&sj.scene, &config);
            run_pipeline(&sj.job, &sj.frames, &config, &mut backends).unwrap()
        })
    });
    g.finish();
}

criterion_group!(benches, masks, planning, smoothing, hmr, end_to_end);
criterion_main!(benches);
