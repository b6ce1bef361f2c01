//! Golden transcripts and trajectory files for a fixed synthetic scene.
//!
//! Set `BODY4D_BLESS=1` to rewrite the fixtures after an intentional change.

use std::path::PathBuf;
use std::sync::Arc;

use body4d::frames::{FrameSource, MemoryFrames};
use body4d::model::validate_job;
use body4d::occlusion::Resolution;
use body4d::pipeline::files::{to_json_bytes, TrajectoryFile, TrajectoryStage};
use body4d::pipeline::{run_pipeline, Backends, PipelineConfig, RunOutput};
use body4d::protocol::mock::{MockBackend, MockScript};
use body4d::protocol::{
    serve_stdio, BackendKind, Client, HmrClient, HttpServer, HttpTransport, InProcess, Recorder, Transcript, Transport,
};
use body4d::synthetic::{pillar, render};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden").join(name)
}

fn check_golden(name: &str, actual: &[u8]) {
    let path = fixture(name);
    if std::env::var_os("BODY4D_BLESS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}; run with BODY4D_BLESS=1", path.display()));
    assert!(expected == actual, "{name} differs from the golden fixture");
}

fn recorded(kind: BackendKind, script: &Arc<MockScript>, log: &Transcript) -> Recorder<InProcess<MockBackend>> {
    Recorder::new(InProcess::new(MockBackend::new(kind, Arc::clone(script))), log.clone())
}

struct Recorded {
    output: RunOutput,
    segmentation: Transcript,
    completion: Transcript,
    hmr: Transcript,
}

fn config(refiner: bool) -> PipelineConfig {
    PipelineConfig {
        batch_size: 4,
        refiner_enabled: refiner,
        completion_resolution: Resolution { width: 32, height: 24 },
        ..Default::default()
    }
}

fn run_recorded(occluded: Option<[usize; 2]>, config: &PipelineConfig) -> Recorded {
    let scene = render(&pillar(6, occluded));
    let frames = MemoryFrames::new(scene.frames.clone());
    let job = validate_job(frames.frames().to_vec(), scene.prompts.clone()).unwrap();
    let script = Arc::new(scene.script.clone());
    let (seg, comp, hmr) = (Transcript::default(), Transcript::default(), Transcript::default());
    let mut backends = Backends {
        segmentation: Box::new(
            Client::connect(recorded(BackendKind::Segmentation, &script, &seg), BackendKind::Segmentation).unwrap(),
        ),
        completion: Some(Box::new(
            Client::connect(recorded(BackendKind::Completion, &script, &comp), BackendKind::Completion).unwrap(),
        )),
        hmr: Box::new(HmrClient::connect(vec![recorded(BackendKind::Hmr, &script, &hmr)]).unwrap()),
    };
    let output = run_pipeline(&job, &frames, config, &mut backends).unwrap();
    Recorded {
        output,
        segmentation: seg,
        completion: comp,
        hmr,
    }
}

fn smoothed_bytes(out: &RunOutput) -> Vec<u8> {
    to_json_bytes(&TrajectoryFile::new(TrajectoryStage::Smoothed, out.metadata.clone(), &out.smoothed))
}

#[test]
fn transcripts_match_golden() {
    let r = run_recorded(Some([1, 3]), &config(true));
    check_golden("segmentation.ndjson", &r.segmentation.bytes());
    check_golden("completion.ndjson", &r.completion.bytes());
    check_golden("hmr.ndjson", &r.hmr.bytes());
    check_golden("summary_occluded.json", &to_json_bytes(&r.output.summary()));
}

#[test]
fn refiner_off_trajectories_match_golden() {
    let r = run_recorded(None, &config(false));
    check_golden("trajectories_refiner_off.json", &smoothed_bytes(&r.output));
    // a second run is byte-identical
    let again = run_recorded(None, &config(false));
    assert_eq!(smoothed_bytes(&again.output), smoothed_bytes(&r.output));
    assert_eq!(again.hmr.bytes(), r.hmr.bytes());
}

fn split(t: &[u8]) -> (Vec<Vec<u8>>, Vec<Vec<u8>>) {
    let lines: Vec<Vec<u8>> = t.split_inclusive(|&b| b == b'\n').map(<[u8]>::to_vec).collect();
    assert_eq!(lines.len() % 2, 0);
    let requests = lines.iter().step_by(2).cloned().collect();
    let responses = lines.iter().skip(1).step_by(2).cloned().collect();
    (requests, responses)
}

fn golden_transcripts() -> Vec<(BackendKind, Vec<u8>, Arc<MockScript>)> {
    let script = Arc::new(render(&pillar(6, Some([1, 3]))).script);
    [
        (BackendKind::Segmentation, "segmentation.ndjson"),
        (BackendKind::Completion, "completion.ndjson"),
        (BackendKind::Hmr, "hmr.ndjson"),
    ]
    .into_iter()
    .map(|(kind, name)| (kind, std::fs::read(fixture(name)).unwrap(), Arc::clone(&script)))
    .collect()
}

#[test]
fn golden_transcripts_replay_over_stdio_streams() {
    for (kind, transcript, script) in golden_transcripts() {
        let (requests, responses) = split(&transcript);
        let mut out = Vec::new();
        let mut server = MockBackend::new(kind, script);
        serve_stdio(&mut server, requests.concat().as_slice(), &mut out).unwrap();
        assert!(out == responses.concat(), "{kind} replay differs");
    }
}

#[test]
fn golden_transcripts_replay_over_http() {
    for (kind, transcript, script) in golden_transcripts() {
        let (requests, responses) = split(&transcript);
        let server = HttpServer::bind("127.0.0.1:0", MockBackend::new(kind, script)).unwrap();
        let mut client = HttpTransport::new(server.url());
        for (req, want) in requests.iter().zip(&responses) {
            let got = client.round_trip(req).unwrap();
            assert!(&got == want, "{kind} http replay differs");
        }
    }
}
