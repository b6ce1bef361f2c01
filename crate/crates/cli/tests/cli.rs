use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use body4d::pipeline::files::{read_json, to_json_bytes, MaskletFile, TrajectoryFile, TrajectoryStage};
use body4d::pipeline::{PipelineConfig, RunReport};
use body4d::protocol::{HttpTransport, StdioTransport, Transport};
use body4d::synthetic::{pillar, render};
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_body4d");

fn body4d(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Vec<u8> {
    let out = body4d(dir, args);
    assert!(out.status.success(), "body4d {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    body4d(dir, args).status.code().unwrap()
}

/// Temp dir holding `scene/` from `synth pillar --occlude 2-4`.
fn pillar_scene() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth", "--scene", "pillar", "--num-frames", "6", "--occlude", "2-4", "--out", "scene"]);
    dir
}

const FRAMES: [&str; 2] = ["--frames", "scene/frames"];
const MOCK: [&str; 2] = ["--backend", "mock:scene/script.json"];

fn run_args<'a>(out: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    [&["run", "--prompts", "scene/prompts.json", "--out", out][..], &FRAMES, extra].concat()
}

#[test]
fn run_writes_every_artifact() {
    let dir = pillar_scene();
    ok(dir.path(), &run_args("out", &MOCK));
    let out = dir.path().join("out");
    for f in ["masklets.json", "refined.json", "raw_trajectories.json", "trajectories.json", "report.json"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    assert!(out.join("evidence").read_dir().unwrap().count() > 0);

    let file: TrajectoryFile = read_json(&out.join("trajectories.json")).unwrap();
    assert_eq!(file.stage, TrajectoryStage::Smoothed);
    let trajs = file.trajectories().unwrap();
    assert_eq!(trajs.len(), 2);
    assert!(trajs.iter().all(|t| t.params.len() == 6));
}

#[test]
fn report_matches_the_run_and_the_golden_summary() {
    let dir = pillar_scene();
    ok(dir.path(), &run_args("out", &[&MOCK[..], &["--batch-size", "4"]].concat()));
    let stdout = ok(dir.path(), &["report", "out"]);
    let report: RunReport = read_json(&dir.path().join("out/report.json")).unwrap();
    assert_eq!(stdout, to_json_bytes(&report.summary));

    let golden = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/report_pillar.json");
    if std::env::var_os("BODY4D_BLESS").is_some() {
        std::fs::create_dir_all(golden.parent().unwrap()).unwrap();
        std::fs::write(&golden, &stdout).unwrap();
    }
    let expected = std::fs::read(&golden).expect("run with BODY4D_BLESS=1 to create the fixture");
    assert!(stdout == expected, "report differs from {}", golden.display());

    // --out writes the same bytes
    ok(dir.path(), &["report", "out", "--out", "summary.json"]);
    assert_eq!(std::fs::read(dir.path().join("summary.json")).unwrap(), stdout);
}

#[test]
fn smooth_records_noise_parameters() {
    let dir = pillar_scene();
    ok(dir.path(), &run_args("out", &MOCK));
    ok(dir.path(), &["smooth", "--in", "out/raw_trajectories.json", "--q", "0.05", "--r", "0.2"]);
    let file: TrajectoryFile = read_json(&dir.path().join("out/raw_trajectories.smoothed.json")).unwrap();
    assert_eq!(file.stage, TrajectoryStage::Smoothed);
    let cfg = &file.metadata.config;
    assert_eq!((cfg.smoothing.q, cfg.smoothing.r), (0.05, 0.2));

    // different noise settings give different output
    let default: TrajectoryFile = read_json(&dir.path().join("out/trajectories.json")).unwrap();
    assert_ne!(default.trajectories().unwrap(), file.trajectories().unwrap());
}

#[test]
fn config_file_sits_between_defaults_and_flags() {
    let dir = pillar_scene();
    std::fs::write(
        dir.path().join("cfg.json"),
        r#"{"batch_size": 2, "smoothing": {"q": 0.01}, "backends": {"hmr": "mock:scene/script.json"}}"#,
    )
    .unwrap();
    ok(dir.path(), &run_args("out", &[&MOCK[..], &["--config", "cfg.json", "--q", "0.02"]].concat()));
    let file: TrajectoryFile = read_json(&dir.path().join("out/trajectories.json")).unwrap();
    assert_eq!(file.metadata.config.batch_size, 2);
    assert_eq!(file.metadata.config.smoothing.q, 0.02);
    assert_eq!(file.metadata.config.smoothing.r, PipelineConfig::default().smoothing.r);
}

#[test]
fn exit_codes_follow_the_error_kind() {
    let dir = pillar_scene();
    let p = dir.path();
    assert_eq!(code(p, &["--help"]), 0);
    assert_eq!(code(p, &["run"]), 1);
    assert_eq!(code(p, &["frobnicate"]), 1);
    assert_eq!(code(p, &run_args("bad_iou", &[&MOCK[..], &["--iou-threshold", "1.5"]].concat())), 1);
    assert_eq!(code(p, &run_args("no_backend", &[])), 1);
    std::fs::write(p.join("unknown.json"), r#"{"batch_sise": 4}"#).unwrap();
    assert_eq!(code(p, &run_args("bad_cfg", &[&MOCK[..], &["--config", "unknown.json"]].concat())), 1);
    assert_eq!(code(p, &run_args("dead", &["--backend", "http://127.0.0.1:1/"])), 2);
    assert_eq!(code(p, &run_args("missing_script", &["--backend", "mock:nope.json"])), 3);
    let missing = ["run", "--frames", "nowhere", "--prompts", "scene/prompts.json", "--out", "no_frames"];
    assert_eq!(code(p, &[&missing[..], &MOCK].concat()), 3);
    for d in ["bad_iou", "no_backend", "bad_cfg", "dead", "missing_script", "no_frames"] {
        assert!(!p.join(d).exists(), "{d} left partial output");
    }
}

#[test]
fn stdio_and_http_backends_match_the_in_process_mock() {
    let dir = pillar_scene();
    let p = dir.path();
    ok(p, &run_args("mock", &MOCK));

    let script = p.join("scene/script.json");
    let stdio = |kind: &str| format!("stdio:{BIN} mock-serve --kind {kind} --script {}", script.display());
    let (seg, comp, hmr) = (stdio("segmentation"), stdio("completion"), stdio("hmr"));
    ok(
        p,
        &run_args(
            "stdio",
            &["--segmentation-backend", &seg, "--completion-backend", &comp, "--hmr-backend", &hmr, "--hmr-in-flight", "2"],
        ),
    );

    let server = HttpMock::start(&script, "hmr");
    ok(
        p,
        &run_args(
            "http",
            &["--segmentation-backend", &seg, "--completion-backend", &comp, "--hmr-backend", &server.url],
        ),
    );

    let load = |run: &str| {
        let f: TrajectoryFile = read_json(&p.join(run).join("trajectories.json")).unwrap();
        f.trajectories().unwrap()
    };
    let reference = load("mock");
    assert_eq!(load("stdio"), reference);
    assert_eq!(load("http"), reference);
    let masklets = |run: &str| {
        let f: MaskletFile = read_json(&p.join(run).join("masklets.json")).unwrap();
        f.masklets().unwrap()
    };
    assert_eq!(masklets("stdio"), masklets("mock"));
}

struct HttpMock {
    child: Child,
    url: String,
}

impl HttpMock {
    fn start(script: &Path, kind: &str) -> Self {
        let mut child = Command::new(BIN)
            .args(["mock-serve", "--kind", kind, "--script"])
            .arg(script)
            .args(["--http", "127.0.0.1:0"])
            .stdout(Stdio::piped())
            .spawn()
            .unwrap();
        let mut url = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut url).unwrap();
        Self {
            child,
            url: url.trim().to_string(),
        }
    }
}

impl Drop for HttpMock {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn golden_transcripts() -> Vec<(&'static str, Vec<Vec<u8>>, Vec<Vec<u8>>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/golden");
    ["segmentation", "completion", "hmr"]
        .into_iter()
        .map(|kind| {
            let bytes = std::fs::read(dir.join(format!("{kind}.ndjson"))).unwrap();
            let lines: Vec<Vec<u8>> = bytes.split_inclusive(|&b| b == b'\n').map(<[u8]>::to_vec).collect();
            let requests = lines.iter().step_by(2).cloned().collect();
            let responses = lines.iter().skip(1).step_by(2).cloned().collect();
            (kind, requests, responses)
        })
        .collect()
}

/// The script the core golden transcripts were recorded against.
fn golden_script(dir: &Path) -> PathBuf {
    let path = dir.join("script.json");
    std::fs::write(&path, to_json_bytes(&render(&pillar(6, Some([1, 3]))).script)).unwrap();
    path
}

#[test]
fn mock_serve_replays_golden_transcripts_over_stdio() {
    let dir = tempfile::tempdir().unwrap();
    let script = golden_script(dir.path());
    for (kind, requests, responses) in golden_transcripts() {
        let argv: Vec<String> = [BIN, "mock-serve", "--kind", kind, "--script", script.to_str().unwrap()]
            .map(String::from)
            .to_vec();
        let mut t = StdioTransport::spawn(&argv).unwrap();
        for (i, (req, want)) in requests.iter().zip(&responses).enumerate() {
            assert!(&t.round_trip(req).unwrap() == want, "{kind} response {i} differs");
        }
    }
}

#[test]
fn mock_serve_replays_golden_transcripts_over_http() {
    let dir = tempfile::tempdir().unwrap();
    let script = golden_script(dir.path());
    for (kind, requests, responses) in golden_transcripts() {
        let server = HttpMock::start(&script, kind);
        let mut t = HttpTransport::new(server.url.clone());
        for (i, (req, want)) in requests.iter().zip(&responses).enumerate() {
            assert!(&t.round_trip(req).unwrap() == want, "{kind} response {i} differs");
        }
    }
}
