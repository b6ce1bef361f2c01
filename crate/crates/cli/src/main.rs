//! `body4d` command-line front end.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 backend
//! failure, 3 data error.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use body4d::frames::{write_png_sequence, FrameSource};
use body4d::model::validate_job;
use body4d::occlusion::Resolution;
use body4d::pipeline::files::*;
use body4d::pipeline::{
    connect_completion, connect_hmr, connect_segmentation, load_job, load_script, run_pipeline, stage_hmr,
    stage_refine, stage_segment, stage_smooth, summarize_dir, AtStage, Backends, PipelineConfig, PipelineError, Stage,
};
use body4d::protocol::mock::MockBackend;
use body4d::protocol::{serve_stdio, BackendKind, HttpServer};
use body4d::synthetic;
use body4d::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

#[derive(Parser)]
#[command(name = "body4d", version, about = "Temporally consistent 4D human mesh recovery from video")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the whole pipeline and write a run directory.
    Run {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        prompts: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Generate masklets only.
    Segment {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        prompts: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Refine a masklet file; evidence images go next to the output.
    Refine {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Recover raw mesh parameters from a masklet or refined file.
    Hmr {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Lock shape and smooth a trajectory file.
    Smooth {
        #[arg(long = "in")]
        input: PathBuf,
        /// Defaults to `<in>.smoothed.json`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Recompute the summary of a run directory.
    Report {
        dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve a scripted mock backend over stdio or HTTP.
    MockServe {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long)]
        script: PathBuf,
        /// Listen on this address instead of stdio; prints the URL once bound.
        #[arg(long)]
        http: Option<String>,
    },
    /// Write a synthetic scene: frames, prompts and a mock script.
    Synth {
        #[arg(long, value_enum, default_value = "pillar")]
        scene: SceneKind,
        #[arg(long, default_value_t = 6)]
        num_frames: usize,
        /// One-based inclusive frame range hidden behind the pillar, e.g. `2-4`.
        #[arg(long)]
        occlude: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Segmentation,
    Completion,
    Hmr,
}

#[derive(Clone, Copy, ValueEnum)]
enum SceneKind {
    Pillar,
    Crossing,
}

/// Flags mirroring the pipeline configuration. Precedence: defaults, then
/// the snapshot of an input file, then `--config`, then flags.
#[derive(Args, Default)]
struct ConfigArgs {
    /// JSON file with (part of) the pipeline configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    iou_threshold: Option<f64>,
    #[arg(long)]
    min_area: Option<u64>,
    #[arg(long)]
    max_gap: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// `WIDTHxHEIGHT`
    #[arg(long, value_parser = parse_resolution)]
    completion_resolution: Option<Resolution>,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    r: Option<f64>,
    #[arg(long)]
    no_smoothing: bool,
    #[arg(long)]
    no_refiner: bool,
    #[arg(long)]
    hmr_in_flight: Option<usize>,
    #[arg(long)]
    binarize_threshold: Option<f32>,
    /// Use this spec for every backend kind.
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    segmentation_backend: Option<String>,
    #[arg(long)]
    completion_backend: Option<String>,
    #[arg(long)]
    hmr_backend: Option<String>,
}

fn parse_resolution(s: &str) -> Result<Resolution, String> {
    let (w, h) = s.split_once('x').ok_or("expected WIDTHxHEIGHT")?;
    Ok(Resolution {
        width: w.parse().map_err(|e| format!("{e}"))?,
        height: h.parse().map_err(|e| format!("{e}"))?,
    })
}

impl ConfigArgs {
    fn patch(&self) -> Value {
        let mut p = Map::new();
        let mut set = |k: &str, v: Value| {
            p.insert(k.to_string(), v);
        };
        if let Some(v) = self.iou_threshold {
            set("iou_threshold", json!(v));
        }
        if let Some(v) = self.min_area {
            set("min_area", json!(v));
        }
        if let Some(v) = self.max_gap {
            set("max_gap", json!(v));
        }
        if let Some(v) = self.batch_size {
            set("batch_size", json!(v));
        }
        if let Some(v) = self.completion_resolution {
            set("completion_resolution", json!({"width": v.width, "height": v.height}));
        }
        let mut smoothing = Map::new();
        if let Some(v) = self.q {
            smoothing.insert("q".into(), json!(v));
        }
        if let Some(v) = self.r {
            smoothing.insert("r".into(), json!(v));
        }
        if self.no_smoothing {
            smoothing.insert("enabled".into(), json!(false));
        }
        if !smoothing.is_empty() {
            set("smoothing", Value::Object(smoothing));
        }
        if self.no_refiner {
            set("refiner_enabled", json!(false));
        }
        if let Some(v) = self.hmr_in_flight {
            set("hmr_in_flight", json!(v));
        }
        if let Some(v) = self.binarize_threshold {
            set("binarize_threshold", json!(v));
        }
        let mut backends = Map::new();
        for (kind, specific) in [
            ("segmentation", &self.segmentation_backend),
            ("completion", &self.completion_backend),
            ("hmr", &self.hmr_backend),
        ] {
            if let Some(spec) = specific.as_ref().or(self.backend.as_ref()) {
                backends.insert(kind.into(), json!(spec));
            }
        }
        if !backends.is_empty() {
            set("backends", Value::Object(backends));
        }
        Value::Object(p)
    }

    fn resolve(&self, base: &PipelineConfig) -> Result<PipelineConfig, Error> {
        let mut config = base.clone();
        if let Some(path) = &self.config {
            config = config.overlay_file(path)?;
        }
        let config = config.overlay(&self.patch())?;
        config.validate()?;
        Ok(config)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        Error::Backend(_) => 2,
        _ => 3,
    }
}

fn fail(e: PipelineError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(exit_code(&e.error))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e),
    }
}

fn dispatch(command: Command) -> Result<(), PipelineError> {
    match command {
        Command::Run {
            frames,
            prompts,
            out,
            config,
        } => cmd_run(&frames, &prompts, &out, &config),
        Command::Segment {
            frames,
            prompts,
            out,
            config,
        } => cmd_segment(&frames, &prompts, &out, &config),
        Command::Refine {
            frames,
            input,
            out,
            config,
        } => cmd_refine(&frames, &input, &out, &config),
        Command::Hmr {
            frames,
            input,
            out,
            config,
        } => cmd_hmr(&frames, &input, &out, &config),
        Command::Smooth { input, out, config } => {
            let out = out.unwrap_or_else(|| input.with_extension("smoothed.json"));
            cmd_smooth(&input, &out, &config)
        }
        Command::Report { dir, out } => {
            let summary = summarize_dir(&dir).at(Stage::Load)?;
            let bytes = to_json_bytes(&summary);
            match out {
                Some(path) => std::fs::write(&path, bytes)
                    .map_err(|source| Error::Io { path, source })
                    .at(Stage::Write),
                None => std::io::stdout()
                    .write_all(&bytes)
                    .map_err(|source| Error::Io {
                        path: "<stdout>".into(),
                        source,
                    })
                    .at(Stage::Write),
            }
        }
        Command::MockServe { kind, script, http } => cmd_mock_serve(kind, &script, http.as_deref()),
        Command::Synth {
            scene,
            num_frames,
            occlude,
            out,
        } => cmd_synth(scene, num_frames, occlude.as_deref(), &out),
    }
}

fn cmd_run(frames: &Path, prompts: &Path, out: &Path, args: &ConfigArgs) -> Result<(), PipelineError> {
    let config = args.resolve(&PipelineConfig::default()).at(Stage::Load)?;
    let (job, frames) = load_job(frames, prompts).at(Stage::Load)?;
    let b = &config.backends;
    let mut backends = Backends {
        segmentation: Box::new(connect_segmentation(b.segmentation.as_ref()).at(Stage::Segment)?),
        completion: if config.refiner_enabled {
            Some(Box::new(connect_completion(b.completion.as_ref()).at(Stage::Refine)?))
        } else {
            None
        },
        hmr: Box::new(connect_hmr(b.hmr.as_ref(), config.hmr_in_flight).at(Stage::Hmr)?),
    };
    let output = run_pipeline(&job, &frames, &config, &mut backends)?;
    output.write(out).at(Stage::Write)?;
    Ok(())
}

fn cmd_segment(frames: &Path, prompts: &Path, out: &Path, args: &ConfigArgs) -> Result<(), PipelineError> {
    let config = args.resolve(&PipelineConfig::default()).at(Stage::Load)?;
    let (job, frames) = load_job(frames, prompts).at(Stage::Load)?;
    let mut backend = connect_segmentation(config.backends.segmentation.as_ref()).at(Stage::Segment)?;
    let masklets = stage_segment(&job, &frames, &config, &mut backend).at(Stage::Segment)?;
    let meta = Metadata::new(
        job.num_frames(),
        job.width(),
        job.height(),
        job.human_ids().map(str::to_string).collect(),
        &config,
    );
    write_json(out, &MaskletFile::new(meta, &masklets)).at(Stage::Write)
}

/// Checks an input file was produced for this frame directory.
fn check_video(meta: &Metadata, frames: &dyn FrameSource) -> Result<(), Error> {
    let refs = frames.frames();
    let (w, h) = refs.first().map(|f| (f.width, f.height)).unwrap_or((0, 0));
    if refs.len() != meta.num_frames || (w, h) != (meta.width, meta.height) {
        return Err(Error::Format(format!(
            "input describes {} frames of {}x{}, frame directory has {} of {w}x{h}",
            meta.num_frames,
            meta.width,
            meta.height,
            refs.len()
        )));
    }
    Ok(())
}

fn cmd_refine(frames_dir: &Path, input: &Path, out: &Path, args: &ConfigArgs) -> Result<(), PipelineError> {
    let file: MaskletFile = read_json(input).at(Stage::Load)?;
    let config = args.resolve(&file.metadata.config).at(Stage::Load)?;
    let frames = body4d::frames::DirFrames::open(frames_dir).at(Stage::Load)?;
    check_video(&file.metadata, &frames).at(Stage::Load)?;
    let masklets = file.masklets().at(Stage::Load)?;
    let job = validate_job(frames.frames().to_vec(), Vec::new()).at(Stage::Load)?;
    let mut backend = connect_completion(config.backends.completion.as_ref()).at(Stage::Refine)?;
    let refined = stage_refine(&job, &frames, &masklets, &config, &mut backend).at(Stage::Refine)?;
    let meta = Metadata {
        config,
        ..file.metadata
    };
    let (file, images) = RefinedFile::new(meta, &refined);
    write_refined(out, &file, &images).at(Stage::Write)
}

fn cmd_hmr(frames_dir: &Path, input: &Path, out: &Path, args: &ConfigArgs) -> Result<(), PipelineError> {
    let value: Value = read_json(input).at(Stage::Load)?;
    fn parse<T: serde::de::DeserializeOwned>(v: Value, input: &Path) -> Result<T, Error> {
        serde_json::from_value(v).map_err(|e| Error::Format(format!("{}: {e}", input.display())))
    }
    let (meta, masklets, evidence) = if value.get("refinement").is_some() {
        let file: RefinedFile = parse(value, input).at(Stage::Load)?;
        let evidence = file.evidence(&base_dir(input)).at(Stage::Load)?;
        (file.metadata.clone(), file.masklets().at(Stage::Load)?, evidence)
    } else {
        let file: MaskletFile = parse(value, input).at(Stage::Load)?;
        (file.metadata.clone(), file.masklets().at(Stage::Load)?, Vec::new())
    };
    let config = args.resolve(&meta.config).at(Stage::Load)?;
    let frames = body4d::frames::DirFrames::open(frames_dir).at(Stage::Load)?;
    check_video(&meta, &frames).at(Stage::Load)?;
    let backend = connect_hmr(config.backends.hmr.as_ref(), config.hmr_in_flight).at(Stage::Hmr)?;
    let raw = stage_hmr(&frames, &masklets, &evidence, &config, &backend).at(Stage::Hmr)?;
    let meta = Metadata { config, ..meta };
    write_json(out, &TrajectoryFile::new(TrajectoryStage::Raw, meta, &raw)).at(Stage::Write)
}

fn cmd_smooth(input: &Path, out: &Path, args: &ConfigArgs) -> Result<(), PipelineError> {
    let file: TrajectoryFile = read_json(input).at(Stage::Load)?;
    let config = args.resolve(&file.metadata.config).at(Stage::Load)?;
    let raw = file.trajectories().at(Stage::Load)?;
    let smoothed = stage_smooth(&raw, &config).at(Stage::Smooth)?;
    let meta = Metadata {
        config,
        ..file.metadata
    };
    write_json(out, &TrajectoryFile::new(TrajectoryStage::Smoothed, meta, &smoothed)).at(Stage::Write)
}

fn cmd_mock_serve(kind: Kind, script: &Path, http: Option<&str>) -> Result<(), PipelineError> {
    let script = Arc::new(load_script(script).at(Stage::Load)?);
    let kind = match kind {
        Kind::Segmentation => BackendKind::Segmentation,
        Kind::Completion => BackendKind::Completion,
        Kind::Hmr => BackendKind::Hmr,
    };
    let mut handler = MockBackend::new(kind, script);
    let io_err = |source| Error::Io {
        path: "<mock-serve>".into(),
        source,
    };
    match http {
        None => {
            let stdin = std::io::stdin();
            let stdout = std::io::stdout();
            serve_stdio(&mut handler, stdin.lock(), stdout.lock())
                .map_err(io_err)
                .at(Stage::Load)
        }
        Some(addr) => {
            let server = HttpServer::bind(addr, handler).map_err(io_err).at(Stage::Load)?;
            println!("{}", server.url());
            let _ = std::io::stdout().flush();
            server.join();
            Ok(())
        }
    }
}

fn parse_range(s: &str) -> Result<[usize; 2], Error> {
    let bad = || Error::Config(format!("expected a one-based range like 2-4, got {s:?}"));
    let (a, b) = s.split_once('-').ok_or_else(bad)?;
    let (a, b): (usize, usize) = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
    if a == 0 || b < a {
        return Err(bad());
    }
    Ok([a - 1, b - 1])
}

fn cmd_synth(kind: SceneKind, num_frames: usize, occlude: Option<&str>, out: &Path) -> Result<(), PipelineError> {
    if num_frames == 0 {
        return Err(Error::Config("num-frames must be at least 1".into())).at(Stage::Load);
    }
    let spec = match kind {
        SceneKind::Pillar => {
            let occluded = occlude.map(parse_range).transpose().at(Stage::Load)?;
            synthetic::pillar(num_frames, occluded)
        }
        SceneKind::Crossing => synthetic::crossing(num_frames),
    };
    let scene = synthetic::render(&spec);
    write_png_sequence(&out.join("frames"), "frame_", &scene.frames).at(Stage::Write)?;
    write_prompts(&out.join("prompts.json"), &scene.prompts).at(Stage::Write)?;
    write_json(&out.join("script.json"), &scene.script).at(Stage::Write)
}
