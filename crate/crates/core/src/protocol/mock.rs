//! Deterministic scripted backends.
//!
//! A [`MockBackend`] answers the message catalog for one backend kind from a
//! [`MockScript`]. Responses depend only on the script and the request, so
//! replaying a transcript reproduces it byte for byte. The HMR mock derives
//! every parameter from the prompt mask and the pixels under it, and writes
//! the mask centroid and area into the camera channels as a provenance tag.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Cursor;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::client::{Client, HmrClient};
use super::message::*;
use super::server::Handler;
use super::transport::InProcess;
use crate::backend::BackendError;
use crate::mask::{area, resample_nearest, rle_decode, ProbMask, RleMask};
use crate::model::{MhrParams, ParamLayout};

pub fn default_layout() -> ParamLayout {
    ParamLayout {
        pose: 6,
        shape: 4,
        camera: 3,
        skeleton: 2,
        hands: 4,
        rotation_channels: BTreeSet::new(),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegScript {
    /// Per-human, per-frame visible masks; `null` = not visible.
    #[serde(default)]
    pub tracks: BTreeMap<String, Vec<Option<RleMask>>>,
    /// Humans whose masks are returned as soft (float16) masks.
    #[serde(default)]
    pub soft: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompletionScript {
    /// Per-human amodal masks; `null` = completion returns the visible mask.
    #[serde(default)]
    pub amodal: BTreeMap<String, Vec<Option<RleMask>>>,
    /// Colour painted over recovered pixels.
    #[serde(default = "default_fill")]
    pub fill: [u8; 3],
}

fn default_fill() -> [u8; 3] {
    [200, 40, 160]
}

impl Default for CompletionScript {
    fn default() -> Self {
        Self {
            amodal: BTreeMap::new(),
            fill: default_fill(),
        }
    }
}

/// Simulated cost of one HMR call: fixed overhead plus a per-slot term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyModel {
    pub per_call_ms: f64,
    pub per_slot_ms: f64,
}

impl LatencyModel {
    pub fn cost_us(&self, slots: usize) -> u64 {
        (self.per_call_ms * 1000.0).round() as u64 + (self.per_slot_ms * 1000.0).round() as u64 * slots as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HmrScript {
    #[serde(default = "default_layout")]
    pub layout: ParamLayout,
    #[serde(default)]
    pub latency: Option<LatencyModel>,
}

impl Default for HmrScript {
    fn default() -> Self {
        Self {
            layout: default_layout(),
            latency: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockScript {
    #[serde(default)]
    pub segmentation: SegScript,
    #[serde(default)]
    pub completion: CompletionScript,
    #[serde(default)]
    pub hmr: HmrScript,
}

/// Simulated wall clock shared between a mock and the code measuring it.
#[derive(Debug, Clone, Default)]
pub struct SimClock(Arc<AtomicU64>);

impl SimClock {
    pub fn advance_us(&self, us: u64) {
        self.0.fetch_add(us, Ordering::SeqCst);
    }

    pub fn elapsed_ms(&self) -> f64 {
        self.0.load(Ordering::SeqCst) as f64 / 1000.0
    }

    pub fn reset(&self) {
        self.0.store(0, Ordering::SeqCst);
    }
}

struct Session {
    humans: Vec<String>,
    dims: Vec<(u32, u32)>,
    next_frame: usize,
}

pub struct MockBackend {
    kind: BackendKind,
    script: Arc<MockScript>,
    sessions: BTreeMap<String, Session>,
    next_session: u64,
    clock: Option<SimClock>,
    calls: u64,
}

impl MockBackend {
    pub fn new(kind: BackendKind, script: Arc<MockScript>) -> Self {
        Self {
            kind,
            script,
            sessions: BTreeMap::new(),
            next_session: 0,
            clock: None,
            calls: 0,
        }
    }

    pub fn with_clock(mut self, clock: SimClock) -> Self {
        self.clock = Some(clock);
        self
    }

    /// Requests served so far, handshakes included.
    pub fn calls(&self) -> u64 {
        self.calls
    }

    fn handshake(&self) -> HandshakeInfo {
        HandshakeInfo {
            backend_kind: self.kind,
            param_layout: (self.kind == BackendKind::Hmr).then(|| self.script.hmr.layout.clone()),
            capabilities: ["mock".to_string()].into(),
        }
    }

    fn seg_start(&mut self, req: SegStart) -> Message {
        let id = format!("seg-{}", self.next_session);
        self.next_session += 1;
        self.sessions.insert(
            id.clone(),
            Session {
                humans: req.prompts.into_iter().map(|p| p.human_id).collect(),
                dims: req.frames_meta.iter().map(|f| (f.width, f.height)).collect(),
                next_frame: 0,
            },
        );
        Message::SegStartAck(SegStartAck { session_id: id })
    }

    fn seg_frame(&mut self, req: SegFrame) -> Message {
        let Some(session) = self.sessions.get_mut(&req.session_id) else {
            return Message::error("no_session", format!("unknown session {:?}", req.session_id));
        };
        if req.frame_index != session.next_frame {
            return Message::error(
                "out_of_order",
                format!("expected frame {}, got {}", session.next_frame, req.frame_index),
            );
        }
        let Some(&(w, h)) = session.dims.get(req.frame_index) else {
            return Message::error("bad_frame", format!("frame {} beyond session", req.frame_index));
        };
        session.next_frame += 1;
        let script = &self.script.segmentation;
        let masks = session
            .humans
            .iter()
            .map(|human| {
                let m = script.tracks.get(human)?.get(req.frame_index)?.as_ref()?;
                let m = resample_nearest(m, w, h);
                Some(if script.soft.contains(human) {
                    WireMask::Soft(soften(&m))
                } else {
                    WireMask::Rle(m)
                })
            })
            .collect();
        Message::SegFrameResult(SegFrameResult { masks })
    }

    fn amodal(&self, human: &str, frame: usize) -> Option<&RleMask> {
        self.script.completion.amodal.get(human)?.get(frame)?.as_ref()
    }

    fn complete_pass(&self, req: CompletePass) -> Message {
        if req.frames.len() != req.visible_masks.len() {
            return Message::error("bad_request", "frames and visible_masks differ in length");
        }
        let mut completed = Vec::with_capacity(req.frames.len());
        for (t, (frame, visible)) in req.frames.iter().zip(&req.visible_masks).enumerate() {
            let (w, h) = match png_dims(frame) {
                Ok(d) => d,
                Err(e) => return Message::error("bad_image", e),
            };
            completed.push(match self.amodal(&req.human_id, t) {
                Some(m) => Some(resample_nearest(m, w, h)),
                None => visible.clone(),
            });
        }
        Message::CompleteResult(CompleteResult {
            completed_masks: completed,
        })
    }

    fn recover_clip(&self, req: RecoverClip) -> Message {
        let [start, end] = req.interval;
        if end < start || end - start + 1 != req.frames.len() || req.frames.len() != req.visible_masks.len() {
            return Message::error("bad_request", "interval does not match clip length");
        }
        let fill = image::Rgb(self.script.completion.fill);
        let mut images = Vec::new();
        let mut masks = Vec::new();
        for (k, (frame, visible)) in req.frames.iter().zip(&req.visible_masks).enumerate() {
            let mut img = match frame.decode() {
                Ok(i) => i,
                Err(e) => return Message::error("bad_image", e.to_string()),
            };
            let refined = match self.amodal(&req.human_id, start + k) {
                Some(m) => Some(resample_nearest(m, img.width(), img.height())),
                None => visible.clone(),
            };
            if let Some(r) = &refined {
                let hidden = rle_decode(r);
                let shown = visible.as_ref().map(rle_decode);
                for (x, y, px) in img.enumerate_pixels_mut() {
                    if hidden.get(x, y) && !shown.as_ref().is_some_and(|s| s.get(x, y)) {
                        *px = fill;
                    }
                }
            }
            images.push(WireImage::encode(&img));
            masks.push(refined);
        }
        Message::RecoverResult(RecoverResult {
            refined_images: images,
            refined_masks: masks,
        })
    }

    fn hmr_batch(&self, req: HmrBatch) -> Message {
        let layout = &self.script.hmr.layout;
        let mut thetas = Vec::with_capacity(req.slots.len());
        for slot in &req.slots {
            let img = match slot.image.decode() {
                Ok(i) => i,
                Err(e) => return Message::error("bad_image", e.to_string()),
            };
            thetas.push(mock_theta(layout, &img, &slot.mask_prompt));
        }
        if let (Some(clock), Some(lat)) = (&self.clock, &self.script.hmr.latency) {
            clock.advance_us(lat.cost_us(req.slots.len()));
        }
        Message::HmrResult(HmrResult { thetas })
    }
}

impl Handler for MockBackend {
    fn handle(&mut self, _request_id: u64, message: Message) -> Message {
        self.calls += 1;
        use BackendKind::*;
        match (self.kind, message) {
            (_, Message::Hello(_)) => Message::HelloAck(self.handshake()),
            (Segmentation, Message::SegStart(req)) => self.seg_start(req),
            (Segmentation, Message::SegFrame(req)) => self.seg_frame(req),
            (Completion, Message::CompletePass(req)) => self.complete_pass(req),
            (Completion, Message::RecoverClip(req)) => self.recover_clip(req),
            (Hmr, Message::HmrBatch(req)) => self.hmr_batch(req),
            (kind, other) => Message::error(
                "unsupported",
                format!("{kind} backend does not serve {}", other.type_name()),
            ),
        }
    }
}

fn soften(m: &RleMask) -> ProbMask {
    let bm = rle_decode(m);
    let values = bm.pixels().iter().map(|&b| if b { 0.875 } else { 0.125 }).collect();
    ProbMask::new(m.width(), m.height(), values).expect("values in range")
}

fn png_dims(img: &WireImage) -> Result<(u32, u32), String> {
    image::ImageReader::with_format(Cursor::new(&img.0), image::ImageFormat::Png)
        .into_dimensions()
        .map_err(|e| e.to_string())
}

/// Parameters the mock HMR backend predicts for one slot. Empty masks
/// (padding) yield all zeros.
pub fn mock_theta(layout: &ParamLayout, image: &RgbImage, mask: &RleMask) -> MhrParams {
    let mut theta = MhrParams::zeros(layout);
    let a = area(mask);
    if a == 0 {
        return theta;
    }
    let bm = rle_decode(mask);
    let (w, h) = (mask.width() as f64, mask.height() as f64);
    let (mut sx, mut sy) = (0u64, 0u64);
    let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0u32, 0u32);
    let mut color = [0u64; 3];
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if !bm.get(x, y) {
                continue;
            }
            sx += x as u64;
            sy += y as u64;
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            if x < image.width() && y < image.height() {
                let p = image.get_pixel(x, y).0;
                for c in 0..3 {
                    color[c] += p[c] as u64;
                }
            }
        }
    }
    let af = a as f64;
    let (cx, cy) = (sx as f64 / af, sy as f64 / af);
    let (u, v) = (cx / w, cy / h);
    let col = color.map(|c| c as f64 / af / 255.0);
    let bw = (x1 - x0 + 1) as f64 / w;
    let bh = (y1 - y0 + 1) as f64 / h;
    let scale = (af / (w * h)).sqrt();

    for (i, p) in theta.pose.iter_mut().enumerate() {
        let k = (i + 1) as f64;
        *p = 0.8 * (k * (2.1 * u + 1.3 * v)).sin() + 0.1 * col[i % 3];
    }
    for (i, p) in theta.hands.iter_mut().enumerate() {
        let k = (i + 1) as f64;
        *p = 0.5 * (k * (1.7 * u - 0.9 * v)).cos() + 0.05 * col[(i + 1) % 3];
    }
    for (i, s) in theta.shape.iter_mut().enumerate() {
        *s = bh * (1.0 + 0.1 * i as f64) - 0.3 * bw * (i % 2) as f64;
    }
    for (i, s) in theta.skeleton.iter_mut().enumerate() {
        *s = scale * (1 + i) as f64;
    }
    for (slot, value) in theta.camera.iter_mut().zip([cx, cy, af]) {
        *slot = value;
    }
    theta
}

pub type MockClient = Client<InProcess<MockBackend>>;

pub fn segmentation_client(script: Arc<MockScript>) -> Result<MockClient, BackendError> {
    Client::connect(
        InProcess::new(MockBackend::new(BackendKind::Segmentation, script)),
        BackendKind::Segmentation,
    )
}

pub fn completion_client(script: Arc<MockScript>) -> Result<MockClient, BackendError> {
    Client::connect(
        InProcess::new(MockBackend::new(BackendKind::Completion, script)),
        BackendKind::Completion,
    )
}

/// In-process HMR mock with `connections` independent handlers sharing one clock.
pub fn hmr_client(
    script: Arc<MockScript>,
    connections: usize,
    clock: Option<SimClock>,
) -> Result<HmrClient<InProcess<MockBackend>>, BackendError> {
    let transports = (0..connections.max(1))
        .map(|_| {
            let mut b = MockBackend::new(BackendKind::Hmr, Arc::clone(&script));
            if let Some(c) = &clock {
                b = b.with_clock(c.clone());
            }
            InProcess::new(b)
        })
        .collect();
    HmrClient::connect(transports)
}
