//! Envelope codec and the message catalog.
//!
//! Every message travels as one line of compact UTF-8 JSON:
//!
//! ```text
//! {"type":"hello","request_id":0,"version":1,"body":{"client":"body4d"}}\n
//! ```
//!
//! Images are base64 PNG, binary masks use the RLE layout from
//! [`crate::mask`], and soft masks are base64 little-endian float16 grids.

use std::collections::BTreeSet;
use std::fmt;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use image::RgbImage;
use serde::de::Error as _;
use serde::ser::SerializeStruct;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::value::RawValue;
use thiserror::Error;

use crate::mask::{ProbMask, RleMask};
use crate::model::{HumanPrompt, MhrParams, ParamLayout};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("malformed json: {0}")]
    MalformedJson(String),
    #[error("unknown message type {0:?}")]
    UnknownType(String),
    #[error("protocol version {got}, expected {expected}")]
    VersionMismatch { got: u64, expected: u32 },
    #[error("unencodable value: {0}")]
    UnencodableValue(String),
    #[error("invalid {kind} body: {reason}")]
    InvalidBody { kind: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Segmentation,
    Completion,
    Hmr,
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::Segmentation => "segmentation",
            BackendKind::Completion => "completion",
            BackendKind::Hmr => "hmr",
        })
    }
}

/// PNG-encoded image bytes; base64 on the wire.
#[derive(Clone, PartialEq, Eq)]
pub struct WireImage(pub Vec<u8>);

impl fmt::Debug for WireImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "WireImage({} png bytes)", self.0.len())
    }
}

impl WireImage {
    pub fn encode(img: &RgbImage) -> Self {
        let mut out = Vec::new();
        let encoder = image::codecs::png::PngEncoder::new(&mut out);
        image::ImageEncoder::write_image(
            encoder,
            img.as_raw(),
            img.width(),
            img.height(),
            image::ExtendedColorType::Rgb8,
        )
        .expect("in-memory png encoding");
        Self(out)
    }

    pub fn decode(&self) -> Result<RgbImage, ProtocolError> {
        image::load_from_memory_with_format(&self.0, image::ImageFormat::Png)
            .map(|img| img.to_rgb8())
            .map_err(|e| ProtocolError::InvalidBody {
                kind: "image".into(),
                reason: e.to_string(),
            })
    }
}

impl Serialize for WireImage {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&B64.encode(&self.0))
    }
}

impl<'de> Deserialize<'de> for WireImage {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = <&str>::deserialize(d)?;
        B64.decode(s).map(WireImage).map_err(D::Error::custom)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SoftWire {
    width: u32,
    height: u32,
    values_f16: String,
}

/// A mask as returned by a segmentation backend: binary (RLE) or soft.
#[derive(Debug, Clone, PartialEq)]
pub enum WireMask {
    Rle(RleMask),
    Soft(ProbMask),
}

impl Serialize for WireMask {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            WireMask::Rle(m) => m.serialize(s),
            WireMask::Soft(p) => {
                let bytes: Vec<u8> = p
                    .values()
                    .iter()
                    .flat_map(|&v| half::f16::from_f32(v).to_le_bytes())
                    .collect();
                SoftWire {
                    width: p.width(),
                    height: p.height(),
                    values_f16: B64.encode(bytes),
                }
                .serialize(s)
            }
        }
    }
}

impl<'de> Deserialize<'de> for WireMask {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = serde_json::Value::deserialize(d)?;
        if v.get("counts").is_some() {
            return RleMask::deserialize(v).map(WireMask::Rle).map_err(D::Error::custom);
        }
        let soft = SoftWire::deserialize(v).map_err(D::Error::custom)?;
        let bytes = B64.decode(&soft.values_f16).map_err(D::Error::custom)?;
        if bytes.len() % 2 != 0 {
            return Err(D::Error::custom("odd float16 byte count"));
        }
        let values = bytes
            .chunks_exact(2)
            .map(|c| half::f16::from_le_bytes([c[0], c[1]]).to_f32())
            .collect();
        ProbMask::new(soft.width, soft.height, values)
            .map(WireMask::Soft)
            .map_err(D::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hello {
    pub client: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HandshakeInfo {
    pub backend_kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param_layout: Option<ParamLayout>,
    #[serde(default)]
    pub capabilities: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameMeta {
    pub index: usize,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegStart {
    pub frames_meta: Vec<FrameMeta>,
    pub prompts: Vec<HumanPrompt>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegStartAck {
    pub session_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegFrame {
    pub session_id: String,
    pub frame_index: usize,
    pub image: WireImage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegFrameResult {
    pub masks: Vec<Option<WireMask>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompletePass {
    pub frames: Vec<WireImage>,
    pub visible_masks: Vec<Option<RleMask>>,
    pub human_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompleteResult {
    pub completed_masks: Vec<Option<RleMask>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecoverClip {
    pub frames: Vec<WireImage>,
    pub visible_masks: Vec<Option<RleMask>>,
    pub human_id: String,
    /// Inclusive `[start, end]` frame indices of the clip.
    pub interval: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecoverResult {
    pub refined_images: Vec<WireImage>,
    pub refined_masks: Vec<Option<RleMask>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireSlot {
    pub image: WireImage,
    pub mask_prompt: RleMask,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HmrBatch {
    pub slots: Vec<WireSlot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HmrResult {
    pub thetas: Vec<MhrParams>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

macro_rules! catalog {
    ($($variant:ident($body:ty) = $name:literal,)*) => {
        #[derive(Debug, Clone, PartialEq)]
        pub enum Message {
            $($variant($body),)*
        }

        impl Message {
            pub const TYPES: &'static [&'static str] = &[$($name),*];

            pub fn type_name(&self) -> &'static str {
                match self {
                    $(Message::$variant(_) => $name,)*
                }
            }

            fn serialize_body<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                match self {
                    $(Message::$variant(b) => b.serialize(s),)*
                }
            }

            fn decode_body(ty: &str, body: &RawValue) -> Result<Self, ProtocolError> {
                match ty {
                    $($name => serde_json::from_str::<$body>(body.get())
                        .map(Message::$variant)
                        .map_err(|e| ProtocolError::InvalidBody {
                            kind: ty.to_string(),
                            reason: e.to_string(),
                        }),)*
                    other => Err(ProtocolError::UnknownType(other.to_string())),
                }
            }
        }
    };
}

catalog! {
    Hello(Hello) = "hello",
    HelloAck(HandshakeInfo) = "hello_ack",
    SegStart(SegStart) = "seg_start",
    SegStartAck(SegStartAck) = "seg_start_ack",
    SegFrame(SegFrame) = "seg_frame",
    SegFrameResult(SegFrameResult) = "seg_frame_result",
    CompletePass(CompletePass) = "complete_pass",
    CompleteResult(CompleteResult) = "complete_result",
    RecoverClip(RecoverClip) = "recover_clip",
    RecoverResult(RecoverResult) = "recover_result",
    HmrBatch(HmrBatch) = "hmr_batch",
    HmrResult(HmrResult) = "hmr_result",
    Error(ErrorBody) = "error",
}

impl Message {
    pub fn error(code: impl Into<String>, message: impl Into<String>) -> Self {
        Message::Error(ErrorBody {
            code: code.into(),
            message: message.into(),
        })
    }

    /// serde_json silently turns NaN into `null`, so floats are checked up front.
    fn check_encodable(&self) -> Result<(), ProtocolError> {
        match self {
            Message::HmrResult(r) => {
                if let Some(i) = r.thetas.iter().position(|t| !t.is_finite()) {
                    return Err(ProtocolError::UnencodableValue(format!("non-finite theta at slot {i}")));
                }
            }
            Message::SegStart(s) => {
                use crate::model::PromptPayload;
                for p in &s.prompts {
                    let finite = match &p.payload {
                        PromptPayload::Box { xyxy } => xyxy.iter().all(|v| v.is_finite()),
                        PromptPayload::Point { point, .. } => point.iter().all(|v| v.is_finite()),
                        PromptPayload::Mask { .. } => true,
                    };
                    if !finite {
                        return Err(ProtocolError::UnencodableValue(format!(
                            "non-finite prompt geometry for {:?}",
                            p.human_id
                        )));
                    }
                }
            }
            Message::HelloAck(info) => {
                if info.backend_kind == BackendKind::Hmr && info.param_layout.is_none() {
                    return Err(ProtocolError::UnencodableValue("hmr handshake without param_layout".into()));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub request_id: u64,
    pub version: u32,
    pub message: Message,
}

impl Envelope {
    pub fn new(request_id: u64, message: Message) -> Self {
        Self {
            request_id,
            version: PROTOCOL_VERSION,
            message,
        }
    }
}

struct Body<'a>(&'a Message);

impl Serialize for Body<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.0.serialize_body(s)
    }
}

impl Serialize for Envelope {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("Envelope", 4)?;
        st.serialize_field("type", self.message.type_name())?;
        st.serialize_field("request_id", &self.request_id)?;
        st.serialize_field("version", &self.version)?;
        st.serialize_field("body", &Body(&self.message))?;
        st.end()
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEnvelope<'a> {
    #[serde(rename = "type")]
    ty: String,
    request_id: u64,
    version: u32,
    #[serde(borrow)]
    body: &'a RawValue,
}

pub fn encode_message(env: &Envelope) -> Result<Vec<u8>, ProtocolError> {
    env.message.check_encodable()?;
    let mut out = serde_json::to_vec(env).map_err(|e| ProtocolError::UnencodableValue(e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}

pub fn decode_message(line: &[u8]) -> Result<Envelope, ProtocolError> {
    let line = line.strip_suffix(b"\n").unwrap_or(line);
    let text = std::str::from_utf8(line).map_err(|e| ProtocolError::MalformedJson(e.to_string()))?;
    if text.contains('\n') {
        return Err(ProtocolError::MalformedJson("embedded newline".into()));
    }
    let value: serde_json::Map<String, serde_json::Value> =
        serde_json::from_str(text).map_err(|e| ProtocolError::MalformedJson(e.to_string()))?;
    if let Some(v) = value.get("version") {
        let got = v
            .as_u64()
            .ok_or_else(|| ProtocolError::MalformedJson("version is not an integer".into()))?;
        if got != PROTOCOL_VERSION as u64 {
            return Err(ProtocolError::VersionMismatch {
                got,
                expected: PROTOCOL_VERSION,
            });
        }
    }
    if let Some(ty) = value.get("type").and_then(|t| t.as_str()) {
        if !Message::TYPES.contains(&ty) {
            return Err(ProtocolError::UnknownType(ty.to_string()));
        }
    }
    let raw: RawEnvelope = serde_json::from_str(text).map_err(|e| ProtocolError::MalformedJson(e.to_string()))?;
    let message = Message::decode_body(&raw.ty, raw.body)?;
    Ok(Envelope {
        request_id: raw.request_id,
        version: raw.version,
        message,
    })
}
