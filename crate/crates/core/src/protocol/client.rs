use std::sync::Mutex;

use image::RgbImage;

use super::message::*;
use super::transport::Transport;
use crate::backend::{
    BackendError, CompletionBackend, HmrBackend, RecoveredClip, SegBackendSession, SegmentationBackend, SlotInput,
};
use crate::mask::RleMask;
use crate::model::{FrameRef, HumanPrompt, MhrParams, ParamLayout};

pub const CLIENT_NAME: &str = "body4d";

/// A connection to one backend. Request ids start at zero and increase by
/// one per request.
pub struct Client<T> {
    transport: T,
    next_id: u64,
    info: HandshakeInfo,
}

impl<T: Transport> Client<T> {
    /// Sends `hello` and checks the backend is of the expected kind.
    pub fn connect(mut transport: T, expected: BackendKind) -> Result<Self, BackendError> {
        let reply = round_trip(&mut transport, 0, Message::Hello(Hello { client: CLIENT_NAME.into() }))?;
        let info = match reply {
            Message::HelloAck(info) => info,
            other => return Err(unexpected("hello_ack", &other)),
        };
        if info.backend_kind != expected {
            return Err(BackendError::Protocol(format!(
                "expected a {expected} backend, got {}",
                info.backend_kind
            )));
        }
        if expected == BackendKind::Hmr {
            match &info.param_layout {
                Some(l) if l.is_valid() => {}
                Some(l) => return Err(BackendError::LayoutMismatch(format!("invalid layout {l:?}"))),
                None => return Err(BackendError::Protocol("hmr handshake without param_layout".into())),
            }
        }
        Ok(Self {
            transport,
            next_id: 1,
            info,
        })
    }

    pub fn info(&self) -> &HandshakeInfo {
        &self.info
    }

    pub fn call(&mut self, message: Message) -> Result<Message, BackendError> {
        let id = self.next_id;
        self.next_id += 1;
        round_trip(&mut self.transport, id, message)
    }

    pub fn into_transport(self) -> T {
        self.transport
    }
}

fn round_trip<T: Transport>(transport: &mut T, id: u64, message: Message) -> Result<Message, BackendError> {
    let bytes = encode_message(&Envelope::new(id, message))?;
    let reply = decode_message(&transport.round_trip(&bytes)?)?;
    if reply.request_id != id {
        return Err(BackendError::Protocol(format!(
            "response id {} for request {id}",
            reply.request_id
        )));
    }
    match reply.message {
        Message::Error(e) => Err(BackendError::Remote {
            code: e.code,
            message: e.message,
        }),
        m => Ok(m),
    }
}

fn unexpected(want: &str, got: &Message) -> BackendError {
    BackendError::Protocol(format!("expected {want}, got {}", got.type_name()))
}

fn arity(what: &str, want: usize, got: usize) -> Result<(), BackendError> {
    if want != got {
        return Err(BackendError::Protocol(format!("{what}: expected {want} entries, got {got}")));
    }
    Ok(())
}

fn decode_images(images: &[WireImage]) -> Result<Vec<RgbImage>, BackendError> {
    images.iter().map(|i| i.decode().map_err(BackendError::from)).collect()
}

impl<T: Transport> SegmentationBackend for Client<T> {
    fn start_session(
        &mut self,
        frames: &[FrameRef],
        prompts: &[HumanPrompt],
    ) -> Result<SegBackendSession, BackendError> {
        let frames_meta = frames
            .iter()
            .map(|f| FrameMeta {
                index: f.index,
                width: f.width,
                height: f.height,
            })
            .collect();
        let reply = self.call(Message::SegStart(SegStart {
            frames_meta,
            prompts: prompts.to_vec(),
        }))?;
        match reply {
            Message::SegStartAck(ack) => Ok(SegBackendSession {
                session_id: ack.session_id,
                humans: prompts.iter().map(|p| p.human_id.clone()).collect(),
            }),
            other => Err(unexpected("seg_start_ack", &other)),
        }
    }

    fn segment_frame(
        &mut self,
        session: &SegBackendSession,
        frame_index: usize,
        image: &RgbImage,
    ) -> Result<Vec<Option<WireMask>>, BackendError> {
        let reply = self.call(Message::SegFrame(SegFrame {
            session_id: session.session_id.clone(),
            frame_index,
            image: WireImage::encode(image),
        }))?;
        match reply {
            Message::SegFrameResult(r) => Ok(r.masks),
            other => Err(unexpected("seg_frame_result", &other)),
        }
    }
}

impl<T: Transport> CompletionBackend for Client<T> {
    fn complete_pass(
        &mut self,
        human_id: &str,
        frames: &[RgbImage],
        visible: &[Option<RleMask>],
    ) -> Result<Vec<Option<RleMask>>, BackendError> {
        let reply = self.call(Message::CompletePass(CompletePass {
            frames: frames.iter().map(WireImage::encode).collect(),
            visible_masks: visible.to_vec(),
            human_id: human_id.into(),
        }))?;
        match reply {
            Message::CompleteResult(r) => {
                arity("complete_result", frames.len(), r.completed_masks.len())?;
                Ok(r.completed_masks)
            }
            other => Err(unexpected("complete_result", &other)),
        }
    }

    fn recover_clip(
        &mut self,
        human_id: &str,
        interval: (usize, usize),
        frames: &[RgbImage],
        visible: &[Option<RleMask>],
    ) -> Result<RecoveredClip, BackendError> {
        let reply = self.call(Message::RecoverClip(RecoverClip {
            frames: frames.iter().map(WireImage::encode).collect(),
            visible_masks: visible.to_vec(),
            human_id: human_id.into(),
            interval: [interval.0, interval.1],
        }))?;
        match reply {
            Message::RecoverResult(r) => {
                arity("recover_result images", frames.len(), r.refined_images.len())?;
                arity("recover_result masks", frames.len(), r.refined_masks.len())?;
                Ok(RecoveredClip {
                    images: decode_images(&r.refined_images)?,
                    masks: r.refined_masks,
                })
            }
            other => Err(unexpected("recover_result", &other)),
        }
    }
}

/// HMR backend over a pool of connections, so several chunks can be in
/// flight at once.
pub struct HmrClient<T> {
    pool: Vec<Mutex<Client<T>>>,
    layout: ParamLayout,
}

impl<T: Transport> HmrClient<T> {
    pub fn connect(transports: Vec<T>) -> Result<Self, BackendError> {
        let mut pool = Vec::with_capacity(transports.len());
        let mut layout: Option<ParamLayout> = None;
        for t in transports {
            let client = Client::connect(t, BackendKind::Hmr)?;
            let l = client.info().param_layout.clone().expect("checked at connect");
            match &layout {
                Some(prev) if *prev != l => {
                    return Err(BackendError::LayoutMismatch(
                        "connections announced different layouts".into(),
                    ))
                }
                _ => layout = Some(l),
            }
            pool.push(Mutex::new(client));
        }
        let layout = layout.ok_or_else(|| BackendError::Unavailable("no hmr connections".into()))?;
        Ok(Self { pool, layout })
    }

    pub fn connections(&self) -> usize {
        self.pool.len()
    }
}

impl<T: Transport> HmrBackend for HmrClient<T> {
    fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    fn infer(&self, slots: &[SlotInput<'_>]) -> Result<Vec<MhrParams>, BackendError> {
        let batch = Message::HmrBatch(HmrBatch {
            slots: slots
                .iter()
                .map(|s| WireSlot {
                    image: WireImage::encode(s.image),
                    mask_prompt: s.mask.clone(),
                    valid: s.valid,
                })
                .collect(),
        });
        let mut guard = self
            .pool
            .iter()
            .find_map(|c| c.try_lock().ok())
            .map_or_else(|| self.pool[0].lock(), Ok)
            .map_err(|_| BackendError::Unavailable("hmr connection poisoned".into()))?;
        let reply = guard.call(batch)?;
        drop(guard);
        let thetas = match reply {
            Message::HmrResult(r) => r.thetas,
            other => return Err(unexpected("hmr_result", &other)),
        };
        arity("hmr_result", slots.len(), thetas.len())?;
        if let Some(t) = thetas.iter().find(|t| !t.matches(&self.layout)) {
            return Err(BackendError::LayoutMismatch(format!(
                "theta dims ({}, {}, {}, {}, {}) differ from handshake layout",
                t.pose.len(),
                t.shape.len(),
                t.camera.len(),
                t.skeleton.len(),
                t.hands.len()
            )));
        }
        Ok(thetas)
    }
}
