//! Synthetic scenes with exact ground truth for the mock backends.
//!
//! Humans are textured rectangles moving at constant velocity. A static
//! occluder can cover part of the frame for a range of frames. The scene
//! renders the frames, the prompts, and a [`MockScript`] whose tracks are the
//! visible masks and whose amodal masks are the full rectangles wherever
//! something hides part of a human.

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::mask::{area, difference, rect_mask, union, RleMask};
use crate::model::{FrameRef, HumanPrompt, PromptPayload};
use crate::protocol::mock::MockScript;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanSpec {
    pub id: String,
    /// `[x0, y0, x1, y1]` at frame 0, half-open.
    pub rect: [i64; 4],
    /// Pixels per frame.
    pub velocity: [i64; 2],
    pub color: [u8; 3],
    /// Frames (0-based, inclusive) during which the human is in the scene.
    pub present: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccluderSpec {
    pub rect: [i64; 4],
    /// 0-based inclusive frame range.
    pub frames: [usize; 2],
    pub color: [u8; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: u32,
    pub height: u32,
    pub num_frames: usize,
    /// Later humans are drawn in front of earlier ones.
    pub humans: Vec<HumanSpec>,
    #[serde(default)]
    pub occluders: Vec<OccluderSpec>,
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub spec: SceneSpec,
    pub frames: Vec<RgbImage>,
    pub prompts: Vec<HumanPrompt>,
    pub script: MockScript,
    /// Full (amodal) rectangle per human per frame.
    pub amodal: Vec<Vec<Option<RleMask>>>,
}

impl Scene {
    pub fn frame_refs(&self) -> Vec<FrameRef> {
        (0..self.spec.num_frames)
            .map(|index| FrameRef {
                index,
                path_or_id: format!("mem:{index}"),
                width: self.spec.width,
                height: self.spec.height,
            })
            .collect()
    }

    /// Visible mask of human `i` at frame `t`, as scripted.
    pub fn visible(&self, i: usize, t: usize) -> Option<&RleMask> {
        self.script.segmentation.tracks[&self.spec.humans[i].id][t].as_ref()
    }
}

const BACKGROUND: [u8; 3] = [30, 30, 30];

impl HumanSpec {
    fn rect_at(&self, t: usize) -> [i64; 4] {
        let (dx, dy) = (self.velocity[0] * t as i64, self.velocity[1] * t as i64);
        [self.rect[0] + dx, self.rect[1] + dy, self.rect[2] + dx, self.rect[3] + dy]
    }

    fn is_present(&self, t: usize) -> bool {
        (self.present[0]..=self.present[1]).contains(&t)
    }
}

fn rect(spec: &SceneSpec, r: [i64; 4]) -> RleMask {
    rect_mask(spec.width, spec.height, r[0], r[1], r[2], r[3])
}

/// Renders a scene. Humans whose rectangle is off-frame or whose visible
/// area drops to zero are absent from their track at that frame.
pub fn render(spec: &SceneSpec) -> Scene {
    let (w, h) = (spec.width, spec.height);
    let mut frames = Vec::with_capacity(spec.num_frames);
    let mut visible = vec![Vec::with_capacity(spec.num_frames); spec.humans.len()];
    let mut amodal = vec![Vec::with_capacity(spec.num_frames); spec.humans.len()];

    for t in 0..spec.num_frames {
        let mut img = RgbImage::from_pixel(w, h, Rgb(BACKGROUND));
        let full: Vec<Option<RleMask>> = spec
            .humans
            .iter()
            .map(|hs| {
                let m = rect(spec, hs.rect_at(t));
                (hs.is_present(t) && area(&m) > 0).then_some(m)
            })
            .collect();
        let occluders: Vec<RleMask> = spec
            .occluders
            .iter()
            .filter(|o| (o.frames[0]..=o.frames[1]).contains(&t))
            .map(|o| rect(spec, o.rect))
            .collect();

        for (i, hs) in spec.humans.iter().enumerate() {
            let Some(m) = &full[i] else {
                visible[i].push(None);
                amodal[i].push(None);
                continue;
            };
            let mut vis = m.clone();
            for front in full[i + 1..].iter().flatten().chain(&occluders) {
                vis = difference(&vis, front).expect("scene masks share dimensions");
            }
            let r = hs.rect_at(t);
            for y in r[1].max(0)..r[3].min(h as i64) {
                for x in r[0].max(0)..r[2].min(w as i64) {
                    // a gentle texture so pixel content varies inside the box
                    let shade = ((x - r[0] + 2 * (y - r[1])) % 7) as u8 * 6;
                    let c = hs.color;
                    img.put_pixel(
                        x as u32,
                        y as u32,
                        Rgb([c[0].saturating_sub(shade), c[1].saturating_sub(shade), c[2].saturating_sub(shade)]),
                    );
                }
            }
            let shown = area(&vis) > 0;
            amodal[i].push((shown && vis != *m).then(|| m.clone()));
            visible[i].push(shown.then_some(vis));
        }
        for o in &spec.occluders {
            if !(o.frames[0]..=o.frames[1]).contains(&t) {
                continue;
            }
            let r = o.rect;
            for y in r[1].max(0)..r[3].min(h as i64) {
                for x in r[0].max(0)..r[2].min(w as i64) {
                    img.put_pixel(x as u32, y as u32, Rgb(o.color));
                }
            }
        }
        frames.push(img);
    }

    let mut script = MockScript::default();
    let mut prompts = Vec::with_capacity(spec.humans.len());
    for (i, hs) in spec.humans.iter().enumerate() {
        script.segmentation.tracks.insert(hs.id.clone(), visible[i].clone());
        if amodal[i].iter().any(Option::is_some) {
            script.completion.amodal.insert(hs.id.clone(), amodal[i].clone());
        }
        let t0 = hs.present[0].min(spec.num_frames.saturating_sub(1));
        let r = hs.rect_at(t0);
        let clamp_x = |v: i64| v.clamp(0, w as i64) as f64;
        let clamp_y = |v: i64| v.clamp(0, h as i64) as f64;
        prompts.push(HumanPrompt {
            human_id: hs.id.clone(),
            frame_index: t0,
            payload: PromptPayload::Box {
                xyxy: [clamp_x(r[0]), clamp_y(r[1]), clamp_x(r[2]), clamp_y(r[3])],
            },
        });
    }
    Scene {
        spec: spec.clone(),
        frames,
        prompts,
        script,
        amodal,
    }
}

/// Two humans walking past each other.
pub fn crossing(num_frames: usize) -> SceneSpec {
    let w = 64 + 4 * num_frames as i64;
    SceneSpec {
        width: w as u32,
        height: 48,
        num_frames,
        humans: vec![
            HumanSpec {
                id: "left".into(),
                rect: [4, 8, 20, 40],
                velocity: [4, 0],
                color: [220, 120, 60],
                present: [0, num_frames.saturating_sub(1)],
            },
            HumanSpec {
                id: "right".into(),
                rect: [w - 20, 10, w - 4, 44],
                velocity: [-4, 0],
                color: [60, 140, 220],
                present: [0, num_frames.saturating_sub(1)],
            },
        ],
        occluders: vec![],
    }
}

/// One standing human hidden behind a pillar on the inclusive frame range
/// `occluded` (0-based), plus a second human who is never occluded.
pub fn pillar(num_frames: usize, occluded: Option<[usize; 2]>) -> SceneSpec {
    SceneSpec {
        width: 64,
        height: 48,
        num_frames,
        humans: vec![
            HumanSpec {
                id: "a".into(),
                rect: [8, 8, 24, 40],
                velocity: [1, 0],
                color: [200, 180, 40],
                present: [0, num_frames.saturating_sub(1)],
            },
            HumanSpec {
                id: "b".into(),
                rect: [40, 12, 56, 44],
                velocity: [0, 0],
                color: [40, 200, 120],
                present: [0, num_frames.saturating_sub(1)],
            },
        ],
        occluders: occluded
            .map(|frames| OccluderSpec {
                rect: [14, 0, 30, 48],
                frames,
                color: [90, 90, 90],
            })
            .into_iter()
            .collect(),
    }
}

/// Every human's visible masks stacked into one mask per frame.
pub fn coverage(scene: &Scene, t: usize) -> RleMask {
    let mut acc = RleMask::empty(scene.spec.width, scene.spec.height);
    for i in 0..scene.spec.humans.len() {
        if let Some(m) = scene.visible(i, t) {
            acc = union(&acc, m).expect("scene masks share dimensions");
        }
    }
    acc
}
