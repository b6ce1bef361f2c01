use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::hmr::DEFAULT_BATCH_SIZE;
use crate::mask::DEFAULT_BINARIZE_THRESHOLD;
use crate::occlusion::{OcclusionConfig, Resolution, DEFAULT_IOU_THRESHOLD, DEFAULT_MAX_GAP, DEFAULT_MIN_AREA};
use crate::smooth::SmoothingConfig;

/// Where each backend lives. Each entry is one of
///
/// * `mock:<script.json>`: the in-process scripted mock,
/// * `stdio:<program> [args...]`: a child process speaking the protocol on
///   its standard streams (arguments split on whitespace),
/// * `http://host:port/path`: an HTTP endpoint accepting POSTed envelopes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendsConfig {
    pub segmentation: Option<String>,
    pub completion: Option<String>,
    pub hmr: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub iou_threshold: f64,
    pub min_area: u64,
    pub max_gap: usize,
    pub batch_size: usize,
    pub completion_resolution: Resolution,
    pub smoothing: SmoothingConfig,
    pub refiner_enabled: bool,
    /// HMR chunks dispatched concurrently, one backend connection each.
    pub hmr_in_flight: usize,
    pub binarize_threshold: f32,
    pub backends: BackendsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            min_area: DEFAULT_MIN_AREA,
            max_gap: DEFAULT_MAX_GAP,
            batch_size: DEFAULT_BATCH_SIZE,
            completion_resolution: Resolution::default(),
            smoothing: SmoothingConfig::default(),
            refiner_enabled: true,
            hmr_in_flight: 1,
            binarize_threshold: DEFAULT_BINARIZE_THRESHOLD,
            backends: BackendsConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.iou_threshold > 0.0 && self.iou_threshold < 1.0) {
            return fail(format!("iou_threshold must be in (0, 1), got {}", self.iou_threshold));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if self.hmr_in_flight == 0 {
            return fail("hmr_in_flight must be at least 1".into());
        }
        if !(self.binarize_threshold > 0.0 && self.binarize_threshold < 1.0) {
            return fail(format!(
                "binarize_threshold must be in (0, 1), got {}",
                self.binarize_threshold
            ));
        }
        let res = self.completion_resolution;
        if res.width == 0 || res.height == 0 {
            return fail("completion_resolution must be non-empty".into());
        }
        self.smoothing.validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn occlusion(&self) -> OcclusionConfig {
        OcclusionConfig {
            iou_threshold: self.iou_threshold,
            min_area: self.min_area,
            max_gap: self.max_gap,
            completion_resolution: self.completion_resolution,
        }
    }

    /// Applies a partial JSON document on top of `self`. Objects merge key
    /// by key; anything else replaces.
    pub fn overlay(&self, patch: &Value) -> Result<Self> {
        let mut base = serde_json::to_value(self).expect("config serializes");
        merge(&mut base, patch);
        serde_json::from_value(base).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn overlay_file(&self, path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let patch: Value =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        self.overlay(&patch)
    }
}

fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}
