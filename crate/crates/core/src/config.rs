//! Run configuration: one JSON document bundling every module's knobs,
//! plus a content hash embedded in all output artifacts so mismatched
//! model/target pairs are rejected at evaluation time.

use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::flow::OcclusionConfig;
use crate::gaze::{AggregationConfig, SmoothingConfig};
use crate::synth::SceneSpec;
use crate::trainer::ModelConfig;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub scene: SceneSpec,
    pub smoothing: SmoothingConfig,
    pub aggregation: AggregationConfig,
    pub occlusion: OcclusionConfig,
    pub patch_px: usize,
    pub model: ModelConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scene: SceneSpec::default(),
            smoothing: SmoothingConfig::default(),
            aggregation: AggregationConfig::default(),
            occlusion: OcclusionConfig::default(),
            patch_px: 8,
            model: ModelConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("RunConfig serializes")
    }
}

/// SHA-256 hex digest of a canonical JSON rendering. Struct field order is
/// fixed by the type definitions, so the hash is stable across runs.
pub fn config_hash<T: serde::Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("config serializes");
    let mut hasher = Sha256::new();
    hasher.update(json.as_bytes());
    let digest = hasher.finalize();
    let mut out = String::with_capacity(16);
    for b in &digest[..8] {
        out.push_str(&format!("{b:02x}"));
    }
    out
}
