//! Run manifests: the provenance record written into every output
//! directory, with enough seeds and digests to regenerate each artifact
//! bit-identically.

use crate::error::{Error, Result};
use crate::textio::{read_file, sha256_hex, write_file};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Model-specific manifest section for trained bundles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    /// "two-step" or "single-step".
    pub kind: String,
    /// Query scores fed to the generators at rollout time.
    pub query_scores: BTreeMap<String, f64>,
    /// Digest of the dataset the model was trained from.
    pub dataset_digest: String,
    /// Split parameters; replaying them reproduces the exact train/test
    /// partition the model saw.
    pub train_frac: f64,
    pub split_seed: u64,
    /// Training-split end-point distance bounds backing the realized
    /// quality score.
    pub drb_min: f64,
    pub drb_max: f64,
    /// Digest over the normalization numbers above; evaluation refuses
    /// to compare bundles whose digests disagree.
    pub stats_digest: String,
}

impl ModelMeta {
    /// Canonical digest of a (min, max) normalization entry.
    pub fn stats_digest_of(min: f64, max: f64) -> String {
        sha256_hex(
            format!(
                "d_rb_min={} d_rb_max={}",
                crate::textio::fmt_f64(min),
                crate::textio::fmt_f64(max)
            )
            .as_bytes(),
        )
    }
}

/// Provenance record for one command invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Unix seconds; honors `SOURCE_DATE_EPOCH` for reproducible output
    /// trees.
    pub created_unix: u64,
    pub config_digest: String,
    pub seeds: BTreeMap<String, u64>,
    /// Paths of the artifacts written next to this manifest.
    pub artifacts: Vec<String>,
    /// Digests of the input artifacts this run consumed.
    pub parent_digests: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelMeta>,
}

impl RunManifest {
    pub fn new(command: &str, config_digest: String) -> RunManifest {
        RunManifest {
            tool: crate::TOOL_NAME.to_string(),
            version: crate::TOOL_VERSION.to_string(),
            command: command.to_string(),
            created_unix: created_unix(),
            config_digest,
            seeds: BTreeMap::new(),
            artifacts: Vec::new(),
            parent_digests: Vec::new(),
            model: None,
        }
    }

    pub fn with_seed(mut self, name: &str, seed: u64) -> RunManifest {
        self.seeds.insert(name.to_string(), seed);
        self
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serialize");
        s.push('\n');
        s
    }

    pub fn digest(&self) -> String {
        sha256_hex(self.to_json().as_bytes())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        write_file(&dir.join(MANIFEST_FILE), &self.to_json())
    }

    pub fn load(dir: &Path) -> Result<RunManifest> {
        let text = read_file(&dir.join(MANIFEST_FILE))?;
        serde_json::from_str(&text).map_err(|e| Error::Invalid(format!("bad manifest: {e}")))
    }
}

/// Wall-clock seconds, overridable through `SOURCE_DATE_EPOCH` so that
/// repeated runs can produce byte-identical trees.
pub fn created_unix() -> u64 {
    if let Ok(v) = std::env::var("SOURCE_DATE_EPOCH") {
        if let Ok(secs) = v.trim().parse::<u64>() {
            return secs;
        }
    }
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}
