use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use mad_core::selection::ScaleSource;
use mad_core::{Gauge, MetricKind};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::settings::Settings;

/// The regime that produced an artifact. Everything except `created_unix_ms`
/// is a function of the inputs and settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub command: String,
    pub metric: MetricKind,
    pub k: usize,
    pub eps: f64,
    pub gauge: Gauge,
    pub scale_source: ScaleSource,
    pub seed: u64,
    pub threshold: f64,
    /// sha256 of the settings above, serialized as JSON.
    pub config_hash: String,
    /// Input name to sha256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    pub created_unix_ms: u64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

const STAMP: &[u8] = b"# created_unix_ms=";

/// Hash of a file's bytes, skipping `# created_unix_ms=` comment lines so
/// that regenerated artifacts hash the same.
pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    let mut h = Sha256::new();
    for line in bytes.split_inclusive(|&b| b == b'\n') {
        if !line.starts_with(STAMP) {
            h.update(line);
        }
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

impl Provenance {
    pub fn new(command: &str, s: &Settings, inputs: &[(&str, &Path)]) -> Result<Self> {
        let regime = serde_json::json!({
            "metric": s.metric, "k": s.k, "eps": s.eps, "gauge": s.gauge,
            "scale_source": s.scale_source, "seed": s.seed, "threshold": s.threshold,
        });
        let mut hashes = BTreeMap::new();
        for (name, path) in inputs {
            hashes.insert(name.to_string(), sha256_file(path)?);
        }
        Ok(Provenance {
            tool: format!("mad {}", env!("CARGO_PKG_VERSION")),
            command: command.to_string(),
            metric: s.metric,
            k: s.k,
            eps: s.eps,
            gauge: s.gauge,
            scale_source: s.scale_source,
            seed: s.seed,
            threshold: s.threshold,
            config_hash: sha256_hex(regime.to_string().as_bytes()),
            inputs: hashes,
            created_unix_ms: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_millis() as u64),
        })
    }

    /// `key=value` lines for CSV comment headers.
    pub fn comment_lines(&self) -> Vec<String> {
        let mut out = vec![
            format!("tool={}", self.tool),
            format!("command={}", self.command),
            format!("metric={}", self.metric),
            format!("k={}", self.k),
            format!("eps={}", self.eps),
            format!("gauge={}", self.gauge),
            format!("scale_source={}", self.scale_source.as_str()),
            format!("seed={}", self.seed),
            format!("threshold={}", self.threshold),
            format!("config_hash={}", self.config_hash),
        ];
        out.extend(self.inputs.iter().map(|(k, v)| format!("input.{k}={v}")));
        out.push(format!("created_unix_ms={}", self.created_unix_ms));
        out
    }

    /// Settings recorded in this provenance, for commands that continue a run.
    pub fn settings(&self) -> Settings {
        Settings {
            metric: self.metric,
            k: self.k,
            eps: self.eps,
            gauge: self.gauge,
            scale_source: self.scale_source,
            seed: self.seed,
            threshold: self.threshold,
            ..Settings::default()
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

/// Sidecar path holding the provenance of a JSON Lines file.
pub fn sidecar(path: &Path) -> std::path::PathBuf {
    let mut name = path.file_stem().unwrap_or_default().to_os_string();
    name.push(".provenance.json");
    path.with_file_name(name)
}
