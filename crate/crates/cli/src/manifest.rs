//! Run manifest: the effective configuration, input digests and a hash of
//! both, embedded in every output file.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const TOOL: &str = "spordinal";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config: BTreeMap<String, String>,
    /// SHA-256 of every input file, keyed by the path as given.
    pub inputs: BTreeMap<String, String>,
    pub config_hash: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Manifest {
    pub fn new(command: &str, config: BTreeMap<String, String>, inputs: BTreeMap<String, String>) -> Self {
        let canonical = serde_json::to_string(&(TOOL, VERSION, command, &config, &inputs)).expect("maps serialize");
        Self {
            tool: TOOL,
            version: VERSION,
            command: command.to_string(),
            config,
            inputs,
            config_hash: sha256_hex(canonical.as_bytes()),
        }
    }

    /// `#` comment lines for delimited and TOML outputs.
    pub fn comments(&self) -> Vec<String> {
        let config: Vec<String> = self.config.iter().map(|(k, v)| format!("{k}={v}")).collect();
        vec![
            format!("{} {} {}", self.tool, self.version, self.command),
            format!("config_hash {}", self.config_hash),
            format!("config {}", config.join(" ")),
        ]
    }

    pub fn prefix(&self, body: &str) -> String {
        let mut out: String = self.comments().iter().map(|c| format!("# {c}\n")).collect();
        out.push_str(body);
        out
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("manifest serializes")
    }
}

/// Digest of an input file for the manifest.
pub fn digest_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("missing upstream artifact {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}
