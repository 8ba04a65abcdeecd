//! CSV tables and the run manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::{self, RunConfig};
use crate::CliError;

pub const MANIFEST_NAME: &str = "manifest.json";
pub const CONFIG_NAME: &str = "config.toml";

/// Comma-separated table with a header row; units live in the column names.
#[derive(Debug, Clone)]
pub struct Csv {
    text: String,
    width: usize,
}

impl Csv {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            text: format!("{}\n", columns.join(",")),
            width: columns.len(),
        }
    }

    /// `#` line placed above the header.
    pub fn comment(mut self, line: &str) -> Self {
        self.text.insert_str(0, &format!("# {line}\n"));
        self
    }

    pub fn row(&mut self, cells: &[&dyn std::fmt::Display]) {
        debug_assert_eq!(cells.len(), self.width);
        let line: Vec<String> = cells.iter().map(|c| c.to_string()).collect();
        let _ = writeln!(self.text, "{}", line.join(","));
    }

    pub fn into_string(self) -> String {
        self.text
    }
}

/// Everything an experiment produces before it touches the disk.
#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    /// File name and contents, in write order.
    pub files: Vec<(String, String)>,
    pub headline: BTreeMap<String, Value>,
}

impl RunOutput {
    pub fn file(&mut self, name: &str, contents: impl Into<String>) {
        self.files.push((name.to_string(), contents.into()));
    }

    pub fn headline(&mut self, key: &str, value: impl Into<Value>) {
        self.headline.insert(key.to_string(), value.into());
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub experiment: String,
    pub seed: u64,
    /// SHA-256 of the canonical resolved config.
    pub config_digest: String,
    pub started_unix_s: f64,
    pub finished_unix_s: f64,
    pub files: Vec<String>,
    pub headline: BTreeMap<String, Value>,
}

pub fn unix_time() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

pub fn digest(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Write the tables, the resolved config and the manifest into
/// `cfg.output_dir`.
pub fn write(cfg: &RunConfig, out: &RunOutput, started: f64) -> Result<Manifest, CliError> {
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let canonical = config::canonical(cfg);
    let mut files = Vec::with_capacity(out.files.len() + 1);
    for (name, contents) in out.files.iter().chain([(CONFIG_NAME.to_string(), canonical.clone())].iter()) {
        let path = dir.join(name);
        fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
        files.push(name.clone());
    }
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        experiment: cfg.experiment.name().to_string(),
        seed: cfg.seed,
        config_digest: digest(&canonical),
        started_unix_s: started,
        finished_unix_s: unix_time(),
        files,
        headline: out.headline.clone(),
    };
    let path = dir.join(MANIFEST_NAME);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json + "\n").map_err(|e| CliError::io(&path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_precede_the_header() {
        let mut c = Csv::new(&["a_s", "b"]).comment("note");
        c.row(&[&1.5, &"x"]);
        assert_eq!(c.into_string(), "# note\na_s,b\n1.5,x\n");
    }

    #[test]
    fn digest_is_hex_sha256() {
        assert_eq!(
            digest("abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
