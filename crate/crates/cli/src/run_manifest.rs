//! Run provenance: resolved config, input digests and timestamps.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use onsetnet::config::RunConfig;
use onsetnet::dataset::read_manifest;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// `<command>_manifest.json` in the output directory.
pub fn manifest_file(command: &str) -> String {
    format!("{command}_manifest.json")
}

/// `key = value` snapshot of the resolved config, accepted by `--config`.
pub fn config_file(command: &str) -> String {
    format!("{command}_config.conf")
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InputDigest {
    pub role: String,
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub argv: Vec<String>,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    pub inputs: Vec<InputDigest>,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    /// `running`, `ok` or `failed`.
    pub status: String,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_digest(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

fn feed_file(h: &mut Sha256, path: &Path) -> CliResult<()> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    h.update((bytes.len() as u64).to_le_bytes());
    h.update(&bytes);
    Ok(())
}

/// Digest of every file a manifest references: the manifest itself, then per
/// video its onset CSV, ROI CSV and the frame files in name order.
pub fn dataset_digest(manifest_path: &Path) -> CliResult<String> {
    let manifest = read_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new(""));
    let mut h = Sha256::new();
    feed_file(&mut h, manifest_path)?;
    for s in &manifest.subjects {
        for v in &s.videos {
            feed_file(&mut h, &base.join(&v.onsets_csv))?;
            feed_file(&mut h, &base.join(&v.rois_csv))?;
            let dir = base.join(&v.frames_dir);
            let mut names: Vec<PathBuf> = std::fs::read_dir(&dir)
                .map_err(|e| CliError::io(&dir, e))?
                .map(|e| e.map(|e| e.path()).map_err(|err| CliError::io(&dir, err)))
                .collect::<CliResult<_>>()?;
            names.sort();
            for p in names {
                h.update(p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default().as_bytes());
                feed_file(&mut h, &p)?;
            }
        }
    }
    Ok(hex(&h.finalize()))
}

impl RunManifest {
    pub fn new(command: &str, argv: Vec<String>, cfg: &RunConfig) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            argv,
            seed: cfg.seed,
            config: cfg.to_kv().into_iter().collect(),
            inputs: Vec::new(),
            started_unix: unix_now(),
            finished_unix: None,
            status: "running".into(),
        }
    }

    pub fn add_input(&mut self, role: &str, path: &Path, sha256: String) {
        self.inputs.push(InputDigest {
            role: role.to_string(),
            path: path.to_path_buf(),
            sha256,
        });
    }

    /// Writes the manifest and the config snapshot into `dir`.
    pub fn write(&self, dir: &Path, cfg: &RunConfig) -> CliResult<()> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        let path = dir.join(manifest_file(&self.command));
        std::fs::write(&path, json + "\n").map_err(|e| CliError::io(&path, e))?;
        let path = dir.join(config_file(&self.command));
        std::fs::write(&path, cfg.to_text()).map_err(|e| CliError::io(&path, e))
    }

    pub fn finish(&mut self, ok: bool) {
        self.finished_unix = Some(unix_now());
        self.status = if ok { "ok" } else { "failed" }.into();
    }
}
