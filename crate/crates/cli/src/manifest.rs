//! Append-only run manifests.
//!
//! Every command appends one JSON line to `<out-dir>/manifest.jsonl`
//! recording its config snapshot, input digests, output digests, wall time,
//! and seed, so a run can be reproduced from its manifest alone.

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub input_digests: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, FileRecord>,
    pub wall_time_s: f64,
    pub seed: Option<u64>,
    pub created_at: u64,
}

#[derive(Serialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
}

pub struct ManifestBuilder {
    out_dir: PathBuf,
    command: String,
    config: serde_json::Value,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, FileRecord>,
    seed: Option<u64>,
    started: Instant,
}

fn file_sha256(path: &Path) -> Result<String> {
    let bytes =
        std::fs::read(path).with_context(|| format!("reading {} for digest", path.display()))?;
    Ok(provlab_core::checkpoint::hex(&Sha256::digest(&bytes)))
}

impl ManifestBuilder {
    pub fn new(out_dir: &Path, command: &str, config: serde_json::Value, seed: Option<u64>) -> Self {
        ManifestBuilder {
            out_dir: out_dir.to_path_buf(),
            command: command.to_string(),
            config,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            seed,
            started: Instant::now(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs
            .insert(path.display().to_string(), file_sha256(path)?);
        Ok(())
    }

    pub fn output(&mut self, name: &str, path: &Path) -> Result<()> {
        self.outputs.insert(
            name.to_string(),
            FileRecord {
                path: path.display().to_string(),
                sha256: file_sha256(path)?,
            },
        );
        Ok(())
    }

    pub fn finish(self) -> Result<()> {
        let manifest = RunManifest {
            command: self.command,
            config: self.config,
            input_digests: self.inputs,
            outputs: self.outputs,
            wall_time_s: self.started.elapsed().as_secs_f64(),
            seed: self.seed,
            created_at: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        std::fs::create_dir_all(&self.out_dir)
            .with_context(|| format!("creating {}", self.out_dir.display()))?;
        let path = self.out_dir.join("manifest.jsonl");
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .with_context(|| format!("opening {}", path.display()))?;
        writeln!(file, "{}", serde_json::to_string(&manifest)?)?;
        Ok(())
    }
}
