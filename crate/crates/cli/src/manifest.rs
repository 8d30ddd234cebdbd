//! Artifact directories: every command writes its outputs plus exactly one
//! `manifest.json` recording what produced them.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use chrono::{SecondsFormat, Utc};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use lorb_core::canonical::{to_canonical_json, to_canonical_json_pretty};

use crate::config::RunConfig;
use crate::Usage;

pub const MANIFEST: &str = "manifest.json";

/// Content digest in the style of a git blob id, over SHA-256.
pub fn blob_digest(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    format!("{:x}", h.finalize())
}

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub digest: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: BTreeMap<String, Value>,
    pub config: RunConfig,
    pub seed: u64,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    /// Digest of command, args, config and input contents. Equal digests
    /// mean byte-identical outputs.
    pub digest: String,
    pub started_at: String,
    pub finished_at: String,
    pub wall_clock_seconds: f64,
}

pub struct Run {
    command: &'static str,
    config: RunConfig,
    out: PathBuf,
    args: BTreeMap<String, Value>,
    inputs: Vec<FileDigest>,
    input_names: Vec<(String, String)>,
    outputs: Vec<FileDigest>,
    started_at: String,
    started: Instant,
}

impl Run {
    pub fn start(command: &'static str, config: RunConfig, out: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(out).with_context(|| format!("creating output directory {}", out.display()))?;
        Ok(Self {
            command,
            config,
            out: out.to_path_buf(),
            args: BTreeMap::new(),
            inputs: Vec::new(),
            input_names: Vec::new(),
            outputs: Vec::new(),
            started_at: now(),
            started: Instant::now(),
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    /// Records a command argument that changes the outputs.
    pub fn arg(&mut self, key: &str, value: impl Serialize) -> anyhow::Result<()> {
        self.args.insert(key.to_owned(), serde_json::to_value(value)?);
        Ok(())
    }

    /// Reads an input file and records its digest. A missing file is a
    /// usage error.
    pub fn read(&mut self, path: &Path) -> anyhow::Result<Vec<u8>> {
        let bytes = fs::read(path).map_err(|e| Usage(format!("cannot read {}: {e}", path.display())))?;
        let digest = blob_digest(&bytes);
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        self.input_names.push((name, digest.clone()));
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            digest,
        });
        Ok(bytes)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> anyhow::Result<PathBuf> {
        let path = self.out.join(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.push(FileDigest {
            path: name.to_owned(),
            digest: blob_digest(bytes),
        });
        Ok(path)
    }

    /// Canonical JSON followed by a newline.
    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> anyhow::Result<PathBuf> {
        let mut text = to_canonical_json(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn digest(&self) -> anyhow::Result<String> {
        #[derive(Serialize)]
        struct Identity<'a> {
            command: &'a str,
            args: &'a BTreeMap<String, Value>,
            config: &'a RunConfig,
            inputs: &'a [(String, String)],
        }
        let id = Identity {
            command: self.command,
            args: &self.args,
            config: &self.config,
            inputs: &self.input_names,
        };
        Ok(blob_digest(to_canonical_json(&id)?.as_bytes()))
    }

    pub fn finish(self) -> anyhow::Result<RunManifest> {
        let manifest = RunManifest {
            command: self.command.to_owned(),
            digest: self.digest()?,
            args: self.args,
            seed: self.config.seed,
            config: self.config,
            inputs: self.inputs,
            outputs: self.outputs,
            started_at: self.started_at,
            finished_at: now(),
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
        };
        let mut text = to_canonical_json_pretty(&manifest)?;
        text.push('\n');
        let path = self.out.join(MANIFEST);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(manifest)
    }
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}
