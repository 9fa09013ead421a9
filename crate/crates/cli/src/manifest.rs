//! Run directories and the manifest each one carries.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::{DateTime, SecondsFormat, Utc};
use semslice::artifact;
use semslice::runconfig::SliceConfig;
use serde::{Deserialize, Serialize};

use crate::config::ToolConfig;

pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// Package version plus `git describe` of the build tree.
pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (", env!("SEMSLICE_GIT_DESCRIBE"), ")");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRef {
    pub path: String,
    pub sha256: String,
}

impl FileRef {
    pub fn of(path: &Path) -> Result<Self> {
        Ok(Self {
            path: path.display().to_string(),
            sha256: artifact::file_digest(path).with_context(|| format!("cannot read {}", path.display()))?,
        })
    }
}

/// What one command read, wrote, and was configured with. The command
/// line plus the config snapshot replay the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<SliceConfig>,
    pub tool_config: ToolConfig,
    pub inputs: Vec<FileRef>,
    pub outputs: Vec<FileRef>,
    pub started_at: String,
    pub finished_at: String,
    pub tool_version: String,
}

pub fn timestamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// A manifest under construction; `finish` hashes the outputs and appends
/// the record to the directory's manifest file.
pub struct Recorder {
    command: String,
    config: Option<SliceConfig>,
    tool_config: ToolConfig,
    inputs: Vec<FileRef>,
    started: DateTime<Utc>,
}

impl Recorder {
    pub fn start(command: &str, tool_config: &ToolConfig) -> Self {
        Self {
            command: command.to_string(),
            config: None,
            tool_config: tool_config.clone(),
            inputs: Vec::new(),
            started: Utc::now(),
        }
    }

    pub fn config(&mut self, config: &SliceConfig) {
        self.config = Some(config.clone());
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileRef::of(path)?);
        Ok(())
    }

    pub fn finish(self, dir: &Path, outputs: &[PathBuf]) -> Result<RunManifest> {
        let manifest = RunManifest {
            command: self.command,
            argv: std::env::args().collect(),
            config: self.config,
            tool_config: self.tool_config,
            inputs: self.inputs,
            outputs: outputs.iter().map(|p| FileRef::of(p)).collect::<Result<_>>()?,
            started_at: timestamp(self.started),
            finished_at: timestamp(Utc::now()),
            tool_version: VERSION.to_string(),
        };
        append(&dir.join(MANIFEST_FILE), &manifest)?;
        Ok(manifest)
    }
}

/// Appends one JSON line, rewriting the file atomically.
fn append(path: &Path, manifest: &RunManifest) -> Result<()> {
    let mut bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(e).with_context(|| format!("cannot read {}", path.display())),
    };
    if !bytes.is_empty() && !bytes.ends_with(b"\n") {
        bytes.push(b'\n');
    }
    bytes.extend(serde_json::to_vec(manifest)?);
    bytes.push(b'\n');
    artifact::write_atomic(path, &bytes).with_context(|| format!("cannot write {}", path.display()))
}

#[cfg(test)]
fn read_manifests(dir: &Path) -> Result<Vec<RunManifest>> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).with_context(|| format!("bad line in {}", path.display())))
        .collect()
}

/// `<root>/<stem>-<timestamp>`, with a numeric suffix if that exists.
pub fn run_dir(root: &Path, stem: &str, now: DateTime<Utc>) -> PathBuf {
    let base = format!("{stem}-{}", now.format("%Y%m%dT%H%M%SZ"));
    let mut dir = root.join(&base);
    let mut n = 2;
    while dir.exists() {
        dir = root.join(format!("{base}-{n}"));
        n += 1;
    }
    dir
}
