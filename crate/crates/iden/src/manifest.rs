use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Result;
use serde::{Deserialize, Serialize};

use crate::io::{timestamp, write_json};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Record of one command invocation, written into the run directory
/// before the work starts and rewritten when it ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub args: Vec<String>,
    /// Fully resolved configuration.
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    /// Files this run writes, relative to the run directory.
    pub artifacts: Vec<String>,
    pub started: u64,
    pub finished: Option<u64>,
    pub status: String,
}

pub struct Run {
    pub dir: PathBuf,
    pub manifest: RunManifest,
}

impl Run {
    pub fn start(
        dir: PathBuf,
        command: &str,
        config: &impl Serialize,
        seeds: BTreeMap<String, u64>,
        artifacts: &[&str],
    ) -> Result<Self> {
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            args: std::env::args().skip(1).collect(),
            config: serde_json::to_value(config)?,
            seeds,
            artifacts: artifacts.iter().map(|s| s.to_string()).collect(),
            started: timestamp(),
            finished: None,
            status: "running".into(),
        };
        let run = Self { dir, manifest };
        run.save()?;
        Ok(run)
    }

    pub fn path(&self, artifact: &str) -> PathBuf {
        self.dir.join(artifact)
    }

    /// Adds an artifact discovered during the run.
    pub fn record(&mut self, artifact: impl Into<String>) {
        let a = artifact.into();
        if !self.manifest.artifacts.contains(&a) {
            self.manifest.artifacts.push(a);
        }
    }

    pub fn finish(mut self, status: &str) -> Result<PathBuf> {
        self.manifest.finished = Some(timestamp());
        self.manifest.status = status.into();
        self.save()?;
        Ok(self.dir)
    }

    fn save(&self) -> Result<()> {
        write_json(&self.dir.join(MANIFEST_FILE), &self.manifest)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}
