use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tsattack::data::DatasetManifest;

pub const FILE_NAME: &str = "manifest.json";

/// Written last into every output directory; its `config` can be fed back
/// through `--config` to repeat the run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config: Value,
    pub datasets: Vec<DatasetManifest>,
    pub started_at: String,
    pub finished_at: String,
}

fn stamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

pub struct ManifestBuilder {
    command: &'static str,
    started: DateTime<Utc>,
}

impl ManifestBuilder {
    pub fn start(command: &'static str) -> Self {
        Self {
            command,
            started: Utc::now(),
        }
    }

    pub fn finish(
        self,
        dir: &Path,
        config: Value,
        datasets: Vec<DatasetManifest>,
    ) -> Result<RunManifest> {
        let manifest = RunManifest {
            command: self.command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            datasets,
            started_at: stamp(self.started),
            finished_at: stamp(Utc::now()),
        };
        let path = dir.join(FILE_NAME);
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(manifest)
    }
}
