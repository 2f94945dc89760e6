use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::Serialize;

use crate::config::RunConfig;

/// Record of one CLI invocation, written last as `manifest.json`.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: &'static str,
    pub seed: u64,
    pub workers: usize,
    pub started_at: String,
    pub finished_at: String,
    pub config: RunConfig,
    /// Paths relative to the output directory.
    pub outputs: Vec<PathBuf>,
    pub summary: serde_json::Value,
}

/// Collects output files as they are written.
pub struct Outputs {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Outputs {
    pub fn new(dir: &Path) -> anyhow::Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    /// Absolute path for `name`, recorded as an output.
    pub fn path(&mut self, name: &str) -> PathBuf {
        self.written.push(PathBuf::from(name));
        self.dir.join(name)
    }

    pub fn finish(
        mut self,
        command: &str,
        config: RunConfig,
        workers: usize,
        started: DateTime<Utc>,
        summary: serde_json::Value,
    ) -> anyhow::Result<PathBuf> {
        let path = self.path("manifest.json");
        let manifest = RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION"),
            seed: config.protocol.seed,
            workers,
            started_at: started.to_rfc3339_opts(SecondsFormat::Millis, true),
            finished_at: Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
            config,
            outputs: self.written,
            summary,
        };
        mpa_qkd::report::write_json(&path, &manifest)?;
        Ok(path)
    }
}
