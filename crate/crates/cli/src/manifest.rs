use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde::Serialize;

/// Record of one invocation, written next to its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub version: &'static str,
    pub threads: usize,
    pub outputs: Vec<PathBuf>,
    pub started_unix_s: f64,
    pub wall_clock_s: f64,
}

pub struct Recorder {
    subcommand: String,
    threads: usize,
    started: SystemTime,
    clock: Instant,
}

impl Recorder {
    pub fn start(subcommand: &str, threads: usize) -> Self {
        Self { subcommand: subcommand.to_string(), threads, started: SystemTime::now(), clock: Instant::now() }
    }

    fn build(self, config: impl Serialize, seed: Option<u64>, outputs: Vec<PathBuf>) -> anyhow::Result<RunManifest> {
        Ok(RunManifest {
            subcommand: self.subcommand,
            config: serde_json::to_value(config)?,
            seed,
            version: env!("CARGO_PKG_VERSION"),
            threads: self.threads,
            outputs,
            started_unix_s: self.started.duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64()),
            wall_clock_s: self.clock.elapsed().as_secs_f64(),
        })
    }

    /// Writes the manifest to `path`.
    pub fn finish(self, path: &Path, config: impl Serialize, seed: Option<u64>, outputs: Vec<PathBuf>) -> anyhow::Result<()> {
        let text = serde_json::to_string_pretty(&self.build(config, seed, outputs)?)?;
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }

    /// For runs whose only output is stdout: the manifest goes to stderr as
    /// one JSON line.
    pub fn report_to_stderr(self, config: impl Serialize, seed: Option<u64>) -> anyhow::Result<()> {
        eprintln!("{}", serde_json::to_string(&self.build(config, seed, Vec::new())?)?);
        Ok(())
    }
}

/// Manifest location for a single-file output: `<file>.manifest.json`.
pub fn beside(file: &Path) -> PathBuf {
    let mut name = file.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    file.with_file_name(name)
}
