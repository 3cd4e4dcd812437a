//! The single writer every command funnels its files through.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use contrastive_core::{Checkpoint, StepRecord};
use serde::{Deserialize, Serialize};

pub const TRACE_FILE: &str = "trace.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const RUN_INFO_FILE: &str = "run_info.json";

/// One line of a metrics stream. `run` labels the sweep value or mode when a
/// command writes several runs into one stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsLine {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<String>,
    #[serde(flatten)]
    pub record: StepRecord,
}

/// Wall-clock metadata, kept apart from the deterministic outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub files: Vec<String>,
}

pub struct OutputWriter {
    dir: PathBuf,
    written: Vec<String>,
    started: u128,
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

impl OutputWriter {
    pub fn create(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)
            .with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(Self {
            dir,
            written: Vec::new(),
            started: now_ms(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(name);
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.written.push(name.to_string());
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    pub fn write_trace(&mut self, name: &str, lines: &[MetricsLine]) -> Result<PathBuf> {
        let mut text = String::new();
        for line in lines {
            text.push_str(&serde_json::to_string(line)?);
            text.push('\n');
        }
        self.write_bytes(name, text.as_bytes())
    }

    pub fn write_csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf> {
        let mut text = header.join(",");
        text.push('\n');
        for row in rows {
            let _ = writeln!(text, "{}", row.join(","));
        }
        self.write_bytes(name, text.as_bytes())
    }

    pub fn write_checkpoint(&mut self, name: &str, ckpt: &Checkpoint) -> Result<PathBuf> {
        self.write_bytes(name, &ckpt.to_bytes())
    }

    /// Writes the run-info sidecar and returns the files written before it.
    pub fn finish(mut self, command: &str, seed: u64) -> Result<Vec<PathBuf>> {
        let info = RunInfo {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            started_unix_ms: self.started,
            finished_unix_ms: now_ms(),
            files: self.written.clone(),
        };
        let files = self.written.iter().map(|f| self.dir.join(f)).collect();
        self.write_json(RUN_INFO_FILE, &info)?;
        Ok(files)
    }
}

pub fn trace_lines(run: Option<&str>, trace: &[StepRecord]) -> Vec<MetricsLine> {
    trace
        .iter()
        .map(|r| MetricsLine {
            run: run.map(str::to_string),
            record: r.clone(),
        })
        .collect()
}

/// Parses a metrics stream; every line must carry the schema's fields.
pub fn read_trace(path: impl AsRef<Path>) -> Result<Vec<MetricsLine>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1)))
        .collect()
}
