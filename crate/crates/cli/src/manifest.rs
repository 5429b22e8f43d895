//! Run manifests: written when a run starts, finalized when it ends.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::experiments::{BlockRecord, CensoringRecord, Metric};
use crate::output::FileDigest;

pub const MANIFEST_SUFFIX: &str = ".manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Complete,
    /// Finished, but some block's censored fraction is over the threshold.
    Partial,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub status: RunStatus,
    pub config: ExperimentConfig,
    pub threads: usize,
    pub started_unix: u64,
    pub wall_seconds: f64,
    pub blocks: Vec<BlockRecord>,
    pub censoring: Vec<CensoringRecord>,
    pub metrics: Vec<Metric>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunManifest {
    pub fn start(config: ExperimentConfig, threads: usize) -> Self {
        let started_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        Self {
            tool: "tubelight".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            status: RunStatus::Running,
            config,
            threads,
            started_unix,
            wall_seconds: 0.0,
            blocks: vec![],
            censoring: vec![],
            metrics: vec![],
            inputs: vec![],
            outputs: vec![],
            error: None,
        }
    }

    pub fn path_in(&self, dir: &Path) -> PathBuf {
        dir.join(format!("{}{MANIFEST_SUFFIX}", self.config.experiment))
    }

    pub fn write(&self, dir: &Path) -> CliResult<PathBuf> {
        let path = self.path_in(dir);
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text + "\n").map_err(CliError::io(format!("writing {}", path.display())))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(format!("reading {}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn metric(&self, name: &str, s: Option<f64>, at: &[(&str, f64)]) -> Option<f64> {
        self.metrics
            .iter()
            .find(|m| {
                m.name == name
                    && close_opt(m.s, s)
                    && m.at.len() == at.len()
                    && at.iter().all(|(k, v)| m.at.get(*k).is_some_and(|x| close(*x, *v)))
            })
            .map(|m| m.value)
    }

    /// Levels for which the run produced `name`.
    pub fn levels(&self, name: &str) -> Vec<f64> {
        let mut s: Vec<f64> = self.metrics.iter().filter(|m| m.name == name).filter_map(|m| m.s).collect();
        s.sort_by(f64::total_cmp);
        s.dedup();
        s
    }
}

/// Grid values written from `linspace` may be off by an ulp from the
/// decimal literal a caller asks about.
pub fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

fn close_opt(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => close(a, b),
        (None, None) => true,
        _ => false,
    }
}
