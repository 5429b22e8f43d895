//! Reproducible experiment runner for the `tubelight` models.

pub mod config;
pub mod error;
pub mod experiments;
pub mod manifest;
pub mod output;
pub mod report;

use std::time::Instant;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
pub use manifest::{RunManifest, RunStatus};

use output::{sha256_hex, write_table, FileDigest};

/// Run a resolved config: write the manifest, execute the experiment on the
/// configured number of threads, write the tables, finalize the manifest.
///
/// A run whose censoring exceeds the threshold still writes everything and
/// then returns [`CliError::PartialRun`].
pub fn run(config: ExperimentConfig) -> CliResult<RunManifest> {
    let dir = config.output_dir().to_path_buf();
    std::fs::create_dir_all(&dir).map_err(CliError::io(format!("creating {}", dir.display())))?;
    let threads = config.workers.threads();
    let mut manifest = RunManifest::start(config, threads);
    manifest.write(&dir)?;

    let clock = Instant::now();
    let cfg = manifest.config.clone();
    let result = tubelight::batch::with_workers(threads, || experiments::execute(&cfg))?;
    let out = match result {
        Ok(out) => out,
        Err(e) => {
            manifest.status = RunStatus::Failed;
            manifest.error = Some(e.to_string());
            manifest.wall_seconds = clock.elapsed().as_secs_f64();
            manifest.write(&dir)?;
            return Err(e);
        }
    };
    for table in &out.tables {
        manifest.outputs.push(write_table(&dir, table)?);
    }
    manifest.inputs = out
        .inputs
        .iter()
        .map(|(file, bytes)| FileDigest {
            file: file.clone(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        })
        .collect();
    manifest.blocks = out.blocks;
    manifest.censoring = out.censoring;
    manifest.metrics = out.metrics;
    let flagged: Vec<String> = manifest
        .censoring
        .iter()
        .filter(|c| c.flagged)
        .map(|c| match c.s {
            Some(s) => format!("{} at s = {s}: {:.3}% censored", c.label, 100.0 * c.rate),
            None => format!("{}: {:.3}% censored", c.label, 100.0 * c.rate),
        })
        .collect();
    manifest.status = if flagged.is_empty() {
        RunStatus::Complete
    } else {
        RunStatus::Partial
    };
    manifest.wall_seconds = clock.elapsed().as_secs_f64();
    manifest.write(&dir)?;
    if flagged.is_empty() {
        Ok(manifest)
    } else {
        Err(CliError::PartialRun(format!(
            "{} (threshold {:.3}%)",
            flagged.join("; "),
            100.0 * manifest.config.censor_threshold()
        )))
    }
}
