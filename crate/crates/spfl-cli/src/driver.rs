//! Sweep expansion and cell execution.
//!
//! A run is a grid: every sweep value becomes one cell config via
//! [`ExperimentConfig::at_sweep_value`], each cell trains every configured
//! strategy, and each (strategy, value) pair lands in its own metrics file.
//! Cells are independent — they share nothing but the immutable parent
//! config — so they run on a rayon pool with a caller-chosen worker cap.
//! All file contents are derived deterministically from the config, which
//! makes a rerun byte-identical and the outputs safe to diff.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;
use spfl_core::learner::{run_experiment, ExperimentRow};
use spfl_core::ExperimentConfig;

use crate::config_text::serialize_config;
use crate::report::{
    config_fingerprint, metrics_csv, metrics_file_name, summary_csv, SummaryCell,
};

/// What a run left on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    /// Every file written, metrics files first, the summary last.
    pub files: Vec<PathBuf>,
    /// Number of (strategy, sweep value) cells.
    pub cells: usize,
}

/// Execute the full sweep and write one metrics file per (strategy, sweep
/// value) plus `summary.csv` into `out_dir`.
pub fn run_to_dir(
    config: &ExperimentConfig,
    workers: Option<usize>,
    out_dir: &Path,
) -> Result<RunOutput> {
    config.validate()?;
    let serialized = serialize_config(config);
    let fingerprint = config_fingerprint(&serialized);
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;

    // num_threads(0) lets rayon pick; a scoped pool keeps the cap local to
    // this run instead of configuring the process-wide pool.
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .context("building the worker pool")?;
    let per_value: Vec<(f64, Vec<ExperimentRow>)> = pool.install(|| {
        config
            .sweep_values
            .par_iter()
            .map(|&value| -> Result<(f64, Vec<ExperimentRow>)> {
                let cell = config.at_sweep_value(value)?;
                let rows = run_experiment(&cell)?;
                Ok((value, rows))
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut files = Vec::new();
    let mut summary = Vec::new();
    for (value, rows) in &per_value {
        for strategy in &config.strategies {
            let cell_rows: Vec<ExperimentRow> = rows
                .iter()
                .filter(|row| row.strategy.name() == strategy.name())
                .cloned()
                .collect();
            let finals: Vec<&ExperimentRow> = cell_rows
                .iter()
                .filter(|row| row.metrics.round == config.rounds)
                .collect();
            let mean = |pick: fn(&ExperimentRow) -> f64| {
                finals.iter().map(|row| pick(row)).sum::<f64>() / finals.len() as f64
            };
            summary.push(SummaryCell {
                strategy: strategy.name().to_string(),
                sweep_value: *value,
                repetitions: finals.len(),
                final_train_loss: mean(|row| row.metrics.train_loss),
                final_test_acc: mean(|row| row.metrics.test_acc),
            });
            let name = metrics_file_name(strategy.name(), config.sweep, *value);
            let path = out_dir.join(&name);
            let text = metrics_csv(&fingerprint, config.seed, *value, &cell_rows);
            std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
            files.push(path);
        }
    }
    let summary_path = out_dir.join("summary.csv");
    std::fs::write(
        &summary_path,
        summary_csv(&fingerprint, config.seed, &summary),
    )
    .with_context(|| format!("writing {}", summary_path.display()))?;
    files.push(summary_path);
    Ok(RunOutput {
        files,
        cells: summary.len(),
    })
}
