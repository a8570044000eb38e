//! CSV rendering of experiment output.
//!
//! Every file starts with a `#` header carrying the SHA-256 of the canonical
//! config text and the seed, so a metrics file can always be traced back to
//! the exact experiment that produced it.  Column order is fixed and part of
//! the format; numbers are written in Rust's shortest round-trippable
//! decimal form, which makes reruns byte-comparable.

use sha2::{Digest, Sha256};
use spfl_core::learner::ExperimentRow;
use spfl_core::SweepAxis;

/// Metrics column order.  One row per (repetition, round), rounds `0..=N`:
/// the final row carries the post-training loss and accuracy with NaN in the
/// transition-specific columns.
pub const METRIC_COLUMNS: [&str; 12] = [
    "strategy",
    "sweep_value",
    "repetition",
    "round",
    "elapsed_s",
    "train_loss",
    "test_acc",
    "bound_value",
    "mean_q",
    "mean_p",
    "devices_rejected",
    "solver_outer_iters",
];

/// Hex SHA-256 of the canonical config text.
pub fn config_fingerprint(serialized_config: &str) -> String {
    let digest = Sha256::digest(serialized_config.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// The traceability header line shared by all files of one run.
pub fn header_line(fingerprint: &str, seed: u64) -> String {
    format!("# config_sha256={fingerprint} seed={seed}\n")
}

/// File name of one (strategy, sweep value) cell.
pub fn metrics_file_name(strategy: &str, axis: SweepAxis, value: f64) -> String {
    format!("metrics_{strategy}_{}_{value}.csv", axis.name())
}

/// Render one cell's rows as a CSV document.
pub fn metrics_csv(
    fingerprint: &str,
    seed: u64,
    sweep_value: f64,
    rows: &[ExperimentRow],
) -> String {
    let mut out = header_line(fingerprint, seed);
    out.push_str(&METRIC_COLUMNS.join(","));
    out.push('\n');
    for row in rows {
        let m = &row.metrics;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            row.strategy.name(),
            sweep_value,
            row.repetition,
            m.round,
            m.elapsed_s,
            m.train_loss,
            m.test_acc,
            m.bound_value,
            m.mean_q,
            m.mean_p,
            m.devices_rejected,
            m.solver_outer_iters,
        ));
    }
    out
}

/// One line of the run summary: where a cell's training ended up, averaged
/// over its repetitions.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryCell {
    pub strategy: String,
    pub sweep_value: f64,
    pub repetitions: usize,
    pub final_train_loss: f64,
    pub final_test_acc: f64,
}

/// Render the per-cell summary as a CSV document.
pub fn summary_csv(fingerprint: &str, seed: u64, cells: &[SummaryCell]) -> String {
    let mut out = header_line(fingerprint, seed);
    out.push_str("strategy,sweep_value,repetitions,final_train_loss,final_test_acc\n");
    for cell in cells {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            cell.strategy,
            cell.sweep_value,
            cell.repetitions,
            cell.final_train_loss,
            cell.final_test_acc,
        ));
    }
    out
}
