//! Command-line plumbing for the federated-uplink simulator.
//!
//! The binary is a thin wrapper over three library layers, each testable on
//! its own:
//!
//! * [`config_text`] — the `key = value` experiment file format and its
//!   canonical serialization;
//! * [`report`] — CSV rendering of experiment rows, file naming, and the
//!   fingerprint header that stamps every output with its config hash;
//! * [`driver`] — sweep expansion and parallel execution of the cells, one
//!   metrics file per (strategy, sweep value) plus a summary;
//! * [`coeffs`] — the standalone allocation solver: a coefficients table in,
//!   a printed allocation out.
//!
//! Everything here is deterministic: running the same config twice produces
//! byte-identical files, which is what makes the CSV outputs diffable.

pub mod coeffs;
pub mod config_text;
pub mod driver;
pub mod report;
