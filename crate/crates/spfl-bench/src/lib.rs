//! Shared helpers for the benchmark suite live in `spfl-core`; this crate only
//! hosts the criterion targets.
