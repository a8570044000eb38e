//! Coefficients files for the standalone allocation solver.
//!
//! An instance file describes one resource-allocation problem outside any
//! training run: optional `key = value` lines override the channel defaults,
//! and each `device = A B C D distance_m [tx_power_dbm]` line contributes one
//! device with its objective coefficients.  The solver output is a small
//! table of per-device power and bandwidth shares plus the solver
//! diagnostics, suitable for eyeballing or shell parsing.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use spfl_core::allocator::{alternate, AllocationPair, BandwidthMethod, SolverDiagnostics};
use spfl_core::bound::GCoefficients;
use spfl_core::channel::ChannelParams;
use spfl_core::config::dbm_to_watts;

use crate::config_text::float;

/// One parsed instance: per-device objective coefficients and the channel
/// they compete on.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveInstance {
    pub coeffs: Vec<GCoefficients>,
    pub channel: ChannelParams,
}

/// Read and parse an instance file.
pub fn load_instance(path: &Path) -> Result<SolveInstance> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading coefficients file {}", path.display()))?;
    parse_instance(&text).with_context(|| format!("in coefficients file {}", path.display()))
}

/// Parse instance text.  Channel keys default to a 10 MHz cell with -4 dBm
/// devices and a 210-weight model; at least one device line is required.
pub fn parse_instance(text: &str) -> Result<SolveInstance> {
    let mut bandwidth_hz = 10e6;
    let mut noise_psd_dbm_per_hz = -174.0;
    let mut default_power_dbm = -4.0;
    let mut pathloss_exponent = 3.0;
    let mut latency_s = 0.5;
    let mut model_dim = 210usize;
    let mut quant_bits = 3u32;
    let mut range_bits = 64u32;
    let mut devices: Vec<(GCoefficients, f64, Option<f64>)> = Vec::new();

    for (index, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let number = index + 1;
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {number}: expected `key = value`, got `{line}`"))?;
        let (key, value) = (key.trim(), value.trim());
        let context = |what: &str| format!("line {number}: {what}");
        match key {
            "bandwidth_hz" => bandwidth_hz = float(value).with_context(|| context(key))?,
            "noise_psd_dbm_per_hz" => {
                noise_psd_dbm_per_hz = float(value).with_context(|| context(key))?
            }
            "tx_power_dbm" => default_power_dbm = float(value).with_context(|| context(key))?,
            "pathloss_exponent" => {
                pathloss_exponent = float(value).with_context(|| context(key))?
            }
            "latency_s" => latency_s = float(value).with_context(|| context(key))?,
            "model_dim" => {
                model_dim = value
                    .parse()
                    .map_err(|_| anyhow!("{}", context("model_dim wants an integer")))?
            }
            "quant_bits" => {
                quant_bits = value
                    .parse()
                    .map_err(|_| anyhow!("{}", context("quant_bits wants an integer")))?
            }
            "range_bits" => {
                range_bits = value
                    .parse()
                    .map_err(|_| anyhow!("{}", context("range_bits wants an integer")))?
            }
            "device" => {
                let fields: Vec<f64> = value
                    .split_whitespace()
                    .map(float)
                    .collect::<Result<_>>()
                    .with_context(|| context("device row"))?;
                if fields.len() != 5 && fields.len() != 6 {
                    bail!(
                        "line {number}: a device row is `A B C D distance_m [tx_power_dbm]`, got {} fields",
                        fields.len()
                    );
                }
                let coeffs = GCoefficients {
                    a: fields[0],
                    b: fields[1],
                    c: fields[2],
                    d: fields[3],
                };
                devices.push((coeffs, fields[4], fields.get(5).copied()));
            }
            _ => bail!("line {number}: unknown key `{key}`"),
        }
    }
    if devices.is_empty() {
        bail!("no device rows; nothing to solve");
    }
    let channel = ChannelParams {
        bandwidth_total_hz: bandwidth_hz,
        noise_psd_w_per_hz: dbm_to_watts(noise_psd_dbm_per_hz),
        pathloss_exponent,
        distances_m: devices.iter().map(|d| d.1).collect(),
        tx_power_w: devices
            .iter()
            .map(|d| dbm_to_watts(d.2.unwrap_or(default_power_dbm)))
            .collect(),
        latency_s,
        model_dim,
        quant_bits,
        range_bits,
    };
    channel.validate()?;
    Ok(SolveInstance {
        coeffs: devices.into_iter().map(|d| d.0).collect(),
        channel,
    })
}

/// A finished solve: the allocation and how the solver got there.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub pair: AllocationPair,
    pub diagnostics: SolverDiagnostics,
}

/// Run the alternating solver on a parsed instance.
pub fn solve(instance: &SolveInstance, method: BandwidthMethod, tol: f64) -> Result<SolveReport> {
    let (pair, diagnostics) = alternate(&instance.coeffs, &instance.channel, method, tol)?;
    Ok(SolveReport { pair, diagnostics })
}

impl SolveReport {
    /// Human-readable table of the solution.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let d = &self.diagnostics;
        writeln!(out, "method = {}", d.method.name()).unwrap();
        writeln!(out, "outer_iterations = {}", d.outer_iterations).unwrap();
        writeln!(out, "inner_iterations = {}", d.inner_iterations).unwrap();
        let objective = d.objective_trace.last().copied().unwrap_or(f64::NAN);
        writeln!(out, "objective = {objective}").unwrap();
        if d.hit_iteration_cap {
            writeln!(out, "warning = outer iteration cap reached").unwrap();
        }
        writeln!(out, "device,alpha,beta,root_residual").unwrap();
        for k in 0..self.pair.alpha.len() {
            writeln!(
                out,
                "{k},{},{},{}",
                self.pair.alpha[k], self.pair.beta[k], d.root_residuals[k]
            )
            .unwrap();
        }
        out
    }
}
