//! Per-device power split at fixed bandwidth shares.
//!
//! At fixed `beta`, each device's `G(alpha)` decouples from the others. The
//! derivative is negative as `alpha -> 0+` (the bound diverges when the sign
//! packet is starved), so the minimum is either an interior stationary point
//! or the right boundary `alpha = 1`. The solver scans `(0, 1)` in 64
//! uniform subintervals for sign changes of `G'`, polishes each bracket with
//! Newton iterations that fall back to bisection whenever a step would leave
//! the bracket, and then picks the best candidate among the interior roots
//! and `alpha = 1`, breaking ties toward the smaller share.

use crate::bound::{g_from_exponents, GCoefficients};
use crate::channel::ChannelParams;
use crate::error::{Error, Result};

use super::{
    exponents_at, gprime_from_exponents, gsecond_from_exponents, Exponents, GAMMA_ROOT,
};

/// Subintervals scanned for sign changes.
const SCAN_INTERVALS: usize = 64;
/// Interior margin of the scan grid; the derivative is undefined at 0 and 1.
const EDGE: f64 = 1e-9;
/// Newton/bisection iterations per bracket.
const POLISH_ITERATIONS: u32 = 100;
/// Exponent change per scan point along each ladder.
const LADDER_STEP: f64 = 0.25;
/// Ladder length; past `exp(+-712)` both factors saturate and `G'` has a
/// fixed sign, so nothing further can hide there.
const LADDER_RUNGS: usize = 2848;

pub(crate) struct PowerSolution {
    pub alpha: Vec<f64>,
    /// `|G'|` at each returned alpha; 0 when the boundary won.
    pub residuals: Vec<f64>,
}

/// Minimize each device's `G` over its power split, holding `beta` fixed.
pub fn optimize_power(
    coeffs: &[GCoefficients],
    beta: &[f64],
    channel: &ChannelParams,
) -> Result<Vec<f64>> {
    Ok(optimize_power_detailed(coeffs, beta, channel)?.alpha)
}

pub(crate) fn optimize_power_detailed(
    coeffs: &[GCoefficients],
    beta: &[f64],
    channel: &ChannelParams,
) -> Result<PowerSolution> {
    if coeffs.len() != beta.len() {
        return Err(Error::LengthMismatch {
            left_name: "coeffs",
            left: coeffs.len(),
            right_name: "beta",
            right: beta.len(),
        });
    }
    let share_total: f64 = beta.iter().sum();
    if share_total > 1.0 + 1e-9 {
        return Err(Error::Solver {
            context: format!("bandwidth shares sum to {share_total}, exceeding the band"),
        });
    }

    let mut alpha = Vec::with_capacity(coeffs.len());
    let mut residuals = Vec::with_capacity(coeffs.len());
    for (device, coeff) in coeffs.iter().enumerate() {
        let e = exponents_at(beta[device], channel, device)?;
        let (a, r) = best_alpha(coeff, &e);
        alpha.push(a);
        residuals.push(r);
    }
    Ok(PowerSolution { alpha, residuals })
}

/// Minimize one device's `G(alpha)`; returns `(alpha, residual)`.
fn best_alpha(coeffs: &GCoefficients, e: &Exponents) -> (f64, f64) {
    if coeffs.a == 0.0 && coeffs.b == 0.0 && coeffs.c == 0.0 && coeffs.d == 0.0 {
        // G is identically zero; any split works, pick the even one.
        return (0.5, 0.0);
    }

    let lo = EDGE;
    let hi = 1.0 - EDGE;
    let mut points: Vec<f64> = (0..=SCAN_INTERVALS)
        .map(|j| lo + (hi - lo) * j as f64 / SCAN_INTERVALS as f64)
        .collect();
    // A uniform grid cannot track the exponential factors: on a reliable
    // link they collapse within ~|H|/700 of an endpoint, and on a weak link
    // `exp(-h_s/alpha)` swings by factors of e inside a single cell anywhere
    // in the range.  Both exponents are monotone in alpha, so walk each one
    // in fixed increments and invert: consecutive scan points then never
    // differ by more than LADDER_STEP in either exponent, at any scale.
    let hs_mag = -e.h_s;
    let hv_mag = -e.h_v;
    for j in 1..=LADDER_RUNGS {
        let rung = j as f64 * LADDER_STEP;
        // v(alpha) = hs_mag / alpha = rung
        let from_sign = hs_mag / rung;
        if from_sign > lo && from_sign < hi {
            points.push(from_sign);
        }
        // -u(alpha) = hv_mag / (1 - alpha) = rung
        let from_modulus = 1.0 - hv_mag / rung;
        if from_modulus > lo && from_modulus < hi {
            points.push(from_modulus);
        }
    }
    // Geometric refinement toward both edges covers exponents too small for
    // the ladders to reach into the interval at all.
    let mut offset = (hi - lo) / SCAN_INTERVALS as f64;
    for _ in 0..44 {
        offset *= 0.5;
        points.push(lo + offset);
        points.push(hi - offset);
    }
    points.sort_by(f64::total_cmp);
    points.dedup();

    let derivs: Vec<f64> = points
        .iter()
        .map(|&alpha| gprime_from_exponents(coeffs, e.h_s, e.h_v, alpha))
        .collect();

    // Interior candidates: one polished root per sign-change bracket.
    let mut candidates: Vec<(f64, f64)> = Vec::new();
    for j in 0..points.len() - 1 {
        let (f_lo, f_hi) = (derivs[j], derivs[j + 1]);
        if f_lo == 0.0 {
            candidates.push((points[j], 0.0));
        } else if f_lo.is_nan() || f_hi.is_nan() {
            continue;
        } else if f_lo.signum() != f_hi.signum() {
            candidates.push(polish_root(coeffs, e, points[j], points[j + 1], f_lo));
        }
    }
    if *derivs.last().expect("points is never empty") == 0.0 {
        candidates.push((*points.last().expect("points is never empty"), 0.0));
    }
    // The right boundary is always admissible (all power to the signs).
    candidates.push((1.0, 0.0));
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut best: Option<(f64, f64, f64)> = None;
    for &(alpha, residual) in &candidates {
        let value = g_from_exponents(coeffs, e.h_s, e.h_v, alpha);
        // Strict improvement beyond the tie window, so the smallest alpha
        // among near-equal values wins (candidates are sorted ascending).
        let improved = value.is_finite()
            && match best {
                None => true,
                Some((_, incumbent, _)) => value < incumbent - 1e-12 * (1.0 + incumbent.abs()),
            };
        if improved {
            best = Some((alpha, value, residual));
        }
    }
    match best {
        Some((alpha, _, residual)) => (alpha, residual),
        // Every candidate evaluated to infinity; the boundary is as good as
        // anything else.
        None => (1.0, 0.0),
    }
}

/// Safeguarded Newton on `G'` inside a sign-change bracket.
fn polish_root(
    coeffs: &GCoefficients,
    e: &Exponents,
    mut lo: f64,
    mut hi: f64,
    f_lo: f64,
) -> (f64, f64) {
    let lo_sign = f_lo.signum();
    let mut x = 0.5 * (lo + hi);
    let mut best = (x, f64::INFINITY);
    for _ in 0..POLISH_ITERATIONS {
        let f = gprime_from_exponents(coeffs, e.h_s, e.h_v, x);
        if f.abs() < best.1 {
            best = (x, f.abs());
        }
        if f.abs() <= GAMMA_ROOT {
            return (x, f.abs());
        }
        if f.signum() == lo_sign {
            lo = x;
        } else {
            hi = x;
        }
        let curvature = gsecond_from_exponents(coeffs, e.h_s, e.h_v, x);
        let newton = x - f / curvature;
        x = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo < 4.0 * f64::EPSILON * hi.abs() {
            break;
        }
    }
    best
}
