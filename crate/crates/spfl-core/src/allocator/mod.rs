//! Per-round power and bandwidth allocation.
//!
//! Each round the server minimizes the channel-dependent part of the descent
//! bound, `sum_k G_k(alpha_k, beta_k)`, subject to `0 <= alpha_k <= 1` and
//! `sum_k beta_k <= 1`. The problem is non-convex in the pair, so it is
//! solved by alternating two tractable subproblems:
//!
//! * **power** — at fixed `beta`, each device's `G_k(alpha)` is minimized
//!   independently by scanning `(0, 1)` for sign changes of the derivative
//!   and polishing each bracket with safeguarded Newton ([`optimize_power`]);
//! * **bandwidth** — at fixed `alpha`, the coupled problem over `beta` is
//!   solved either by successive convex approximation
//!   ([`optimize_bandwidth_sca`]) or by a logarithmic-barrier penalty method
//!   ([`optimize_bandwidth_penalty`]).
//!
//! [`alternate`] runs the two steps until the objective stalls, guarding
//! every step so the objective trace is nonincreasing by construction.

mod bandwidth_penalty;
mod bandwidth_sca;
mod power;

pub use bandwidth_penalty::optimize_bandwidth_penalty;
pub use bandwidth_sca::optimize_bandwidth_sca;
pub use power::optimize_power;

use rand::Rng;

use crate::bound::{g_from_exponents, GCoefficients};
use crate::channel::{self, ChannelParams};
use crate::error::{Error, Result};
use crate::stream;

/// Smallest bandwidth share a participating device may hold. The outage
/// exponents diverge as `beta` approaches zero, so shares are kept off the
/// boundary; a device meant to be excluded is excluded explicitly, not by
/// starving its share.
pub const BETA_FLOOR: f64 = 1e-4;

/// Largest bandwidth share a single device may hold.
pub const BETA_CEIL: f64 = 1.0 - BETA_FLOOR;

/// Residual tolerance for the power-step root finder.
pub const GAMMA_ROOT: f64 = 1e-8;

/// KKT residual tolerance for the bandwidth surrogate solves.
pub const GAMMA_KKT: f64 = 1e-6;

/// Barrier weights used by the penalty bandwidth solver, smallest first.
pub const MU_SCHEDULE: [f64; 4] = [1e2, 1e3, 1e4, 1e5];

/// Cap on alternation rounds before [`alternate`] returns its best iterate
/// with the warning flag set.
pub const OUTER_CAP: u32 = 40;

/// Which bandwidth subproblem solver [`alternate`] runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BandwidthMethod {
    Sca,
    Penalty,
}

impl BandwidthMethod {
    pub fn name(self) -> &'static str {
        match self {
            BandwidthMethod::Sca => "sca",
            BandwidthMethod::Penalty => "penalty",
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        match text {
            "sca" => Some(BandwidthMethod::Sca),
            "penalty" => Some(BandwidthMethod::Penalty),
            _ => None,
        }
    }
}

/// Per-device power and bandwidth shares.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationPair {
    /// Power share of the sign packet, in `[0, 1]`.
    pub alpha: Vec<f64>,
    /// Bandwidth share of the device, in `[BETA_FLOOR, BETA_CEIL]` and
    /// summing to at most 1.
    pub beta: Vec<f64>,
}

/// What the solver did and how well it converged.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverDiagnostics {
    pub outer_iterations: u32,
    /// Total inner iterations spent inside the bandwidth solver.
    pub inner_iterations: u32,
    /// Objective after the initial point and after each outer iteration;
    /// nonincreasing by construction.
    pub objective_trace: Vec<f64>,
    /// `|G'(alpha_k)|` at the last power step (0 for boundary optima).
    pub root_residuals: Vec<f64>,
    pub method: BandwidthMethod,
    /// Devices per surrogate case at the last bandwidth step, keyed by the
    /// sign pattern of `(a, c)`: `[a>=0 & c>=0, a>=0 & c<0, a<0 & c>=0,
    /// a<0 & c<0]`.
    pub case_counts: [usize; 4],
    /// Set when the alternation hit [`OUTER_CAP`] before the objective
    /// stalled; the returned pair is still the best iterate seen.
    pub hit_iteration_cap: bool,
}

/// Index of the surrogate case a device's coefficients select.
pub(crate) fn case_index(coeffs: &GCoefficients) -> usize {
    match (coeffs.a >= 0.0, coeffs.c >= 0.0) {
        (true, true) => 0,
        (true, false) => 1,
        (false, true) => 2,
        (false, false) => 3,
    }
}

/// Multiply, treating either factor being exactly zero as killing the term
/// even when the other is infinite. Used where a zero coefficient or a fully
/// decayed exponential makes the term's limit genuinely zero.
pub(crate) fn prod(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        0.0
    } else {
        a * b
    }
}

/// `G'(alpha)` evaluated from fixed exponents.
pub(crate) fn gprime_from_exponents(
    coeffs: &GCoefficients,
    h_s: f64,
    h_v: f64,
    alpha: f64,
) -> f64 {
    let om = 1.0 - alpha;
    let u = h_v / om;
    let up = h_v / (om * om);
    let v = -h_s / alpha;
    let vp = h_s / (alpha * alpha);
    let e_u = u.exp();
    let first = prod(
        prod(coeffs.a, e_u) + prod(2.0 * coeffs.b, (2.0 * u).exp()),
        up,
    );
    let bracket = prod(coeffs.c, prod(e_u, up + vp)) + prod(coeffs.d, vp);
    first + prod(bracket, v.exp())
}

/// `G''(alpha)` evaluated from fixed exponents (used by the Newton polish).
pub(crate) fn gsecond_from_exponents(
    coeffs: &GCoefficients,
    h_s: f64,
    h_v: f64,
    alpha: f64,
) -> f64 {
    let om = 1.0 - alpha;
    let u = h_v / om;
    let up = h_v / (om * om);
    let upp = 2.0 * h_v / (om * om * om);
    let v = -h_s / alpha;
    let vp = h_s / (alpha * alpha);
    let vpp = -2.0 * h_s / (alpha * alpha * alpha);
    let e_u = u.exp();
    let e_2u = (2.0 * u).exp();
    let first = prod(prod(coeffs.a, e_u) + prod(4.0 * coeffs.b, e_2u), up * up)
        + prod(prod(coeffs.a, e_u) + prod(2.0 * coeffs.b, e_2u), upp);
    let sum_p = up + vp;
    let bracket = prod(coeffs.c, prod(e_u, sum_p * sum_p + upp + vpp))
        + prod(coeffs.d, vp * vp + vpp);
    first + prod(bracket, v.exp())
}

/// `dG/dbeta` at fixed `alpha`, from exponents and their beta-derivatives.
pub(crate) fn gbeta_prime_from_exponents(
    coeffs: &GCoefficients,
    h_s: f64,
    h_v: f64,
    h_s_prime: f64,
    h_v_prime: f64,
    alpha: f64,
) -> f64 {
    let om = 1.0 - alpha;
    let u = h_v / om;
    let du = h_v_prime / om;
    let v = -h_s / alpha;
    let dv = -h_s_prime / alpha;
    let e_u = u.exp();
    let first = prod(
        prod(coeffs.a, e_u) + prod(2.0 * coeffs.b, (2.0 * u).exp()),
        du,
    );
    let bracket = prod(coeffs.c, prod(e_u, du + dv)) + prod(coeffs.d, dv);
    first + prod(bracket, v.exp())
}

/// Analytic `dG/dalpha` for one device.
///
/// `alpha` must lie strictly inside `(0, 1)`: both boundaries divide by a
/// vanishing power share and the derivative is not defined there.
pub fn gprime(
    coeffs: &GCoefficients,
    alpha: f64,
    beta: f64,
    channel: &ChannelParams,
    device: usize,
) -> Result<f64> {
    if !(alpha.is_finite() && alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain {
            name: "alpha",
            value: alpha,
            expected: "the open interval (0, 1)",
        });
    }
    let h_s = channel::h_s(beta, channel, device)?;
    let h_v = channel::h_v(beta, channel, device)?;
    Ok(gprime_from_exponents(coeffs, h_s, h_v, alpha))
}

/// Per-device outage exponents at a fixed bandwidth share.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Exponents {
    pub h_s: f64,
    pub h_v: f64,
}

pub(crate) fn exponents_at(
    beta: f64,
    channel: &ChannelParams,
    device: usize,
) -> Result<Exponents> {
    Ok(Exponents {
        h_s: channel::h_s(beta, channel, device)?,
        h_v: channel::h_v(beta, channel, device)?,
    })
}

/// One device's channel constants, folded so the bandwidth solvers can
/// evaluate exponents and their derivatives in a tight loop without error
/// plumbing: `h(beta) = kappa * beta * (1 - 2^(c/beta))`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LinkConstants {
    kappa: f64,
    c_s: f64,
    c_v: f64,
}

impl LinkConstants {
    pub fn new(channel: &ChannelParams, device: usize) -> Self {
        let rx = channel.tx_power_w[device]
            * channel.distances_m[device].powf(-channel.pathloss_exponent);
        LinkConstants {
            kappa: channel.bandwidth_total_hz * channel.noise_psd_w_per_hz / (4.0 * rx),
            c_s: 2.0 * channel.sign_rate_bps() / channel.bandwidth_total_hz,
            c_v: 2.0 * channel.modulus_rate_bps() / channel.bandwidth_total_hz,
        }
    }

    fn exponent(&self, c: f64, beta: f64) -> f64 {
        self.kappa * beta * (1.0 - (c / beta).exp2())
    }

    fn exponent_prime(&self, c: f64, beta: f64) -> f64 {
        let pow = (c / beta).exp2();
        self.kappa * (1.0 - pow) + self.kappa * (c * std::f64::consts::LN_2 / beta) * pow
    }

    pub fn h_s(&self, beta: f64) -> f64 {
        self.exponent(self.c_s, beta)
    }

    pub fn h_v(&self, beta: f64) -> f64 {
        self.exponent(self.c_v, beta)
    }

    pub fn h_s_prime(&self, beta: f64) -> f64 {
        self.exponent_prime(self.c_s, beta)
    }

    pub fn h_v_prime(&self, beta: f64) -> f64 {
        self.exponent_prime(self.c_v, beta)
    }
}

/// Objective `sum_k G_k` at a full allocation.
pub(crate) fn total_objective(
    coeffs: &[GCoefficients],
    channel: &ChannelParams,
    alphas: &[f64],
    betas: &[f64],
) -> Result<f64> {
    let mut total = 0.0;
    for (device, coeff) in coeffs.iter().enumerate() {
        let e = exponents_at(betas[device], channel, device)?;
        total += g_from_exponents(coeff, e.h_s, e.h_v, alphas[device]);
    }
    Ok(total)
}

fn validate_problem(coeffs: &[GCoefficients], channel: &ChannelParams) -> Result<()> {
    channel.validate()?;
    if coeffs.len() != channel.num_devices() {
        return Err(Error::LengthMismatch {
            left_name: "coeffs",
            left: coeffs.len(),
            right_name: "channel devices",
            right: channel.num_devices(),
        });
    }
    for c in coeffs {
        for (name, value) in [("a", c.a), ("b", c.b), ("c", c.c), ("d", c.d)] {
            if !value.is_finite() {
                return Err(Error::Domain {
                    name: match name {
                        "a" => "coeffs.a",
                        "b" => "coeffs.b",
                        "c" => "coeffs.c",
                        _ => "coeffs.d",
                    },
                    value,
                    expected: "a finite coefficient",
                });
            }
        }
        if c.b < 0.0 || c.d < 0.0 {
            return Err(Error::Inconsistent {
                context: "coefficients b and d must be nonnegative".into(),
            });
        }
    }
    Ok(())
}

/// Alternate the power and bandwidth steps until the objective changes by
/// less than `tol`.
///
/// Starts from the uniform allocation `beta = (1 - 1e-3)/K`, `alpha = 0.5`.
/// Both steps are keep-best guarded: a step that fails to improve the true
/// objective (numerically possible at convergence) is discarded rather than
/// applied, so the recorded trace is nonincreasing by construction. Hitting
/// [`OUTER_CAP`] sets the diagnostic flag instead of erroring.
pub fn alternate(
    coeffs: &[GCoefficients],
    channel: &ChannelParams,
    method: BandwidthMethod,
    tol: f64,
) -> Result<(AllocationPair, SolverDiagnostics)> {
    validate_problem(coeffs, channel)?;
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::Domain {
            name: "tol",
            value: tol,
            expected: "a positive finite tolerance",
        });
    }
    let k = coeffs.len();
    let mut alphas = vec![0.5; k];
    let mut betas = vec![(1.0 - 1e-3) / k as f64; k];
    if betas[0] < BETA_FLOOR {
        return Err(Error::Solver {
            context: format!("{k} devices cannot all hold at least the floor share"),
        });
    }

    let mut objective = total_objective(coeffs, channel, &alphas, &betas)?;
    let mut trace = vec![objective];
    let mut root_residuals = vec![0.0; k];
    let mut case_counts = [0usize; 4];
    for c in coeffs {
        case_counts[case_index(c)] += 1;
    }
    let mut inner_iterations = 0;
    let mut hit_iteration_cap = true;
    let mut outer_iterations = 0;

    for _ in 0..OUTER_CAP {
        outer_iterations += 1;

        // Power step: per-device exact minimization, kept only where it
        // actually helps that device.
        let power = power::optimize_power_detailed(coeffs, &betas, channel)?;
        for device in 0..k {
            let e = exponents_at(betas[device], channel, device)?;
            let current = g_from_exponents(&coeffs[device], e.h_s, e.h_v, alphas[device]);
            let candidate = g_from_exponents(&coeffs[device], e.h_s, e.h_v, power.alpha[device]);
            if candidate <= current {
                alphas[device] = power.alpha[device];
                root_residuals[device] = power.residuals[device];
            }
        }

        // Bandwidth step: coupled solve, kept only if the whole objective
        // does not regress.
        let step = match method {
            BandwidthMethod::Sca => {
                bandwidth_sca::optimize_bandwidth_sca_detailed(coeffs, &alphas, channel, &betas)?
            }
            BandwidthMethod::Penalty => bandwidth_penalty::optimize_bandwidth_penalty_detailed(
                coeffs,
                &alphas,
                channel,
                &MU_SCHEDULE,
                &betas,
            )?,
        };
        inner_iterations += step.inner_iterations;
        let candidate_obj = total_objective(coeffs, channel, &alphas, &step.beta)?;
        let current_obj = total_objective(coeffs, channel, &alphas, &betas)?;
        if candidate_obj <= current_obj {
            betas = step.beta;
        }

        let new_objective = total_objective(coeffs, channel, &alphas, &betas)?;
        trace.push(new_objective);
        let change = if objective.is_infinite() && new_objective.is_infinite() {
            0.0
        } else {
            objective - new_objective
        };
        objective = new_objective;
        if change.abs() <= tol * (1.0 + objective.abs()) {
            hit_iteration_cap = false;
            break;
        }
    }

    Ok((
        AllocationPair {
            alpha: alphas,
            beta: betas,
        },
        SolverDiagnostics {
            outer_iterations,
            inner_iterations,
            objective_trace: trace,
            root_residuals,
            method,
            case_counts,
            hit_iteration_cap,
        },
    ))
}

/// Result of one bandwidth subproblem solve, shared by both methods.
#[derive(Debug, Clone)]
pub(crate) struct BandwidthStep {
    pub beta: Vec<f64>,
    pub inner_iterations: u32,
}

/// Draw a random allocation instance whose links span near-perfect to badly
/// outage-limited, for tests and benchmarks.
///
/// The scales mimic a long-range low-power deployment: kilohertz total band,
/// microwatt-to-milliwatt transmitters, kilometre distances.  That is the
/// regime where the success exponents are order one and the split between the
/// two packets actually matters; coefficient magnitudes mimic gradient
/// statistics of a small model.
pub fn random_instance(num_devices: usize, seed: u64) -> (Vec<GCoefficients>, ChannelParams) {
    let mut rng = stream::stream(seed, &[stream::MONTE_CARLO, num_devices as u64]);
    let bandwidth = 10f64.powf(rng.gen_range(3.0..3.9));
    let mut distances = Vec::with_capacity(num_devices);
    let mut powers = Vec::with_capacity(num_devices);
    let mut coeffs = Vec::with_capacity(num_devices);
    for _ in 0..num_devices {
        distances.push(rng.gen_range(5e3..2e4));
        powers.push(10f64.powf(rng.gen_range(-3.2..-1.5) - 2.5));
        let grad_norm_sq = 10f64.powf(rng.gen_range(-0.3..0.9));
        let comp_norm_sq = 10f64.powf(rng.gen_range(-0.7..0.6));
        let ratio: f64 = rng.gen_range(0.0..1.0);
        let upsilon = ratio * (grad_norm_sq * comp_norm_sq).sqrt();
        let delta_sq = rng.gen_range(0.05..0.5) * grad_norm_sq;
        coeffs.push(GCoefficients::from_parts(
            grad_norm_sq,
            comp_norm_sq,
            upsilon,
            delta_sq,
            1.0,
        ));
    }
    let channel = ChannelParams {
        bandwidth_total_hz: bandwidth,
        noise_psd_w_per_hz: 10f64.powf(-20.4),
        pathloss_exponent: 3.0,
        distances_m: distances,
        tx_power_w: powers,
        latency_s: 0.5,
        model_dim: 210,
        quant_bits: 3,
        range_bits: 64,
    };
    (coeffs, channel)
}
