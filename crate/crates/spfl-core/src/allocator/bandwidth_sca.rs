//! Successive convex approximation for the bandwidth split.
//!
//! With the power splits held fixed, the per-device transmission penalty
//! `G_k(beta_k)` is a sum of exponentials of the outage exponents, and the
//! exponents themselves are concave in the bandwidth share.  Each outer pass
//! replaces every non-convex piece with a convex majorant that touches the
//! true penalty at the current iterate: concave exponents inside a growing
//! exponential are replaced by their tangent lines, and exponentials with a
//! negative coefficient are replaced by their own tangent planes.  The
//! surrogate separates across devices, so the simplex-constrained minimiser
//! is found by a dual bisection on the shared bandwidth price.  Because the
//! majorant is tight at the linearisation point, each accepted step can only
//! lower the true objective.

use super::{
    prod, total_objective, validate_problem, BandwidthStep, LinkConstants, BETA_CEIL, BETA_FLOOR,
};
use crate::bound::GCoefficients;
use crate::channel::ChannelParams;
use crate::error::{Error, Result};

/// Outer linearisation passes before the solver settles for its best iterate.
const OUTER_CAP: u32 = 60;
/// Bisection depth for each per-device price-shifted slope root.
const DEVICE_BISECTIONS: u32 = 64;
/// Bisection depth for the shared bandwidth price.
const PRICE_BISECTIONS: u32 = 120;
/// Largest exponent fed to `exp` when freezing tangent magnitudes.
const EXP_CLAMP: f64 = 700.0;

/// Convex per-device majorant of the transmission penalty, frozen at one
/// linearisation point.  All curvature-carrying constants are captured at
/// construction; only the live exponents are re-evaluated per probe.
#[derive(Debug, Clone, Copy)]
struct Surrogate {
    coeffs: GCoefficients,
    /// Sign power share; `modulus_alive` is false when it consumed everything.
    alpha: f64,
    modulus_alive: bool,
    beta0: f64,
    /// Tangent of the modulus exponent over `1 - alpha`: value and slope.
    t0: f64,
    t_slope: f64,
    /// Modulus-success exponent at the linearisation point.
    u0: f64,
    /// `exp(u0)`, the frozen magnitude for negative first-order terms.
    y0: f64,
    /// `exp(u0 + v0)` (clamped), the frozen magnitude for negative cross terms.
    z0: f64,
    /// Sign-exponent slope over the sign power share, for the cross tangent.
    s_slope: f64,
    dead: bool,
}

impl Surrogate {
    fn new(
        coeffs: GCoefficients,
        alpha: f64,
        beta0: f64,
        link: &LinkConstants,
    ) -> Result<Surrogate> {
        let dead = coeffs.a == 0.0 && coeffs.b == 0.0 && coeffs.c == 0.0 && coeffs.d == 0.0;
        if dead {
            return Ok(Surrogate {
                coeffs,
                alpha,
                modulus_alive: false,
                beta0,
                t0: 0.0,
                t_slope: 0.0,
                u0: 0.0,
                y0: 0.0,
                z0: 0.0,
                s_slope: 0.0,
                dead,
            });
        }
        let hs0 = link.h_s(beta0);
        let hs0p = link.h_s_prime(beta0);
        let hv0 = link.h_v(beta0);
        let hv0p = link.h_v_prime(beta0);
        if !(hs0.is_finite() && hs0p.is_finite() && hv0.is_finite() && hv0p.is_finite()) {
            return Err(Error::Solver {
                context: format!(
                    "bandwidth surrogate linearised at share {beta0} where the outage \
                     exponents overflow"
                ),
            });
        }
        let modulus_alive = alpha < 1.0;
        let (t0, t_slope, u0) = if modulus_alive {
            (hv0 / (1.0 - alpha), hv0p / (1.0 - alpha), hv0 / (1.0 - alpha))
        } else {
            (f64::NEG_INFINITY, 0.0, f64::NEG_INFINITY)
        };
        let v0 = -hs0 / alpha;
        Ok(Surrogate {
            coeffs,
            alpha,
            modulus_alive,
            beta0,
            t0,
            t_slope,
            u0,
            y0: if modulus_alive { u0.min(EXP_CLAMP).exp() } else { 0.0 },
            z0: if modulus_alive {
                (u0 + v0).min(EXP_CLAMP).exp()
            } else {
                0.0
            },
            s_slope: hs0p / alpha,
            dead,
        })
    }

    fn t_hat(&self, beta: f64) -> f64 {
        if self.modulus_alive {
            self.t0 + self.t_slope * (beta - self.beta0)
        } else {
            f64::NEG_INFINITY
        }
    }

    fn value(&self, beta: f64, link: &LinkConstants) -> f64 {
        if self.dead {
            return 0.0;
        }
        let GCoefficients { a, b, c, d } = self.coeffs;
        let t_hat = self.t_hat(beta);
        let v = -link.h_s(beta) / self.alpha;
        let u = if self.modulus_alive {
            link.h_v(beta) / (1.0 - self.alpha)
        } else {
            f64::NEG_INFINITY
        };
        let term_a = if a >= 0.0 {
            prod(a, t_hat.exp())
        } else {
            prod(a * self.y0, 1.0 + u - self.u0)
        };
        let term_b = prod(b, (2.0 * t_hat).exp());
        let term_c = if c >= 0.0 {
            prod(c, (t_hat + v).exp())
        } else {
            prod(
                c * self.z0,
                1.0 + (u - self.u0) - self.s_slope * (beta - self.beta0),
            )
        };
        let term_d = prod(d, v.exp());
        term_a + term_b + term_c + term_d
    }

    fn slope(&self, beta: f64, link: &LinkConstants) -> f64 {
        if self.dead {
            return 0.0;
        }
        let GCoefficients { a, b, c, d } = self.coeffs;
        let t_hat = self.t_hat(beta);
        let v = -link.h_s(beta) / self.alpha;
        let dv = -link.h_s_prime(beta) / self.alpha;
        let du = if self.modulus_alive {
            link.h_v_prime(beta) / (1.0 - self.alpha)
        } else {
            0.0
        };
        let slope_a = if a >= 0.0 {
            prod(a, prod(t_hat.exp(), self.t_slope))
        } else {
            prod(a * self.y0, du)
        };
        let slope_b = prod(2.0 * b, prod((2.0 * t_hat).exp(), self.t_slope));
        let slope_c = if c >= 0.0 {
            prod(c, prod((t_hat + v).exp(), self.t_slope + dv))
        } else {
            prod(c * self.z0, du - self.s_slope)
        };
        let slope_d = prod(d, prod(v.exp(), dv));
        slope_a + slope_b + slope_c + slope_d
    }

    /// Minimises `value(beta) + lambda * beta` over the boxed share range.
    /// The surrogate slope is strictly increasing, so a sign check at the box
    /// edges either pins the solution or brackets a unique root.
    fn minimize_priced(&self, lambda: f64, link: &LinkConstants, evals: &mut u32) -> f64 {
        if self.dead {
            // A device with no live penalty terms releases its bandwidth.
            return BETA_FLOOR;
        }
        let shifted = |beta: f64, evals: &mut u32| -> f64 {
            *evals += 1;
            let s = self.slope(beta, link);
            // Overflowing exponents at tiny shares can denormalise the slope;
            // the penalty is steeply decreasing there, so probe rightwards.
            if s.is_nan() {
                f64::NEG_INFINITY
            } else {
                s + lambda
            }
        };
        let mut lo = BETA_FLOOR;
        let mut hi = BETA_CEIL;
        if shifted(lo, evals) >= 0.0 {
            return lo;
        }
        if shifted(hi, evals) <= 0.0 {
            return hi;
        }
        let tolerance = 1e-9 * (1.0 + lambda.abs());
        for _ in 0..DEVICE_BISECTIONS {
            let mid = 0.5 * (lo + hi);
            let s = shifted(mid, evals);
            if s.abs() <= tolerance {
                return mid;
            }
            if s < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Simplex-constrained minimiser of the separable surrogate: a bisection on
/// the shared bandwidth price, with each probe solving every device's priced
/// subproblem.  Returns the feasible-side iterate and the probe count.
fn solve_surrogate(
    surrogates: &[Surrogate],
    links: &[LinkConstants],
) -> Result<(Vec<f64>, u32)> {
    let mut evals = 0u32;
    let betas_at = |lambda: f64, evals: &mut u32| -> Vec<f64> {
        surrogates
            .iter()
            .zip(links)
            .map(|(s, link)| s.minimize_priced(lambda, link, evals))
            .collect()
    };
    let unpriced = betas_at(0.0, &mut evals);
    if unpriced.iter().sum::<f64>() <= 1.0 {
        return Ok((unpriced, evals));
    }
    let mut lam_lo = 0.0;
    let mut lam_hi = 1e-6;
    let mut feasible;
    loop {
        feasible = betas_at(lam_hi, &mut evals);
        if feasible.iter().sum::<f64>() <= 1.0 {
            break;
        }
        lam_lo = lam_hi;
        lam_hi *= 4.0;
        if lam_hi > 1e300 {
            return Err(Error::Solver {
                context: "bandwidth price search failed to restore feasibility".to_string(),
            });
        }
    }
    for _ in 0..PRICE_BISECTIONS {
        if lam_hi - lam_lo <= 1e-12 * lam_hi.max(1.0) {
            break;
        }
        let mid = 0.5 * (lam_lo + lam_hi);
        let trial = betas_at(mid, &mut evals);
        let total: f64 = trial.iter().sum();
        if total <= 1.0 {
            lam_hi = mid;
            feasible = trial;
            if 1.0 - total < 1e-12 {
                break;
            }
        } else {
            lam_lo = mid;
        }
    }
    Ok((feasible, evals))
}

fn check_start(betas: &[f64], num_devices: usize) -> Result<()> {
    if betas.len() != num_devices {
        return Err(Error::LengthMismatch {
            left_name: "warm start",
            left: betas.len(),
            right_name: "devices",
            right: num_devices,
        });
    }
    for (device, &beta) in betas.iter().enumerate() {
        if !(beta >= BETA_FLOOR - 1e-12 && beta <= BETA_CEIL + 1e-12) {
            return Err(Error::Domain {
                name: "warm-start bandwidth share",
                value: beta,
                expected: "within the allowed per-device share range",
            });
        }
        let _ = device;
    }
    let total: f64 = betas.iter().sum();
    if total > 1.0 + 1e-12 {
        return Err(Error::Domain {
            name: "warm-start bandwidth total",
            value: total,
            expected: "at most the full band",
        });
    }
    Ok(())
}

fn check_alphas(alphas: &[f64], num_devices: usize) -> Result<()> {
    if alphas.len() != num_devices {
        return Err(Error::LengthMismatch {
            left_name: "power shares",
            left: alphas.len(),
            right_name: "devices",
            right: num_devices,
        });
    }
    for &alpha in alphas {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::Domain {
                name: "sign power share",
                value: alpha,
                expected: "in (0, 1] for the bandwidth step",
            });
        }
    }
    Ok(())
}

/// Optimises the bandwidth shares at fixed power splits by successive convex
/// approximation, warm-started from `state`.  Returns the best iterate found.
pub fn optimize_bandwidth_sca(
    coeffs: &[GCoefficients],
    alphas: &[f64],
    channel: &ChannelParams,
    state: &[f64],
) -> Result<Vec<f64>> {
    Ok(optimize_bandwidth_sca_detailed(coeffs, alphas, channel, state)?.beta)
}

pub(crate) fn optimize_bandwidth_sca_detailed(
    coeffs: &[GCoefficients],
    alphas: &[f64],
    channel: &ChannelParams,
    state: &[f64],
) -> Result<BandwidthStep> {
    validate_problem(coeffs, channel)?;
    check_alphas(alphas, coeffs.len())?;
    check_start(state, coeffs.len())?;
    let links: Vec<LinkConstants> = (0..coeffs.len())
        .map(|device| LinkConstants::new(channel, device))
        .collect();
    let mut beta: Vec<f64> = state
        .iter()
        .map(|&share| share.clamp(BETA_FLOOR, BETA_CEIL))
        .collect();
    let mut objective = total_objective(coeffs, channel, alphas, &beta)?;
    if !objective.is_finite() {
        return Err(Error::Solver {
            context: format!(
                "bandwidth step started from an iterate with objective {objective}; the \
                 surrogate needs a finite linearisation point"
            ),
        });
    }
    let mut inner_iterations = 0u32;
    for _ in 0..OUTER_CAP {
        let surrogates: Vec<Surrogate> = coeffs
            .iter()
            .zip(alphas)
            .zip(&beta)
            .zip(&links)
            .map(|(((&c, &alpha), &b0), link)| Surrogate::new(c, alpha, b0, link))
            .collect::<Result<_>>()?;
        let (candidate, evals) = solve_surrogate(&surrogates, &links)?;
        inner_iterations += evals;
        let candidate_objective = total_objective(coeffs, channel, alphas, &candidate)?;
        if cfg!(debug_assertions) {
            // The whole scheme rests on the surrogate lying above the true
            // penalty, so in debug builds verify it at the point we move to.
            let model: f64 = surrogates
                .iter()
                .zip(&candidate)
                .zip(&links)
                .map(|((surrogate, &b), link)| surrogate.value(b, link))
                .sum();
            debug_assert!(
                model >= candidate_objective - 1e-7 * (1.0 + candidate_objective.abs()),
                "surrogate {model} fell below the penalty {candidate_objective}"
            );
        }
        let movement = beta
            .iter()
            .zip(&candidate)
            .map(|(old, new)| (old - new).abs())
            .fold(0.0f64, f64::max);
        if !(candidate_objective <= objective + 1e-9 * (1.0 + objective.abs())) {
            if movement <= 1e-9 {
                // The surrogate minimiser is the current iterate up to noise.
                break;
            }
            return Err(Error::Solver {
                context: format!(
                    "bandwidth surrogate step raised the objective from {objective} to \
                     {candidate_objective}"
                ),
            });
        }
        let improvement = objective - candidate_objective;
        beta = candidate;
        objective = candidate_objective;
        if improvement <= 1e-10 * (1.0 + objective.abs()) {
            break;
        }
    }
    Ok(BandwidthStep {
        beta,
        inner_iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocator::random_instance;
    use crate::bound::g_from_exponents;

    fn g_true(
        coeffs: &GCoefficients,
        alpha: f64,
        beta: f64,
        link: &LinkConstants,
    ) -> f64 {
        g_from_exponents(coeffs, link.h_s(beta), link.h_v(beta), alpha)
    }

    #[test]
    fn surrogate_touches_the_penalty_at_the_linearisation_point() {
        for seed in 0..12 {
            let (coeffs, channel) = random_instance(3, seed);
            for device in 0..3 {
                let link = LinkConstants::new(&channel, device);
                for &alpha in &[0.2, 0.5, 0.9, 1.0] {
                    for &beta0 in &[0.05, 0.2, 0.6] {
                        let truth = g_true(&coeffs[device], alpha, beta0, &link);
                        if !truth.is_finite() {
                            continue;
                        }
                        let surrogate =
                            Surrogate::new(coeffs[device], alpha, beta0, &link).unwrap();
                        let gap = surrogate.value(beta0, &link) - truth;
                        assert!(
                            gap.abs() <= 1e-9 * (1.0 + truth.abs()),
                            "seed {seed} device {device} alpha {alpha} beta {beta0}: gap {gap}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn surrogate_majorises_the_penalty_away_from_the_point() {
        for seed in 0..12 {
            let (coeffs, channel) = random_instance(2, 100 + seed);
            for device in 0..2 {
                let link = LinkConstants::new(&channel, device);
                for &alpha in &[0.3, 0.7] {
                    for &beta0 in &[0.1, 0.4] {
                        let truth0 = g_true(&coeffs[device], alpha, beta0, &link);
                        if !truth0.is_finite() {
                            continue;
                        }
                        let surrogate =
                            Surrogate::new(coeffs[device], alpha, beta0, &link).unwrap();
                        for step in 1..=40 {
                            let beta = BETA_FLOOR
                                + (BETA_CEIL - BETA_FLOOR) * f64::from(step) / 41.0;
                            let truth = g_true(&coeffs[device], alpha, beta, &link);
                            let majorant = surrogate.value(beta, &link);
                            if truth.is_finite() && majorant.is_finite() {
                                assert!(
                                    majorant >= truth - 1e-8 * (1.0 + truth.abs()),
                                    "seed {seed} device {device} beta {beta}: \
                                     majorant {majorant} fell below {truth}"
                                );
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn surrogate_slope_matches_finite_differences() {
        for seed in 0..8 {
            let (coeffs, channel) = random_instance(2, 200 + seed);
            let link = LinkConstants::new(&channel, 0);
            let surrogate = Surrogate::new(coeffs[0], 0.6, 0.3, &link).unwrap();
            for &beta in &[0.08, 0.25, 0.5, 0.8] {
                let h = 1e-6 * beta;
                let forward = surrogate.value(beta + h, &link);
                let backward = surrogate.value(beta - h, &link);
                if !(forward.is_finite() && backward.is_finite()) {
                    continue;
                }
                let numeric = (forward - backward) / (2.0 * h);
                let analytic = surrogate.slope(beta, &link);
                let scale = 1.0 + numeric.abs().max(analytic.abs());
                assert!(
                    (numeric - analytic).abs() <= 2e-5 * scale,
                    "seed {seed} beta {beta}: slope {analytic} vs numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn single_device_takes_the_largest_allowed_share() {
        let (coeffs, channel) = random_instance(1, 7);
        let step =
            optimize_bandwidth_sca_detailed(&coeffs, &[0.5], &channel, &[0.5]).unwrap();
        // More bandwidth always helps a lone device, so the solver should
        // push to the top of the allowed range.
        assert!(
            step.beta[0] >= BETA_CEIL - 1e-6,
            "lone device settled at {}",
            step.beta[0]
        );
    }

    #[test]
    fn identical_devices_split_the_band_evenly() {
        let (mut coeffs, mut channel) = random_instance(4, 11);
        let template = coeffs[0];
        let distance = channel.distances_m[0];
        let power = channel.tx_power_w[0];
        for device in 0..4 {
            coeffs[device] = template;
            channel.distances_m[device] = distance;
            channel.tx_power_w[device] = power;
        }
        let alphas = [0.6; 4];
        let start = [0.2; 4];
        let beta = optimize_bandwidth_sca(&coeffs, &alphas, &channel, &start).unwrap();
        for pair in beta.windows(2) {
            assert!(
                (pair[0] - pair[1]).abs() <= 1e-6,
                "identical devices diverged: {beta:?}"
            );
        }
        let total: f64 = beta.iter().sum();
        assert!(total <= 1.0 + 1e-9, "allocation overflows the band: {total}");
    }

    #[test]
    fn returned_shares_satisfy_the_budget_and_box() {
        for seed in 0..10 {
            let (coeffs, channel) = random_instance(5, 300 + seed);
            let alphas = vec![0.5; 5];
            let start = vec![0.19; 5];
            let beta = optimize_bandwidth_sca(&coeffs, &alphas, &channel, &start).unwrap();
            let total: f64 = beta.iter().sum();
            assert!(total <= 1.0 + 1e-9, "seed {seed}: total {total}");
            for &share in &beta {
                assert!(
                    (BETA_FLOOR..=BETA_CEIL).contains(&share),
                    "seed {seed}: share {share} escaped the box"
                );
            }
        }
    }

    #[test]
    fn descent_holds_against_the_warm_start() {
        for seed in 0..10 {
            let (coeffs, channel) = random_instance(4, 400 + seed);
            let alphas = vec![0.55; 4];
            let start = vec![0.24; 4];
            let before = total_objective(&coeffs, &channel, &alphas, &start).unwrap();
            if !before.is_finite() {
                continue;
            }
            let beta = optimize_bandwidth_sca(&coeffs, &alphas, &channel, &start).unwrap();
            let after = total_objective(&coeffs, &channel, &alphas, &beta).unwrap();
            assert!(
                after <= before + 1e-10 * (1.0 + before.abs()),
                "seed {seed}: objective rose from {before} to {after}"
            );
        }
    }

    #[test]
    fn tight_budgets_activate_the_price() {
        // Force contention: many devices, all wanting bandwidth.
        let (coeffs, channel) = random_instance(8, 17);
        let alphas = vec![0.5; 8];
        let start = vec![0.12; 8];
        let beta = optimize_bandwidth_sca(&coeffs, &alphas, &channel, &start).unwrap();
        let total: f64 = beta.iter().sum();
        assert!(
            total > 0.9 && total <= 1.0 + 1e-9,
            "contended instance left bandwidth unused: {total}"
        );
    }

    #[test]
    fn infeasible_warm_starts_are_rejected() {
        let (coeffs, channel) = random_instance(2, 5);
        let alphas = [0.5, 0.5];
        let over_budget = [0.7, 0.7];
        assert!(matches!(
            optimize_bandwidth_sca(&coeffs, &alphas, &channel, &over_budget),
            Err(Error::Domain { .. })
        ));
        let outside_box = [0.0, 0.5];
        assert!(matches!(
            optimize_bandwidth_sca(&coeffs, &alphas, &channel, &outside_box),
            Err(Error::Domain { .. })
        ));
        let wrong_len = [0.5];
        assert!(matches!(
            optimize_bandwidth_sca(&coeffs, &alphas, &channel, &wrong_len),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn zero_power_share_is_rejected() {
        let (coeffs, channel) = random_instance(2, 5);
        assert!(matches!(
            optimize_bandwidth_sca(&coeffs, &[0.0, 0.5], &channel, &[0.3, 0.3]),
            Err(Error::Domain { .. })
        ));
    }

    #[test]
    fn final_iterate_is_a_fixed_point_of_the_surrogate() {
        // At convergence, re-linearising and re-solving should stay put:
        // the tangent pieces coincide with the true exponents there.
        for seed in 0..6 {
            let (coeffs, channel) = random_instance(3, 500 + seed);
            let alphas = vec![0.5; 3];
            let start = vec![0.3; 3];
            let beta = match optimize_bandwidth_sca(&coeffs, &alphas, &channel, &start) {
                Ok(beta) => beta,
                Err(_) => continue,
            };
            let links: Vec<LinkConstants> =
                (0..3).map(|d| LinkConstants::new(&channel, d)).collect();
            for device in 0..3 {
                let truth = g_true(&coeffs[device], alphas[device], beta[device], &links[device]);
                if !truth.is_finite() {
                    continue;
                }
                let surrogate =
                    Surrogate::new(coeffs[device], alphas[device], beta[device], &links[device])
                        .unwrap();
                let gap = surrogate.value(beta[device], &links[device]) - truth;
                assert!(
                    gap.abs() <= 1e-6 * (1.0 + truth.abs()),
                    "seed {seed} device {device}: tangency gap {gap}"
                );
            }
        }
    }
}
