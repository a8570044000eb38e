//! One-step descent bound on the global loss.
//!
//! For a round with local gradients `g_k`, compensation profile `gbar`, and
//! per-device allocations `(alpha_k, beta_k)`, the expected loss decrement
//! `E[F(w_{n+1})] - F(w_n)` is bounded above by
//!
//! ```text
//! -(eta/2)||g||^2 + (eta/2)||gbar||^2
//!   + (eta/K)   * sum_k ( ||g_k||^2 + eps_k^2 - 2*upsilon_k )
//!   + (eta/2K)  * sum_k G_k(alpha_k, beta_k)
//! ```
//!
//! where each `G_k` collects the channel-dependent terms. `G` has two
//! algebraically equal faces. In delivery probabilities `p` (modulus) and `q`
//! (sign),
//!
//! ```text
//! G = A*p + B*p^2 + C*p/q + D/q
//! ```
//!
//! and substituting the closed forms `p = exp(h_v/(1-alpha))`,
//! `1/q = exp(-h_s/alpha)` gives a four-exponential form evaluated directly
//! from the outage exponents. The two evaluations agreeing is the module's
//! central cross-check; the allocator minimizes the exponent form.
//!
//! `q = 0` (no power on the sign packet) makes the bound diverge; it is
//! reported as a `+inf` sentinel rather than an error so optimizers can treat
//! such points as infeasible.

use crate::channel::{self, ChannelParams};
use crate::error::{Error, Result};

/// Everything the bound needs about one round, gathered by the learner.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundInputs {
    /// Per-device `||g_k||^2`.
    pub grad_norm_sq: Vec<f64>,
    /// Per-device alignment `sum_i |g_{k,i}| * gbar_i`.
    pub upsilon: Vec<f64>,
    /// Per-device gap `||g_k - g||^2`.
    pub epsilon_sq: Vec<f64>,
    /// Per-device quantization variance bound.
    pub delta_sq: Vec<f64>,
    /// `||g||^2` of the global gradient.
    pub global_grad_norm_sq: f64,
    /// Per-device `||gbar_k||^2` of the compensation profile. A shared global
    /// profile repeats the same value; per-device histories give each device
    /// its own norm, which keeps every `b_k` nonnegative by Cauchy-Schwarz
    /// against that device's `upsilon_k`.
    pub comp_norm_sq: Vec<f64>,
    /// Learning rate.
    pub eta: f64,
    /// Smoothness constant of the loss.
    pub lipschitz: f64,
    pub num_devices: usize,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        let k = self.num_devices;
        if k == 0 {
            return Err(Error::Inconsistent {
                context: "bound needs at least one device".into(),
            });
        }
        for (name, v) in [
            ("grad_norm_sq", &self.grad_norm_sq),
            ("upsilon", &self.upsilon),
            ("epsilon_sq", &self.epsilon_sq),
            ("delta_sq", &self.delta_sq),
            ("comp_norm_sq", &self.comp_norm_sq),
        ] {
            if v.len() != k {
                return Err(Error::LengthMismatch {
                    left_name: name,
                    left: v.len(),
                    right_name: "num_devices",
                    right: k,
                });
            }
            if v.iter().any(|&x| !(x.is_finite() && x >= 0.0)) {
                return Err(Error::NonFinite {
                    context: "per-device bound inputs must be finite and nonnegative",
                });
            }
        }
        let x = self.global_grad_norm_sq;
        if !(x.is_finite() && x >= 0.0) {
            return Err(Error::Domain {
                name: "global_grad_norm_sq",
                value: x,
                expected: "a nonnegative finite number",
            });
        }
        for (name, x) in [("eta", self.eta), ("lipschitz", self.lipschitz)] {
            if !(x.is_finite() && x > 0.0) {
                return Err(Error::Domain {
                    name,
                    value: x,
                    expected: "a positive finite number",
                });
            }
        }
        Ok(())
    }
}

/// Coefficients of one device's `G` term.
///
/// `b` and `d` are nonnegative by construction (`b` by Cauchy-Schwarz, `d` as
/// a scaled squared norm); `a` and `c` carry either sign.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GCoefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl GCoefficients {
    /// Assemble coefficients from one device's round statistics.
    pub fn from_parts(
        grad_norm_sq: f64,
        comp_norm_sq: f64,
        upsilon: f64,
        delta_sq: f64,
        l_eta: f64,
    ) -> Self {
        GCoefficients {
            a: 2.0 * (-2.0 * grad_norm_sq - comp_norm_sq + 3.0 * upsilon),
            b: grad_norm_sq + comp_norm_sq - 2.0 * upsilon,
            c: l_eta * (grad_norm_sq - comp_norm_sq + delta_sq),
            d: l_eta * comp_norm_sq,
        }
    }
}

/// Coefficients of device `device`'s `G` term.
pub fn g_coefficients(inputs: &BoundInputs, device: usize) -> Result<GCoefficients> {
    inputs.validate()?;
    if device >= inputs.num_devices {
        return Err(Error::DeviceIndex {
            index: device,
            count: inputs.num_devices,
        });
    }
    Ok(GCoefficients::from_parts(
        inputs.grad_norm_sq[device],
        inputs.comp_norm_sq[device],
        inputs.upsilon[device],
        inputs.delta_sq[device],
        inputs.lipschitz * inputs.eta,
    ))
}

/// Multiply a coefficient by an exponential factor, treating a zero
/// coefficient as an exact zero even against an infinite factor.
fn scaled(coeff: f64, factor: f64) -> f64 {
    if coeff == 0.0 {
        0.0
    } else {
        coeff * factor
    }
}

/// Evaluate `G` from the two outage exponents.
///
/// Written as `A e^u + B e^{2u} + (C e^u + D) e^v` with `u = h_v/(1-alpha)`
/// and `v = -h_s/alpha`. The factored third term matters: `C e^u + D` is
/// mathematically nonnegative (it equals `l_eta * (p*(||g||^2 + delta^2) +
/// (1-p)*||gbar||^2)` at `p = e^u`), so the form never produces the
/// `-inf + inf` that evaluating `C e^{u+v}` and `D e^v` separately can.
pub(crate) fn g_from_exponents(coeffs: &GCoefficients, h_s: f64, h_v: f64, alpha: f64) -> f64 {
    if alpha <= 0.0 {
        // No sign power: q = 0 and the bound diverges.
        return f64::INFINITY;
    }
    let u = if alpha >= 1.0 {
        f64::NEG_INFINITY
    } else {
        h_v / (1.0 - alpha)
    };
    let v = -h_s / alpha;
    let e_u = u.exp();
    let tail = scaled(coeffs.c, e_u) + coeffs.d;
    scaled(coeffs.a, e_u) + scaled(coeffs.b, (2.0 * u).exp()) + scaled(tail, v.exp())
}

/// `G` evaluated through the channel's closed-form exponents.
pub fn g_value(
    coeffs: &GCoefficients,
    alpha: f64,
    beta: f64,
    channel: &ChannelParams,
    device: usize,
) -> Result<f64> {
    if !(alpha.is_finite() && (0.0..=1.0).contains(&alpha)) {
        return Err(Error::Domain {
            name: "alpha",
            value: alpha,
            expected: "the closed interval [0, 1]",
        });
    }
    let h_s = channel::h_s(beta, channel, device)?;
    let h_v = channel::h_v(beta, channel, device)?;
    Ok(g_from_exponents(coeffs, h_s, h_v, alpha))
}

/// `G` evaluated from delivery probabilities: `A p + B p^2 + C p/q + D/q`.
///
/// This is the independent face of the cross-check: it never touches the
/// outage exponents. `q = 0` returns the `+inf` sentinel.
pub fn g_probability_form(coeffs: &GCoefficients, p: f64, q: f64) -> f64 {
    if q <= 0.0 {
        return f64::INFINITY;
    }
    let inv_q = 1.0 / q;
    scaled(coeffs.a, p) + scaled(coeffs.b, p * p) + scaled(coeffs.c, p * inv_q)
        + scaled(coeffs.d, inv_q)
}

/// Evaluate the full right-hand side of the one-step bound.
///
/// `+inf` from any device's `G` propagates to the result.
pub fn one_step_bound(
    inputs: &BoundInputs,
    alphas: &[f64],
    betas: &[f64],
    channel: &ChannelParams,
) -> Result<f64> {
    inputs.validate()?;
    let k = inputs.num_devices;
    if alphas.len() != k || betas.len() != k {
        return Err(Error::LengthMismatch {
            left_name: "allocations",
            left: alphas.len().min(betas.len()),
            right_name: "num_devices",
            right: k,
        });
    }
    if channel.num_devices() != k {
        return Err(Error::LengthMismatch {
            left_name: "channel devices",
            left: channel.num_devices(),
            right_name: "num_devices",
            right: k,
        });
    }

    let eta = inputs.eta;
    let kf = k as f64;
    let mean_comp = inputs.comp_norm_sq.iter().sum::<f64>() / kf;
    let mut total = -(eta / 2.0) * inputs.global_grad_norm_sq + (eta / 2.0) * mean_comp;
    for device in 0..k {
        total += (eta / kf)
            * (inputs.grad_norm_sq[device] + inputs.epsilon_sq[device]
                - 2.0 * inputs.upsilon[device]);
    }
    for device in 0..k {
        let coeffs = GCoefficients::from_parts(
            inputs.grad_norm_sq[device],
            inputs.comp_norm_sq[device],
            inputs.upsilon[device],
            inputs.delta_sq[device],
            inputs.lipschitz * inputs.eta,
        );
        let g = g_value(&coeffs, alphas[device], betas[device], channel, device)?;
        total += (eta / (2.0 * kf)) * g;
    }
    Ok(total)
}

/// Exact per-device gaps `||g_k - g||^2` — the tightest admissible choice of
/// the gap bound, available here because the simulator sees every gradient.
pub fn epsilon_oracle(local_gradients: &[Vec<f64>], global_gradient: &[f64]) -> Result<Vec<f64>> {
    local_gradients
        .iter()
        .map(|g| {
            if g.len() != global_gradient.len() {
                return Err(Error::LengthMismatch {
                    left_name: "local gradient",
                    left: g.len(),
                    right_name: "global gradient",
                    right: global_gradient.len(),
                });
            }
            Ok(g.iter()
                .zip(global_gradient)
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::upsilon;
    use proptest::prelude::*;

    fn example_coeffs() -> GCoefficients {
        GCoefficients::from_parts(4.0, 1.0, 2.0, 0.5, 1.0)
    }

    /// Weak-link single-device channel whose success probabilities sit
    /// mid-range, so both exponential terms matter.
    fn harsh_channel() -> ChannelParams {
        ChannelParams {
            bandwidth_total_hz: 1.0e7,
            noise_psd_w_per_hz: 10f64.powf(-20.4),
            pathloss_exponent: 3.0,
            distances_m: vec![100.0],
            tx_power_w: vec![10f64.powf(-3.7) * 3.0e-6],
            latency_s: 0.5,
            model_dim: 60_000,
            quant_bits: 3,
            range_bits: 64,
        }
    }

    fn rel_close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1e-300)
    }

    #[test]
    fn coefficient_substitution() {
        let c = example_coeffs();
        assert_eq!(c.a, -6.0);
        assert_eq!(c.b, 1.0);
        assert_eq!(c.c, 3.5);
        assert_eq!(c.d, 1.0);
    }

    #[test]
    fn zero_compensation_coefficients() {
        let c = GCoefficients::from_parts(2.5, 0.0, 0.0, 0.3, 2.0);
        assert_eq!(c.a, -4.0 * 2.5);
        assert_eq!(c.b, 2.5);
        assert_eq!(c.c, 2.0 * (2.5 + 0.3));
        assert_eq!(c.d, 0.0);
    }

    #[test]
    fn perfect_channel_limit() {
        // p = q = 1 collapses G to A + B + C + D = (-3 + L*eta)||g||^2
        // - ||gbar||^2 + 4*upsilon + L*eta*delta^2.
        let g = g_probability_form(&example_coeffs(), 1.0, 1.0);
        assert!(rel_close(g, -0.5, 1e-14), "G = {g}");
    }

    #[test]
    fn modulus_blackout_limit() {
        // p = 0, q = 1: only the compensation variance survives.
        let g = g_probability_form(&example_coeffs(), 0.0, 1.0);
        assert!(rel_close(g, 1.0, 1e-14), "G = {g}");
    }

    #[test]
    fn sign_blackout_is_infinite() {
        assert_eq!(
            g_probability_form(&example_coeffs(), 0.5, 0.0),
            f64::INFINITY
        );
        let ch = harsh_channel();
        let g = g_value(&example_coeffs(), 0.0, 0.2, &ch, 0).unwrap();
        assert_eq!(g, f64::INFINITY);
    }

    #[test]
    fn full_sign_power_is_finite() {
        // alpha = 1 starves the modulus packet (p = 0) but G stays finite.
        let ch = harsh_channel();
        let g = g_value(&example_coeffs(), 1.0, 0.2, &ch, 0).unwrap();
        let hs = crate::channel::h_s(0.2, &ch, 0).unwrap();
        let expected = 1.0 * (-hs).exp();
        assert!(rel_close(g, expected, 1e-13), "G = {g} vs {expected}");
    }

    #[test]
    fn dual_formula_agreement() {
        let ch = harsh_channel();
        let coeff_sets = [
            example_coeffs(),
            GCoefficients::from_parts(1.0, 2.0, 0.3, 0.05, 1.0),
            GCoefficients::from_parts(0.8, 0.0, 0.0, 0.2, 3.0),
            GCoefficients::from_parts(5.0, 4.9, 4.6, 0.01, 0.5),
        ];
        for coeffs in &coeff_sets {
            for i in 1..20 {
                let alpha = i as f64 / 20.0;
                for &beta in &[0.02, 0.05, 0.1, 0.3, 0.8] {
                    let direct = g_value(coeffs, alpha, beta, &ch, 0).unwrap();
                    let p = crate::channel::p_modulus(alpha, beta, &ch, 0).unwrap();
                    let q = crate::channel::q_sign(alpha, beta, &ch, 0).unwrap();
                    let via_prob = g_probability_form(coeffs, p, q);
                    assert!(
                        rel_close(direct, via_prob, 1e-12),
                        "alpha={alpha} beta={beta}: {direct:e} vs {via_prob:e}"
                    );
                }
            }
        }
    }

    #[test]
    fn bound_is_nonincreasing_in_q() {
        let coeff_sets = [
            example_coeffs(),
            GCoefficients::from_parts(1.0, 4.0, 0.2, 0.3, 1.0),
            GCoefficients::from_parts(2.0, 0.5, 1.5, 0.0, 2.0),
        ];
        for coeffs in &coeff_sets {
            for i in 0..=10 {
                let p = i as f64 / 10.0;
                let mut last = f64::INFINITY;
                for j in 1..=40 {
                    let q = j as f64 / 40.0;
                    let g = g_probability_form(coeffs, p, q);
                    assert!(
                        g <= last + 1e-12,
                        "G increased in q at p={p}, q={q}"
                    );
                    last = g;
                }
            }
        }
    }

    fn single_device_inputs() -> BoundInputs {
        // gbar = g: upsilon = ||g||^2 and the perfect-channel bound telescopes
        // to -(eta/2)||g||^2.
        BoundInputs {
            grad_norm_sq: vec![4.0],
            upsilon: vec![4.0],
            epsilon_sq: vec![0.0],
            delta_sq: vec![0.0],
            global_grad_norm_sq: 4.0,
            comp_norm_sq: vec![4.0],
            eta: 0.05,
            lipschitz: 20.0,
            num_devices: 1,
        }
    }

    #[test]
    fn perfect_round_bound_telescopes() {
        let mut ch = harsh_channel();
        // Enough power that both success probabilities round to exactly 1.
        ch.tx_power_w = vec![1.0e6];
        let inputs = single_device_inputs();
        let bound = one_step_bound(&inputs, &[0.5], &[0.5], &ch).unwrap();
        let expected = -(0.05 / 2.0) * 4.0;
        assert!(rel_close(bound, expected, 1e-12), "bound = {bound}");
    }

    #[test]
    fn all_zero_round_has_zero_bound() {
        let mut ch = harsh_channel();
        ch.tx_power_w = vec![1.0e6];
        let inputs = BoundInputs {
            grad_norm_sq: vec![0.0],
            upsilon: vec![0.0],
            epsilon_sq: vec![0.0],
            delta_sq: vec![0.0],
            global_grad_norm_sq: 0.0,
            comp_norm_sq: vec![0.0],
            eta: 0.05,
            lipschitz: 20.0,
            num_devices: 1,
        };
        let bound = one_step_bound(&inputs, &[0.5], &[0.5], &ch).unwrap();
        assert_eq!(bound, 0.0);
    }

    #[test]
    fn sentinel_propagates_through_bound() {
        let ch = harsh_channel();
        let inputs = single_device_inputs();
        let bound = one_step_bound(&inputs, &[0.0], &[0.5], &ch).unwrap();
        assert_eq!(bound, f64::INFINITY);
    }

    #[test]
    fn bound_validates_inputs() {
        let ch = harsh_channel();
        let mut inputs = single_device_inputs();
        inputs.grad_norm_sq = vec![-1.0];
        assert!(one_step_bound(&inputs, &[0.5], &[0.5], &ch).is_err());
        let mut inputs = single_device_inputs();
        inputs.eta = 0.0;
        assert!(one_step_bound(&inputs, &[0.5], &[0.5], &ch).is_err());
        let inputs = single_device_inputs();
        assert!(one_step_bound(&inputs, &[0.5, 0.5], &[0.5, 0.5], &ch).is_err());
    }

    #[test]
    fn epsilon_oracle_examples() {
        let g = vec![0.0, 1.0];
        let locals = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let eps = epsilon_oracle(&locals, &g).unwrap();
        assert_eq!(eps, vec![0.0, 2.0]);
        assert!(epsilon_oracle(&[vec![1.0]], &g).is_err());
    }

    proptest! {
        /// B >= 0 for coefficients built from actual vectors (Cauchy-Schwarz),
        /// and D >= 0 always.
        #[test]
        fn b_and_d_nonnegative(
            g in proptest::collection::vec(-3.0f64..3.0, 1..12),
            comp_raw in proptest::collection::vec(0.0f64..3.0, 1..12),
            l_eta in 0.1f64..30.0,
        ) {
            let n = g.len().min(comp_raw.len());
            let g = &g[..n];
            let comp = &comp_raw[..n];
            let g2: f64 = g.iter().map(|x| x * x).sum();
            let c2: f64 = comp.iter().map(|x| x * x).sum();
            let ups = upsilon(g, comp).unwrap();
            let coeffs = GCoefficients::from_parts(g2, c2, ups, 0.1, l_eta);
            prop_assert!(coeffs.b >= -1e-12 * (g2 + c2).max(1.0));
            prop_assert!(coeffs.d >= 0.0);
        }

        /// The probability form is finite and well-defined on the open square.
        #[test]
        fn probability_form_finite_interior(
            p in 0.0f64..=1.0,
            q in 0.01f64..=1.0,
            g2 in 0.0f64..10.0,
            c2 in 0.0f64..10.0,
            ratio in 0.0f64..1.0,
            d2 in 0.0f64..2.0,
        ) {
            let ups = ratio * (g2 * c2).sqrt();
            let coeffs = GCoefficients::from_parts(g2, c2, ups, d2, 1.0);
            let g = g_probability_form(&coeffs, p, q);
            prop_assert!(g.is_finite());
        }
    }
}
