//! Per-round packet delivery and gradient reconstruction.
//!
//! Both packets of a device are CRC-gated: a corrupted packet is discarded,
//! never silently consumed. The sign packet may be retried up to
//! `retransmit_limit` times within the round; the modulus packet gets one
//! shot. What the server reconstructs depends on which packets survived:
//!
//! * sign lost — the device is absent from this round entirely;
//! * sign and modulus delivered — the full decoded quantized gradient;
//! * sign delivered, modulus lost — the device's signs paired with a
//!   compensation magnitude vector supplied by the server.

use rand::Rng;

use crate::error::{Error, Result};
use crate::quantizer::{decode, QuantizedGradient};

/// How packet delivery is decided each round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeliveryMode {
    /// Draw success directly from the closed-form probabilities.
    Bernoulli,
    /// Draw a fading realization and compare capacities against rates.
    Physical,
}

/// Outcome of one device's uplink attempt in one round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PacketOutcome {
    pub sign_ok: bool,
    pub modulus_ok: bool,
    /// Extra sign-packet attempts consumed (0 when the first try landed or
    /// no retries were allowed).
    pub retransmissions_used: u32,
    /// Effective sign delivery probability across all allowed attempts,
    /// `1 - (1 - q)^(retransmit_limit + 1)`. Aggregation divides by this, so
    /// retransmissions keep the estimate unbiased rather than skewing it.
    pub q_used: f64,
    /// Modulus delivery probability (single attempt).
    pub p_used: f64,
}

fn check_probability(name: &'static str, value: f64) -> Result<()> {
    if !(value.is_finite() && (0.0..=1.0).contains(&value)) {
        return Err(Error::Domain {
            name,
            value,
            expected: "the closed interval [0, 1]",
        });
    }
    Ok(())
}

/// Simulate one device's round: Bernoulli sign attempts (with retries) and a
/// single Bernoulli modulus attempt.
pub fn transmit(
    q: f64,
    p: f64,
    rng: &mut impl Rng,
    retransmit_limit: u32,
) -> Result<PacketOutcome> {
    check_probability("q", q)?;
    check_probability("p", p)?;

    let mut retransmissions_used = 0;
    let mut sign_ok = rng.gen::<f64>() < q;
    while !sign_ok && retransmissions_used < retransmit_limit {
        retransmissions_used += 1;
        sign_ok = rng.gen::<f64>() < q;
    }
    let modulus_ok = rng.gen::<f64>() < p;

    let q_used = 1.0 - (1.0 - q).powi(retransmit_limit as i32 + 1);
    Ok(PacketOutcome {
        sign_ok,
        modulus_ok,
        retransmissions_used,
        q_used,
        p_used: p,
    })
}

/// Build a [`PacketOutcome`] from externally decided deliveries (used by the
/// physical delivery mode, where successes come from capacity thresholds).
pub fn outcome_from_deliveries(
    sign_ok: bool,
    modulus_ok: bool,
    retransmissions_used: u32,
    q: f64,
    p: f64,
    retransmit_limit: u32,
) -> Result<PacketOutcome> {
    check_probability("q", q)?;
    check_probability("p", p)?;
    let q_used = 1.0 - (1.0 - q).powi(retransmit_limit as i32 + 1);
    Ok(PacketOutcome {
        sign_ok,
        modulus_ok,
        retransmissions_used,
        q_used,
        p_used: p,
    })
}

/// Reconstruct what the server learned from one device this round.
///
/// Returns `None` when the sign packet was lost. Otherwise the result pairs
/// the delivered signs with either the decoded moduli or, when the modulus
/// packet was lost, the `compensation` magnitudes.
pub fn reconstruct(
    outcome: &PacketOutcome,
    q: &QuantizedGradient,
    compensation: &[f64],
) -> Result<Option<Vec<f64>>> {
    if compensation.len() != q.len() {
        return Err(Error::LengthMismatch {
            left_name: "compensation",
            left: compensation.len(),
            right_name: "quantized gradient",
            right: q.len(),
        });
    }
    if !outcome.sign_ok {
        return Ok(None);
    }
    if outcome.modulus_ok {
        return Ok(Some(decode(q)?));
    }
    Ok(Some(
        q.signs
            .iter()
            .zip(compensation)
            .map(|(&s, &c)| f64::from(s) * c)
            .collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantizer::quantize;
    use crate::stream;

    fn rng(tag: u64) -> rand_chacha::ChaCha8Rng {
        stream::stream(17, &[stream::TRANSPORT, tag])
    }

    #[test]
    fn degenerate_probabilities_are_exact() {
        let mut r = rng(0);
        for _ in 0..200 {
            let sure = transmit(1.0, 1.0, &mut r, 0).unwrap();
            assert!(sure.sign_ok && sure.modulus_ok);
            assert_eq!(sure.q_used, 1.0);
            let never = transmit(0.0, 0.0, &mut r, 0).unwrap();
            assert!(!never.sign_ok && !never.modulus_ok);
            assert_eq!(never.q_used, 0.0);
        }
    }

    #[test]
    fn empirical_rates_match_probabilities() {
        let trials = 100_000;
        let mut r = rng(1);
        let (mut signs, mut mods) = (0u32, 0u32);
        for _ in 0..trials {
            let o = transmit(0.7, 0.4, &mut r, 0).unwrap();
            signs += u32::from(o.sign_ok);
            mods += u32::from(o.modulus_ok);
        }
        let n = trials as f64;
        let sigma_q = (0.7f64 * 0.3 / n).sqrt();
        let sigma_p = (0.4f64 * 0.6 / n).sqrt();
        assert!((signs as f64 / n - 0.7).abs() < 4.0 * sigma_q);
        assert!((mods as f64 / n - 0.4).abs() < 4.0 * sigma_p);
    }

    #[test]
    fn retransmissions_boost_effective_delivery() {
        let trials = 100_000;
        let mut r = rng(2);
        let mut hits = 0u32;
        let mut used = 0u64;
        for _ in 0..trials {
            let o = transmit(0.5, 1.0, &mut r, 2).unwrap();
            assert_eq!(o.q_used, 1.0 - 0.5f64.powi(3));
            hits += u32::from(o.sign_ok);
            used += u64::from(o.retransmissions_used);
            assert!(o.retransmissions_used <= 2);
        }
        let n = trials as f64;
        let expect = 0.875;
        let sigma = (expect * (1.0 - expect) / n).sqrt();
        assert!((hits as f64 / n - expect).abs() < 4.0 * sigma);
        // Expected attempts before stopping: q=1/2 with cap 2 extra tries
        // gives E[retransmissions] = 1/2 + 1/4 = 0.75.
        let mean_used = used as f64 / n;
        assert!((mean_used - 0.75).abs() < 0.02, "mean retries {mean_used}");
    }

    #[test]
    fn rejects_out_of_range_probabilities() {
        let mut r = rng(3);
        assert!(transmit(-0.1, 0.5, &mut r, 0).is_err());
        assert!(transmit(0.5, 1.5, &mut r, 0).is_err());
        assert!(transmit(f64::NAN, 0.5, &mut r, 0).is_err());
    }

    #[test]
    fn reconstruct_follows_outcome_cases() {
        let g = vec![0.6, -0.2, 0.9];
        let q = quantize(&g, 3, &mut rng(4)).unwrap();
        let comp = vec![0.5, 0.5, 0.5];

        let full = PacketOutcome {
            sign_ok: true,
            modulus_ok: true,
            retransmissions_used: 0,
            q_used: 1.0,
            p_used: 1.0,
        };
        let got = reconstruct(&full, &q, &comp).unwrap().unwrap();
        assert_eq!(got, decode(&q).unwrap());

        let signs_only = PacketOutcome { modulus_ok: false, ..full };
        let got = reconstruct(&signs_only, &q, &comp).unwrap().unwrap();
        assert_eq!(got, vec![0.5, -0.5, 0.5]);

        let lost = PacketOutcome { sign_ok: false, ..full };
        assert!(reconstruct(&lost, &q, &comp).unwrap().is_none());
    }

    #[test]
    fn reconstruct_checks_lengths() {
        let q = quantize(&[1.0, 2.0], 2, &mut rng(5)).unwrap();
        let outcome = PacketOutcome {
            sign_ok: true,
            modulus_ok: false,
            retransmissions_used: 0,
            q_used: 1.0,
            p_used: 0.0,
        };
        assert!(reconstruct(&outcome, &q, &[0.1]).is_err());
    }
}
