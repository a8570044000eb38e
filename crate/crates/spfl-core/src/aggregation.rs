//! Inverse-probability aggregation and compensation state.
//!
//! Each contributing device's reconstruction is divided by its sign delivery
//! probability before averaging. Dividing by `q` exactly cancels the expected
//! loss from rejected devices, so the aggregate stays an unbiased estimate of
//! the ideal (fully delivered) update no matter how unreliable the links are.
//! Devices whose sign packet was lost contribute the zero vector.
//!
//! The compensation vector — the magnitude profile paired with a device's
//! signs when its modulus packet is lost — is configurable: all zeros, the
//! modulus of the previous round's global estimate, or the modulus of the
//! device's own previous local gradient.


use crate::error::{Error, Result};
use crate::quantizer::quantize;
use crate::stream;
use crate::transport::{reconstruct, transmit};

/// Which magnitude profile substitutes for a lost modulus packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompensationKind {
    /// Contribute nothing for a sign-only device.
    Zero,
    /// Reuse `|g_hat|` from the previous round (shared by all devices).
    PreviousGlobalModulus,
    /// Reuse `|g_k|` from the device's own previous round.
    PreviousLocalModulus,
}

impl CompensationKind {
    pub fn name(self) -> &'static str {
        match self {
            CompensationKind::Zero => "zero",
            CompensationKind::PreviousGlobalModulus => "previous_global_modulus",
            CompensationKind::PreviousLocalModulus => "previous_local_modulus",
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        match text {
            "zero" => Some(CompensationKind::Zero),
            "previous_global_modulus" => Some(CompensationKind::PreviousGlobalModulus),
            "previous_local_modulus" => Some(CompensationKind::PreviousLocalModulus),
            _ => None,
        }
    }
}

/// Compensation state carried across rounds.
///
/// Call [`CompensationPolicy::record_round`] once per round, after the
/// round's compensation vectors have been consumed, so round `n` always sees
/// round `n - 1`'s history. Before any history exists every kind produces the
/// zero vector: inventing a magnitude for the very first round would bias the
/// sign-reuse branch.
#[derive(Debug, Clone)]
pub struct CompensationPolicy {
    kind: CompensationKind,
    global_modulus: Option<Vec<f64>>,
    local_modulus: Vec<Option<Vec<f64>>>,
}

impl CompensationPolicy {
    pub fn new(kind: CompensationKind, num_devices: usize) -> Self {
        CompensationPolicy {
            kind,
            global_modulus: None,
            local_modulus: vec![None; num_devices],
        }
    }

    pub fn kind(&self) -> CompensationKind {
        self.kind
    }

    /// Store this round's history for use by the next round.
    pub fn record_round(&mut self, g_hat: &[f64], local_gradients: &[Vec<f64>]) -> Result<()> {
        if local_gradients.len() != self.local_modulus.len() {
            return Err(Error::LengthMismatch {
                left_name: "local_gradients",
                left: local_gradients.len(),
                right_name: "policy devices",
                right: self.local_modulus.len(),
            });
        }
        self.global_modulus = Some(g_hat.iter().map(|v| v.abs()).collect());
        for (slot, gradient) in self.local_modulus.iter_mut().zip(local_gradients) {
            *slot = Some(gradient.iter().map(|v| v.abs()).collect());
        }
        Ok(())
    }
}

/// The compensation magnitudes a device would pair with its signs this round.
pub fn compensation_vector(
    policy: &CompensationPolicy,
    device: usize,
    model_dim: usize,
) -> Result<Vec<f64>> {
    let stored = match policy.kind {
        CompensationKind::Zero => None,
        CompensationKind::PreviousGlobalModulus => policy.global_modulus.as_ref(),
        CompensationKind::PreviousLocalModulus => {
            if device >= policy.local_modulus.len() {
                return Err(Error::DeviceIndex {
                    index: device,
                    count: policy.local_modulus.len(),
                });
            }
            policy.local_modulus[device].as_ref()
        }
    };
    match stored {
        None => Ok(vec![0.0; model_dim]),
        Some(v) if v.len() == model_dim => Ok(v.clone()),
        Some(v) => Err(Error::LengthMismatch {
            left_name: "stored compensation",
            left: v.len(),
            right_name: "model_dim",
            right: model_dim,
        }),
    }
}

/// The aggregated global estimate with its audit trail.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalEstimate {
    /// `(1/K) * sum_k present_k / q_k`.
    pub g_hat: Vec<f64>,
    /// Indices of devices whose sign packet arrived.
    pub contributing: Vec<usize>,
    /// Each device's addend before the `1/K` scaling (zero when absent).
    pub per_device_terms: Vec<Vec<f64>>,
}

/// Average the per-device reconstructions with inverse-probability weights.
///
/// The sum runs in device-index order and is scaled by `1/K` once at the end,
/// so summing `per_device_terms` the same way reproduces `g_hat` bit-exactly.
pub fn aggregate(
    reconstructions: &[Option<Vec<f64>>],
    q_values: &[f64],
    num_devices: usize,
    model_dim: usize,
) -> Result<GlobalEstimate> {
    if reconstructions.len() != num_devices {
        return Err(Error::LengthMismatch {
            left_name: "reconstructions",
            left: reconstructions.len(),
            right_name: "num_devices",
            right: num_devices,
        });
    }
    if q_values.len() != num_devices {
        return Err(Error::LengthMismatch {
            left_name: "q_values",
            left: q_values.len(),
            right_name: "num_devices",
            right: num_devices,
        });
    }

    let mut per_device_terms = Vec::with_capacity(num_devices);
    let mut contributing = Vec::new();
    for (device, (recon, &q)) in reconstructions.iter().zip(q_values).enumerate() {
        match recon {
            None => per_device_terms.push(vec![0.0; model_dim]),
            Some(v) => {
                if v.len() != model_dim {
                    return Err(Error::LengthMismatch {
                        left_name: "reconstruction",
                        left: v.len(),
                        right_name: "model_dim",
                        right: model_dim,
                    });
                }
                if q == 0.0 {
                    return Err(Error::Inconsistent {
                        context: format!(
                            "device {device} delivered against a zero success probability"
                        ),
                    });
                }
                if !(q.is_finite() && q > 0.0 && q <= 1.0) {
                    return Err(Error::Domain {
                        name: "q_values[..]",
                        value: q,
                        expected: "the half-open interval (0, 1]",
                    });
                }
                per_device_terms.push(v.iter().map(|x| x / q).collect());
                contributing.push(device);
            }
        }
    }

    let scale = num_devices as f64;
    let mut g_hat = vec![0.0; model_dim];
    for term in &per_device_terms {
        for (acc, &x) in g_hat.iter_mut().zip(term) {
            *acc += x;
        }
    }
    for x in &mut g_hat {
        *x /= scale;
    }

    Ok(GlobalEstimate {
        g_hat,
        contributing,
        per_device_terms,
    })
}

/// Gradient-descent step `w - eta * g_hat`.
pub fn update_model(w: &[f64], g_hat: &[f64], eta: f64) -> Result<Vec<f64>> {
    if w.len() != g_hat.len() {
        return Err(Error::LengthMismatch {
            left_name: "w",
            left: w.len(),
            right_name: "g_hat",
            right: g_hat.len(),
        });
    }
    if !(eta.is_finite() && eta > 0.0) {
        return Err(Error::Domain {
            name: "eta",
            value: eta,
            expected: "a positive finite learning rate",
        });
    }
    Ok(w.iter().zip(g_hat).map(|(&wi, &gi)| wi - eta * gi).collect())
}

/// Alignment `sum_i |g_i| * comp_i` between a gradient's magnitudes and a
/// compensation profile; nonnegative whenever the profile is.
pub fn upsilon(gradient: &[f64], compensation: &[f64]) -> Result<f64> {
    if gradient.len() != compensation.len() {
        return Err(Error::LengthMismatch {
            left_name: "gradient",
            left: gradient.len(),
            right_name: "compensation",
            right: compensation.len(),
        });
    }
    if compensation.iter().any(|&c| !(c.is_finite() && c >= 0.0)) {
        return Err(Error::Inconsistent {
            context: "compensation must be elementwise nonnegative and finite".into(),
        });
    }
    Ok(gradient
        .iter()
        .zip(compensation)
        .map(|(&g, &c)| g.abs() * c)
        .sum())
}

/// Monte-Carlo check that the full pipeline — quantize, transmit,
/// reconstruct, aggregate — has the advertised mean.
///
/// `gradients` are the per-device true gradients, which are also the analytic
/// means of their quantizations; the analytic mean of the aggregate is then
/// `(1/K) * sum_k [ p_k * g_k + (1 - p_k) * s(g_k) (.) compensation ]`.
/// Returns the largest coordinate deviation between the empirical mean over
/// `trials` runs and that analytic mean.
pub fn unbiasedness_check(
    gradients: &[Vec<f64>],
    compensation: &[f64],
    q_values: &[f64],
    p_values: &[f64],
    bits: u32,
    trials: u32,
    seed: u64,
) -> Result<f64> {
    let num_devices = gradients.len();
    if num_devices == 0 || trials == 0 {
        return Err(Error::Inconsistent {
            context: "unbiasedness check needs at least one device and one trial".into(),
        });
    }
    if q_values.len() != num_devices || p_values.len() != num_devices {
        return Err(Error::LengthMismatch {
            left_name: "q_values/p_values",
            left: q_values.len().min(p_values.len()),
            right_name: "gradients",
            right: num_devices,
        });
    }
    let model_dim = compensation.len();

    let mut analytic = vec![0.0; model_dim];
    for (gradient, &p) in gradients.iter().zip(p_values) {
        if gradient.len() != model_dim {
            return Err(Error::LengthMismatch {
                left_name: "gradient",
                left: gradient.len(),
                right_name: "compensation",
                right: model_dim,
            });
        }
        for (acc, (&g, &c)) in analytic.iter_mut().zip(gradient.iter().zip(compensation)) {
            let sign = if g < 0.0 { -1.0 } else { 1.0 };
            *acc += (p * g + (1.0 - p) * sign * c) / num_devices as f64;
        }
    }

    let mut empirical = vec![0.0; model_dim];
    for trial in 0..trials {
        let mut reconstructions = Vec::with_capacity(num_devices);
        for (device, gradient) in gradients.iter().enumerate() {
            let mut quant_rng =
                stream::stream(seed, &[stream::MONTE_CARLO, u64::from(trial), device as u64, 0]);
            let mut link_rng =
                stream::stream(seed, &[stream::MONTE_CARLO, u64::from(trial), device as u64, 1]);
            let quantized = quantize(gradient, bits, &mut quant_rng)?;
            let outcome = transmit(q_values[device], p_values[device], &mut link_rng, 0)?;
            reconstructions.push(reconstruct(&outcome, &quantized, compensation)?);
        }
        let estimate = aggregate(&reconstructions, q_values, num_devices, model_dim)?;
        for (acc, &x) in empirical.iter_mut().zip(&estimate.g_hat) {
            *acc += x / f64::from(trials);
        }
    }

    Ok(empirical
        .iter()
        .zip(&analytic)
        .map(|(&e, &a)| (e - a).abs())
        .fold(0.0, f64::max))
}
