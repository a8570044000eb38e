//! Stochastic gradient quantization.
//!
//! A device transmits each gradient coordinate as a sign bit plus a `bits`-bit
//! code for the magnitude. Codes index `2^bits` evenly spaced knobs spanning
//! the device's own magnitude range `[g_min, g_max]`, and each magnitude
//! rounds to one of its two neighboring knobs with probabilities chosen so the
//! rounding is unbiased. The range endpoints travel in the same packet as the
//! codes (`range_bits` in the transmission model covers them).

use rand::Rng;

use crate::error::{Error, Result};

/// One device's quantized gradient: signs, magnitude codes, and the range the
/// codes index into.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedGradient {
    /// Per-coordinate sign, `+1` or `-1`; zero coordinates carry `+1`.
    pub signs: Vec<i8>,
    /// Per-coordinate knob index in `[0, 2^bits - 1]`.
    pub modulus_codes: Vec<u32>,
    /// Smallest coordinate magnitude of the original gradient.
    pub g_min: f64,
    /// Largest coordinate magnitude of the original gradient.
    pub g_max: f64,
    /// Bits per magnitude code.
    pub bits: u32,
}

impl QuantizedGradient {
    pub fn len(&self) -> usize {
        self.signs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signs.is_empty()
    }
}

/// Upper bound on the quantization error variance (see [`variance_bound`]).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantBound {
    pub delta_sq: f64,
}

/// Quantize a gradient with `bits`-bit stochastic magnitude rounding.
///
/// Each magnitude `|g_i|` lies between two adjacent knobs `c_u <= |g_i| <
/// c_{u+1}` and rounds up with probability `(|g_i| - c_u) / (c_{u+1} - c_u)`,
/// which makes the decoded value unbiased coordinate-wise. A gradient whose
/// magnitudes are all equal (including the all-zero gradient) has a
/// zero-width range and encodes as all-zero codes.
pub fn quantize(gradient: &[f64], bits: u32, rng: &mut impl Rng) -> Result<QuantizedGradient> {
    if bits == 0 || bits > 24 {
        return Err(Error::Domain {
            name: "bits",
            value: f64::from(bits),
            expected: "an integer in [1, 24]",
        });
    }
    if gradient.is_empty() {
        return Err(Error::Inconsistent {
            context: "cannot quantize an empty gradient".into(),
        });
    }
    if gradient.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            context: "quantize gradient",
        });
    }

    let signs: Vec<i8> = gradient
        .iter()
        .map(|&g| if g < 0.0 { -1 } else { 1 })
        .collect();

    let mut g_min = f64::INFINITY;
    let mut g_max = f64::NEG_INFINITY;
    for &g in gradient {
        let a = g.abs();
        g_min = g_min.min(a);
        g_max = g_max.max(a);
    }

    let steps = (1u32 << bits) - 1;
    let range = g_max - g_min;
    let modulus_codes = if range == 0.0 {
        vec![0; gradient.len()]
    } else {
        let width = range / f64::from(steps);
        gradient
            .iter()
            .map(|&g| {
                let t = (g.abs() - g_min) / width;
                let u = t.floor();
                if u >= f64::from(steps) {
                    steps
                } else {
                    let u = u as u32;
                    let knob = g_min + f64::from(u) * width;
                    let up_probability = (g.abs() - knob) / width;
                    u + u32::from(rng.gen::<f64>() < up_probability)
                }
            })
            .collect()
    };

    Ok(QuantizedGradient {
        signs,
        modulus_codes,
        g_min,
        g_max,
        bits,
    })
}

/// Decode a quantized gradient back into a signed vector.
pub fn decode(q: &QuantizedGradient) -> Result<Vec<f64>> {
    if q.bits == 0 || q.bits > 24 {
        return Err(Error::Domain {
            name: "bits",
            value: f64::from(q.bits),
            expected: "an integer in [1, 24]",
        });
    }
    if q.signs.len() != q.modulus_codes.len() {
        return Err(Error::LengthMismatch {
            left_name: "signs",
            left: q.signs.len(),
            right_name: "modulus_codes",
            right: q.modulus_codes.len(),
        });
    }
    let steps = (1u32 << q.bits) - 1;
    let width = (q.g_max - q.g_min) / f64::from(steps);
    q.signs
        .iter()
        .zip(&q.modulus_codes)
        .map(|(&s, &code)| {
            if code > steps {
                return Err(Error::Inconsistent {
                    context: format!("modulus code {code} exceeds {steps} for {} bits", q.bits),
                });
            }
            let magnitude = q.g_min + f64::from(code) * width;
            Ok(f64::from(s) * magnitude)
        })
        .collect()
}

/// Worst-case variance of the decoded gradient around its mean:
/// `model_dim * (g_max - g_min)^2 / (4 * (2^bits - 1))`.
///
/// Each coordinate's rounding variance is at most `width^2 / 4` at the
/// midpoint between knobs; summing over coordinates and substituting
/// `width = (g_max - g_min) / (2^bits - 1)` gives the bound (one knob-width
/// factor is kept unsquared, which is what makes the expression grow with the
/// range rather than the range squared per step).
pub fn variance_bound(q: &QuantizedGradient, model_dim: usize) -> QuantBound {
    let steps = f64::from((1u32 << q.bits) - 1);
    let range = q.g_max - q.g_min;
    QuantBound {
        delta_sq: model_dim as f64 * range * range / (4.0 * steps),
    }
}
