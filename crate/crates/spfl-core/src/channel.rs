//! Uplink transmission model: per-device outage probabilities in closed form,
//! small-scale fading draws, and instantaneous capacities.
//!
//! Each round, a device splits its payload into a sign packet of `model_dim`
//! bits and a modulus packet of `model_dim * quant_bits + range_bits` bits,
//! both of which must arrive within the round latency. The device's bandwidth
//! share `beta` is split evenly between the two packets and its power is split
//! by `alpha` (sign) and `1 - alpha` (modulus). Under Rayleigh fading the
//! probability that a packet's channel capacity covers its required rate has a
//! closed form: for a packet of rate `R` over band `W` with power share `phi`,
//!
//! ```text
//! success = exp( (W * N0 / (2 * phi * P * d^-zeta)) * (1 - 2^(R/W)) )
//! ```
//!
//! [`h_s`] and [`h_v`] are the power-share-free exponents of the sign and
//! modulus packets; [`q_sign`] and [`p_modulus`] divide them by the power
//! share and exponentiate.
//!
//! # Fading convention
//!
//! The fading coefficient has independent zero-mean Gaussian real and
//! imaginary parts of unit variance each, so its squared magnitude is
//! exponential with mean two. [`FadingDraw::gain_sq`] stores the draw
//! normalized to unit mean; capacity evaluation rescales by two, and the
//! closed forms above fold the same factor into their denominators. The two
//! conventions must stay paired — Monte-Carlo outage frequencies match the
//! closed forms only when they are.

use rand::Rng;
use rand_distr::Exp1;

use crate::error::{Error, Result};
use crate::stream;

/// Static description of the uplink: cell geometry, radio parameters, and the
/// payload sizes implied by the model dimension and quantizer resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelParams {
    /// Total uplink bandwidth shared by all devices, in hertz.
    pub bandwidth_total_hz: f64,
    /// One-sided noise power spectral density, in watts per hertz.
    pub noise_psd_w_per_hz: f64,
    /// Path-loss exponent applied to the device distance.
    pub pathloss_exponent: f64,
    /// Distance of each device from the base station, in meters.
    pub distances_m: Vec<f64>,
    /// Transmit power budget of each device, in watts.
    pub tx_power_w: Vec<f64>,
    /// Duration of one communication round, in seconds.
    pub latency_s: f64,
    /// Number of model coordinates (= sign bits per round).
    pub model_dim: usize,
    /// Bits per quantized modulus.
    pub quant_bits: u32,
    /// Bits spent encoding the per-device quantization range.
    pub range_bits: u32,
}

impl ChannelParams {
    pub fn num_devices(&self) -> usize {
        self.distances_m.len()
    }

    /// Rate of the sign packet in bits per second.
    pub fn sign_rate_bps(&self) -> f64 {
        self.model_dim as f64 / self.latency_s
    }

    /// Rate of the modulus packet in bits per second.
    pub fn modulus_rate_bps(&self) -> f64 {
        (self.model_dim as f64 * f64::from(self.quant_bits) + f64::from(self.range_bits))
            / self.latency_s
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, value: f64| -> Result<()> {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Domain {
                    name,
                    value,
                    expected: "a positive finite number",
                });
            }
            Ok(())
        };
        positive("bandwidth_total_hz", self.bandwidth_total_hz)?;
        positive("noise_psd_w_per_hz", self.noise_psd_w_per_hz)?;
        positive("pathloss_exponent", self.pathloss_exponent)?;
        positive("latency_s", self.latency_s)?;
        if self.distances_m.is_empty() {
            return Err(Error::Inconsistent {
                context: "distances_m must list at least one device".into(),
            });
        }
        if self.distances_m.len() != self.tx_power_w.len() {
            return Err(Error::LengthMismatch {
                left_name: "distances_m",
                left: self.distances_m.len(),
                right_name: "tx_power_w",
                right: self.tx_power_w.len(),
            });
        }
        for &d in &self.distances_m {
            positive("distances_m[..]", d)?;
        }
        for &p in &self.tx_power_w {
            positive("tx_power_w[..]", p)?;
        }
        if self.model_dim == 0 {
            return Err(Error::Inconsistent {
                context: "model_dim must be at least 1".into(),
            });
        }
        if self.quant_bits == 0 || self.quant_bits > 24 {
            return Err(Error::Domain {
                name: "quant_bits",
                value: f64::from(self.quant_bits),
                expected: "an integer in [1, 24]",
            });
        }
        Ok(())
    }

    fn check_device(&self, device: usize) -> Result<()> {
        if device >= self.num_devices() {
            return Err(Error::DeviceIndex {
                index: device,
                count: self.num_devices(),
            });
        }
        Ok(())
    }

    /// Mean received signal power scale `P * d^-zeta` for one device.
    fn rx_power_w(&self, device: usize) -> f64 {
        self.tx_power_w[device] * self.distances_m[device].powf(-self.pathloss_exponent)
    }
}

/// One round's small-scale fading realization for every device.
///
/// `gain_sq` holds the squared channel magnitude normalized to unit mean
/// (exponentially distributed); see the module docs for the factor-of-two
/// convention used by capacity evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct FadingDraw {
    pub gain_sq: Vec<f64>,
    pub round: u64,
}

/// Draw the unit-mean squared fading gain for one `(round, device, attempt)`
/// address. Attempt 0 is the first transmission; retransmissions draw fresh
/// gains at higher attempt indices.
pub fn fading_gain(seed: u64, round: u64, device: usize, attempt: u32) -> f64 {
    let mut rng = stream::stream(
        seed,
        &[stream::FADING, round, device as u64, u64::from(attempt)],
    );
    rng.sample(Exp1)
}

/// Draw the first-attempt fading gains of all devices for one round.
///
/// Draws are addressed per device, so the realization for device `k` does not
/// depend on how many devices exist — growing the federation leaves the
/// shared prefix identical.
pub fn draw_fading(seed: u64, round: u64, num_devices: usize) -> FadingDraw {
    let gain_sq = (0..num_devices)
        .map(|device| fading_gain(seed, round, device, 0))
        .collect();
    FadingDraw { gain_sq, round }
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta.is_finite() && beta > 0.0 && beta < 1.0) {
        return Err(Error::Domain {
            name: "beta",
            value: beta,
            expected: "the open interval (0, 1)",
        });
    }
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha.is_finite() && (0.0..=1.0).contains(&alpha)) {
        return Err(Error::Domain {
            name: "alpha",
            value: alpha,
            expected: "the closed interval [0, 1]",
        });
    }
    Ok(())
}

/// Outage exponent of a packet at `rate_bps` over `band_hz` at full power:
/// `(W * N0 / (2 * P * d^-zeta)) * (1 - 2^(R/W))`, always `<= 0`.
fn packet_exponent(band_hz: f64, rate_bps: f64, params: &ChannelParams, device: usize) -> f64 {
    let scale = band_hz * params.noise_psd_w_per_hz / (2.0 * params.rx_power_w(device));
    scale * (1.0 - (rate_bps / band_hz).exp2())
}

/// Sign-packet outage exponent for a device holding bandwidth share `beta`.
///
/// The sign packet occupies half the device's band, `beta * B / 2`.
pub fn h_s(beta: f64, params: &ChannelParams, device: usize) -> Result<f64> {
    check_beta(beta)?;
    params.check_device(device)?;
    let band = beta * params.bandwidth_total_hz / 2.0;
    Ok(packet_exponent(band, params.sign_rate_bps(), params, device))
}

/// Modulus-packet outage exponent for a device holding bandwidth share `beta`.
pub fn h_v(beta: f64, params: &ChannelParams, device: usize) -> Result<f64> {
    check_beta(beta)?;
    params.check_device(device)?;
    let band = beta * params.bandwidth_total_hz / 2.0;
    Ok(packet_exponent(band, params.modulus_rate_bps(), params, device))
}

fn exponent_derivative(beta: f64, rate_bps: f64, params: &ChannelParams, device: usize) -> f64 {
    // With kappa = B*N0 / (4 * P * d^-zeta) and c = 2R/B, the exponent is
    // kappa * beta * (1 - 2^(c/beta)); differentiate in beta.
    let kappa =
        params.bandwidth_total_hz * params.noise_psd_w_per_hz / (4.0 * params.rx_power_w(device));
    let c = 2.0 * rate_bps / params.bandwidth_total_hz;
    let pow = (c / beta).exp2();
    kappa * (1.0 - pow) + kappa * (c * std::f64::consts::LN_2 / beta) * pow
}

/// Derivative of [`h_s`] with respect to `beta`.
pub fn h_s_prime(beta: f64, params: &ChannelParams, device: usize) -> Result<f64> {
    check_beta(beta)?;
    params.check_device(device)?;
    Ok(exponent_derivative(beta, params.sign_rate_bps(), params, device))
}

/// Derivative of [`h_v`] with respect to `beta`.
pub fn h_v_prime(beta: f64, params: &ChannelParams, device: usize) -> Result<f64> {
    check_beta(beta)?;
    params.check_device(device)?;
    Ok(exponent_derivative(beta, params.modulus_rate_bps(), params, device))
}

/// Probability that the sign packet is decoded, `exp(h_s / alpha)`.
///
/// `alpha = 0` allocates no power to the sign packet and yields exactly 0.
pub fn q_sign(alpha: f64, beta: f64, params: &ChannelParams, device: usize) -> Result<f64> {
    check_alpha(alpha)?;
    let exponent = h_s(beta, params, device)?;
    if alpha == 0.0 {
        return Ok(0.0);
    }
    Ok((exponent / alpha).exp())
}

/// Probability that the modulus packet is decoded, `exp(h_v / (1 - alpha))`.
///
/// `alpha = 1` allocates no power to the modulus packet and yields exactly 0.
pub fn p_modulus(alpha: f64, beta: f64, params: &ChannelParams, device: usize) -> Result<f64> {
    check_alpha(alpha)?;
    let exponent = h_v(beta, params, device)?;
    if alpha == 1.0 {
        return Ok(0.0);
    }
    Ok((exponent / (1.0 - alpha)).exp())
}

/// Success probability of a single packet of `rate_bps` sent over `band_hz`
/// with a fraction `power_share` of the device's power budget.
///
/// This generalizes [`q_sign`] / [`p_modulus`] to arbitrary band/power splits
/// and is what the single-packet baselines use.
pub fn packet_success(
    band_hz: f64,
    power_share: f64,
    rate_bps: f64,
    params: &ChannelParams,
    device: usize,
) -> Result<f64> {
    params.check_device(device)?;
    if !(band_hz.is_finite() && band_hz > 0.0) {
        return Err(Error::Domain {
            name: "band_hz",
            value: band_hz,
            expected: "a positive finite bandwidth",
        });
    }
    if !(power_share.is_finite() && (0.0..=1.0).contains(&power_share)) {
        return Err(Error::Domain {
            name: "power_share",
            value: power_share,
            expected: "the closed interval [0, 1]",
        });
    }
    if power_share == 0.0 {
        return Ok(0.0);
    }
    Ok((packet_exponent(band_hz, rate_bps, params, device) / power_share).exp())
}

/// Instantaneous capacity of a link over `band_hz` with `power_share` of the
/// device's power, given the unit-mean squared fading gain of this round.
pub fn packet_capacity_bps(
    band_hz: f64,
    power_share: f64,
    gain_sq: f64,
    params: &ChannelParams,
    device: usize,
) -> f64 {
    // gain_sq is normalized to unit mean; the physical squared magnitude
    // averages two (see module docs).
    let snr = 2.0 * gain_sq * power_share * params.rx_power_w(device)
        / (band_hz * params.noise_psd_w_per_hz);
    band_hz * (1.0 + snr).log2()
}

/// Capacity seen by the sign packet (half the device band, `alpha` power).
pub fn sign_capacity_bps(
    alpha: f64,
    beta: f64,
    gain_sq: f64,
    params: &ChannelParams,
    device: usize,
) -> f64 {
    let band = beta * params.bandwidth_total_hz / 2.0;
    packet_capacity_bps(band, alpha, gain_sq, params, device)
}

/// Capacity seen by the modulus packet (half the band, `1 - alpha` power).
pub fn modulus_capacity_bps(
    alpha: f64,
    beta: f64,
    gain_sq: f64,
    params: &ChannelParams,
    device: usize,
) -> f64 {
    let band = beta * params.bandwidth_total_hz / 2.0;
    packet_capacity_bps(band, 1.0 - alpha, gain_sq, params, device)
}
