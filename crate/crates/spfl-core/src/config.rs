//! Experiment description: federation size, channel budget, workload shape,
//! and the sweep grid.
//!
//! A config stores quantities in the units an experimenter writes them in
//! (dBm, Hz, seconds) and converts to linear watts exactly once, when the
//! [`ChannelParams`] for a cell is built.  Device distances are not part of
//! the config: placement is drawn per device from the geometry stream of the
//! seed, so the same seed always lays out the same cell regardless of which
//! sweep point or repetition is being run.

use crate::aggregation::CompensationKind;
use crate::allocator::BandwidthMethod;
use crate::channel::ChannelParams;
use crate::error::{Error, Result};
use crate::learner::{BaselineKind, ModelKind, PartitionScheme};
use crate::stream;
use crate::transport::DeliveryMode;

use rand::Rng;

/// Which scalar the experiment sweeps over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    /// Per-device transmit power in dBm.
    Power,
    /// Uplink deadline per attempt, in seconds.
    Latency,
    /// Federation size; values must be positive integers.
    Devices,
    /// Magnitude quantization bits; values must be integers in `[1, 24]`.
    Bits,
    /// Dirichlet concentration of the partition.
    Dirichlet,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Power => "power",
            SweepAxis::Latency => "latency",
            SweepAxis::Devices => "devices",
            SweepAxis::Bits => "bits",
            SweepAxis::Dirichlet => "dirichlet",
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        match text {
            "power" => Some(SweepAxis::Power),
            "latency" => Some(SweepAxis::Latency),
            "devices" => Some(SweepAxis::Devices),
            "bits" => Some(SweepAxis::Bits),
            "dirichlet" => Some(SweepAxis::Dirichlet),
            _ => None,
        }
    }
}

/// Convert a dBm quantity to linear watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Everything needed to reproduce one experiment, sweep included.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Devices in the federation.
    pub num_devices: usize,
    /// Training rounds per repetition.
    pub rounds: usize,
    /// Monte-Carlo repetitions per (strategy, sweep value) cell.
    pub repetitions: usize,
    pub strategies: Vec<BaselineKind>,
    pub compensation: CompensationKind,
    /// Extra sign-packet attempts allowed per round.
    pub retransmit_limit: u32,
    pub bandwidth_method: BandwidthMethod,
    pub delivery: DeliveryMode,
    /// Relative stall tolerance of the allocation alternation.
    pub allocator_tolerance: f64,

    /// Total uplink bandwidth in Hz.
    pub bandwidth_hz: f64,
    /// Noise power spectral density in dBm per Hz.
    pub noise_psd_dbm_per_hz: f64,
    /// Per-device transmit power in dBm.
    pub tx_power_dbm: f64,
    pub pathloss_exponent: f64,
    /// Uplink deadline per attempt, in seconds.
    pub latency_s: f64,
    /// Magnitude quantization bits per coordinate.
    pub quant_bits: u32,
    /// Bits spent encoding the two range endpoints.
    pub range_bits: u32,
    /// Devices are placed uniformly over the annulus between these radii.
    pub cell_radius_m: f64,
    pub cell_exclusion_m: f64,

    pub learning_rate: f64,
    pub model: ModelKind,

    pub num_samples: usize,
    pub test_samples: usize,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub class_separation: f64,
    pub partition: PartitionScheme,

    pub sweep: SweepAxis,
    pub sweep_values: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            num_devices: 20,
            rounds: 60,
            repetitions: 5,
            strategies: vec![
                BaselineKind::Spfl,
                BaselineKind::ErrorFree,
                BaselineKind::Scheduling { fraction: 0.75 },
                BaselineKind::Dds,
                BaselineKind::OneBit,
            ],
            compensation: CompensationKind::PreviousGlobalModulus,
            retransmit_limit: 0,
            bandwidth_method: BandwidthMethod::Penalty,
            delivery: DeliveryMode::Bernoulli,
            allocator_tolerance: 1e-6,
            bandwidth_hz: 10e6,
            noise_psd_dbm_per_hz: -174.0,
            tx_power_dbm: -4.0,
            pathloss_exponent: 3.0,
            latency_s: 0.5,
            quant_bits: 3,
            range_bits: 64,
            cell_radius_m: 500.0,
            cell_exclusion_m: 50.0,
            learning_rate: 0.05,
            model: ModelKind::Logistic,
            num_samples: 1000,
            test_samples: 400,
            feature_dim: 20,
            num_classes: 10,
            class_separation: 0.8,
            partition: PartitionScheme::Dirichlet { concentration: 0.5 },
            sweep: SweepAxis::Power,
            sweep_values: vec![-4.0],
        }
    }
}

impl ExperimentConfig {
    /// Flat weight count of the configured model.
    pub fn model_dim(&self) -> usize {
        self.model.weight_count(self.feature_dim, self.num_classes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_devices == 0 {
            return Err(Error::Config {
                field: "num_devices".to_string(),
                message: "need at least one device".to_string(),
            });
        }
        if self.rounds == 0 {
            return Err(Error::Config {
                field: "rounds".to_string(),
                message: "need at least one round".to_string(),
            });
        }
        if self.repetitions == 0 {
            return Err(Error::Config {
                field: "repetitions".to_string(),
                message: "need at least one repetition".to_string(),
            });
        }
        if self.strategies.is_empty() {
            return Err(Error::Config {
                field: "strategies".to_string(),
                message: "need at least one strategy".to_string(),
            });
        }
        for (i, a) in self.strategies.iter().enumerate() {
            if let BaselineKind::Scheduling { fraction } = *a {
                if !(fraction.is_finite() && fraction > 0.0 && fraction <= 1.0) {
                    return Err(Error::Config {
                        field: "strategies".to_string(),
                        message: format!("scheduling fraction {fraction} must lie in (0, 1]"),
                    });
                }
            }
            for b in &self.strategies[i + 1..] {
                if a.name() == b.name() {
                    return Err(Error::Config {
                        field: "strategies".to_string(),
                        message: format!("strategy {} listed twice", a.name()),
                    });
                }
            }
        }
        for (field, value) in [
            ("bandwidth_hz", self.bandwidth_hz),
            ("latency_s", self.latency_s),
            ("learning_rate", self.learning_rate),
            ("class_separation", self.class_separation),
            ("pathloss_exponent", self.pathloss_exponent),
            ("allocator_tolerance", self.allocator_tolerance),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Config {
                    field: field.to_string(),
                    message: format!("{value} must be positive and finite"),
                });
            }
        }
        for (field, value) in [
            ("noise_psd_dbm_per_hz", self.noise_psd_dbm_per_hz),
            ("tx_power_dbm", self.tx_power_dbm),
        ] {
            if !value.is_finite() {
                return Err(Error::Config {
                    field: field.to_string(),
                    message: format!("{value} must be finite"),
                });
            }
        }
        if self.quant_bits == 0 || self.quant_bits > 24 {
            return Err(Error::Config {
                field: "quant_bits".to_string(),
                message: format!("{} must lie in [1, 24]", self.quant_bits),
            });
        }
        if self.range_bits == 0 {
            return Err(Error::Config {
                field: "range_bits".to_string(),
                message: "range encoding needs at least one bit".to_string(),
            });
        }
        if !(self.cell_exclusion_m > 0.0
            && self.cell_exclusion_m < self.cell_radius_m
            && self.cell_radius_m.is_finite())
        {
            return Err(Error::Config {
                field: "cell_radius_m".to_string(),
                message: format!(
                    "need 0 < exclusion < radius; got {} and {}",
                    self.cell_exclusion_m, self.cell_radius_m
                ),
            });
        }
        if self.feature_dim == 0 || self.num_classes < 2 {
            return Err(Error::Config {
                field: "feature_dim".to_string(),
                message: "need feature_dim > 0 and at least two classes".to_string(),
            });
        }
        if let ModelKind::Mlp { hidden } = self.model {
            if hidden == 0 {
                return Err(Error::Config {
                    field: "hidden".to_string(),
                    message: "the hidden layer needs at least one unit".to_string(),
                });
            }
        }
        if self.test_samples == 0 {
            return Err(Error::Config {
                field: "test_samples".to_string(),
                message: "need at least one test sample".to_string(),
            });
        }
        if let PartitionScheme::Dirichlet { concentration } = self.partition {
            if !(concentration.is_finite() && concentration > 0.0) {
                return Err(Error::Config {
                    field: "dirichlet_concentration".to_string(),
                    message: format!("{concentration} must be positive and finite"),
                });
            }
        }
        if self.sweep_values.is_empty() {
            return Err(Error::Config {
                field: "sweep_values".to_string(),
                message: "the sweep grid must not be empty".to_string(),
            });
        }
        for &value in &self.sweep_values {
            self.check_sweep_value(value)?;
        }
        // Shard divisibility must hold for every federation size the sweep
        // will instantiate.
        let mut sizes = vec![self.num_devices];
        if self.sweep == SweepAxis::Devices {
            sizes = self.sweep_values.iter().map(|&v| v as usize).collect();
        }
        for k in sizes {
            if self.num_samples == 0 || self.num_samples % k != 0 {
                return Err(Error::Config {
                    field: "num_samples".to_string(),
                    message: format!(
                        "{} samples cannot form equal shards across {k} devices",
                        self.num_samples
                    ),
                });
            }
        }
        Ok(())
    }

    fn check_sweep_value(&self, value: f64) -> Result<()> {
        let fail = |message: String| -> Result<()> {
            Err(Error::Config {
                field: "sweep_values".to_string(),
                message,
            })
        };
        if !value.is_finite() {
            return fail(format!("sweep value {value} must be finite"));
        }
        match self.sweep {
            SweepAxis::Power => Ok(()),
            SweepAxis::Latency => {
                if value > 0.0 {
                    Ok(())
                } else {
                    fail(format!("latency {value} must be positive"))
                }
            }
            SweepAxis::Devices => {
                if value >= 1.0 && value.fract() == 0.0 {
                    Ok(())
                } else {
                    fail(format!("device count {value} must be a positive integer"))
                }
            }
            SweepAxis::Bits => {
                if (1.0..=24.0).contains(&value) && value.fract() == 0.0 {
                    Ok(())
                } else {
                    fail(format!("bit width {value} must be an integer in [1, 24]"))
                }
            }
            SweepAxis::Dirichlet => {
                if value > 0.0 {
                    Ok(())
                } else {
                    fail(format!("concentration {value} must be positive"))
                }
            }
        }
    }

    /// The config of one sweep cell: the swept field collapsed to `value`,
    /// everything else untouched.
    pub fn at_sweep_value(&self, value: f64) -> Result<ExperimentConfig> {
        self.check_sweep_value(value)?;
        let mut cell = self.clone();
        cell.sweep_values = vec![value];
        match self.sweep {
            SweepAxis::Power => cell.tx_power_dbm = value,
            SweepAxis::Latency => cell.latency_s = value,
            SweepAxis::Devices => cell.num_devices = value as usize,
            SweepAxis::Bits => cell.quant_bits = value as u32,
            SweepAxis::Dirichlet => {
                cell.partition = PartitionScheme::Dirichlet {
                    concentration: value,
                }
            }
        }
        Ok(cell)
    }

    /// Distance of one device from the server, drawn uniformly over the
    /// cell annulus.  Addressed per device, so adding devices to a sweep
    /// leaves existing placements untouched.
    pub fn device_distance_m(&self, device: usize) -> f64 {
        let mut rng = stream::stream(self.seed, &[stream::GEOMETRY, device as u64]);
        let u: f64 = rng.gen_range(0.0..1.0);
        let inner = self.cell_exclusion_m * self.cell_exclusion_m;
        let outer = self.cell_radius_m * self.cell_radius_m;
        (inner + (outer - inner) * u).sqrt()
    }

    /// Materialize the wireless parameters of this config's federation.
    pub fn channel(&self) -> Result<ChannelParams> {
        self.validate()?;
        let distances = (0..self.num_devices)
            .map(|device| self.device_distance_m(device))
            .collect();
        let params = ChannelParams {
            bandwidth_total_hz: self.bandwidth_hz,
            noise_psd_w_per_hz: dbm_to_watts(self.noise_psd_dbm_per_hz),
            pathloss_exponent: self.pathloss_exponent,
            distances_m: distances,
            tx_power_w: vec![dbm_to_watts(self.tx_power_dbm); self.num_devices],
            latency_s: self.latency_s,
            model_dim: self.model_dim(),
            quant_bits: self.quant_bits,
            range_bits: self.range_bits,
        };
        params.validate()?;
        Ok(params)
    }
}
