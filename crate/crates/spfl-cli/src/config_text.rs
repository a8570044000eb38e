//! The `key = value` experiment file format.
//!
//! A config file is a flat list of `key = value` lines; `#` starts a comment,
//! blank lines are skipped, and every key is optional — an empty file is the
//! default experiment.  [`serialize_config`] writes the full key set in one
//! canonical order with round-trippable number formatting, so
//! `serialize(parse(serialize(c)))` is the identity and a serialized config
//! is a stable input to the fingerprint hash.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use spfl_core::aggregation::CompensationKind;
use spfl_core::allocator::BandwidthMethod;
use spfl_core::learner::{BaselineKind, ModelKind, PartitionScheme, STRATEGY_NAMES};
use spfl_core::transport::DeliveryMode;
use spfl_core::{ExperimentConfig, SweepAxis};

/// Every recognized key, in the order [`serialize_config`] writes them.
pub const KEYS: [&str; 29] = [
    "seed",
    "num_devices",
    "rounds",
    "repetitions",
    "strategies",
    "compensation",
    "retransmit_limit",
    "bandwidth_method",
    "delivery",
    "allocator_tolerance",
    "bandwidth_hz",
    "noise_psd_dbm_per_hz",
    "tx_power_dbm",
    "pathloss_exponent",
    "latency_s",
    "quant_bits",
    "range_bits",
    "cell_radius_m",
    "cell_exclusion_m",
    "learning_rate",
    "model",
    "num_samples",
    "test_samples",
    "feature_dim",
    "num_classes",
    "class_separation",
    "partition",
    "sweep",
    "sweep_values",
];

/// Read and parse a config file; missing keys fall back to defaults.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config file {}", path.display()))?;
    parse_config(&text).with_context(|| format!("in config file {}", path.display()))
}

/// Parse config text into a validated experiment description.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::default();
    let mut seen: Vec<&str> = Vec::new();
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
        let slot = KEYS
            .iter()
            .find(|&&known| known == key)
            .ok_or_else(|| anyhow!("line {number}: unknown key `{key}`"))?;
        if seen.contains(slot) {
            bail!("line {number}: key `{key}` given twice");
        }
        seen.push(slot);
        apply(&mut config, key, value)
            .with_context(|| format!("line {number}: key `{key}`"))?;
    }
    config.validate()?;
    Ok(config)
}

/// Write a config as canonical text: all keys, fixed order, exact numbers.
pub fn serialize_config(config: &ExperimentConfig) -> String {
    let strategies = config
        .strategies
        .iter()
        .map(strategy_text)
        .collect::<Vec<_>>()
        .join(",");
    let sweep_values = config
        .sweep_values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",");
    let mut out = String::new();
    for key in KEYS {
        let value = match key {
            "seed" => config.seed.to_string(),
            "num_devices" => config.num_devices.to_string(),
            "rounds" => config.rounds.to_string(),
            "repetitions" => config.repetitions.to_string(),
            "strategies" => strategies.clone(),
            "compensation" => config.compensation.name().to_string(),
            "retransmit_limit" => config.retransmit_limit.to_string(),
            "bandwidth_method" => config.bandwidth_method.name().to_string(),
            "delivery" => delivery_text(config.delivery).to_string(),
            "allocator_tolerance" => config.allocator_tolerance.to_string(),
            "bandwidth_hz" => config.bandwidth_hz.to_string(),
            "noise_psd_dbm_per_hz" => config.noise_psd_dbm_per_hz.to_string(),
            "tx_power_dbm" => config.tx_power_dbm.to_string(),
            "pathloss_exponent" => config.pathloss_exponent.to_string(),
            "latency_s" => config.latency_s.to_string(),
            "quant_bits" => config.quant_bits.to_string(),
            "range_bits" => config.range_bits.to_string(),
            "cell_radius_m" => config.cell_radius_m.to_string(),
            "cell_exclusion_m" => config.cell_exclusion_m.to_string(),
            "learning_rate" => config.learning_rate.to_string(),
            "model" => model_text(config.model),
            "num_samples" => config.num_samples.to_string(),
            "test_samples" => config.test_samples.to_string(),
            "feature_dim" => config.feature_dim.to_string(),
            "num_classes" => config.num_classes.to_string(),
            "class_separation" => config.class_separation.to_string(),
            "partition" => partition_text(config.partition),
            "sweep" => config.sweep.name().to_string(),
            "sweep_values" => sweep_values.clone(),
            _ => unreachable!("KEYS and the serializer list the same keys"),
        };
        out.push_str(key);
        out.push_str(" = ");
        out.push_str(&value);
        out.push('\n');
    }
    out
}

fn apply(config: &mut ExperimentConfig, key: &str, value: &str) -> Result<()> {
    match key {
        "seed" => config.seed = int(value)?,
        "num_devices" => config.num_devices = int(value)?,
        "rounds" => config.rounds = int(value)?,
        "repetitions" => config.repetitions = int(value)?,
        "strategies" => config.strategies = parse_strategies(value)?,
        "compensation" => {
            config.compensation = CompensationKind::parse(value).ok_or_else(|| {
                anyhow!("unknown compensation `{value}`; valid: zero, previous_global_modulus, previous_local_modulus")
            })?
        }
        "retransmit_limit" => config.retransmit_limit = int(value)?,
        "bandwidth_method" => {
            config.bandwidth_method = BandwidthMethod::parse(value)
                .ok_or_else(|| anyhow!("unknown bandwidth method `{value}`; valid: sca, penalty"))?
        }
        "delivery" => config.delivery = parse_delivery(value)?,
        "allocator_tolerance" => config.allocator_tolerance = float(value)?,
        "bandwidth_hz" => config.bandwidth_hz = float(value)?,
        "noise_psd_dbm_per_hz" => config.noise_psd_dbm_per_hz = float(value)?,
        "tx_power_dbm" => config.tx_power_dbm = float(value)?,
        "pathloss_exponent" => config.pathloss_exponent = float(value)?,
        "latency_s" => config.latency_s = float(value)?,
        "quant_bits" => config.quant_bits = int(value)?,
        "range_bits" => config.range_bits = int(value)?,
        "cell_radius_m" => config.cell_radius_m = float(value)?,
        "cell_exclusion_m" => config.cell_exclusion_m = float(value)?,
        "learning_rate" => config.learning_rate = float(value)?,
        "model" => config.model = parse_model(value)?,
        "num_samples" => config.num_samples = int(value)?,
        "test_samples" => config.test_samples = int(value)?,
        "feature_dim" => config.feature_dim = int(value)?,
        "num_classes" => config.num_classes = int(value)?,
        "class_separation" => config.class_separation = float(value)?,
        "partition" => config.partition = parse_partition(value)?,
        "sweep" => {
            config.sweep = SweepAxis::parse(value).ok_or_else(|| {
                anyhow!("unknown sweep axis `{value}`; valid: power, latency, devices, bits, dirichlet")
            })?
        }
        "sweep_values" => {
            let mut values = Vec::new();
            for part in value.split(',') {
                values.push(float(part.trim())?);
            }
            config.sweep_values = values;
        }
        _ => unreachable!("apply is only called with keys from KEYS"),
    }
    Ok(())
}

fn int<T: std::str::FromStr>(value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| anyhow!("`{value}` is not a nonnegative integer"))
}

pub(crate) fn float(value: &str) -> Result<f64> {
    value
        .parse()
        .map_err(|_| anyhow!("`{value}` is not a number"))
}

fn parse_strategies(value: &str) -> Result<Vec<BaselineKind>> {
    let mut strategies = Vec::new();
    for part in value.split(',') {
        let part = part.trim();
        let strategy = if let Some(fraction) = part.strip_prefix("scheduling:") {
            BaselineKind::Scheduling {
                fraction: float(fraction)?,
            }
        } else {
            BaselineKind::parse(part).ok_or_else(|| {
                anyhow!(
                    "unknown strategy `{part}`; valid: {}",
                    STRATEGY_NAMES.join(", ")
                )
            })?
        };
        strategies.push(strategy);
    }
    Ok(strategies)
}

fn strategy_text(strategy: &BaselineKind) -> String {
    match strategy {
        BaselineKind::Scheduling { fraction } => format!("scheduling:{fraction}"),
        other => other.name().to_string(),
    }
}

fn parse_delivery(value: &str) -> Result<DeliveryMode> {
    match value {
        "bernoulli" => Ok(DeliveryMode::Bernoulli),
        "physical" => Ok(DeliveryMode::Physical),
        _ => Err(anyhow!(
            "unknown delivery mode `{value}`; valid: bernoulli, physical"
        )),
    }
}

fn delivery_text(delivery: DeliveryMode) -> &'static str {
    match delivery {
        DeliveryMode::Bernoulli => "bernoulli",
        DeliveryMode::Physical => "physical",
    }
}

fn parse_model(value: &str) -> Result<ModelKind> {
    if value == "logistic" {
        return Ok(ModelKind::Logistic);
    }
    if let Some(hidden) = value.strip_prefix("mlp:") {
        return Ok(ModelKind::Mlp {
            hidden: int(hidden)?,
        });
    }
    Err(anyhow!("unknown model `{value}`; valid: logistic, mlp:N"))
}

fn model_text(model: ModelKind) -> String {
    match model {
        ModelKind::Logistic => "logistic".to_string(),
        ModelKind::Mlp { hidden } => format!("mlp:{hidden}"),
    }
}

fn parse_partition(value: &str) -> Result<PartitionScheme> {
    if value == "iid" {
        return Ok(PartitionScheme::Iid);
    }
    if let Some(concentration) = value.strip_prefix("dirichlet:") {
        return Ok(PartitionScheme::Dirichlet {
            concentration: float(concentration)?,
        });
    }
    Err(anyhow!(
        "unknown partition `{value}`; valid: iid, dirichlet:CONCENTRATION"
    ))
}

fn partition_text(partition: PartitionScheme) -> String {
    match partition {
        PartitionScheme::Iid => "iid".to_string(),
        PartitionScheme::Dirichlet { concentration } => format!("dirichlet:{concentration}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn an_empty_file_is_the_default_experiment() {
        let config = parse_config("").unwrap();
        assert_eq!(config, ExperimentConfig::default());
        assert_eq!(config.num_devices, 20);
        assert_eq!(config.bandwidth_hz, 10e6);
        assert_eq!(config.noise_psd_dbm_per_hz, -174.0);
        assert_eq!(config.tx_power_dbm, -4.0);
        assert_eq!(config.quant_bits, 3);
        assert_eq!(config.latency_s, 0.5);
        assert_eq!(config.learning_rate, 0.05);
        assert_eq!(config.pathloss_exponent, 3.0);
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let text = "\n# a comment\nseed = 7   # trailing comment\n\nrounds = 3\n";
        let config = parse_config(text).unwrap();
        assert_eq!(config.seed, 7);
        assert_eq!(config.rounds, 3);
    }

    #[test]
    fn serialization_round_trips_exactly() {
        let mut config = ExperimentConfig::default();
        config.seed = 99;
        config.tx_power_dbm = -16.5;
        config.strategies = vec![
            BaselineKind::Spfl,
            BaselineKind::Scheduling { fraction: 0.6 },
        ];
        config.partition = PartitionScheme::Dirichlet {
            concentration: 0.125,
        };
        config.model = ModelKind::Mlp { hidden: 6 };
        config.sweep = SweepAxis::Bits;
        config.sweep_values = vec![1.0, 3.0, 6.0];
        let text = serialize_config(&config);
        let reparsed = parse_config(&text).unwrap();
        assert_eq!(reparsed, config);
        assert_eq!(serialize_config(&reparsed), text);
    }

    #[test]
    fn every_key_appears_in_the_serialized_form() {
        let text = serialize_config(&ExperimentConfig::default());
        for key in KEYS {
            assert!(
                text.lines().any(|l| l.starts_with(&format!("{key} = "))),
                "missing key {key}"
            );
        }
        assert_eq!(text.lines().count(), KEYS.len());
    }

    #[test]
    fn unknown_keys_and_values_name_the_problem() {
        let err = parse_config("budget = 4\n").unwrap_err().to_string();
        assert!(err.contains("unknown key `budget`"), "{err}");

        let err = format!("{:#}", parse_config("rounds = many\n").unwrap_err());
        assert!(err.contains("rounds"), "{err}");

        let err = format!(
            "{:#}",
            parse_config("strategies = spfl,teleport\n").unwrap_err()
        );
        assert!(err.contains("unknown strategy `teleport`"), "{err}");
        for name in STRATEGY_NAMES {
            assert!(err.contains(name), "{err} should list {name}");
        }
    }

    #[test]
    fn duplicate_keys_are_rejected() {
        let err = parse_config("seed = 1\nseed = 2\n").unwrap_err().to_string();
        assert!(err.contains("given twice"), "{err}");
    }

    #[test]
    fn scheduling_fraction_and_model_width_parse() {
        let config = parse_config("strategies = scheduling:0.5\nmodel = mlp:8\n").unwrap();
        assert_eq!(
            config.strategies,
            vec![BaselineKind::Scheduling { fraction: 0.5 }]
        );
        assert_eq!(config.model, ModelKind::Mlp { hidden: 8 });
    }

    #[test]
    fn invalid_configs_fail_validation_with_field_context() {
        let err = parse_config("num_devices = 0\n").unwrap_err().to_string();
        assert!(err.contains("num_devices"), "{err}");

        let err = parse_config("sweep = bits\nsweep_values = 0\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("sweep_values"), "{err}");
    }
}
