use spfl_core::learner::{run_experiment, BaselineKind};
use spfl_core::{CompensationKind, DeliveryMode, ExperimentConfig, SweepAxis};

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

#[test]
fn debug_bits_scan() {
    for power in [-26.0f64, -24.0, -20.0, -16.0, -12.0] {
        let config = ExperimentConfig {
            seed: 4800,
            num_devices: 10,
            rounds: 40,
            repetitions: 5,
            strategies: vec![BaselineKind::Spfl],
            compensation: CompensationKind::PreviousGlobalModulus,
            retransmit_limit: 1,
            delivery: DeliveryMode::Bernoulli,
            bandwidth_hz: 20e3,
            tx_power_dbm: power,
            cell_radius_m: 18_000.0,
            cell_exclusion_m: 2_000.0,
            learning_rate: 0.3,
            num_samples: 1000,
            test_samples: 400,
            feature_dim: 20,
            num_classes: 10,
            class_separation: 0.8,
            sweep: SweepAxis::Bits,
            sweep_values: (1..=6).map(f64::from).collect(),
            ..ExperimentConfig::default()
        };
        let mut line = format!("P={power:>5}: ");
        for &bits in &config.sweep_values.clone() {
            let cell = config.at_sweep_value(bits).unwrap();
            let rows = run_experiment(&cell).unwrap();
            let finals: Vec<f64> = rows
                .iter()
                .filter(|r| r.strategy.name() == "spfl" && r.metrics.round == 40)
                .map(|r| r.metrics.test_acc)
                .collect();
            line.push_str(&format!("b{}={:.3} ", bits as u32, mean(&finals)));
        }
        println!("{line}");
    }
}
