//! Differentiable classifiers over the synthetic workload.
//!
//! Two model kinds share one flat weight vector: multinomial logistic
//! regression, and a single-hidden-layer tanh network.  Both are trained by
//! full-batch gradient steps on the softmax cross-entropy, so the local
//! gradient of a shard is the exact mean of per-sample gradients — the
//! quantity every uplink in the simulator carries.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::learner::data::Dataset;
use crate::stream;

/// Architecture of the shared model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    /// Linear softmax classifier: per-class weight row plus bias.
    Logistic,
    /// One tanh hidden layer of the given width, then a softmax readout.
    Mlp { hidden: usize },
}

impl ModelKind {
    /// Flat weight count for the given data shape.
    pub fn weight_count(self, feature_dim: usize, num_classes: usize) -> usize {
        match self {
            ModelKind::Logistic => num_classes * (feature_dim + 1),
            ModelKind::Mlp { hidden } => hidden * (feature_dim + 1) + num_classes * (hidden + 1),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Logistic => "logistic",
            ModelKind::Mlp { .. } => "mlp",
        }
    }
}

/// A classifier: flat weights plus the shape needed to interpret them.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub weights: Vec<f64>,
    pub kind: ModelKind,
    pub feature_dim: usize,
    pub num_classes: usize,
}

impl Model {
    pub fn zeros(kind: ModelKind, feature_dim: usize, num_classes: usize) -> Result<Model> {
        check_shape(kind, feature_dim, num_classes)?;
        Ok(Model {
            weights: vec![0.0; kind.weight_count(feature_dim, num_classes)],
            kind,
            feature_dim,
            num_classes,
        })
    }

    /// Small random initialization; needed by the hidden layer, whose units
    /// never differentiate from an all-zero start.
    pub fn random(
        kind: ModelKind,
        feature_dim: usize,
        num_classes: usize,
        seed: u64,
    ) -> Result<Model> {
        check_shape(kind, feature_dim, num_classes)?;
        let mut rng = stream::stream(seed, &[stream::MODEL_INIT]);
        let weights = (0..kind.weight_count(feature_dim, num_classes))
            .map(|_| 0.05 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Ok(Model {
            weights,
            kind,
            feature_dim,
            num_classes,
        })
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// Class scores for one feature row.
    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let d = self.feature_dim;
        let c = self.num_classes;
        match self.kind {
            ModelKind::Logistic => (0..c)
                .map(|class| {
                    let row = &self.weights[class * (d + 1)..class * (d + 1) + d];
                    dot(row, x) + self.weights[class * (d + 1) + d]
                })
                .collect(),
            ModelKind::Mlp { hidden } => {
                let activations = self.hidden_activations(x, hidden);
                let readout = hidden * (d + 1);
                (0..c)
                    .map(|class| {
                        let row = &self.weights[readout + class * hidden..readout + (class + 1) * hidden];
                        dot(row, &activations) + self.weights[readout + c * hidden + class]
                    })
                    .collect()
            }
        }
    }

    fn hidden_activations(&self, x: &[f64], hidden: usize) -> Vec<f64> {
        let d = self.feature_dim;
        (0..hidden)
            .map(|unit| {
                let row = &self.weights[unit * d..(unit + 1) * d];
                (dot(row, x) + self.weights[hidden * d + unit]).tanh()
            })
            .collect()
    }
}

fn check_shape(kind: ModelKind, feature_dim: usize, num_classes: usize) -> Result<()> {
    if feature_dim == 0 || num_classes < 2 {
        return Err(Error::Config {
            field: "model shape".to_string(),
            message: format!(
                "need feature_dim > 0 and at least two classes; got {feature_dim} and \
                 {num_classes}"
            ),
        });
    }
    if let ModelKind::Mlp { hidden } = kind {
        if hidden == 0 {
            return Err(Error::Config {
                field: "hidden".to_string(),
                message: "the hidden layer needs at least one unit".to_string(),
            });
        }
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn check_sample(model: &Model, dataset: &Dataset, index: usize) -> Result<()> {
    if index >= dataset.len() {
        return Err(Error::DeviceIndex {
            index,
            count: dataset.len(),
        });
    }
    if dataset.feature_dim != model.feature_dim || dataset.num_classes != model.num_classes {
        return Err(Error::Inconsistent {
            context: format!(
                "model expects {}-dim features over {} classes but the dataset has {}-dim \
                 features over {} classes",
                model.feature_dim, model.num_classes, dataset.feature_dim, dataset.num_classes
            ),
        });
    }
    Ok(())
}

/// Softmax cross-entropy of one sample, stabilized by max subtraction.
fn sample_loss(model: &Model, x: &[f64], label: usize) -> f64 {
    let logits = model.logits(x);
    let top = logits.iter().fold(f64::NEG_INFINITY, |m, &z| m.max(z));
    let lse = top + logits.iter().map(|&z| (z - top).exp()).sum::<f64>().ln();
    lse - logits[label]
}

/// Adds one sample's loss gradient into `grad` (not yet averaged).
fn accumulate_sample_gradient(model: &Model, x: &[f64], label: usize, grad: &mut [f64]) {
    let d = model.feature_dim;
    let c = model.num_classes;
    let logits = model.logits(x);
    let top = logits.iter().fold(f64::NEG_INFINITY, |m, &z| m.max(z));
    let lse = top + logits.iter().map(|&z| (z - top).exp()).sum::<f64>().ln();
    let mut dz: Vec<f64> = logits.iter().map(|&z| (z - lse).exp()).collect();
    dz[label] -= 1.0;
    match model.kind {
        ModelKind::Logistic => {
            for (class, &dzc) in dz.iter().enumerate() {
                let row = &mut grad[class * (d + 1)..class * (d + 1) + d];
                for (g, &xj) in row.iter_mut().zip(x) {
                    *g += dzc * xj;
                }
                grad[class * (d + 1) + d] += dzc;
            }
        }
        ModelKind::Mlp { hidden } => {
            let activations = model.hidden_activations(x, hidden);
            let readout = hidden * (d + 1);
            for (class, &dzc) in dz.iter().enumerate() {
                let row = &mut grad[readout + class * hidden..readout + (class + 1) * hidden];
                for (g, &a) in row.iter_mut().zip(&activations) {
                    *g += dzc * a;
                }
                grad[readout + c * hidden + class] += dzc;
            }
            for (unit, &a) in activations.iter().enumerate() {
                let upstream: f64 = dz
                    .iter()
                    .enumerate()
                    .map(|(class, &dzc)| dzc * model.weights[readout + class * hidden + unit])
                    .sum();
                let dpre = upstream * (1.0 - a * a);
                let row = &mut grad[unit * d..(unit + 1) * d];
                for (g, &xj) in row.iter_mut().zip(x) {
                    *g += dpre * xj;
                }
                grad[hidden * d + unit] += dpre;
            }
        }
    }
}

/// Mean per-sample gradient over one device's shard.
pub fn local_gradient(model: &Model, dataset: &Dataset, shard: &[usize]) -> Result<Vec<f64>> {
    if shard.is_empty() {
        return Err(Error::Inconsistent {
            context: "cannot take a local gradient over an empty shard".to_string(),
        });
    }
    let mut grad = vec![0.0; model.dim()];
    for &index in shard {
        check_sample(model, dataset, index)?;
        accumulate_sample_gradient(
            model,
            &dataset.features[index],
            dataset.labels[index],
            &mut grad,
        );
    }
    let scale = 1.0 / shard.len() as f64;
    for g in &mut grad {
        *g *= scale;
    }
    Ok(grad)
}

/// Mean per-sample loss over one device's shard.
pub fn local_loss(model: &Model, dataset: &Dataset, shard: &[usize]) -> Result<f64> {
    if shard.is_empty() {
        return Err(Error::Inconsistent {
            context: "cannot evaluate a loss over an empty shard".to_string(),
        });
    }
    let mut total = 0.0;
    for &index in shard {
        check_sample(model, dataset, index)?;
        total += sample_loss(model, &dataset.features[index], dataset.labels[index]);
    }
    Ok(total / shard.len() as f64)
}

/// Unweighted mean of the devices' local losses.  Shards are equal-sized, so
/// this equals the pooled mean over all assigned samples.
pub fn global_loss(model: &Model, dataset: &Dataset, shards: &[Vec<usize>]) -> Result<f64> {
    if shards.is_empty() {
        return Err(Error::Inconsistent {
            context: "cannot average losses over zero devices".to_string(),
        });
    }
    let mut total = 0.0;
    for shard in shards {
        total += local_loss(model, dataset, shard)?;
    }
    Ok(total / shards.len() as f64)
}

/// Fraction of samples whose top logit matches the label (ties break toward
/// the lowest class index).
pub fn accuracy(model: &Model, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Inconsistent {
            context: "cannot score an empty dataset".to_string(),
        });
    }
    let mut hits = 0usize;
    for index in 0..dataset.len() {
        check_sample(model, dataset, index)?;
        let logits = model.logits(&dataset.features[index]);
        let mut best = 0usize;
        for (class, &z) in logits.iter().enumerate().skip(1) {
            if z > logits[best] {
                best = class;
            }
        }
        if best == dataset.labels[index] {
            hits += 1;
        }
    }
    Ok(hits as f64 / dataset.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_dataset(seed: u64) -> Dataset {
        Dataset::synthetic(60, 6, 3, 1.0, seed).unwrap()
    }

    fn finite_difference(model: &Model, dataset: &Dataset, shard: &[usize]) -> Vec<f64> {
        let h = 1e-5;
        let mut probe = model.clone();
        (0..model.dim())
            .map(|j| {
                let w = model.weights[j];
                probe.weights[j] = w + h;
                let plus = local_loss(&probe, dataset, shard).unwrap();
                probe.weights[j] = w - h;
                let minus = local_loss(&probe, dataset, shard).unwrap();
                probe.weights[j] = w;
                (plus - minus) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn zero_logistic_model_has_zero_bias_gradient_on_balanced_labels() {
        let dataset = toy_dataset(5);
        let model = Model::zeros(ModelKind::Logistic, 6, 3).unwrap();
        let shard: Vec<usize> = (0..60).collect(); // labels cycle, so balanced
        let grad = local_gradient(&model, &dataset, &shard).unwrap();
        for class in 0..3 {
            let bias = grad[class * 7 + 6];
            assert!(bias.abs() < 1e-14, "class {class} bias gradient {bias}");
        }
    }

    #[test]
    fn single_sample_shard_gives_the_per_sample_gradient() {
        let dataset = toy_dataset(6);
        let model = Model::random(ModelKind::Logistic, 6, 3, 77).unwrap();
        let one = local_gradient(&model, &dataset, &[4]).unwrap();
        let mut expected = vec![0.0; model.dim()];
        accumulate_sample_gradient(
            &model,
            &dataset.features[4],
            dataset.labels[4],
            &mut expected,
        );
        assert_eq!(one, expected);
    }

    #[test]
    fn logistic_gradient_matches_finite_differences() {
        let dataset = toy_dataset(7);
        let model = Model::random(ModelKind::Logistic, 6, 3, 78).unwrap();
        let shard: Vec<usize> = (0..20).collect();
        let analytic = local_gradient(&model, &dataset, &shard).unwrap();
        let numeric = finite_difference(&model, &dataset, &shard);
        let gap: f64 = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n) * (a - n))
            .sum::<f64>()
            .sqrt();
        let scale: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(gap <= 1e-4 * (1.0 + scale), "gradient gap {gap}");
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let dataset = toy_dataset(8);
        let model = Model::random(ModelKind::Mlp { hidden: 5 }, 6, 3, 79).unwrap();
        let shard: Vec<usize> = (0..15).collect();
        let analytic = local_gradient(&model, &dataset, &shard).unwrap();
        let numeric = finite_difference(&model, &dataset, &shard);
        let gap: f64 = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n) * (a - n))
            .sum::<f64>()
            .sqrt();
        let scale: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(gap <= 1e-4 * (1.0 + scale), "gradient gap {gap}");
    }

    #[test]
    fn global_loss_of_one_device_is_the_local_loss() {
        let dataset = toy_dataset(9);
        let model = Model::random(ModelKind::Logistic, 6, 3, 80).unwrap();
        let shard: Vec<usize> = (0..60).collect();
        let global = global_loss(&model, &dataset, std::slice::from_ref(&shard)).unwrap();
        let local = local_loss(&model, &dataset, &shard).unwrap();
        assert_eq!(global, local);
    }

    #[test]
    fn identical_shards_average_to_the_common_loss() {
        let dataset = toy_dataset(10);
        let model = Model::random(ModelKind::Logistic, 6, 3, 81).unwrap();
        let shard: Vec<usize> = (10..30).collect();
        let shards = vec![shard.clone(), shard.clone(), shard.clone()];
        let global = global_loss(&model, &dataset, &shards).unwrap();
        let local = local_loss(&model, &dataset, &shard).unwrap();
        assert!((global - local).abs() <= 1e-15 * (1.0 + local.abs()));
    }

    #[test]
    fn equal_shards_pool_to_the_sample_mean_loss() {
        let dataset = toy_dataset(11);
        let model = Model::random(ModelKind::Logistic, 6, 3, 82).unwrap();
        let shards: Vec<Vec<usize>> = (0..4).map(|k| (k * 15..(k + 1) * 15).collect()).collect();
        let global = global_loss(&model, &dataset, &shards).unwrap();
        let pooled: f64 = (0..60)
            .map(|i| sample_loss(&model, &dataset.features[i], dataset.labels[i]))
            .sum::<f64>()
            / 60.0;
        assert!(
            (global - pooled).abs() <= 1e-12 * (1.0 + pooled.abs()),
            "device mean {global} vs pooled mean {pooled}"
        );
    }

    #[test]
    fn gradient_descent_learns_better_than_chance() {
        let dataset = Dataset::synthetic(300, 6, 3, 2.0, 12).unwrap();
        let mut model = Model::zeros(ModelKind::Logistic, 6, 3).unwrap();
        let shard: Vec<usize> = (0..300).collect();
        let before = local_loss(&model, &dataset, &shard).unwrap();
        for _ in 0..60 {
            let grad = local_gradient(&model, &dataset, &shard).unwrap();
            for (w, g) in model.weights.iter_mut().zip(&grad) {
                *w -= 0.5 * g;
            }
        }
        let after = local_loss(&model, &dataset, &shard).unwrap();
        assert!(after < before, "loss did not decrease: {before} -> {after}");
        let score = accuracy(&model, &dataset).unwrap();
        assert!(score > 0.6, "accuracy stuck near chance: {score}");
    }

    #[test]
    fn empty_shard_and_shape_mismatches_are_rejected() {
        let dataset = toy_dataset(13);
        let model = Model::random(ModelKind::Logistic, 6, 3, 83).unwrap();
        assert!(local_gradient(&model, &dataset, &[]).is_err());
        assert!(local_loss(&model, &dataset, &[]).is_err());
        assert!(local_gradient(&model, &dataset, &[999]).is_err());
        let narrow = Model::random(ModelKind::Logistic, 5, 3, 83).unwrap();
        assert!(local_gradient(&narrow, &dataset, &[0]).is_err());
        assert!(Model::zeros(ModelKind::Mlp { hidden: 0 }, 6, 3).is_err());
    }

    #[test]
    fn random_initialization_is_deterministic_in_the_seed() {
        let a = Model::random(ModelKind::Mlp { hidden: 4 }, 6, 3, 90).unwrap();
        let b = Model::random(ModelKind::Mlp { hidden: 4 }, 6, 3, 90).unwrap();
        let c = Model::random(ModelKind::Mlp { hidden: 4 }, 6, 3, 91).unwrap();
        assert_eq!(a.weights, b.weights);
        assert_ne!(a.weights, c.weights);
    }
}
