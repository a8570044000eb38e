//! Synthetic classification data and its partition onto devices.
//!
//! The workload is a Gaussian mixture: each class owns a mean vector drawn
//! once from the dataset seed, and every sample is its class mean plus unit
//! noise.  Labels cycle through the classes, so any prefix of the sample index
//! space is class-balanced, and each sample is generated from its own stream
//! address — growing the dataset never changes existing samples.
//!
//! Partitions assign every sample index to exactly one device, with all
//! shards the same size.  The IID scheme deals a single shuffle into equal
//! chunks.  The non-IID scheme draws a per-device label preference from a
//! Dirichlet distribution and fills shards from per-class pools: integer
//! quotas come from largest-remainder rounding of the preferences, and
//! exhausted pools fall back to the device's next-preferred classes, which
//! keeps shards equal-sized even when devices contend for the same class.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Dirichlet, Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::stream;

/// A fully materialized sample set.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// Row-major feature matrix, one row per sample.
    pub features: Vec<Vec<f64>>,
    /// Class label per sample, in `[0, num_classes)`.
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub feature_dim: usize,
}

impl Dataset {
    /// Generate `num_samples` mixture samples. `separation` scales the class
    /// means relative to the unit noise, so it controls task difficulty.
    pub fn synthetic(
        num_samples: usize,
        feature_dim: usize,
        num_classes: usize,
        separation: f64,
        seed: u64,
    ) -> Result<Dataset> {
        if num_samples == 0 || feature_dim == 0 || num_classes < 2 {
            return Err(Error::Config {
                field: "dataset".to_string(),
                message: format!(
                    "need samples > 0, feature_dim > 0 and at least two classes; got \
                     {num_samples} samples, {feature_dim} features, {num_classes} classes"
                ),
            });
        }
        if !(separation.is_finite() && separation > 0.0) {
            return Err(Error::Domain {
                name: "class separation",
                value: separation,
                expected: "positive and finite",
            });
        }
        let means: Vec<Vec<f64>> = (0..num_classes)
            .map(|class| {
                let mut rng = stream::stream(seed, &[stream::CLASS_MEANS, class as u64]);
                (0..feature_dim)
                    .map(|_| separation * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        let mut features = Vec::with_capacity(num_samples);
        let mut labels = Vec::with_capacity(num_samples);
        for index in 0..num_samples {
            let label = index % num_classes;
            let mut rng = stream::stream(seed, &[stream::DATASET, index as u64]);
            let row: Vec<f64> = means[label]
                .iter()
                .map(|&m| m + rng.sample::<f64, _>(StandardNormal))
                .collect();
            features.push(row);
            labels.push(label);
        }
        Ok(Dataset {
            features,
            labels,
            num_classes,
            feature_dim,
        })
    }

    /// Generate a train/test pair from one mixture.  Both sides share the
    /// class means drawn from `seed`; the test block occupies the sample
    /// indices right after the train block, so no sample appears on both
    /// sides and the train side is identical to a bare `synthetic` call
    /// with the same seed.
    pub fn synthetic_split(
        num_train: usize,
        num_test: usize,
        feature_dim: usize,
        num_classes: usize,
        separation: f64,
        seed: u64,
    ) -> Result<(Dataset, Dataset)> {
        if num_train == 0 || num_test == 0 {
            return Err(Error::Config {
                field: "dataset".to_string(),
                message: format!(
                    "need train and test samples > 0; got {num_train} train, {num_test} test"
                ),
            });
        }
        let mut train = Dataset::synthetic(
            num_train + num_test,
            feature_dim,
            num_classes,
            separation,
            seed,
        )?;
        let test = Dataset {
            features: train.features.split_off(num_train),
            labels: train.labels.split_off(num_train),
            num_classes,
            feature_dim,
        };
        Ok((train, test))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// How sample indices are assigned to devices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PartitionScheme {
    /// A single shuffle dealt into equal chunks.
    Iid,
    /// Per-device Dirichlet label preferences; smaller concentrations skew
    /// each device toward fewer classes.
    Dirichlet { concentration: f64 },
}

/// Disjoint, covering, equal-sized shards of sample indices.
#[derive(Debug, Clone)]
pub struct Partition {
    pub shards: Vec<Vec<usize>>,
    pub scheme: PartitionScheme,
}

impl Partition {
    /// Split `dataset` across `num_devices` equal shards.
    pub fn build(
        dataset: &Dataset,
        num_devices: usize,
        scheme: PartitionScheme,
        seed: u64,
    ) -> Result<Partition> {
        if num_devices == 0 {
            return Err(Error::Config {
                field: "num_devices".to_string(),
                message: "need at least one device".to_string(),
            });
        }
        let n = dataset.len();
        if n % num_devices != 0 {
            return Err(Error::Config {
                field: "num_samples".to_string(),
                message: format!(
                    "{n} samples cannot form equal shards across {num_devices} devices"
                ),
            });
        }
        let shard_size = n / num_devices;
        let mut rng = stream::stream(seed, &[stream::PARTITION]);
        let shards = match scheme {
            PartitionScheme::Iid => {
                let mut order: Vec<usize> = (0..n).collect();
                order.shuffle(&mut rng);
                order.chunks(shard_size).map(<[usize]>::to_vec).collect()
            }
            PartitionScheme::Dirichlet { concentration } => {
                if !(concentration.is_finite() && concentration > 0.0) {
                    return Err(Error::Domain {
                        name: "dirichlet concentration",
                        value: concentration,
                        expected: "positive and finite",
                    });
                }
                dirichlet_shards(dataset, num_devices, shard_size, concentration, &mut rng)?
            }
        };
        Ok(Partition { shards, scheme })
    }

    pub fn num_devices(&self) -> usize {
        self.shards.len()
    }

    pub fn shard_size(&self) -> usize {
        self.shards.first().map_or(0, Vec::len)
    }
}

fn dirichlet_shards(
    dataset: &Dataset,
    num_devices: usize,
    shard_size: usize,
    concentration: f64,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<usize>>> {
    let classes = dataset.num_classes;
    // Shuffled per-class pools; popping from the back consumes them in
    // random order but deterministically under the partition stream.
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (index, &label) in dataset.labels.iter().enumerate() {
        pools[label].push(index);
    }
    for pool in &mut pools {
        pool.shuffle(rng);
    }
    let sampler = Dirichlet::new_with_size(concentration, classes).map_err(|_| Error::Domain {
        name: "dirichlet concentration",
        value: concentration,
        expected: "accepted by the distribution constructor",
    })?;
    let preferences: Vec<Vec<f64>> = (0..num_devices).map(|_| sampler.sample(rng)).collect();

    let mut shards = Vec::with_capacity(num_devices);
    for weights in &preferences {
        let quotas = largest_remainder_quotas(weights, shard_size);
        let mut shard = Vec::with_capacity(shard_size);
        for (class, &quota) in quotas.iter().enumerate() {
            let take = quota.min(pools[class].len());
            let start = pools[class].len() - take;
            shard.extend(pools[class].drain(start..));
        }
        // Pool exhaustion leaves the shard short; top it up from whatever
        // classes still have stock, most-preferred first.
        if shard.len() < shard_size {
            let mut order: Vec<usize> = (0..classes).collect();
            order.sort_by(|&a, &b| {
                weights[b]
                    .partial_cmp(&weights[a])
                    .expect("dirichlet weights are finite")
                    .then(a.cmp(&b))
            });
            for class in order {
                while shard.len() < shard_size {
                    match pools[class].pop() {
                        Some(index) => shard.push(index),
                        None => break,
                    }
                }
                if shard.len() == shard_size {
                    break;
                }
            }
        }
        shards.push(shard);
    }
    Ok(shards)
}

/// Integer quotas summing exactly to `total`, proportional to `weights`:
/// floors first, then one extra to the largest fractional remainders.
fn largest_remainder_quotas(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let targets: Vec<f64> = weights
        .iter()
        .map(|w| w / sum * total as f64)
        .collect();
    let mut quotas: Vec<usize> = targets.iter().map(|t| t.floor() as usize).collect();
    let assigned: usize = quotas.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = targets[a] - targets[a].floor();
        let rb = targets[b] - targets[b].floor();
        rb.partial_cmp(&ra)
            .expect("quota remainders are finite")
            .then(a.cmp(&b))
    });
    for &class in order.iter().take(total - assigned) {
        quotas[class] += 1;
    }
    quotas
}
