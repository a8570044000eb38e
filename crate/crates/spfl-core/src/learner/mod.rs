//! The federated training loop and the transmission strategies under test.
//!
//! Every strategy shares the same per-round skeleton: the server broadcasts
//! the model, each device computes its full-batch local gradient, gradients
//! are quantized, the uplink decides what survives, and the server applies
//! one descent step with what arrived.  The strategies differ only in how
//! the uplink is used:
//!
//! * `spfl` — the full pipeline: per-round power/bandwidth allocation that
//!   minimizes the descent bound, prioritized sign packets with optional
//!   retransmission, compensation for lost moduli, and inverse-probability
//!   aggregation;
//! * `error_free` — the ideal upper baseline: every packet arrives;
//! * `scheduling` — only the best-channel fraction of devices transmit, over
//!   evenly re-split bandwidth, and failures are dropped;
//! * `dds` — uniform bandwidth, one monolithic packet per device, failures
//!   dropped;
//! * `one_bit` — sign-only uplink with a majority-vote update.
//!
//! Randomness is addressed, never sequential: the quantization stream of
//! `(round, device)` is the same for every strategy, so trajectories are
//! paired — two strategies diverge only where the channel actually treats
//! them differently.

mod data;
mod model;

pub use data::{Dataset, Partition, PartitionScheme};
pub use model::{accuracy, global_loss, local_gradient, local_loss, Model, ModelKind};

use crate::aggregation::{aggregate, compensation_vector, update_model, upsilon, CompensationPolicy};
use crate::allocator::alternate;
use crate::bound::{epsilon_oracle, g_coefficients, one_step_bound, BoundInputs};
use crate::channel::{self, ChannelParams};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::quantizer::{decode, quantize, variance_bound, QuantizedGradient};
use crate::stream;
use crate::transport::{outcome_from_deliveries, reconstruct, transmit, DeliveryMode};

use rand::Rng;

/// Uplink strategy of one experiment arm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaselineKind {
    /// Sign-prioritized transmission with bound-driven allocation.
    Spfl,
    /// Lossless uplink; the quantized-descent ceiling.
    ErrorFree,
    /// Only the given fraction of devices — those with the strongest
    /// instantaneous channels — transmit each round.
    Scheduling { fraction: f64 },
    /// Uniform bandwidth, whole-gradient packets, drops on error.
    Dds,
    /// Sign-only uplink aggregated by majority vote.
    OneBit,
}

/// Names accepted where a strategy is written out, e.g. in config files.
pub const STRATEGY_NAMES: [&str; 5] = ["spfl", "error_free", "scheduling", "dds", "one_bit"];

impl BaselineKind {
    pub fn name(&self) -> &'static str {
        match self {
            BaselineKind::Spfl => "spfl",
            BaselineKind::ErrorFree => "error_free",
            BaselineKind::Scheduling { .. } => "scheduling",
            BaselineKind::Dds => "dds",
            BaselineKind::OneBit => "one_bit",
        }
    }

    /// Parse a strategy name; `scheduling` gets its customary 75% share.
    pub fn parse(text: &str) -> Option<BaselineKind> {
        match text {
            "spfl" => Some(BaselineKind::Spfl),
            "error_free" => Some(BaselineKind::ErrorFree),
            "scheduling" => Some(BaselineKind::Scheduling { fraction: 0.75 }),
            "dds" => Some(BaselineKind::Dds),
            "one_bit" => Some(BaselineKind::OneBit),
            _ => None,
        }
    }
}

/// Mutable per-trajectory state: the model, the compensation memory, and the
/// simulated clock.
#[derive(Debug, Clone)]
pub struct TrainerState {
    pub model: Model,
    pub compensation: CompensationPolicy,
    /// Simulated uplink time consumed so far, in seconds.
    pub elapsed_s: f64,
    pub round: usize,
}

impl TrainerState {
    pub fn new(config: &ExperimentConfig) -> Result<TrainerState> {
        Ok(TrainerState {
            model: Model::random(
                config.model,
                config.feature_dim,
                config.num_classes,
                config.seed,
            )?,
            compensation: CompensationPolicy::new(config.compensation, config.num_devices),
            elapsed_s: 0.0,
            round: 0,
        })
    }
}

/// Everything a round reads but does not own.
#[derive(Debug, Clone, Copy)]
pub struct RoundEnv<'a> {
    pub config: &'a ExperimentConfig,
    pub channel: &'a ChannelParams,
    pub train: &'a Dataset,
    pub test: &'a Dataset,
    pub partition: &'a Partition,
    /// Seed of this repetition's stream family.
    pub cell_seed: u64,
}

/// One row of the metrics table: the state a round started from and what its
/// transition did.  The terminal row of a trajectory reports only the state —
/// its transition fields are NaN and its counters zero.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    pub round: usize,
    /// Simulated time consumed before this round started.
    pub elapsed_s: f64,
    pub train_loss: f64,
    pub test_acc: f64,
    /// Descent-bound value of this round's transition; NaN for strategies
    /// that do not evaluate the bound.
    pub bound_value: f64,
    /// Mean sign-delivery reliability: closed-form where the strategy knows
    /// it, realized fraction otherwise.
    pub mean_q: f64,
    /// Mean modulus-delivery reliability; NaN for the sign-only strategy.
    pub mean_p: f64,
    /// Devices contributing nothing to this round's update.
    pub devices_rejected: usize,
    /// Alternation passes of the allocation solve (0 when none runs).
    pub solver_outer_iters: u32,
}

/// One metrics row tagged with its experiment arm.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRow {
    pub strategy: BaselineKind,
    pub repetition: usize,
    pub metrics: RoundMetrics,
}

/// What a strategy did with the uplink in one round.
struct Transition {
    /// The aggregate the server applies: `w <- w - eta * update`.
    update: Vec<f64>,
    bound_value: f64,
    mean_q: f64,
    mean_p: f64,
    devices_rejected: usize,
    solver_outer_iters: u32,
    /// Largest number of extra sign attempts any device consumed.
    extra_attempts: u32,
}

/// Run one communication round in place, returning the metrics row for the
/// state the round started from.
pub fn run_round(
    state: &mut TrainerState,
    strategy: &BaselineKind,
    env: &RoundEnv,
) -> Result<RoundMetrics> {
    let config = env.config;
    let k = config.num_devices;
    if env.partition.num_devices() != k || env.channel.num_devices() != k {
        return Err(Error::Inconsistent {
            context: format!(
                "config expects {k} devices but the partition has {} and the channel {}",
                env.partition.num_devices(),
                env.channel.num_devices()
            ),
        });
    }
    if env.channel.model_dim != state.model.dim() {
        return Err(Error::Inconsistent {
            context: format!(
                "channel rates assume {} model coordinates but the model has {}",
                env.channel.model_dim,
                state.model.dim()
            ),
        });
    }
    let round = state.round as u64;

    let gradients: Vec<Vec<f64>> = env
        .partition
        .shards
        .iter()
        .map(|shard| local_gradient(&state.model, env.train, shard))
        .collect::<Result<_>>()?;
    let dim = state.model.dim();
    let mut global_gradient = vec![0.0; dim];
    for gradient in &gradients {
        for (sum, &g) in global_gradient.iter_mut().zip(gradient) {
            *sum += g;
        }
    }
    for sum in &mut global_gradient {
        *sum /= k as f64;
    }

    let train_loss = global_loss(&state.model, env.train, &env.partition.shards)?;
    let test_acc = accuracy(&state.model, env.test)?;

    // One quantization stream per (round, device), shared by every strategy,
    // so paired trajectories see identical codes.
    let quantized: Vec<QuantizedGradient> = gradients
        .iter()
        .enumerate()
        .map(|(device, gradient)| {
            let mut rng = stream::stream(
                env.cell_seed,
                &[stream::QUANT, round, device as u64],
            );
            quantize(gradient, config.quant_bits, &mut rng)
        })
        .collect::<Result<_>>()?;

    let transition = match strategy {
        BaselineKind::Spfl => run_spfl(state, env, round, &gradients, &global_gradient, &quantized)?,
        BaselineKind::ErrorFree => run_error_free(state, env, round, &quantized)?,
        BaselineKind::Scheduling { fraction } => {
            run_scheduling(env, round, *fraction, &quantized)?
        }
        BaselineKind::Dds => run_dds(env, round, &quantized)?,
        BaselineKind::OneBit => run_one_bit(env, round, &quantized)?,
    };

    let metrics = RoundMetrics {
        round: state.round,
        elapsed_s: state.elapsed_s,
        train_loss,
        test_acc,
        bound_value: transition.bound_value,
        mean_q: transition.mean_q,
        mean_p: transition.mean_p,
        devices_rejected: transition.devices_rejected,
        solver_outer_iters: transition.solver_outer_iters,
    };

    state.model.weights =
        update_model(&state.model.weights, &transition.update, config.learning_rate)?;
    state.compensation.record_round(&transition.update, &gradients)?;
    state.elapsed_s += config.latency_s * (1.0 + f64::from(transition.extra_attempts));
    state.round += 1;
    Ok(metrics)
}

fn run_spfl(
    state: &TrainerState,
    env: &RoundEnv,
    round: u64,
    gradients: &[Vec<f64>],
    global_gradient: &[f64],
    quantized: &[QuantizedGradient],
) -> Result<Transition> {
    let config = env.config;
    let k = config.num_devices;
    let dim = global_gradient.len();

    let compensations: Vec<Vec<f64>> = (0..k)
        .map(|device| compensation_vector(&state.compensation, device, dim))
        .collect::<Result<_>>()?;
    let inputs = BoundInputs {
        grad_norm_sq: gradients
            .iter()
            .map(|g| g.iter().map(|x| x * x).sum())
            .collect(),
        upsilon: gradients
            .iter()
            .zip(&compensations)
            .map(|(g, c)| upsilon(g, c))
            .collect::<Result<_>>()?,
        epsilon_sq: epsilon_oracle(gradients, global_gradient)?,
        delta_sq: quantized
            .iter()
            .map(|q| variance_bound(q, dim).delta_sq)
            .collect(),
        global_grad_norm_sq: global_gradient.iter().map(|x| x * x).sum(),
        comp_norm_sq: compensations
            .iter()
            .map(|c| c.iter().map(|x| x * x).sum::<f64>())
            .collect(),
        eta: config.learning_rate,
        lipschitz: 1.0 / config.learning_rate,
        num_devices: k,
    };
    let coeffs = (0..k)
        .map(|device| g_coefficients(&inputs, device))
        .collect::<Result<Vec<_>>>()?;
    let (allocation, diagnostics) = alternate(
        &coeffs,
        env.channel,
        config.bandwidth_method,
        config.allocator_tolerance,
    )?;
    let bound_value = one_step_bound(&inputs, &allocation.alpha, &allocation.beta, env.channel)?;

    let mut outcomes = Vec::with_capacity(k);
    for device in 0..k {
        let alpha = allocation.alpha[device];
        let beta = allocation.beta[device];
        let q = channel::q_sign(alpha, beta, env.channel, device)?;
        let p = channel::p_modulus(alpha, beta, env.channel, device)?;
        let outcome = match config.delivery {
            DeliveryMode::Bernoulli => {
                let mut rng = stream::stream(
                    env.cell_seed,
                    &[stream::TRANSPORT, round, device as u64],
                );
                transmit(q, p, &mut rng, config.retransmit_limit)?
            }
            DeliveryMode::Physical => {
                let mut sign_ok = false;
                let mut modulus_ok = false;
                let mut used = 0;
                for attempt in 0..=config.retransmit_limit {
                    used = attempt;
                    let gain = channel::fading_gain(env.cell_seed, round, device, attempt);
                    // Both packets ride the same channel realization; the
                    // modulus band only matters once the signs land.
                    if channel::sign_capacity_bps(alpha, beta, gain, env.channel, device)
                        >= env.channel.sign_rate_bps()
                    {
                        sign_ok = true;
                        modulus_ok = channel::modulus_capacity_bps(
                            alpha,
                            beta,
                            gain,
                            env.channel,
                            device,
                        ) >= env.channel.modulus_rate_bps();
                        break;
                    }
                }
                outcome_from_deliveries(
                    sign_ok,
                    modulus_ok,
                    used,
                    q,
                    p,
                    config.retransmit_limit,
                )?
            }
        };
        outcomes.push(outcome);
    }

    let reconstructions: Vec<Option<Vec<f64>>> = outcomes
        .iter()
        .zip(quantized)
        .zip(&compensations)
        .map(|((outcome, q), comp)| reconstruct(outcome, q, comp))
        .collect::<Result<_>>()?;
    let q_used: Vec<f64> = outcomes.iter().map(|o| o.q_used).collect();
    let estimate = aggregate(&reconstructions, &q_used, k, dim)?;

    Ok(Transition {
        devices_rejected: k - estimate.contributing.len(),
        update: estimate.g_hat,
        bound_value,
        mean_q: q_used.iter().sum::<f64>() / k as f64,
        mean_p: outcomes.iter().map(|o| o.p_used).sum::<f64>() / k as f64,
        solver_outer_iters: diagnostics.outer_iterations,
        extra_attempts: outcomes
            .iter()
            .map(|o| o.retransmissions_used)
            .max()
            .unwrap_or(0),
    })
}

fn run_error_free(
    state: &TrainerState,
    env: &RoundEnv,
    round: u64,
    quantized: &[QuantizedGradient],
) -> Result<Transition> {
    let config = env.config;
    let k = config.num_devices;
    let dim = env.channel.model_dim;
    let mut reconstructions = Vec::with_capacity(k);
    let mut q_used = Vec::with_capacity(k);
    for (device, q) in quantized.iter().enumerate() {
        let mut rng = stream::stream(env.cell_seed, &[stream::TRANSPORT, round, device as u64]);
        let outcome = transmit(1.0, 1.0, &mut rng, config.retransmit_limit)?;
        let comp = compensation_vector(&state.compensation, device, dim)?;
        reconstructions.push(reconstruct(&outcome, q, &comp)?);
        q_used.push(outcome.q_used);
    }
    let estimate = aggregate(&reconstructions, &q_used, k, dim)?;
    Ok(Transition {
        update: estimate.g_hat,
        bound_value: f64::NAN,
        mean_q: 1.0,
        mean_p: 1.0,
        devices_rejected: 0,
        solver_outer_iters: 0,
        extra_attempts: 0,
    })
}

/// Payload rate of a monolithic gradient packet: signs, magnitude codes, and
/// the range header, all within one deadline.
fn whole_gradient_rate_bps(params: &ChannelParams) -> f64 {
    (params.model_dim as f64 * f64::from(params.quant_bits + 1) + f64::from(params.range_bits))
        / params.latency_s
}

/// Mean of the delivered decodes; the all-zero update when nothing arrived.
fn mean_of_delivered(delivered: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let mut update = vec![0.0; dim];
    if delivered.is_empty() {
        return update;
    }
    for decoded in delivered {
        for (sum, &g) in update.iter_mut().zip(decoded) {
            *sum += g;
        }
    }
    for sum in &mut update {
        *sum /= delivered.len() as f64;
    }
    update
}

fn run_dds(env: &RoundEnv, round: u64, quantized: &[QuantizedGradient]) -> Result<Transition> {
    let config = env.config;
    let k = config.num_devices;
    let band = env.channel.bandwidth_total_hz / k as f64;
    let rate = whole_gradient_rate_bps(env.channel);
    let mut delivered = Vec::new();
    for (device, q) in quantized.iter().enumerate() {
        let ok = match config.delivery {
            DeliveryMode::Bernoulli => {
                let success = channel::packet_success(band, 1.0, rate, env.channel, device)?;
                let mut rng =
                    stream::stream(env.cell_seed, &[stream::TRANSPORT, round, device as u64]);
                rng.gen_bool(success)
            }
            DeliveryMode::Physical => {
                let gain = channel::fading_gain(env.cell_seed, round, device, 0);
                channel::packet_capacity_bps(band, 1.0, gain, env.channel, device) >= rate
            }
        };
        if ok {
            delivered.push(decode(q)?);
        }
    }
    let fraction = delivered.len() as f64 / k as f64;
    Ok(Transition {
        update: mean_of_delivered(&delivered, env.channel.model_dim),
        bound_value: f64::NAN,
        mean_q: fraction,
        mean_p: fraction,
        devices_rejected: k - delivered.len(),
        solver_outer_iters: 0,
        extra_attempts: 0,
    })
}

fn run_scheduling(
    env: &RoundEnv,
    round: u64,
    fraction: f64,
    quantized: &[QuantizedGradient],
) -> Result<Transition> {
    let config = env.config;
    let k = config.num_devices;
    if !(fraction.is_finite() && fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Domain {
            name: "scheduling fraction",
            value: fraction,
            expected: "in (0, 1]",
        });
    }
    let scheduled_count = ((fraction * k as f64).ceil() as usize).clamp(1, k);
    // Rank by instantaneous received gain; the scheduler is assumed to know
    // this round's fading, so delivery is the deterministic capacity test on
    // the very same realization in both delivery modes.
    let gains: Vec<f64> = (0..k)
        .map(|device| channel::fading_gain(env.cell_seed, round, device, 0))
        .collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        let ga = gains[a] * env.channel.distances_m[a].powf(-env.channel.pathloss_exponent);
        let gb = gains[b] * env.channel.distances_m[b].powf(-env.channel.pathloss_exponent);
        gb.partial_cmp(&ga)
            .expect("received gains are finite")
            .then(a.cmp(&b))
    });
    let band = env.channel.bandwidth_total_hz / scheduled_count as f64;
    let rate = whole_gradient_rate_bps(env.channel);
    let mut delivered = Vec::new();
    for &device in order.iter().take(scheduled_count) {
        if channel::packet_capacity_bps(band, 1.0, gains[device], env.channel, device) >= rate {
            delivered.push(decode(&quantized[device])?);
        }
    }
    let fraction_ok = delivered.len() as f64 / k as f64;
    Ok(Transition {
        update: mean_of_delivered(&delivered, env.channel.model_dim),
        bound_value: f64::NAN,
        mean_q: fraction_ok,
        mean_p: fraction_ok,
        devices_rejected: k - delivered.len(),
        solver_outer_iters: 0,
        extra_attempts: 0,
    })
}

fn run_one_bit(env: &RoundEnv, round: u64, quantized: &[QuantizedGradient]) -> Result<Transition> {
    let config = env.config;
    let k = config.num_devices;
    let dim = env.channel.model_dim;
    let band = env.channel.bandwidth_total_hz / k as f64;
    let rate = env.channel.sign_rate_bps();
    let mut votes = vec![0i64; dim];
    let mut delivered = 0usize;
    for (device, q) in quantized.iter().enumerate() {
        let ok = match config.delivery {
            DeliveryMode::Bernoulli => {
                let success = channel::packet_success(band, 1.0, rate, env.channel, device)?;
                let mut rng =
                    stream::stream(env.cell_seed, &[stream::TRANSPORT, round, device as u64]);
                rng.gen_bool(success)
            }
            DeliveryMode::Physical => {
                let gain = channel::fading_gain(env.cell_seed, round, device, 0);
                channel::packet_capacity_bps(band, 1.0, gain, env.channel, device) >= rate
            }
        };
        if ok {
            delivered += 1;
            for (vote, &sign) in votes.iter_mut().zip(&q.signs) {
                *vote += i64::from(sign);
            }
        }
    }
    let update: Vec<f64> = votes
        .iter()
        .map(|&v| match v.cmp(&0) {
            std::cmp::Ordering::Greater => 1.0,
            std::cmp::Ordering::Less => -1.0,
            std::cmp::Ordering::Equal => 0.0,
        })
        .collect();
    Ok(Transition {
        update,
        bound_value: f64::NAN,
        mean_q: delivered as f64 / k as f64,
        mean_p: f64::NAN,
        devices_rejected: k - delivered,
        solver_outer_iters: 0,
        extra_attempts: 0,
    })
}

/// Run every configured strategy for every repetition, sequentially and
/// deterministically.  Each trajectory contributes `rounds + 1` rows: one per
/// transition plus the terminal state.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<ExperimentRow>> {
    config.validate()?;
    let channel = config.channel()?;
    let (train, test) = Dataset::synthetic_split(
        config.num_samples,
        config.test_samples,
        config.feature_dim,
        config.num_classes,
        config.class_separation,
        config.seed,
    )?;
    let partition = Partition::build(&train, config.num_devices, config.partition, config.seed)?;

    let mut rows =
        Vec::with_capacity(config.strategies.len() * config.repetitions * (config.rounds + 1));
    for strategy in &config.strategies {
        for repetition in 0..config.repetitions {
            // Repetition streams are strategy-agnostic: arm A and arm B of
            // the same repetition share fading, quantization, and transport
            // randomness wherever their pipelines coincide.
            let cell_seed = stream::mix(config.seed, &[stream::REPETITION, repetition as u64]);
            let env = RoundEnv {
                config,
                channel: &channel,
                train: &train,
                test: &test,
                partition: &partition,
                cell_seed,
            };
            let mut state = TrainerState::new(config)?;
            for _ in 0..config.rounds {
                let metrics = run_round(&mut state, strategy, &env)?;
                rows.push(ExperimentRow {
                    strategy: *strategy,
                    repetition,
                    metrics,
                });
            }
            rows.push(ExperimentRow {
                strategy: *strategy,
                repetition,
                metrics: RoundMetrics {
                    round: state.round,
                    elapsed_s: state.elapsed_s,
                    train_loss: global_loss(&state.model, &train, &partition.shards)?,
                    test_acc: accuracy(&state.model, &test)?,
                    bound_value: f64::NAN,
                    mean_q: f64::NAN,
                    mean_p: f64::NAN,
                    devices_rejected: 0,
                    solver_outer_iters: 0,
                },
            });
        }
    }
    Ok(rows)
}
