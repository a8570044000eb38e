//! Sign-prioritized federated learning over unreliable uplinks.
//!
//! A federation of devices trains a shared model over a bandwidth- and
//! power-constrained wireless uplink. Each device splits its quantized
//! gradient into a small sign packet and a larger modulus packet; the sign
//! packet is the prioritized one. A device whose sign packet is lost drops
//! out of the round entirely, while a device that delivers signs but loses
//! the moduli still contributes through a compensation vector paired with its
//! signs. The server inverse-weights each contribution by its delivery
//! probability, which keeps the aggregate an unbiased estimate of the ideal
//! update.
//!
//! The crate provides the pieces of that pipeline as separate modules:
//!
//! * [`channel`] — closed-form packet success probabilities and fading draws;
//! * [`quantizer`] — stochastic modulus quantization and its variance bound;
//! * [`transport`] — per-round packet outcomes and gradient reconstruction;
//! * [`aggregation`] — inverse-probability aggregation and compensation state;
//! * [`bound`] — a per-round descent bound on the loss decrement;
//! * [`allocator`] — power and bandwidth allocation that minimizes the bound;
//! * [`learner`] — synthetic federated training loop and baseline strategies;
//! * [`config`] — experiment description shared by the CLI and tests.

pub mod aggregation;
pub mod allocator;
pub mod bound;
pub mod channel;
pub mod config;
pub mod error;
pub mod learner;
pub mod quantizer;
pub mod stream;
pub mod transport;

pub use aggregation::{
    aggregate, compensation_vector, unbiasedness_check, update_model, upsilon, CompensationKind,
    CompensationPolicy, GlobalEstimate,
};
pub use allocator::{
    alternate, gprime, optimize_bandwidth_penalty, optimize_bandwidth_sca, optimize_power,
    AllocationPair, BandwidthMethod, SolverDiagnostics,
};
pub use bound::{
    epsilon_oracle, g_coefficients, g_probability_form, g_value, one_step_bound, BoundInputs,
    GCoefficients,
};
pub use channel::{
    draw_fading, h_s, h_v, p_modulus, q_sign, ChannelParams, FadingDraw,
};
pub use config::{dbm_to_watts, ExperimentConfig, SweepAxis};
pub use error::{Error, Result};
pub use learner::{
    accuracy, global_loss, local_gradient, local_loss, run_experiment, run_round, BaselineKind,
    Dataset, ExperimentRow, Model, ModelKind, Partition, PartitionScheme, RoundEnv, RoundMetrics,
    TrainerState, STRATEGY_NAMES,
};
pub use quantizer::{decode, quantize, variance_bound, QuantBound, QuantizedGradient};
pub use transport::{reconstruct, transmit, DeliveryMode, PacketOutcome};
