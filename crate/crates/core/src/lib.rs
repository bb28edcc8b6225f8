//! Activation-aware weight initialization for odd-sigmoid networks.
//!
//! The crate is organized around a catalog of odd-sigmoid activations
//! (bounded, odd, strictly increasing, with strictly decreasing slope on
//! `[0, inf)`), the pitchfork bifurcation of the scalar map `x -> f(a x)`
//! at the critical gain `omega = 1/f'(0)`, and a closed-form calibration
//! of the per-layer noise scale `sigma*` that drives a target negative
//! rate at a chosen depth.
//!
//! Modules:
//!
//! - [`activations`]: the activation catalog, derivatives, `omega`, and a
//!   numerical class-membership checker.
//! - [`dynamics`]: fixed points of `f(a x) = x`, iteration traces, varying
//!   gain compositions, and a Monte-Carlo check of the stochastic floor
//!   bound.
//! - [`calibration`]: normal CDF/quantile, the negative-rate recursion,
//!   the closed-form `sigma*`, and the `omega`-scaled learning-rate band.
//! - [`initializers`]: the proposed D+Z scheme plus Xavier/He/Orthogonal
//!   baselines, gain statistics, and a binary weight container.
//! - [`propagation`]: scalar and wide feedforward signal simulators, the
//!   per-depth negative rate, and the histogram-entropy spread metric.
//! - [`network`]: a from-scratch MLP with manual backprop, softmax
//!   cross-entropy, Adam, and optional batch normalization.
//! - [`data`]: IDX (MNIST/FMNIST) ingestion, deterministic subsetting,
//!   and validation splits.
//! - [`cli`]: the `oswi` command-line entry point.

pub use ndarray;

pub mod activations;
pub mod calibration;
pub mod cli;
pub mod data;
pub mod dynamics;
pub mod initializers;
pub mod network;
pub mod propagation;
pub mod rng;
pub mod special;

pub use activations::{ActivationKind, ActivationSpec, ClassReport, SamplingPlan};
pub use calibration::{lr_band, negative_rate, sigma_star, CalibrationResult};
pub use data::Dataset;
pub use dynamics::{FixedPointSet, IterationTrace, Regime};
pub use initializers::{InitKind, InitScheme};
pub use network::{NetworkConfig, TrainConfig, TrainReport};
pub use propagation::{spread_metric, PropagationTrace, X0Dist};
