//! Deterministic federated-learning simulator for Wi-Fi RSS indoor
//! localization, with a fused autoencoder/classifier model, reconstruction-
//! error routing, data-poisoning attacks, and saliency-weighted aggregation.
//!
//! Layering:
//! - [`nn`]: dense matrices, layers, losses, Adam.
//! - [`fused`]: the tied-weight encoder/classifier/decoder model, its joint
//!   training, routing, and checkpoints.
//! - [`attacks`]: CLB, FGSM, PGD, MIM, and label flipping.
//! - [`data`]: synthetic fingerprint generation and CSV interchange.
//! - [`fl`]: the federated round loop and the two aggregation rules.
//! - [`eval`]: metrics, sweeps, and the config-driven experiment runner.
//!
//! Everything is seeded: the same [`config::ExperimentConfig`] produces
//! byte-identical outputs regardless of thread count.

pub mod attacks;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod fl;
pub mod fused;
pub mod nn;
pub mod rng;

pub use attacks::{AttackKind, AttackSpec};
pub use config::ExperimentConfig;
pub use data::{DeviceProfile, FingerprintSet, FloorplanConfig};
pub use error::{Error, Result};
pub use eval::{run_experiment, RoundReport, RunSummary, Workbench};
pub use fl::{Aggregation, AggregationMode, ClientConfig, ClientUpdate};
pub use fused::{FusedParams, RoutePath, RoutingOutcome, TrainConfig};
pub use nn::DenseMatrix;
