//! Contrastive clustering: an MLP encoder trained with an instance-level
//! and a cluster-level contrastive loss, producing cluster assignments
//! directly from a softmax head.
//!
//! The crate is organised bottom-up:
//!
//! - [`matrix`] and [`tape`]: dense `f64` matrices and reverse-mode
//!   differentiation over a fixed set of primitives.
//! - [`augment`]: stochastic transforms producing two views per sample.
//! - [`model`]: encoder plus instance and cluster heads.
//! - [`loss`]: the two contrastive objectives and the entropy term.
//! - [`train`]: the mini-batch loop with Adam, and evaluation.
//! - [`metrics`], [`kmeans`], [`data`], [`config`]: supporting pieces.
//!
//! Data-parallel loops (per-sample augmentation, chunked inference, k-means
//! restarts, large products) go through [`par::Execution`] and use rayon
//! when the `parallel` feature is enabled. Results never depend on the
//! execution policy.

pub mod augment;
pub mod config;
pub mod data;
pub mod error;
pub mod kmeans;
pub mod loss;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod par;
mod seed;
pub mod tape;
pub mod train;

pub use config::{AblationMode, DatasetSpec, ExperimentConfig, ModelSettings};
pub use data::{Dataset, Geometry};
pub use error::{Error, Result};
pub use matrix::Matrix;
pub use metrics::MetricBundle;
pub use model::{ModelConfig, ModelParams};
pub use par::Execution;
pub use seed::derive_seed;
pub use tape::{Gradients, Tape, Var};
pub use train::{train, train_with, TrainOutcome, TrainReport};
