//! Core algorithms for smooth adversarial training experiments.
//!
//! Everything in this crate is deterministic given explicit seeds and runs on
//! plain `f64` buffers: a define-by-run reverse-mode differentiation graph, an
//! activation-function zoo with exact analytic derivatives and decoupled
//! forward/backward behavior, small MLP/CNN models, L∞ PGD attacks,
//! momentum-SGD adversarial training, and loss-landscape probes.
//!
//! The crate is `no_std` (with `alloc`); file formats, config parsing and the
//! CLI live in the companion `sat-lab` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod activations;
pub mod attack;
pub mod checkpoint;
pub mod data;
pub mod graph;
pub mod landscape;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod train;

mod fmath;

pub use activations::{ActivationKind, ActivationPair, SmoothnessReport};
pub use attack::AttackConfig;
pub use checkpoint::{Checkpoint, TrainMeta};
pub use data::Dataset;
pub use graph::{GradientMap, Graph, NodeId};
pub use model::{LayerSpec, ModelParams, ModelSpec};
pub use tensor::Tensor;
pub use train::{MetricsLog, PhaseOverrides, TrainConfig};
