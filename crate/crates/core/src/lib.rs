//! Toy benchmark for studying when counterexample augmentation makes a
//! sequence classifier drop an easy (weak) feature in favour of a hard
//! (strong) one.
//!
//! The crate covers the whole pipeline: feature predicates and planting
//! ([`features`]), dataset recipes ([`datagen`]), a from-scratch LSTM
//! classifier ([`neural`]), training and the hardness probe ([`trainer`]),
//! four-region error metrics with bootstrap intervals ([`metrics`]), and the
//! experiment sweeps ([`experiments`]).

pub mod datagen;
pub mod error;
pub mod experiments;
pub mod features;
pub mod metrics;
pub mod neural;
pub mod rng;
pub mod trainer;

pub use datagen::{DatasetConfig, Example, FillerPolicy, Provenance};
pub use error::{Error, Result};
pub use features::{FeatureKind, FeatureSpec, Sequence, SymbolPool};
pub use metrics::{IntervalEstimate, RegionErrorReport};
pub use neural::{ModelConfig, ModelParams};
pub use trainer::{TrainConfig, TrainHistory};
