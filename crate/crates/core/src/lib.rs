//! Classification restricted Boltzmann machines with a hierarchical
//! correlated prior over class labels.
//!
//! The label weight matrix `U` of a classification RBM is composed from
//! per-edge vectors of a label taxonomy: the column of class `k` is the sum
//! of the edge vectors along the root→leaf path of `k`, so classes that sit
//! close together in the tree share parameters. An orthogonality penalty
//! pushes each edge vector away from the vectors of its ancestor edges.
//!
//! Crate layout:
//!
//! * [`taxonomy`] parses and queries label trees.
//! * [`rbm`] holds the classification RBM (energy, exact posterior, CD-1).
//! * [`exact`] provides brute-force likelihoods and gradients for small models.
//! * [`hier`] composes `U` from edge parameters and trains the hierarchical model.
//! * [`baselines`] contains flat RBM, top-down cascades, HHRBM, MNL and corrMNL.
//! * [`dataset`] loads IDX and whitespace-table data and implements sampling protocols.
//! * [`checkpoint`] reads and writes model files.
//! * [`experiment`] runs the benchmark protocols.

pub mod baselines;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod exact;
pub mod experiment;
pub mod gradcheck;
pub mod hier;
pub mod math;
pub mod rbm;
pub mod taxonomy;
pub mod train;

pub use dataset::{Dataset, LabeledExample};
pub use error::{Error, Result};
pub use hier::{EdgeParams, PenaltyMode};
pub use rbm::{GradientSet, RbmParams};
pub use taxonomy::{PathIndicator, TaxonomyTree};
pub use train::{EpochRecord, RunMetrics, TrainConfig};
