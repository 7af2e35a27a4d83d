//! Sparse ordinal basis learning.
//!
//! Estimates a sparse discriminant basis for classification with ordered class
//! labels. Variables whose class means follow the class order are penalized less
//! than the others through per-variable ordinal weights.

pub mod data_model;
pub mod error;
pub mod linalg;
pub mod ordinal_weights;
pub mod pipeline;
pub mod simbench;
pub mod solver;
pub mod special;

pub use data_model::{
    build_target_pair, compute_group_statistics, GroupStatistics, LabeledDataset, MethodVariant, TargetPair,
};
pub use error::{Result, SoblError};
pub use ordinal_weights::{OrdinalWeightVector, WeightMethod};
pub use solver::{sobl_fit, BasisEstimate, PenaltySpec, SolverConfig};
