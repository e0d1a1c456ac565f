//! Parallel ranking-and-selection with correlation-based clustering.
//!
//! The toolkit selects the alternative with the best mean from a large set of
//! simulated, correlated alternatives. It clusters alternatives by
//! correlation, solves each cluster on its own worker with a sequential
//! budget-allocation procedure, then compares the local winners. Synthetic
//! problem generators and a macro-replication harness reproduce the
//! procedure-comparison studies at desk scale.
//!
//! The numerical core is generic over the scalar type (see [`scalar::Scalar`]);
//! the experiment harness and CLI run in `f64` through the aliases below.

pub mod alloc;
pub mod cli;
pub mod cluster;
pub mod error;
pub mod fixtures;
pub mod linalg;
pub mod pcs;
pub mod pipeline;
pub mod problem;
pub mod report;
pub mod rng;
pub mod scalar;
pub mod special;
pub mod stats;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Concrete `f64` aliases used by the harness and CLI.
pub type ProblemSpec64 = problem::ProblemSpec<f64>;
