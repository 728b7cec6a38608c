//! Semi-discrete optimal transport between a sampleable source and a finite
//! target, solved on the semi-dual with projected averaged SGD whose entropic
//! regularization decays polynomially with the iteration count.
//!
//! Modules follow the pipeline: [`measures`] and [`rng`] provide the data,
//! [`semidual`] the transforms and gradients, [`projection`] and [`solvers`]
//! the optimization loop, [`transport_map`] the Laguerre geometry,
//! [`ground_truth`] and [`metrics`] the benchmark instances and error
//! functionals, and [`experiment`] the configuration-driven runner behind the
//! `sdot` binary.

pub mod error;
pub mod experiment;
pub mod ground_truth;
pub mod measures;
pub mod metrics;
pub mod projection;
pub mod rng;
pub mod semidual;
pub mod solvers;
pub mod transport_map;

pub use error::{Error, Result};
pub use measures::{DiscreteMeasure, SourceDistribution, SourceKind};
pub use projection::ProjectionSet;
pub use rng::RngStream;
pub use semidual::{GradientSample, Potential};
pub use solvers::{Averaging, EvalSchedule, Method, SolverConfig, SolverState};
