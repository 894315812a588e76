//! Gaussian ensemble gradient descent for fabrication-constrained freeform design.
//!
//! A latent density field is filtered and projected into a reward field. Gaussian
//! perturbations of the reward field are turned into binary designs by a greedy
//! brush-based generator that enforces a minimum feature size, and the score-function
//! gradient of the sampled costs drives an ADAM update of the latent field.
//!
//! The crate also provides three comparison optimizers ([`baselines`]), an analytic
//! multi-well benchmark ([`bench`]), and a line protocol for external cost processes
//! ([`external`]).

pub mod adam;
pub mod baselines;
pub mod bench;
pub mod config;
pub mod error;
pub mod estimator;
pub mod external;
pub mod fdg;
pub mod field;
pub mod gegd;
pub mod grid;
pub mod io;
pub mod problem;
pub mod rng;
pub mod sampling;
pub mod trace;

pub use error::{Error, Result};
pub use fdg::{check_feasibility, BinaryDesign, FeasibleDesignGenerator};
pub use field::{FieldChain, GaussianFilter, LatentMap};
pub use gegd::{GegdConfig, GegdOutcome};
pub use grid::{Brush, DesignGrid, Symmetry};
pub use problem::{CostError, CostFunction, CostJob, Evaluator, Fidelity};
pub use sampling::{CovarianceMode, RbfCovariance, SamplingDistribution};
pub use trace::{IterationRecord, OptimizationTrace};
