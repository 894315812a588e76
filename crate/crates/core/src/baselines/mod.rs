//! Comparison optimizers: three-field grayscale optimization (TF), straight-through
//! gradient descent through the design generator (AF-STE), and particle swarm through the
//! design generator (AF-PSO).

pub mod lbfgsb;
pub mod pso;
pub mod ste;
pub mod tf;

pub use pso::{pso_minimize, run_af_pso, PsoConfig, PsoOutcome};
pub use ste::{run_af_ste, SteConfig, SteOutcome};
pub use tf::{run_tf, TfConfig, TfOutcome, GRADIENT_COST_FACTOR};
