//! Always-feasible gradient descent with a straight-through estimator: the generator step
//! is treated as the identity when pulling the design gradient back to the reward field.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::adam::{AdamParams, AdamState};
use crate::error::{Error, Result};
use crate::estimator::track_best;
use crate::fdg::FeasibleDesignGenerator;
use crate::field::{bound_map, unbound_map, FieldChain, LatentMap};
use crate::gegd::default_filter_sigma;
use crate::problem::CostFunction;
use crate::rng::substream;
use crate::trace::{IterationRecord, OptimizationTrace};

use super::tf::GRADIENT_COST_FACTOR;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SteConfig {
    pub iterations: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eta0: f64,
    pub eps_adam: f64,
    pub beta_proj: f64,
    pub filter_sigma: Option<f64>,
    /// Latent densities start uniform in `[-init_range, init_range]`.
    pub init_range: f64,
    pub seed: u64,
}

impl Default for SteConfig {
    fn default() -> Self {
        SteConfig {
            iterations: 300,
            beta1: 0.667,
            beta2: 0.9,
            eta0: 1e-3,
            eps_adam: 1e-8,
            beta_proj: 8.0,
            filter_sigma: None,
            init_range: 0.5,
            seed: 0,
        }
    }
}

impl SteConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if !(self.eta0 > 0.0) || !(self.beta_proj > 0.0) {
            return Err(Error::Config("eta0 and beta_proj must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.init_range) {
            return Err(Error::Config("init_range must lie in [0, 1)".into()));
        }
        AdamParams::new(self.beta1, self.beta2, self.eps_adam).map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SteOutcome {
    pub trace: OptimizationTrace,
    pub zeta: Vec<f64>,
}

pub fn run_af_ste(config: &SteConfig, problem: &dyn CostFunction) -> Result<SteOutcome> {
    config.validate()?;
    if !problem.supports_gradient() {
        return Err(Error::Unsupported("straight-through descent needs cost gradients".into()));
    }
    let grid = problem.grid().clone();
    let sigma_f = config.filter_sigma.unwrap_or_else(|| default_filter_sigma(grid.min_feature()));
    let chain = FieldChain::new(grid.clone(), sigma_f, config.beta_proj, LatentMap::Dummy)?;
    let fdg = FeasibleDesignGenerator::for_grid(&grid)?;
    let n = grid.num_params();
    let mut rng = substream(config.seed, "ste-init", 0, 0);
    let latent0: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..=1.0) * config.init_range).collect();
    let mut zeta = unbound_map(&latent0);
    let mut adam = AdamState::new(n, AdamParams::new(config.beta1, config.beta2, config.eps_adam)?)?;
    let mut trace = OptimizationTrace::new("af_ste");

    for iteration in 1..=config.iterations {
        let state = chain.forward(&zeta)?;
        let design = fdg.generate(&state.reward)?;
        let (f, g) = problem
            .cost_and_gradient(&design.to_density())
            .ok_or_else(|| Error::Unsupported("problem lost gradient support".into()))??;
        Error::check_len(grid.len(), g.len())?;
        trace.hf_equiv_cost += GRADIENT_COST_FACTOR;
        trace.best = track_best(trace.best.take(), [(f, &design)]);
        let grad = chain.backward(&state, &g)?;
        adam.step(&mut zeta, &grad, config.eta0)?;
        let norm = bound_map(&zeta).0.iter().map(|x| x * x).sum::<f64>().sqrt();
        trace.records.push(IterationRecord {
            iteration,
            ensemble_cost: f,
            best_cost: trace.best.as_ref().map_or(f, |b| b.cost),
            mu_l_norm: Some(norm),
            eta: Some(config.eta0),
            m: 1,
            ..Default::default()
        });
    }
    Ok(SteOutcome { trace, zeta })
}
