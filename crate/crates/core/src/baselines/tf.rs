//! Three-field grayscale optimization: filter and project box-constrained latent densities
//! and minimize the grayscale cost with L-BFGS-B under a rising projection strength.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::lbfgsb::{minimize_with, LbfgsbOptions, Termination};
use crate::error::{Error, Result};
use crate::estimator::Incumbent;
use crate::fdg::{check_feasibility, BinaryDesign};
use crate::field::{FieldChain, LatentMap};
use crate::grid::Brush;
use crate::problem::{CostFunction, Fidelity};
use crate::rng::substream;
use crate::trace::{IterationRecord, OptimizationTrace};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TfConfig {
    pub beta_schedule: Vec<f64>,
    pub iterations_per_beta: usize,
    /// Cap on cost-and-gradient evaluations over the whole run.
    pub max_evaluations: Option<usize>,
    pub memory: usize,
    /// Defaults to `L_min`.
    pub filter_sigma: Option<f64>,
    /// Latent densities start uniform in `[-init_range, init_range]`.
    pub init_range: f64,
    pub seed: u64,
}

impl Default for TfConfig {
    fn default() -> Self {
        TfConfig {
            beta_schedule: vec![8.0, 16.0, 32.0, 64.0, 128.0],
            iterations_per_beta: 100,
            max_evaluations: None,
            memory: 10,
            filter_sigma: None,
            init_range: 0.5,
            seed: 0,
        }
    }
}

impl TfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beta_schedule.is_empty() || self.beta_schedule.iter().any(|b| !(*b > 0.0)) {
            return Err(Error::Config("beta_schedule must hold positive values".into()));
        }
        if self.beta_schedule.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("beta_schedule must be strictly increasing".into()));
        }
        if self.iterations_per_beta == 0 || self.memory == 0 {
            return Err(Error::Config("iterations_per_beta and memory must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.init_range) {
            return Err(Error::Config("init_range must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TfOutcome {
    /// `best` holds the thresholded design and its cost.
    pub trace: OptimizationTrace,
    pub design: BinaryDesign,
    pub binary_cost: f64,
    pub grayscale_cost: f64,
    /// Whether the thresholded design meets the minimum feature size.
    pub feasible: bool,
    /// Number of projection-strength stages entered.
    pub stages: usize,
    pub evaluations: usize,
    pub latent: Vec<f64>,
}

/// Cost of one grayscale evaluation relative to a forward-only evaluation.
pub const GRADIENT_COST_FACTOR: f64 = 1.5;

pub fn run_tf(config: &TfConfig, problem: &dyn CostFunction) -> Result<TfOutcome> {
    config.validate()?;
    if !problem.supports_gradient() {
        return Err(Error::Unsupported("three-field optimization needs cost gradients".into()));
    }
    let grid = problem.grid().clone();
    let sigma_f = config.filter_sigma.unwrap_or(grid.min_feature() as f64);
    let mut chain = FieldChain::new(grid.clone(), sigma_f, config.beta_schedule[0], LatentMap::Direct)?;
    let n = grid.num_params();
    let mut rng = substream(config.seed, "tf-init", 0, 0);
    let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..=1.0) * config.init_range).collect();
    let (lower, upper) = (vec![-1.0; n], vec![1.0; n]);
    let budget = config.max_evaluations.unwrap_or(usize::MAX);
    let mut trace = OptimizationTrace::new("tf");
    let mut evaluations = 0;
    let mut stages = 0;
    let mut grayscale_cost = f64::NAN;
    let mut best_gray = f64::INFINITY;

    for &beta in &config.beta_schedule {
        if evaluations >= budget {
            break;
        }
        chain.set_beta(beta)?;
        stages += 1;
        let chain_ref = &chain;
        let objective = |p: &[f64]| -> Result<(f64, Vec<f64>)> {
            let state = chain_ref.forward(p)?;
            let density: Vec<f64> = state.reward.iter().map(|r| 0.5 * (r + 1.0)).collect();
            let (f, g) = problem
                .cost_and_gradient(&density)
                .ok_or_else(|| Error::Unsupported("problem lost gradient support".into()))??;
            Error::check_len(density.len(), g.len())?;
            let g_reward: Vec<f64> = g.iter().map(|v| 0.5 * v).collect();
            Ok((f, chain_ref.backward(&state, &g_reward)?))
        };
        let opts = LbfgsbOptions {
            memory: config.memory,
            max_iterations: config.iterations_per_beta,
            max_evaluations: budget - evaluations,
            ..Default::default()
        };
        let result = minimize_with(objective, &x, &lower, &upper, &opts, &mut |info| {
            best_gray = best_gray.min(info.f);
            trace.records.push(IterationRecord {
                iteration: trace.records.len() + 1,
                ensemble_cost: info.f,
                best_cost: best_gray,
                m: 1,
                ..Default::default()
            });
        })?;
        evaluations += result.evaluations;
        grayscale_cost = result.f;
        x = result.x;
        if result.termination == Termination::LineSearchFailed {
            log::debug!("line search stalled at projection strength {beta}");
        }
    }

    let state = chain.forward(&x)?;
    let design = BinaryDesign::new(grid.rows(), grid.cols(), state.reward.iter().map(|&r| u8::from(r > 0.0)).collect())?;
    let binary_cost = problem.evaluate(&design, Fidelity::Hi)?;
    let feasible = check_feasibility(&design, &Brush::new(grid.min_feature())?);
    trace.hf_equiv_cost = evaluations as f64 * GRADIENT_COST_FACTOR + 1.0;
    trace.best = Some(Incumbent { cost: binary_cost, design: design.clone() });
    Ok(TfOutcome { trace, design, binary_cost, grayscale_cost, feasible, stages, evaluations, latent: x })
}
