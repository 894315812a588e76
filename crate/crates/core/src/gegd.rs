//! Gaussian ensemble gradient descent.
//!
//! Each iteration maps the dummy variables to the mean reward field, samples a Gaussian
//! ensemble around it, turns every member into a feasible design, and pushes the
//! score-function gradient of the (exponentiated) ensemble cost back through the chain
//! into an ADAM step.

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::adam::{step_size, AdamParams, AdamState};
use crate::error::{Error, Result};
use crate::estimator::{
    acv_gradient, ensemble_cost, ensemble_gradient, exponentiate, track_best, BudgetPolicy, Incumbent,
};
use crate::fdg::{BinaryDesign, FeasibleDesignGenerator};
use crate::field::{bound_map, FieldChain, LatentMap};
use crate::problem::{CostFunction, CostJob, Evaluator, Fidelity};
use crate::sampling::{build_rbf_covariance, CovarianceMode, RbfCovariance, SamplingDistribution};
use crate::trace::{IterationRecord, OptimizationTrace};

/// Low-fidelity control-variate settings. Times are in units of one high-fidelity
/// evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlVariateConfig {
    pub enabled: bool,
    /// Ratio `t_HF / t_LF`. `None` measures it from evaluation wall times, which makes
    /// runs timing dependent.
    pub cost_ratio: Option<f64>,
    /// Per-iteration budget in high-fidelity evaluations.
    pub budget: f64,
    pub min_high_fidelity: usize,
}

impl Default for ControlVariateConfig {
    fn default() -> Self {
        ControlVariateConfig { enabled: false, cost_ratio: None, budget: 10.0, min_high_fidelity: 5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GegdConfig {
    pub max_iterations: usize,
    pub seed: u64,
    pub sigma_r: f64,
    pub beta_exp: f64,
    pub exponentiate: bool,
    pub covariance: CovarianceMode,
    pub kappa: f64,
    /// Ensemble size when control variates are off.
    pub samples: usize,
    pub control_variate: ControlVariateConfig,
    pub eta0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub beta_proj: f64,
    /// Defaults to `sqrt(2) L_min / 4`.
    pub filter_sigma: Option<f64>,
    /// Directory for cached covariance factors.
    pub cache_dir: Option<PathBuf>,
}

impl Default for GegdConfig {
    fn default() -> Self {
        GegdConfig {
            max_iterations: 300,
            seed: 0,
            sigma_r: 0.005,
            beta_exp: 20.0,
            exponentiate: true,
            covariance: CovarianceMode::Rbf,
            kappa: 1e6,
            samples: 10,
            control_variate: ControlVariateConfig::default(),
            eta0: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            beta_proj: 8.0,
            filter_sigma: None,
            cache_dir: None,
        }
    }
}

impl GegdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if !(self.sigma_r > 0.0 && self.sigma_r.is_finite()) {
            return Err(Error::Config("sigma_r must be positive".into()));
        }
        if !(self.beta_exp > 0.0) || !(self.eta0 > 0.0) || !(self.beta_proj > 0.0) {
            return Err(Error::Config("beta_exp, eta0 and beta_proj must be positive".into()));
        }
        if !(self.kappa > 1.0) {
            return Err(Error::Config("kappa must exceed 1".into()));
        }
        if self.samples == 0 {
            return Err(Error::Config("samples must be at least 1".into()));
        }
        if let Some(s) = self.filter_sigma {
            if !(s > 0.0) {
                return Err(Error::Config("filter_sigma must be positive".into()));
            }
        }
        let cv = &self.control_variate;
        if cv.enabled {
            if let Some(r) = cv.cost_ratio {
                if !(r > 0.0 && r.is_finite()) {
                    return Err(Error::Config("control_variate.cost_ratio must be positive".into()));
                }
            }
            let ratio = cv.cost_ratio.unwrap_or(1.0);
            BudgetPolicy::new(1.0, 1.0 / ratio, cv.budget, cv.min_high_fidelity)?;
        }
        AdamParams::new(self.beta1, self.beta2, self.eps_adam).map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }
}

/// Default filter width for generator-based flows.
pub fn default_filter_sigma(min_feature: usize) -> f64 {
    std::f64::consts::SQRT_2 * min_feature as f64 / 4.0
}

#[derive(Clone, Debug)]
pub struct GegdOutcome {
    pub trace: OptimizationTrace,
    /// Final dummy variables.
    pub zeta: Vec<f64>,
}

/// Builds the sampling distribution for a grid, using the covariance cache when configured.
pub fn sampling_distribution(
    config: &GegdConfig,
    grid: &crate::grid::DesignGrid,
) -> Result<SamplingDistribution> {
    match config.covariance {
        CovarianceMode::Isotropic => SamplingDistribution::isotropic(grid.len(), config.sigma_r),
        CovarianceMode::Rbf => {
            let cov = match &config.cache_dir {
                Some(dir) => RbfCovariance::load_or_build(grid, config.kappa, dir)?,
                None => build_rbf_covariance(grid, config.kappa)?,
            };
            SamplingDistribution::rbf(Arc::new(cov), config.sigma_r)
        }
    }
}

pub fn run(config: &GegdConfig, problem: &dyn CostFunction, evaluator: &Evaluator) -> Result<GegdOutcome> {
    let dist = sampling_distribution(config, problem.grid())?;
    run_with(config, problem, evaluator, &dist, &mut |_, _| {})
}

/// Runs GEGD with a prebuilt sampling distribution. `observer` sees every record together
/// with the incumbent after it.
pub fn run_with(
    config: &GegdConfig,
    problem: &dyn CostFunction,
    evaluator: &Evaluator,
    dist: &SamplingDistribution,
    observer: &mut dyn FnMut(&IterationRecord, Option<&Incumbent>),
) -> Result<GegdOutcome> {
    config.validate()?;
    let grid = problem.grid().clone();
    Error::check_len(grid.len(), dist.dim())?;
    let sigma_f = config.filter_sigma.unwrap_or_else(|| default_filter_sigma(grid.min_feature()));
    let chain = FieldChain::new(grid.clone(), sigma_f, config.beta_proj, LatentMap::Dummy)?;
    let fdg = FeasibleDesignGenerator::for_grid(&grid)?;
    let n = grid.num_params();
    let mut zeta = vec![0.0; n];
    let mut adam = AdamState::new(n, AdamParams::new(config.beta1, config.beta2, config.eps_adam)?)?;
    let cv = &config.control_variate;
    let base_policy = if cv.enabled {
        Some(BudgetPolicy::new(1.0, 1.0 / cv.cost_ratio.unwrap_or(1.0), cv.budget, cv.min_high_fidelity)?)
    } else {
        None
    };
    let mut trace = OptimizationTrace::new("gegd");
    let mut norms = vec![0.0];
    let mut corr_prev = 0.0;

    for iteration in 1..=config.max_iterations {
        let state = chain.forward(&zeta)?;
        let mu_r = &state.reward;

        let policy = base_policy.as_ref().map(|p| match (cv.cost_ratio, evaluator.measured_times()) {
            (None, Some((t_hi, t_lo))) => p.with_times(1.0, t_lo / t_hi),
            _ => p.clone(),
        });
        let (m, r_cv) = match &policy {
            Some(p) => {
                let b = p.update(corr_prev);
                (b.m, b.r_cv)
            }
            None => (config.samples, 1),
        };
        let total = m * r_cv;

        let ensemble = dist.draw_ensemble(total, config.seed, iteration as u64);
        let members: Vec<usize> = (0..total).collect();
        let designs: Vec<BinaryDesign> = evaluator
            .map(&members, |&k| {
                let mut reward: Vec<f64> = mu_r.iter().zip(ensemble.deltas.column(k).iter()).map(|(a, b)| a + b).collect();
                grid.symmetrize(&mut reward);
                fdg.generate(&reward)
            })
            .into_iter()
            .collect::<Result<_>>()?;

        let mut jobs: Vec<CostJob<'_>> = designs[..m].iter().map(|d| CostJob { design: d, fidelity: Fidelity::Hi }).collect();
        if policy.is_some() {
            jobs.extend(designs.iter().map(|d| CostJob { design: d, fidelity: Fidelity::Lo }));
        }
        let costs = evaluator.dispatch_with_retry(problem, &jobs)?;
        trace.hf_equiv_cost += m as f64
            + policy.as_ref().map_or(0.0, |p| total as f64 * p.t_lf() / p.t_hf());

        // Keep paired members with both fidelities, then low-fidelity-only members.
        let (hi_costs, lo_costs, kept) = if policy.is_some() {
            let lo = &costs[m..];
            let mut kept = Vec::new();
            for k in 0..m {
                if costs[k].is_some() && lo[k].is_some() {
                    kept.push(k);
                }
            }
            let paired = kept.len();
            kept.extend((m..total).filter(|&k| lo[k].is_some()));
            let hi: Vec<f64> = kept[..paired].iter().map(|&k| costs[k].unwrap()).collect();
            let lo: Vec<f64> = kept.iter().map(|&k| lo[k].unwrap()).collect();
            (hi, lo, kept)
        } else {
            let kept: Vec<usize> = (0..m).filter(|&k| costs[k].is_some()).collect();
            let hi: Vec<f64> = kept.iter().map(|&k| costs[k].unwrap()).collect();
            (hi, Vec::new(), kept)
        };
        if hi_costs.is_empty() {
            return Err(Error::Backend(format!("every high-fidelity evaluation failed in iteration {iteration}")));
        }
        let m_used = hi_costs.len();
        let ensemble = if kept.len() == total { ensemble } else { ensemble.select(&kept) };

        let f_ref = hi_costs.iter().copied().fold(f64::INFINITY, f64::min);
        let transform = |f: f64| if config.exponentiate { exponentiate(f, config.beta_exp, f_ref) } else { f };
        let hi_t: Vec<f64> = hi_costs.iter().map(|&f| transform(f)).collect();

        let mut record = IterationRecord {
            iteration,
            ensemble_cost: ensemble_cost(&hi_costs)?,
            m: m_used,
            exp_cost: config.exponentiate.then(|| ensemble_cost(&hi_t)).transpose()?,
            ..Default::default()
        };
        let grad_reward = if policy.is_some() {
            let lo_t: Vec<f64> = lo_costs.iter().map(|&h| transform(h)).collect();
            let est = acv_gradient(&hi_t, &lo_t, &ensemble, dist)?;
            corr_prev = est.corr;
            record.r_cv = Some(r_cv);
            record.corr = Some(est.corr);
            record.beta_cv = Some(est.beta_cv);
            record.grad_var = Some(est.var_qf);
            est.grad
        } else {
            let hi_members = ensemble.select(&(0..m_used).collect::<Vec<_>>());
            ensemble_gradient(&hi_t, &hi_members, dist)?
        };

        let best = track_best(
            trace.best.take(),
            kept[..m_used].iter().zip(&hi_costs).map(|(&k, &f)| (f, &designs[k])),
        );
        trace.best = best;

        let grad = chain.backward(&state, &grad_reward)?;
        let eta = step_size(iteration, &norms, config.eta0);
        adam.step(&mut zeta, &grad, eta)?;
        let norm = bound_map(&zeta).0.iter().map(|x| x * x).sum::<f64>().sqrt();
        norms.push(norm);

        record.best_cost = trace.best.as_ref().map_or(f64::NAN, |b| b.cost);
        record.mu_l_norm = Some(norm);
        record.eta = Some(eta);
        observer(&record, trace.best.as_ref());
        trace.records.push(record);
    }
    Ok(GegdOutcome { trace, zeta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{DesignGrid, Symmetry};
    use crate::problem::CostError;

    struct Constant(DesignGrid, f64);

    impl CostFunction for Constant {
        fn grid(&self) -> &DesignGrid {
            &self.0
        }
        fn evaluate(&self, _: &BinaryDesign, _: Fidelity) -> Result<f64, CostError> {
            Ok(self.1)
        }
    }

    struct SolidFraction(DesignGrid);

    impl CostFunction for SolidFraction {
        fn grid(&self) -> &DesignGrid {
            &self.0
        }
        fn evaluate(&self, d: &BinaryDesign, fid: Fidelity) -> Result<f64, CostError> {
            let f = d.pixels().iter().map(|&p| f64::from(p)).sum::<f64>() / d.len() as f64;
            Ok(match fid {
                Fidelity::Hi => f,
                Fidelity::Lo => f + 0.01 * (d.pixels()[0] as f64),
            })
        }
    }

    fn small_grid() -> DesignGrid {
        DesignGrid::new(6, 8, Symmetry::D1Cols, 2).unwrap()
    }

    #[test]
    fn zero_iterations_rejected() {
        let cfg = GegdConfig { max_iterations: 0, ..Default::default() };
        let ev = Evaluator::new(1).unwrap();
        assert!(matches!(run(&cfg, &Constant(small_grid(), 1.0), &ev), Err(Error::Config(_))));
    }

    #[test]
    fn constant_cost_gives_constant_best() {
        let cfg = GegdConfig { max_iterations: 5, ..Default::default() };
        let ev = Evaluator::new(1).unwrap();
        let out = run(&cfg, &Constant(small_grid(), -2.5), &ev).unwrap();
        assert_eq!(out.trace.records.len(), 5);
        assert!(out.trace.records.iter().all(|r| r.best_cost == -2.5 && r.ensemble_cost == -2.5));
    }

    #[test]
    fn deterministic_and_best_monotone() {
        let cfg = GegdConfig {
            max_iterations: 15,
            seed: 9,
            sigma_r: 0.3,
            control_variate: ControlVariateConfig { enabled: true, cost_ratio: Some(10.0), ..Default::default() },
            ..Default::default()
        };
        let p = SolidFraction(small_grid());
        let a = run(&cfg, &p, &Evaluator::new(1).unwrap()).unwrap();
        let b = run(&cfg, &p, &Evaluator::new(3).unwrap()).unwrap();
        assert_eq!(a.trace.to_csv(), b.trace.to_csv());
        assert_eq!(a.zeta, b.zeta);
        let best: Vec<f64> = a.trace.records.iter().map(|r| r.best_cost).collect();
        assert!(best.windows(2).all(|w| w[1] <= w[0]));
        assert!(a.trace.records.iter().all(|r| r.r_cv.is_some() && r.m >= 5));
    }
}
