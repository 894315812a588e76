//! Global-best particle swarm with stall-driven inertia decay and velocity "craziness",
//! plus the always-feasible variant that scores particles through the design generator.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::track_best;
use crate::fdg::{BinaryDesign, FeasibleDesignGenerator};
use crate::field::{FieldChain, LatentMap};
use crate::gegd::default_filter_sigma;
use crate::problem::{CostFunction, CostJob, Evaluator, Fidelity};
use crate::rng::substream;
use crate::trace::{IterationRecord, OptimizationTrace};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsoConfig {
    pub iterations: usize,
    pub swarm_size: usize,
    pub cognitive: f64,
    pub social: f64,
    pub inertia0: f64,
    pub inertia_decay: f64,
    pub stall_window: usize,
    pub craziness_prob: f64,
    pub craziness_fraction: f64,
    pub velocity_clamp: f64,
    pub craziness_range: f64,
    pub beta_proj: f64,
    pub filter_sigma: Option<f64>,
    pub seed: u64,
}

impl Default for PsoConfig {
    fn default() -> Self {
        PsoConfig {
            iterations: 300,
            swarm_size: 10,
            cognitive: 1.49,
            social: 1.49,
            inertia0: 0.9,
            inertia_decay: 0.95,
            stall_window: 5,
            craziness_prob: 0.22,
            craziness_fraction: 0.10,
            velocity_clamp: 0.5,
            craziness_range: 0.5,
            beta_proj: 8.0,
            filter_sigma: None,
            seed: 0,
        }
    }
}

impl PsoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.swarm_size == 0 {
            return Err(Error::Config("iterations and swarm_size must be positive".into()));
        }
        for (name, p) in [("craziness_prob", self.craziness_prob), ("craziness_fraction", self.craziness_fraction)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        if !(self.velocity_clamp > 0.0) || !(self.craziness_range >= 0.0) || !(self.beta_proj > 0.0) {
            return Err(Error::Config("velocity_clamp and beta_proj must be positive".into()));
        }
        if !(self.inertia_decay > 0.0 && self.inertia_decay <= 1.0) {
            return Err(Error::Config("inertia_decay must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// Particles whose velocities are re-randomized when craziness triggers.
    pub fn craziness_count(&self) -> usize {
        if self.craziness_fraction == 0.0 {
            0
        } else {
            ((self.craziness_fraction * self.swarm_size as f64).round() as usize).clamp(1, self.swarm_size)
        }
    }
}

/// Per-iteration swarm summary.
#[derive(Clone, Debug, PartialEq)]
pub struct SwarmStep {
    pub iteration: usize,
    pub mean_cost: f64,
    pub global_best: f64,
    pub inertia: f64,
    pub crazy: bool,
}

#[derive(Clone, Debug)]
pub struct SwarmResult {
    pub best_position: Vec<f64>,
    pub best_cost: f64,
    pub steps: Vec<SwarmStep>,
}

/// Minimizes over `[-1, 1]^dim`. `evaluate` scores the whole swarm at once; non-finite
/// costs count as failures and never become bests.
pub fn pso_minimize<F>(dim: usize, config: &PsoConfig, mut evaluate: F) -> Result<SwarmResult>
where
    F: FnMut(usize, &[Vec<f64>]) -> Result<Vec<f64>>,
{
    config.validate()?;
    let s = config.swarm_size;
    let mut positions: Vec<Vec<f64>> = (0..s)
        .map(|p| {
            let mut rng = substream(config.seed, "pso-init", p as u64, 0);
            (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect()
        })
        .collect();
    let mut velocities = vec![vec![0.0; dim]; s];
    let mut pbest = positions.clone();
    let mut pbest_cost = vec![f64::INFINITY; s];
    let mut gbest = positions[0].clone();
    let mut gbest_cost = f64::INFINITY;
    let mut inertia = config.inertia0;
    let mut stall = 0usize;
    let mut steps = Vec::with_capacity(config.iterations);
    let vmax = config.velocity_clamp;

    for iteration in 1..=config.iterations {
        let costs = evaluate(iteration, &positions)?;
        Error::check_len(s, costs.len())?;
        let mut improved = false;
        for p in 0..s {
            let c = costs[p];
            if c.is_finite() && c < pbest_cost[p] {
                pbest_cost[p] = c;
                pbest[p].clone_from(&positions[p]);
            }
            if c.is_finite() && c < gbest_cost {
                gbest_cost = c;
                gbest.clone_from(&positions[p]);
                improved = true;
            }
        }
        if improved {
            stall = 0;
        } else {
            stall += 1;
            if stall >= config.stall_window {
                inertia *= config.inertia_decay;
            }
        }
        let finite: Vec<f64> = costs.iter().copied().filter(|c| c.is_finite()).collect();
        let mean_cost = if finite.is_empty() { f64::NAN } else { finite.iter().sum::<f64>() / finite.len() as f64 };

        let mut rng = substream(config.seed, "pso-step", iteration as u64, 0);
        for p in 0..s {
            let mut prng = substream(config.seed, "pso-particle", iteration as u64, p as u64);
            for k in 0..dim {
                let r1: f64 = prng.random();
                let r2: f64 = prng.random();
                let v = inertia * velocities[p][k]
                    + config.cognitive * r1 * (pbest[p][k] - positions[p][k])
                    + config.social * r2 * (gbest[k] - positions[p][k]);
                velocities[p][k] = v.clamp(-vmax, vmax);
            }
        }
        let crazy = rng.random::<f64>() < config.craziness_prob;
        if crazy {
            let r = config.craziness_range;
            for p in sample(&mut rng, s, config.craziness_count()).into_iter() {
                for v in velocities[p].iter_mut() {
                    *v = if r > 0.0 { rng.random_range(-r..=r) } else { 0.0 };
                }
            }
        }
        for p in 0..s {
            for k in 0..dim {
                positions[p][k] = (positions[p][k] + velocities[p][k]).clamp(-1.0, 1.0);
            }
        }
        steps.push(SwarmStep { iteration, mean_cost, global_best: gbest_cost, inertia, crazy });
    }
    Ok(SwarmResult { best_position: gbest, best_cost: gbest_cost, steps })
}

#[derive(Clone, Debug)]
pub struct PsoOutcome {
    pub trace: OptimizationTrace,
    pub swarm: SwarmResult,
}

/// Always-feasible PSO: every particle is filtered, projected, and passed through the
/// design generator before its cost is evaluated.
pub fn run_af_pso(config: &PsoConfig, problem: &dyn CostFunction, evaluator: &Evaluator) -> Result<PsoOutcome> {
    config.validate()?;
    let grid = problem.grid().clone();
    let sigma_f = config.filter_sigma.unwrap_or_else(|| default_filter_sigma(grid.min_feature()));
    let chain = FieldChain::new(grid.clone(), sigma_f, config.beta_proj, LatentMap::Direct)?;
    let fdg = FeasibleDesignGenerator::for_grid(&grid)?;
    let mut trace = OptimizationTrace::new("af_pso");
    let swarm = pso_minimize(grid.num_params(), config, |iteration, positions| {
        let designs: Vec<BinaryDesign> = evaluator
            .map(positions, |x| fdg.generate(&chain.forward(x)?.reward))
            .into_iter()
            .collect::<Result<_>>()?;
        let jobs: Vec<CostJob<'_>> = designs.iter().map(|d| CostJob { design: d, fidelity: Fidelity::Hi }).collect();
        let costs = evaluator.dispatch_with_retry(problem, &jobs)?;
        trace.hf_equiv_cost += jobs.len() as f64;
        trace.best = track_best(
            trace.best.take(),
            costs.iter().zip(&designs).filter_map(|(c, d)| c.map(|c| (c, d))),
        );
        let finite: Vec<f64> = costs.iter().flatten().copied().collect();
        if finite.is_empty() {
            return Err(Error::Backend(format!("every swarm evaluation failed in iteration {iteration}")));
        }
        let best_cost = trace.best.as_ref().map_or(f64::NAN, |b| b.cost);
        trace.records.push(IterationRecord {
            iteration,
            ensemble_cost: finite.iter().sum::<f64>() / finite.len() as f64,
            best_cost,
            m: finite.len(),
            ..Default::default()
        });
        Ok(costs.into_iter().map(|c| c.unwrap_or(f64::INFINITY)).collect())
    })?;
    Ok(PsoOutcome { trace, swarm })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_still_particle_stays_put() {
        let cfg = PsoConfig { swarm_size: 1, iterations: 20, craziness_prob: 0.0, ..Default::default() };
        let mut seen = Vec::new();
        pso_minimize(3, &cfg, |_, pos| {
            seen.push(pos[0].clone());
            Ok(vec![1.0])
        })
        .unwrap();
        assert!(seen.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn sphere_converges() {
        let target = [0.3, -0.5, 0.1, 0.7, -0.2];
        let cfg = PsoConfig { iterations: 200, seed: 4, ..Default::default() };
        let r = pso_minimize(5, &cfg, |_, pos| {
            Ok(pos.iter().map(|x| x.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum()).collect())
        })
        .unwrap();
        assert!(r.best_cost < 1e-2, "{}", r.best_cost);
        assert!(r.steps.windows(2).all(|w| w[1].global_best <= w[0].global_best));
    }
}
