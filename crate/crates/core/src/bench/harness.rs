//! Budget-matched benchmark and covariance/control-variate ablation on the test function.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::test_function::{TestFunction, TestFunctionSpec};
use crate::baselines::{run_af_pso, run_af_ste, run_tf, PsoConfig, SteConfig, TfConfig, GRADIENT_COST_FACTOR};
use crate::error::{Error, Result};
use crate::gegd::{self, ControlVariateConfig, GegdConfig};
use crate::grid::{DesignGrid, Symmetry};
use crate::problem::Evaluator;
use crate::rng::derive_seed;
use crate::sampling::CovarianceMode;
use crate::trace::OptimizationTrace;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Gegd,
    Tf,
    AfSte,
    AfPso,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::Gegd, Algorithm::Tf, Algorithm::AfSte, Algorithm::AfPso];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Gegd => "gegd",
            Algorithm::Tf => "tf",
            Algorithm::AfSte => "af_ste",
            Algorithm::AfPso => "af_pso",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub rows: usize,
    pub cols: usize,
    pub symmetry: Symmetry,
    pub min_feature: usize,
    pub pixel_pitch: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { rows: 18, cols: 36, symmetry: Symmetry::D1Cols, min_feature: 4, pixel_pitch: 1.0 }
    }
}

impl GridConfig {
    pub fn build(&self) -> Result<DesignGrid> {
        DesignGrid::with_pitch(self.rows, self.cols, self.pixel_pitch, self.symmetry, self.min_feature)
            .map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub grid: GridConfig,
    pub function: TestFunctionSpec,
    pub iterations: usize,
    pub repetitions: usize,
    pub seed: u64,
    pub algorithms: Vec<Algorithm>,
    /// Cost of one iteration of the ensemble methods, in high-fidelity evaluations.
    pub budget_per_iteration: f64,
    /// Independent runs of each gradient method per repetition; the best one counts.
    pub gradient_runs: usize,
    pub parity_tolerance: f64,
    pub gegd: GegdConfig,
    pub tf: TfConfig,
    pub af_ste: SteConfig,
    pub af_pso: PsoConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            grid: GridConfig::default(),
            function: TestFunctionSpec::default(),
            iterations: 200,
            repetitions: 20,
            seed: 1,
            algorithms: Algorithm::ALL.to_vec(),
            budget_per_iteration: 10.0,
            gradient_runs: 7,
            parity_tolerance: 0.05,
            gegd: GegdConfig {
                control_variate: ControlVariateConfig { enabled: true, cost_ratio: Some(33.0), ..Default::default() },
                ..Default::default()
            },
            tf: TfConfig::default(),
            af_ste: SteConfig::default(),
            af_pso: PsoConfig::default(),
        }
    }
}

/// Per-run iteration caps derived from the shared budget.
#[derive(Clone, Debug, PartialEq)]
pub struct BudgetPlan {
    pub total: f64,
    pub tf_evaluations: usize,
    pub ste_iterations: usize,
    /// Planned cost per repetition, in high-fidelity evaluations.
    pub planned: Vec<(Algorithm, f64)>,
}

fn gegd_cost_per_iteration(cfg: &GegdConfig) -> f64 {
    if cfg.control_variate.enabled {
        cfg.control_variate.budget
    } else {
        cfg.samples as f64
    }
}

/// Derives per-run caps and checks every algorithm's planned cost against the budget.
pub fn plan_budget(config: &BenchConfig) -> Result<BudgetPlan> {
    if config.iterations == 0 || config.repetitions == 0 || config.gradient_runs == 0 {
        return Err(Error::Config("iterations, repetitions and gradient_runs must be positive".into()));
    }
    if !(config.budget_per_iteration > 0.0) {
        return Err(Error::Config("budget_per_iteration must be positive".into()));
    }
    let total = config.iterations as f64 * config.budget_per_iteration;
    let runs = config.gradient_runs as f64;
    let per_run = total / runs;
    // TF spends one extra forward evaluation on its thresholded design.
    let tf_evaluations = ((per_run - 1.0) / GRADIENT_COST_FACTOR).floor().max(0.0) as usize;
    let ste_iterations = (per_run / GRADIENT_COST_FACTOR).floor() as usize;
    let planned: Vec<(Algorithm, f64)> = config
        .algorithms
        .iter()
        .map(|&a| {
            let cost = match a {
                Algorithm::Gegd => config.iterations as f64 * gegd_cost_per_iteration(&config.gegd),
                Algorithm::AfPso => (config.iterations * config.af_pso.swarm_size) as f64,
                Algorithm::Tf => runs * (tf_evaluations as f64 * GRADIENT_COST_FACTOR + 1.0),
                Algorithm::AfSte => runs * ste_iterations as f64 * GRADIENT_COST_FACTOR,
            };
            (a, cost)
        })
        .collect();
    for &(a, cost) in &planned {
        if (cost - total).abs() > config.parity_tolerance * total + 1e-12 {
            return Err(Error::Config(format!(
                "{} plans {cost} high-fidelity evaluations per repetition, budget is {total}",
                a.as_str()
            )));
        }
        if cost == 0.0 {
            return Err(Error::Config(format!("{} gets no evaluations under this budget", a.as_str())));
        }
    }
    Ok(BudgetPlan { total, tf_evaluations, ste_iterations, planned })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub algorithm: String,
    pub rep: usize,
    pub best_cost: f64,
    pub wall_time: f64,
    pub hf_equiv_cost: f64,
    /// Mean sampled cost over the last ten iterations of the best-scoring run.
    pub final_ensemble_cost: f64,
    /// For TF: whether the reported design meets the minimum feature size.
    pub feasible: Option<bool>,
}

#[derive(Clone, Debug)]
pub struct RunTrace {
    pub algorithm: String,
    pub rep: usize,
    pub run: usize,
    pub trace: OptimizationTrace,
}

#[derive(Clone, Debug, Default)]
pub struct BenchResult {
    pub rows: Vec<SummaryRow>,
    pub traces: Vec<RunTrace>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlgorithmStats {
    pub algorithm: String,
    pub count: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile(&v, 0.5)
}

fn final_mean(trace: &OptimizationTrace, window: usize) -> f64 {
    let n = trace.records.len();
    let tail = &trace.records[n.saturating_sub(window)..];
    if tail.is_empty() {
        return f64::NAN;
    }
    tail.iter().map(|r| r.ensemble_cost).sum::<f64>() / tail.len() as f64
}

const FINAL_WINDOW: usize = 10;

impl BenchResult {
    pub fn best_costs(&self, algorithm: &str) -> Vec<f64> {
        self.rows.iter().filter(|r| r.algorithm == algorithm).map(|r| r.best_cost).collect()
    }

    pub fn final_ensemble_costs(&self, algorithm: &str) -> Vec<f64> {
        self.rows.iter().filter(|r| r.algorithm == algorithm).map(|r| r.final_ensemble_cost).collect()
    }

    fn algorithms(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for r in &self.rows {
            if !names.contains(&r.algorithm) {
                names.push(r.algorithm.clone());
            }
        }
        names
    }

    /// Distribution of best costs per algorithm, in first-appearance order.
    pub fn stats(&self) -> Vec<AlgorithmStats> {
        self.algorithms()
            .into_iter()
            .map(|a| {
                let mut v = self.best_costs(&a);
                v.sort_by(f64::total_cmp);
                AlgorithmStats {
                    count: v.len(),
                    min: quantile(&v, 0.0),
                    q1: quantile(&v, 0.25),
                    median: quantile(&v, 0.5),
                    q3: quantile(&v, 0.75),
                    max: quantile(&v, 1.0),
                    algorithm: a,
                }
            })
            .collect()
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("algorithm,rep,best_cost,wall_time,hf_equiv_cost,final_ensemble_cost,feasible\n");
        for r in &self.rows {
            let feasible = r.feasible.map(|f| f.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{:.6},{},{},{}",
                r.algorithm, r.rep, r.best_cost, r.wall_time, r.hf_equiv_cost, r.final_ensemble_cost, feasible
            );
        }
        out
    }

    pub fn stats_csv(&self) -> String {
        let mut out = String::from("algorithm,count,min,q1,median,q3,max\n");
        for s in self.stats() {
            let _ = writeln!(out, "{},{},{},{},{},{},{}", s.algorithm, s.count, s.min, s.q1, s.median, s.q3, s.max);
        }
        out
    }

    /// Writes `summary.csv`, `stats.csv`, and one trace per run under `traces/`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir.join("traces"))?;
        std::fs::write(dir.join("summary.csv"), self.summary_csv())?;
        std::fs::write(dir.join("stats.csv"), self.stats_csv())?;
        for t in &self.traces {
            let name = format!("{}_rep{:03}_run{}.csv", t.algorithm, t.rep, t.run);
            std::fs::write(dir.join("traces").join(name), t.trace.to_csv())?;
        }
        Ok(())
    }
}

struct RepOutput {
    row: SummaryRow,
    traces: Vec<RunTrace>,
}

fn run_gegd_rep(
    name: &str,
    cfg: &GegdConfig,
    problem: &TestFunction,
    evaluator: &Evaluator,
    dist: &crate::sampling::SamplingDistribution,
    rep: usize,
) -> Result<RepOutput> {
    let start = Instant::now();
    let out = gegd::run_with(cfg, problem, evaluator, dist, &mut |_, _| {})?;
    let mut trace = out.trace;
    trace.algorithm = name.to_string();
    let row = SummaryRow {
        algorithm: name.to_string(),
        rep,
        best_cost: trace.best_cost().unwrap_or(f64::NAN),
        wall_time: start.elapsed().as_secs_f64(),
        hf_equiv_cost: trace.hf_equiv_cost,
        final_ensemble_cost: final_mean(&trace, FINAL_WINDOW),
        feasible: None,
    };
    Ok(RepOutput { row, traces: vec![RunTrace { algorithm: name.to_string(), rep, run: 0, trace }] })
}

fn run_rep(
    algorithm: Algorithm,
    config: &BenchConfig,
    plan: &BudgetPlan,
    problem: &TestFunction,
    evaluator: &Evaluator,
    dist: Option<&crate::sampling::SamplingDistribution>,
    rep: usize,
) -> Result<RepOutput> {
    let name = algorithm.as_str();
    let start = Instant::now();
    let rep_seed = |run: usize| derive_seed(config.seed, name, rep as u64, run as u64);
    let mut traces = Vec::new();
    let (best_cost, feasible, final_cost) = match algorithm {
        Algorithm::Gegd => {
            let cfg = GegdConfig { max_iterations: config.iterations, seed: rep_seed(0), ..config.gegd.clone() };
            let dist = dist.expect("sampling distribution prepared for GEGD");
            return run_gegd_rep(name, &cfg, problem, evaluator, dist, rep);
        }
        Algorithm::AfPso => {
            let cfg = PsoConfig { iterations: config.iterations, seed: rep_seed(0), ..config.af_pso.clone() };
            let out = run_af_pso(&cfg, problem, evaluator)?;
            let best = out.trace.best_cost().unwrap_or(f64::NAN);
            let fin = final_mean(&out.trace, FINAL_WINDOW);
            traces.push(RunTrace { algorithm: name.into(), rep, run: 0, trace: out.trace });
            (best, None, fin)
        }
        Algorithm::Tf => {
            let iters = plan.tf_evaluations.div_ceil(config.tf.beta_schedule.len().max(1)).max(1);
            let mut best: Option<(f64, bool, f64)> = None;
            for run in 0..config.gradient_runs {
                let cfg = TfConfig {
                    iterations_per_beta: iters,
                    max_evaluations: Some(plan.tf_evaluations),
                    seed: rep_seed(run),
                    ..config.tf.clone()
                };
                let out = run_tf(&cfg, problem)?;
                let fin = final_mean(&out.trace, FINAL_WINDOW);
                if best.is_none_or(|b| out.binary_cost < b.0) {
                    best = Some((out.binary_cost, out.feasible, fin));
                }
                traces.push(RunTrace { algorithm: name.into(), rep, run, trace: out.trace });
            }
            let (c, f, fin) = best.expect("at least one run");
            (c, Some(f), fin)
        }
        Algorithm::AfSte => {
            let mut best: Option<(f64, f64)> = None;
            for run in 0..config.gradient_runs {
                let cfg = SteConfig { iterations: plan.ste_iterations, seed: rep_seed(run), ..config.af_ste.clone() };
                let out = run_af_ste(&cfg, problem)?;
                let c = out.trace.best_cost().unwrap_or(f64::NAN);
                let fin = final_mean(&out.trace, FINAL_WINDOW);
                if best.is_none_or(|b| c < b.0) {
                    best = Some((c, fin));
                }
                traces.push(RunTrace { algorithm: name.into(), rep, run, trace: out.trace });
            }
            let (c, fin) = best.expect("at least one run");
            (c, None, fin)
        }
    };
    let row = SummaryRow {
        algorithm: name.to_string(),
        rep,
        best_cost,
        wall_time: start.elapsed().as_secs_f64(),
        hf_equiv_cost: traces.iter().map(|t| t.trace.hf_equiv_cost).sum(),
        final_ensemble_cost: final_cost,
        feasible,
    };
    Ok(RepOutput { row, traces })
}

fn collect(outputs: Vec<Result<RepOutput>>, result: &mut BenchResult) -> Result<()> {
    for o in outputs {
        let o = o?;
        result.rows.push(o.row);
        result.traces.extend(o.traces);
    }
    Ok(())
}

/// Runs every configured algorithm for every repetition on one shared test function.
/// Repetitions of an algorithm run in parallel on the evaluator's pool.
pub fn run_benchmark(config: &BenchConfig, evaluator: &Evaluator) -> Result<BenchResult> {
    let plan = plan_budget(config)?;
    let grid = config.grid.build()?;
    let problem = TestFunction::new(grid.clone(), config.function.clone())?;
    let mut result = BenchResult::default();
    let reps: Vec<usize> = (0..config.repetitions).collect();
    for &algorithm in &config.algorithms {
        let dist = match algorithm {
            Algorithm::Gegd => Some(gegd::sampling_distribution(&config.gegd, &grid)?),
            _ => None,
        };
        let outputs = evaluator.map(&reps, |&rep| run_rep(algorithm, config, &plan, &problem, evaluator, dist.as_ref(), rep));
        collect(outputs, &mut result)?;
    }
    Ok(result)
}

/// Ablation variants: isotropic sampling, RBF sampling, and RBF sampling with control
/// variates.
pub fn ablation_variants(base: &GegdConfig, budget_per_iteration: f64) -> Vec<(&'static str, GegdConfig)> {
    let samples = budget_per_iteration.round().max(1.0) as usize;
    let plain = ControlVariateConfig { enabled: false, ..base.control_variate.clone() };
    let cv = ControlVariateConfig {
        enabled: true,
        cost_ratio: base.control_variate.cost_ratio.or(Some(33.0)),
        budget: budget_per_iteration,
        ..base.control_variate.clone()
    };
    vec![
        (
            "gegd_iso",
            GegdConfig { covariance: CovarianceMode::Isotropic, samples, control_variate: plain.clone(), ..base.clone() },
        ),
        ("gegd_rbf", GegdConfig { covariance: CovarianceMode::Rbf, samples, control_variate: plain, ..base.clone() }),
        ("gegd_rbf_cv", GegdConfig { covariance: CovarianceMode::Rbf, control_variate: cv, ..base.clone() }),
    ]
}

pub fn run_ablation(config: &BenchConfig, evaluator: &Evaluator) -> Result<BenchResult> {
    if config.iterations == 0 || config.repetitions == 0 {
        return Err(Error::Config("iterations and repetitions must be positive".into()));
    }
    let grid = config.grid.build()?;
    let problem = TestFunction::new(grid.clone(), config.function.clone())?;
    let mut result = BenchResult::default();
    let reps: Vec<usize> = (0..config.repetitions).collect();
    for (name, variant) in ablation_variants(&config.gegd, config.budget_per_iteration) {
        let dist = gegd::sampling_distribution(&variant, &grid)?;
        let outputs = evaluator.map(&reps, |&rep| {
            let cfg = GegdConfig {
                max_iterations: config.iterations,
                seed: derive_seed(config.seed, "ablation", rep as u64, 0),
                ..variant.clone()
            };
            run_gegd_rep(name, &cfg, &problem, evaluator, &dist, rep)
        });
        collect(outputs, &mut result)?;
    }
    Ok(result)
}
