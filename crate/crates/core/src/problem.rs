//! Cost-function interface and the parallel evaluation pool.

use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdg::BinaryDesign;
use crate::grid::DesignGrid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fidelity {
    Hi,
    Lo,
}

impl Fidelity {
    pub fn as_str(self) -> &'static str {
        match self {
            Fidelity::Hi => "hi",
            Fidelity::Lo => "lo",
        }
    }
}

/// A single evaluation failure. `Member` failures are retried and may be dropped;
/// `Backend` failures abort the run.
#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum CostError {
    #[error("evaluation failed: {0}")]
    Member(String),
    #[error("cost backend failed: {0}")]
    Backend(String),
}

impl From<CostError> for Error {
    fn from(e: CostError) -> Self {
        match e {
            CostError::Member(m) | CostError::Backend(m) => Error::Backend(m),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CostJob<'a> {
    pub design: &'a BinaryDesign,
    pub fidelity: Fidelity,
}

/// An optimization problem over binary designs on a fixed grid.
pub trait CostFunction: Send + Sync {
    fn grid(&self) -> &DesignGrid;

    fn evaluate(&self, design: &BinaryDesign, fidelity: Fidelity) -> Result<f64, CostError>;

    /// Cost and gradient with respect to a full-grid density in [0, 1] (1 = solid).
    /// `None` when the problem cannot differentiate.
    fn cost_and_gradient(&self, _density: &[f64]) -> Option<Result<(f64, Vec<f64>), CostError>> {
        None
    }

    fn supports_gradient(&self) -> bool {
        false
    }

    /// Evaluates a batch, preserving job order. The default fans out over the pool.
    fn evaluate_batch(&self, jobs: &[CostJob<'_>], pool: &rayon::ThreadPool) -> Vec<Result<f64, CostError>> {
        pool.install(|| jobs.par_iter().map(|j| self.evaluate(j.design, j.fidelity)).collect())
    }
}

/// Owns the worker pool and timing statistics for cost evaluation.
pub struct Evaluator {
    pool: rayon::ThreadPool,
    workers: usize,
    timing: Mutex<Timing>,
}

#[derive(Clone, Copy, Debug, Default)]
struct Timing {
    hi: Option<f64>,
    lo: Option<f64>,
}

const TIMING_SMOOTHING: f64 = 0.2;

impl Evaluator {
    pub fn new(workers: usize) -> Result<Self> {
        let workers = workers.max(1);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
        Ok(Evaluator { pool, workers, timing: Mutex::new(Timing::default()) })
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn pool(&self) -> &rayon::ThreadPool {
        &self.pool
    }

    /// Runs `f` over `items` on the pool and returns results in item order.
    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        self.pool.install(|| items.par_iter().map(f).collect())
    }

    /// Evaluates all jobs, results in job order. Wall times update the per-fidelity
    /// moving averages used by measured budgets.
    pub fn dispatch_costs(&self, problem: &dyn CostFunction, jobs: &[CostJob<'_>]) -> Vec<Result<f64, CostError>> {
        if jobs.is_empty() {
            return Vec::new();
        }
        let start = Instant::now();
        let out = problem.evaluate_batch(jobs, &self.pool);
        let per_job = start.elapsed().as_secs_f64() * self.workers.min(jobs.len()) as f64 / jobs.len() as f64;
        let mut t = self.timing.lock().unwrap();
        for fid in [Fidelity::Hi, Fidelity::Lo] {
            if jobs.iter().any(|j| j.fidelity == fid) {
                let slot = match fid {
                    Fidelity::Hi => &mut t.hi,
                    Fidelity::Lo => &mut t.lo,
                };
                *slot = Some(match *slot {
                    Some(prev) => (1.0 - TIMING_SMOOTHING) * prev + TIMING_SMOOTHING * per_job,
                    None => per_job,
                });
            }
        }
        out
    }

    /// Dispatches, then retries each failed member once. Backend failures are returned
    /// immediately as errors; members that fail twice come back as `None`.
    pub fn dispatch_with_retry(&self, problem: &dyn CostFunction, jobs: &[CostJob<'_>]) -> Result<Vec<Option<f64>>> {
        let first = self.dispatch_costs(problem, jobs);
        let mut out = Vec::with_capacity(jobs.len());
        let mut retry = Vec::new();
        for (k, r) in first.into_iter().enumerate() {
            match r {
                Ok(c) => out.push(Some(c)),
                Err(CostError::Backend(m)) => return Err(Error::Backend(m)),
                Err(CostError::Member(m)) => {
                    log::warn!("member {k} evaluation failed ({m}); retrying");
                    retry.push(k);
                    out.push(None);
                }
            }
        }
        if !retry.is_empty() {
            let again: Vec<CostJob<'_>> = retry.iter().map(|&k| jobs[k]).collect();
            for (&k, r) in retry.iter().zip(self.dispatch_costs(problem, &again)) {
                match r {
                    Ok(c) => out[k] = Some(c),
                    Err(CostError::Backend(m)) => return Err(Error::Backend(m)),
                    Err(CostError::Member(m)) => log::warn!("member {k} failed twice ({m}); dropping it"),
                }
            }
        }
        Ok(out)
    }

    /// Moving averages of per-evaluation wall time, `(hi, lo)`, once both were observed.
    pub fn measured_times(&self) -> Option<(f64, f64)> {
        let t = self.timing.lock().unwrap();
        Some((t.hi?, t.lo?))
    }
}
