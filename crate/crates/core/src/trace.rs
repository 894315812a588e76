//! Per-iteration optimization records and their CSV form.

use std::fmt::Write as _;
use std::io::Write;

use crate::error::Result;
use crate::estimator::Incumbent;

pub const TRACE_HEADER: &str =
    "iteration,ensemble_cost,best_cost,mu_L_norm,eta,M,r_cv,corr,beta_cv,grad_var,exp_cost,algorithm";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Mean un-exponentiated high-fidelity cost of the iteration's samples (or the
    /// current cost for single-point methods).
    pub ensemble_cost: f64,
    /// Cumulative best sampled cost.
    pub best_cost: f64,
    pub mu_l_norm: Option<f64>,
    pub eta: Option<f64>,
    pub m: usize,
    pub r_cv: Option<usize>,
    pub corr: Option<f64>,
    pub beta_cv: Option<f64>,
    pub grad_var: Option<f64>,
    pub exp_cost: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizationTrace {
    pub algorithm: String,
    pub records: Vec<IterationRecord>,
    pub best: Option<Incumbent>,
    /// Total evaluation cost in units of one high-fidelity forward evaluation.
    pub hf_equiv_cost: f64,
}

fn opt<T: std::fmt::Display>(out: &mut String, v: &Option<T>) {
    out.push(',');
    if let Some(v) = v {
        let _ = write!(out, "{v}");
    }
}

impl OptimizationTrace {
    pub fn new(algorithm: impl Into<String>) -> Self {
        OptimizationTrace { algorithm: algorithm.into(), records: Vec::new(), best: None, hf_equiv_cost: 0.0 }
    }

    pub fn best_cost(&self) -> Option<f64> {
        self.best.as_ref().map(|b| b.cost)
    }

    /// Rows as CSV lines without the header.
    pub fn csv_rows(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            let _ = write!(out, "{},{},{}", r.iteration, r.ensemble_cost, r.best_cost);
            opt(&mut out, &r.mu_l_norm);
            opt(&mut out, &r.eta);
            let _ = write!(out, ",{}", r.m);
            opt(&mut out, &r.r_cv);
            opt(&mut out, &r.corr);
            opt(&mut out, &r.beta_cv);
            opt(&mut out, &r.grad_var);
            opt(&mut out, &r.exp_cost);
            let _ = writeln!(out, ",{}", self.algorithm);
        }
        out
    }

    pub fn to_csv(&self) -> String {
        format!("{TRACE_HEADER}\n{}", self.csv_rows())
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }
}
