//! Analytic multi-well benchmark and the experiment harness built on it.

pub mod harness;
pub mod test_function;

pub use harness::{
    ablation_variants, median, plan_budget, quantile, run_ablation, run_benchmark, Algorithm, AlgorithmStats,
    BenchConfig, BenchResult, BudgetPlan, GridConfig, RunTrace, SummaryRow,
};
pub use test_function::{design_noise, make_wells, TestFunction, TestFunctionSpec};
