//! Versioned TOML run configuration.
//!
//! ```toml
//! version = 1
//! algorithm = "gegd"
//! seed = 7
//!
//! [grid]
//! rows = 18
//! cols = 36
//! symmetry = "d1-cols"
//! min_feature = 4
//!
//! [problem]
//! kind = "test_function"
//!
//! [gegd]
//! max_iterations = 200
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{PsoConfig, SteConfig, TfConfig};
use crate::bench::{Algorithm, BenchConfig, GridConfig, TestFunctionSpec};
use crate::error::{Error, Result};
use crate::gegd::GegdConfig;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    #[default]
    TestFunction,
    External,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalConfig {
    /// Program and arguments of the cost process.
    pub command: Vec<String>,
    #[serde(default = "one")]
    pub processes: usize,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    pub kind: ProblemKind,
    pub test_function: TestFunctionSpec,
    pub external: Option<ExternalConfig>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Write the incumbent design every this many iterations.
    pub checkpoint_every: Option<usize>,
}

/// Benchmark-only settings; grid, problem and algorithm sections are shared.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub iterations: usize,
    pub repetitions: usize,
    pub algorithms: Vec<Algorithm>,
    pub budget_per_iteration: f64,
    pub gradient_runs: usize,
    pub parity_tolerance: f64,
    /// Run the sampling ablation instead of the algorithm comparison.
    pub ablation: bool,
}

impl Default for BenchSection {
    fn default() -> Self {
        let b = BenchConfig::default();
        BenchSection {
            iterations: b.iterations,
            repetitions: b.repetitions,
            algorithms: b.algorithms,
            budget_per_iteration: b.budget_per_iteration,
            gradient_runs: b.gradient_runs,
            parity_tolerance: b.parity_tolerance,
            ablation: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default = "default_algorithm")]
    pub algorithm: Algorithm,
    /// Master seed; overrides the per-algorithm seeds.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub workers: usize,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub problem: ProblemConfig,
    #[serde(default)]
    pub gegd: GegdConfig,
    #[serde(default)]
    pub tf: TfConfig,
    #[serde(default)]
    pub af_ste: SteConfig,
    #[serde(default)]
    pub af_pso: PsoConfig,
    #[serde(default)]
    pub bench: BenchSection,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_algorithm() -> Algorithm {
    Algorithm::Gegd
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        self.grid.build()?;
        if self.problem.kind == ProblemKind::External {
            match &self.problem.external {
                Some(e) if !e.command.is_empty() && e.processes > 0 => {}
                _ => return Err(Error::Config("external problems need [problem.external] command".into())),
            }
        }
        let cfg = self.resolved();
        cfg.gegd.validate()?;
        cfg.tf.validate()?;
        cfg.af_ste.validate()?;
        cfg.af_pso.validate()?;
        Ok(())
    }

    /// Copy with the master seed pushed into every algorithm section.
    pub fn resolved(&self) -> RunConfig {
        let mut c = self.clone();
        c.gegd.seed = self.seed;
        c.tf.seed = self.seed;
        c.af_ste.seed = self.seed;
        c.af_pso.seed = self.seed;
        c
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn bench_config(&self) -> BenchConfig {
        let b = &self.bench;
        BenchConfig {
            grid: self.grid.clone(),
            function: self.problem.test_function.clone(),
            iterations: b.iterations,
            repetitions: b.repetitions,
            seed: self.seed,
            algorithms: b.algorithms.clone(),
            budget_per_iteration: b.budget_per_iteration,
            gradient_runs: b.gradient_runs,
            parity_tolerance: b.parity_tolerance,
            gegd: self.gegd.clone(),
            tf: self.tf.clone(),
            af_ste: self.af_ste.clone(),
            af_pso: self.af_pso.clone(),
        }
    }
}
