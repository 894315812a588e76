//! `gegd` command-line front end.
//!
//! Subcommands: `run`, `bench`, `feascheck`, `covcache`. Failures print a single JSON
//! object on standard error and exit with a code that identifies the failure class.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use gegd::baselines::{run_af_pso, run_af_ste, run_tf};
use gegd::bench::{run_ablation, run_benchmark, Algorithm, TestFunction};
use gegd::config::{ProblemKind, RunConfig};
use gegd::estimator::Incumbent;
use gegd::external::ExternalCost;
use gegd::grid::Brush;
use gegd::io::{read_design, write_design_csv, write_pgm};
use gegd::sampling::RbfCovariance;
use gegd::trace::OptimizationTrace;
use gegd::{check_feasibility, CostFunction, Error, Evaluator};
use serde_json::json;

const EXIT_INFEASIBLE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_BACKEND: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;
const EXIT_OTHER: u8 = 5;

#[derive(Parser)]
#[command(name = "gegd", version, about = "Fabrication-constrained design optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured algorithm once.
    Run(Common),
    /// Run the budget-matched algorithm comparison, or the sampling ablation.
    Bench(Common),
    /// Check a design file (PGM or CSV) against the minimum feature size.
    Feascheck(FeascheckArgs),
    /// Build the RBF covariance factor and store it in the cache directory.
    Covcache(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FeascheckArgs {
    design: PathBuf,
    /// Takes the brush diameter from the config's grid section.
    #[arg(long, conflicts_with = "min_feature")]
    config: Option<PathBuf>,
    #[arg(long)]
    min_feature: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(&args),
        Command::Bench(args) => cmd_bench(&args),
        Command::Feascheck(args) => cmd_feascheck(&args),
        Command::Covcache(args) => cmd_covcache(&args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("{}", json!({ "error": kind(&e), "message": e.to_string(), "exit_code": code }));
            ExitCode::from(code)
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parse(_) | Error::Parameter(_) | Error::Unsupported(_) => EXIT_CONFIG,
        Error::Backend(_) => EXIT_BACKEND,
        Error::Numerical(_) => EXIT_NUMERICAL,
        _ => EXIT_OTHER,
    }
}

fn kind(e: &Error) -> &'static str {
    match e {
        Error::Dimension { .. } => "dimension",
        Error::Range { .. } => "range",
        Error::Parameter(_) => "parameter",
        Error::Contract(_) => "contract",
        Error::Numerical(_) => "numerical",
        Error::Config(_) => "config",
        Error::Backend(_) => "backend",
        Error::Unsupported(_) => "unsupported",
        Error::Parse(_) => "parse",
        Error::Io(_) => "io",
    }
}

fn load(args: &Common) -> Result<(RunConfig, PathBuf), Error> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    let out = args.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    Ok((cfg.resolved(), out))
}

fn build_problem(cfg: &RunConfig) -> Result<Box<dyn CostFunction>, Error> {
    let grid = cfg.grid.build()?;
    Ok(match cfg.problem.kind {
        ProblemKind::TestFunction => Box::new(TestFunction::new(grid, cfg.problem.test_function.clone())?),
        ProblemKind::External => {
            let ext = cfg.problem.external.as_ref().expect("validated external section");
            Box::new(ExternalCost::new(grid, ext.command.clone(), ext.processes)?)
        }
    })
}

fn write_incumbent(dir: &Path, stem: &str, best: &Incumbent) -> Result<(), Error> {
    std::fs::write(dir.join(format!("{stem}.pgm")), write_pgm(&best.design))?;
    std::fs::write(dir.join(format!("{stem}.csv")), write_design_csv(&best.design))?;
    Ok(())
}

fn cmd_run(args: &Common) -> Result<u8, Error> {
    let (cfg, out) = load(args)?;
    std::fs::create_dir_all(&out)?;
    let problem = build_problem(&cfg)?;
    let evaluator = Evaluator::new(cfg.workers)?;
    let start = Instant::now();
    let mut feasible = None;

    let trace: OptimizationTrace = match cfg.algorithm {
        Algorithm::Gegd => {
            let dist = gegd::gegd::sampling_distribution(&cfg.gegd, problem.grid())?;
            let every = cfg.output.checkpoint_every.filter(|&k| k > 0);
            let ckpt_dir = out.join("checkpoints");
            let mut ckpt_err = None;
            let mut observer = |rec: &gegd::IterationRecord, best: Option<&Incumbent>| {
                let (Some(k), Some(best)) = (every, best) else { return };
                if rec.iteration % k != 0 || ckpt_err.is_some() {
                    return;
                }
                let res = std::fs::create_dir_all(&ckpt_dir)
                    .map_err(Error::from)
                    .and_then(|_| write_incumbent(&ckpt_dir, &format!("iter_{:05}", rec.iteration), best));
                if let Err(e) = res {
                    ckpt_err = Some(e);
                }
            };
            let outcome = gegd::gegd::run_with(&cfg.gegd, problem.as_ref(), &evaluator, &dist, &mut observer)?;
            if let Some(e) = ckpt_err {
                return Err(e);
            }
            outcome.trace
        }
        Algorithm::Tf => {
            let outcome = run_tf(&cfg.tf, problem.as_ref())?;
            std::fs::write(out.join("final_design.pgm"), write_pgm(&outcome.design))?;
            feasible = Some(outcome.feasible);
            outcome.trace
        }
        Algorithm::AfSte => run_af_ste(&cfg.af_ste, problem.as_ref())?.trace,
        Algorithm::AfPso => run_af_pso(&cfg.af_pso, problem.as_ref(), &evaluator)?.trace,
    };

    std::fs::write(out.join("trace.csv"), trace.to_csv())?;
    if let Some(best) = &trace.best {
        write_incumbent(&out, "best_design", best)?;
    }
    let brush = Brush::new(cfg.grid.min_feature)?;
    let feasible = feasible.or_else(|| trace.best.as_ref().map(|b| check_feasibility(&b.design, &brush)));
    let summary = json!({
        "algorithm": cfg.algorithm.as_str(),
        "seed": cfg.seed,
        "iterations": trace.records.len(),
        "best_cost": trace.best_cost(),
        "hf_equiv_cost": trace.hf_equiv_cost,
        "feasible": feasible,
        "wall_time": start.elapsed().as_secs_f64(),
    });
    std::fs::write(out.join("summary.json"), format!("{summary:#}\n"))?;
    println!("{summary}");
    Ok(0)
}

fn cmd_bench(args: &Common) -> Result<u8, Error> {
    let (cfg, out) = load(args)?;
    if cfg.problem.kind != ProblemKind::TestFunction {
        return Err(Error::Unsupported("bench runs only on the test function".into()));
    }
    let bench = cfg.bench_config();
    let evaluator = Evaluator::new(cfg.workers)?;
    let result = if cfg.bench.ablation {
        run_ablation(&bench, &evaluator)?
    } else {
        run_benchmark(&bench, &evaluator)?
    };
    result.write_to(&out)?;
    print!("{}", result.stats_csv());
    Ok(0)
}

fn cmd_feascheck(args: &FeascheckArgs) -> Result<u8, Error> {
    let min_feature = match (&args.config, args.min_feature) {
        (Some(path), _) => RunConfig::load(path)?.grid.min_feature,
        (None, Some(d)) => d,
        (None, None) => return Err(Error::Config("feascheck needs --config or --min-feature".into())),
    };
    let brush = Brush::new(min_feature).map_err(|e| Error::Config(e.to_string()))?;
    let design = read_design(&args.design).map_err(|e| match e {
        Error::Io(io) => Error::Config(format!("cannot read {}: {io}", args.design.display())),
        other => other,
    })?;
    let feasible = check_feasibility(&design, &brush);
    println!(
        "{}",
        json!({ "feasible": feasible, "rows": design.rows(), "cols": design.cols(), "min_feature": min_feature })
    );
    Ok(if feasible { 0 } else { EXIT_INFEASIBLE })
}

fn cmd_covcache(args: &Common) -> Result<u8, Error> {
    let (cfg, out) = load(args)?;
    let dir = match (&args.out, &cfg.gegd.cache_dir) {
        (None, Some(d)) => d.clone(),
        _ => out,
    };
    let grid = cfg.grid.build()?;
    std::fs::create_dir_all(&dir)?;
    let cov = RbfCovariance::load_or_build(&grid, cfg.gegd.kappa, &dir)?;
    let name = RbfCovariance::cache_file_name(
        grid.rows(),
        grid.cols(),
        gegd::sampling::rbf_length_scale(grid.min_feature()),
        cfg.gegd.kappa,
    );
    println!("{}", json!({ "path": dir.join(name), "dim": cov.dim() }));
    Ok(0)
}
