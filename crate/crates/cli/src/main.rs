use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use softq::classes::FunctionClassSpec;
use softq::data::{self as dsio, sample_dataset};
use softq::harness::{
    metrics, partial_coverage_demo, rate_fit, read_report_csv, references, run_experiment, ClassConfig, ClassKind,
    DemoConfig, ExperimentSetup, HarnessError, Metric,
};
use softq::mdp::{occupancy, policy_value, regularized_value, BehaviorSpec, TabularMdp};
use softq::oracles::{
    bellman_residual, check_assumptions, concentrability, greedy_policy, lagrange_hard, lagrange_soft, margin_profile,
    soft_optimal_policy, soft_value_iteration, value_iteration, Backup, OracleError, SoftConfig, DEFAULT_MAX_ITERATIONS,
};
use softq::SaTable;
use softq::solvers::{fqi_solve, mqp_solve, msqp_solve, SolverConfig, StepSize};

#[derive(Parser)]
#[command(name = "softq", about = "Offline minimax soft-Q-learning on tabular MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Msqp,
    Mqp,
    Fqi,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
enum Emit {
    QStar,
    QSoft,
    LSoft,
    LHard,
    PiSoft,
    Concentrability,
    Margin,
    Assumptions,
}

#[derive(Subcommand)]
enum Command {
    /// Exact soft and hard optimal Q-functions, policies, values and multipliers.
    Oracle {
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long)]
        behavior: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        #[arg(long, default_value_t = 1e-12)]
        tolerance: f64,
        /// Quantities to report; all of them when omitted.
        #[arg(long, value_enum, value_delimiter = ',')]
        emit: Vec<Emit>,
        /// Thresholds for the margin profile.
        #[arg(long, value_delimiter = ',', default_values_t = [0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0])]
        t_grid: Vec<f64>,
    },
    /// Sample an offline dataset from an MDP and behavior distribution.
    GenData {
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long)]
        behavior: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        stream: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the tuples as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run MSQP, MQP or FQI on a dataset.
    Solve {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        behavior: PathBuf,
        /// Discount factor; taken from `--mdp` when that is given.
        #[arg(long)]
        gamma: Option<f64>,
        /// The generating MDP; adds oracle-relative errors to the output.
        #[arg(long)]
        mdp: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = MethodArg::Msqp)]
        method: MethodArg,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        /// Q-class config file (`{"kind": "tabular_box", "bound": 10}`); defaults to a box of `1/(1−γ)`.
        #[arg(long)]
        q_class: Option<PathBuf>,
        /// L-class config file; the default box bound is `B_Q / ((1−γ) min P_b)`.
        #[arg(long)]
        l_class: Option<PathBuf>,
        /// Solver config file; the flags below override its fields.
        #[arg(long)]
        solver: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        /// Subgradient step constant `c` in `c/√t`.
        #[arg(long)]
        step_size: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 500)]
        fqi_iterations: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an experiment sweep from a config file.
    Experiment {
        config: PathBuf,
        /// Output directory, overriding the config's `output`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Log-log fit of per-n medians of a metric in a report.csv.
    RateFit {
        report: PathBuf,
        #[arg(long, default_value = "l2_pb")]
        metric: String,
    },
    /// Validate an MDP and behavior distribution and report the assumptions.
    Check {
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long)]
        behavior: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
    },
    /// The one-step example where data miss the initial state.
    DemoPartialCoverage {
        #[arg(long, default_value_t = 100_000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        #[arg(long, default_value_t = 2.0)]
        radius: f64,
        /// Put the initial distribution on the data's states instead.
        #[arg(long)]
        control: bool,
    },
}

/// Errors that map to exit code 3.
#[derive(Debug)]
struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_err(e: impl std::fmt::Display) -> anyhow::Error {
    ConfigError(e.to_string()).into()
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
}

fn load_problem(mdp: &Path, behavior: &Path) -> Result<(TabularMdp, BehaviorSpec)> {
    let m: TabularMdp = read_json(mdp)?;
    let b: BehaviorSpec = read_json(behavior)?;
    b.validate_for(&m).map_err(config_err)?;
    Ok((m, b))
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    use std::io::Write;
    let text = serde_json::to_string_pretty(v)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn oracle(mdp: &Path, behavior: &Path, alpha: f64, tolerance: f64, emit: &[Emit], t_grid: &[f64]) -> Result<Value> {
    let (m, b) = load_problem(mdp, behavior)?;
    let all = emit.is_empty();
    let wants = |e: Emit| all || emit.contains(&e);
    let cfg = SoftConfig::new(alpha, b.behavior_policy.clone(), tolerance, DEFAULT_MAX_ITERATIONS).map_err(config_err)?;
    let q = value_iteration(&m, tolerance, DEFAULT_MAX_ITERATIONS)?;
    let pi = greedy_policy(&q);
    let qa = soft_value_iteration(&m, &cfg)?;
    let pia = soft_optimal_policy(&qa, &cfg);
    let or_message = |r: Result<SaTable, OracleError>| r.map(|l| json!(l)).unwrap_or_else(|e| json!({"error": e.to_string()}));
    let mut out = json!({"alpha": alpha, "tolerance": tolerance});
    if wants(Emit::QStar) {
        out["q_star"] = json!(q);
        out["pi_star"] = json!(pi);
        out["value_star"] = json!(policy_value(&m, &pi));
        out["bellman_residual_hard"] = json!(bellman_residual(&m, &q, Backup::Hard));
    }
    if wants(Emit::QSoft) {
        out["q_soft"] = json!(qa);
        out["regularized_value_soft"] = json!(regularized_value(&m, &pia, &b.behavior_policy, alpha)?);
        out["bellman_residual_soft"] = json!(bellman_residual(&m, &qa, cfg.backup()));
    }
    if wants(Emit::PiSoft) {
        out["pi_soft"] = json!(pia);
    }
    if wants(Emit::LSoft) {
        out["l_soft"] = or_message(lagrange_soft(&m, &b, &cfg));
    }
    if wants(Emit::LHard) {
        out["l_hard"] = or_message(lagrange_hard(&m, &b, tolerance));
    }
    if wants(Emit::Concentrability) {
        let class = FunctionClassSpec::TabularBox { bound: m.r_max() / (1.0 - m.gamma()) };
        let soft = concentrability(&m, &b, &occupancy(&m, &pia, m.mu0()), &class, &qa)?;
        let hard = concentrability(&m, &b, &occupancy(&m, &pi, m.mu0()), &class, &q)?;
        out["concentrability"] = json!({"soft": soft, "hard": hard});
    }
    if wants(Emit::Margin) {
        out["margin"] = json!(margin_profile(&q, &occupancy(&m, &pi, m.mu0()), t_grid));
    }
    if wants(Emit::Assumptions) {
        out["assumptions"] = json!(check_assumptions(&m, &b, &cfg)?);
    }
    Ok(out)
}

fn resolve_cli_class(
    path: Option<&Path>,
    default_bound: f64,
) -> Result<FunctionClassSpec> {
    let cfg = match path {
        Some(p) => read_json::<ClassConfig>(p)?,
        None => ClassConfig::tabular(None),
    };
    let features = match (&cfg.features, path) {
        (Some(f), Some(p)) => {
            let f = if f.is_relative() { p.parent().unwrap_or(Path::new(".")).join(f) } else { f.clone() };
            Some(read_json(&f)?)
        }
        _ => None,
    };
    if cfg.kind == ClassKind::OracleSingleton {
        return Err(config_err("oracle_singleton needs an MDP; use it from an experiment config"));
    }
    let spec = match cfg.kind {
        ClassKind::TabularBox => FunctionClassSpec::TabularBox { bound: cfg.bound.unwrap_or(default_bound) },
        ClassKind::LinearBall => FunctionClassSpec::LinearBall {
            features: features.ok_or_else(|| config_err("linear_ball class needs features"))?,
            radius: cfg.bound.ok_or_else(|| config_err("linear_ball class needs a bound (radius)"))?,
            nonneg: cfg.nonneg,
        },
        ClassKind::OracleSingleton => unreachable!(),
    };
    Ok(spec)
}

struct SolveArgs {
    data: PathBuf,
    behavior: PathBuf,
    gamma: Option<f64>,
    mdp: Option<PathBuf>,
    method: MethodArg,
    alpha: f64,
    q_class: Option<PathBuf>,
    l_class: Option<PathBuf>,
    solver: Option<PathBuf>,
    steps: Option<usize>,
    step_size: Option<f64>,
    seed: Option<u64>,
    fqi_iterations: usize,
}

fn solve(args: &SolveArgs) -> Result<Value> {
    let ds = dsio::read_dataset(&args.data)?;
    let (mdp, b) = match &args.mdp {
        Some(p) => {
            let (m, b) = load_problem(p, &args.behavior)?;
            (Some(m), b)
        }
        None => {
            let b: BehaviorSpec = read_json(&args.behavior)?;
            b.validate().map_err(config_err)?;
            (None, b)
        }
    };
    let gamma = match (&mdp, args.gamma) {
        (Some(m), _) => m.gamma(),
        (None, Some(g)) => g,
        (None, None) => return Err(config_err("pass --gamma or --mdp")),
    };
    if !(0.0..1.0).contains(&gamma) {
        return Err(config_err(format!("gamma must lie in [0, 1), got {gamma}")));
    }
    let r_bound = mdp.as_ref().map_or(1.0, |m| m.r_max().abs().max(m.r_min().abs()));
    let pi_b = &b.behavior_policy;
    let q = resolve_cli_class(args.q_class.as_deref(), r_bound / (1.0 - gamma))?;
    let alpha = match args.method {
        MethodArg::Msqp => args.alpha,
        _ => 0.0,
    };
    let result = if let MethodArg::Fqi = args.method {
        fqi_solve(&ds, &q, args.fqi_iterations, gamma, pi_b)?
    } else {
        // ‖d̃/P_b‖_∞ ≤ 1/min P_b for any distribution d̃.
        let min_pb = b.joint().as_slice().iter().copied().filter(|&p| p > 0.0).fold(f64::INFINITY, f64::min);
        let l = resolve_cli_class(args.l_class.as_deref(), q.sup_bound() / ((1.0 - gamma) * min_pb))?;
        let mut cfg: SolverConfig = match &args.solver {
            Some(p) => read_json(p)?,
            None => SolverConfig::default(),
        };
        cfg.alpha = alpha;
        cfg.gamma = gamma;
        if let Some(steps) = args.steps {
            cfg.outer_steps = steps;
        }
        if let Some(c) = args.step_size {
            cfg.step_size = StepSize::InvSqrt { c };
        }
        if let Some(seed) = args.seed {
            cfg.seed = seed;
        }
        match args.method {
            MethodArg::Msqp => msqp_solve(&ds, &q, &l, &cfg, pi_b)?,
            _ => mqp_solve(&ds, &q, &l, &cfg, pi_b)?,
        }
    };
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    let mut out = json!(result);
    if let Some(m) = &mdp {
        let refs = references(m, &b, alpha)?;
        let errors = metrics(m, &b, &refs, &result, &Metric::ALL)?;
        out["oracle_errors"] = errors.into_iter().map(|(k, v)| (k.name().to_string(), json!(v))).collect();
    }
    Ok(out)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Oracle { mdp, behavior, alpha, tolerance, emit, t_grid } => {
            print_json(&oracle(&mdp, &behavior, alpha, tolerance, &emit, &t_grid)?)?
        }
        Command::GenData { mdp, behavior, n, seed, stream, out, csv } => {
            let (m, b) = load_problem(&mdp, &behavior)?;
            let ds = sample_dataset(&m, &b, n, seed, stream)?;
            dsio::write_dataset(&ds, &out)?;
            if let Some(c) = csv {
                dsio::write_csv(&ds, &c)?;
            }
            eprintln!("wrote {} tuples to {}", ds.len(), out.display());
        }
        Command::Solve {
            data,
            behavior,
            gamma,
            mdp,
            method,
            alpha,
            q_class,
            l_class,
            solver,
            steps,
            step_size,
            seed,
            fqi_iterations,
            out,
        } => {
            let args = SolveArgs {
                data,
                behavior,
                gamma,
                mdp,
                method,
                alpha,
                q_class,
                l_class,
                solver,
                steps,
                step_size,
                seed,
                fqi_iterations,
            };
            let v = solve(&args)?;
            match out {
                Some(p) => std::fs::write(&p, serde_json::to_string_pretty(&v)? + "\n")?,
                None => print_json(&v)?,
            }
        }
        Command::Experiment { config, output } => {
            let setup = ExperimentSetup::load(&config).map_err(|e| match e {
                HarnessError::Config(_) => config_err(e),
                other => other.into(),
            })?;
            let report = run_experiment(&setup).map_err(|e| match e {
                HarnessError::Config(_) => config_err(e),
                other => other.into(),
            })?;
            let dir = output
                .or_else(|| setup.config.output.clone())
                .ok_or_else(|| config_err("no output directory: set `output` or pass --output"))?;
            report.write(&dir)?;
            for w in &report.warnings {
                eprintln!("warning (n={}, seed={}): {}", w.n, w.seed, w.message);
            }
            for e in &report.errors {
                eprintln!("error (n={}, seed={}): {}", e.n, e.seed, e.message);
            }
            eprintln!("wrote {}", dir.display());
            if !report.errors.is_empty() {
                return Ok(ExitCode::from(2));
            }
        }
        Command::RateFit { report, metric } => {
            let rows = read_report_csv(&report)?;
            print_json(&rate_fit(&rows, &metric)?)?;
        }
        Command::Check { mdp, behavior, alpha } => {
            let (m, b) = load_problem(&mdp, &behavior)?;
            let cfg = SoftConfig::exact(alpha, b.behavior_policy.clone()).map_err(config_err)?;
            print_json(&check_assumptions(&m, &b, &cfg)?)?;
        }
        Command::DemoPartialCoverage { n, seed, alpha, radius, control } => {
            print_json(&partial_coverage_demo(&DemoConfig { n, seed, alpha, radius, control })?)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(3)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_parses() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn missing_config_is_not_a_config_error() {
        let err = anyhow::anyhow!("x");
        assert!(err.downcast_ref::<ConfigError>().is_none());
        assert!(config_err("y").downcast_ref::<ConfigError>().is_some());
    }
}
