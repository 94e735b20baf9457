use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use reduktor::asymptotics::{
    convergence_report, predict_limit, ConvergenceOptions, SUPPORT_SAMPLES,
};
use reduktor::channel::genericity_check;
use reduktor::config::{ModelSource, RunConfig, ScalarMethod};
use reduktor::dstoch::{compression, sup_distance};
use reduktor::io::{
    fmt_num, write_convergence_csv, write_matrix_csv, write_mc_csv, write_scalar_csv,
    write_trajectory_csv,
};
use reduktor::jump_mc::monte_carlo_average;
use reduktor::scalar::{piecewise_delay_solve, scalar_march, trig_ode_solve, ScalarInput};
use reduktor::volterra::{march_solve, neumann_series, SolverConfig, TimeGrid, VolterraError};

mod errors;

use errors::CliError;

const SERIES_TOL: f64 = 1e-6;
const DEFAULT_DELTA: f64 = 0.999;
const DEFAULT_STEPS_PER_INTERVAL: usize = 200;

#[derive(Parser)]
#[command(
    name = "reduktor",
    version,
    about = "Averaged stochastic-reduction dynamics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output file (standard output when absent).
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Seed for the Monte Carlo commands (overrides the config).
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, env = "REDUKTOR_WORKERS", value_name = "N")]
    workers: Option<usize>,
    /// Suppress the summary.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// March the averaged evolution on the grid.
    Solve,
    /// Sum the realization-count series at the horizon.
    Series,
    /// Monte Carlo average over Poisson histories.
    Simulate,
    /// Run solve, series and simulate and compare them.
    Compare,
    /// Convergence towards the predicted limit.
    Asymptote,
    /// Sampled genericity test of the bath model.
    Genericity,
    /// Scalar reduction (march, delay or trig).
    Scalar,
}

struct Output {
    body: Vec<u8>,
    summary: Vec<String>,
    /// Extra file next to `--out` (suffix, contents).
    sidecar: Option<(&'static str, Vec<u8>)>,
    /// Exit with this error after writing the output.
    failure: Option<CliError>,
}

impl Output {
    fn new(body: Vec<u8>) -> Self {
        Self {
            body,
            summary: Vec::new(),
            sidecar: None,
            failure: None,
        }
    }
}

fn load(cli: &Cli) -> Result<RunConfig, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Usage("--config PATH is required".into()))?;
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    Ok(RunConfig::from_json(&text)?)
}

fn json_bytes(v: &Value) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("json");
    s.push('\n');
    s.into_bytes()
}

fn matrix_json(m: &nalgebra::DMatrix<f64>) -> Value {
    Value::Array(
        (0..m.nrows())
            .map(|i| json!(m.row(i).iter().copied().collect::<Vec<_>>()))
            .collect(),
    )
}

fn horizon_solver(cfg: &RunConfig, horizon: f64) -> Result<SolverConfig, CliError> {
    let h = cfg.time_grid()?.h();
    let steps = ((horizon / h).round() as usize).max(1);
    let mut solver = SolverConfig::new(cfg.nu, TimeGrid::new(horizon, steps)?)?;
    solver.series_cap = cfg.series_cap;
    Ok(solver)
}

fn cmd_solve(cfg: &RunConfig) -> Result<Output, CliError> {
    let model = cfg.model()?;
    let solver = cfg.solver()?;
    let traj = march_solve(&model, &solver)?;
    let mut body = Vec::new();
    write_trajectory_csv(&mut body, &traj)?;
    let mut out = Output::new(body);
    let last = traj.last();
    let (_, limit) = predict_limit(&model, solver.grid.t_max, SUPPORT_SAMPLES)?;
    out.summary
        .push(format!("final_c={}", fmt_num(compression(last))));
    out.summary.push(format!(
        "distance_to_predicted_limit={}",
        fmt_num(sup_distance(last.as_matrix(), limit.as_matrix()))
    ));
    if let ModelSource::Constant(c) = &model {
        let m = c.0.as_matrix();
        let n = m.nrows();
        let worst = traj
            .times()
            .zip(&traj.values)
            .map(|(t, v)| {
                let exact =
                    ((m - nalgebra::DMatrix::<f64>::identity(n, n)) * (cfg.nu * t)).exp() * m;
                sup_distance(v.as_matrix(), &exact)
            })
            .fold(0.0, f64::max);
        out.summary
            .push(format!("closed_form_error={}", fmt_num(worst)));
    }
    Ok(out)
}

fn cmd_series(cfg: &RunConfig) -> Result<Output, CliError> {
    let model = cfg.model()?;
    let horizon = cfg.horizon();
    let eval = neumann_series(&model, &cfg.solver()?, horizon)?;
    let mut body = Vec::new();
    write_matrix_csv(&mut body, horizon, eval.value.as_matrix())?;
    let mut out = Output::new(body);
    out.summary.push(format!("series_cap={}", eval.cap));
    out.summary
        .push(format!("poisson_tail={}", fmt_num(eval.tail)));
    Ok(out)
}

fn samples(cfg: &RunConfig) -> Result<usize, CliError> {
    cfg.samples
        .ok_or_else(|| CliError::Usage("config needs `samples` for this command".into()))
}

fn cmd_simulate(cfg: &RunConfig, seed: u64) -> Result<Output, CliError> {
    let model = cfg.model()?;
    let horizon = cfg.horizon();
    let est = monte_carlo_average(&model, cfg.nu, horizon, samples(cfg)?, seed)?;
    let mut body = Vec::new();
    write_mc_csv(&mut body, &est, cfg.nu, horizon)?;
    let mut out = Output::new(body);
    out.summary
        .push(format!("max_stderr={}", fmt_num(est.max_stderr())));
    Ok(out)
}

fn mc_pair(
    mean: &nalgebra::DMatrix<f64>,
    stderr: &nalgebra::DMatrix<f64>,
    other: &nalgebra::DMatrix<f64>,
) -> Value {
    let inside = mean
        .iter()
        .zip(other.iter())
        .zip(stderr.iter())
        .filter(|((m, o), s)| (*m - *o).abs() <= 3.0 * *s + 1e-12)
        .count();
    let fraction = inside as f64 / mean.len() as f64;
    json!({
        "max_abs_diff": sup_distance(mean, other),
        "within_3_stderr_fraction": fraction,
        "pass": inside == mean.len(),
    })
}

fn cmd_compare(cfg: &RunConfig, seed: u64) -> Result<Output, CliError> {
    let model = cfg.model()?;
    let horizon = cfg.horizon();
    let solver = horizon_solver(cfg, horizon)?;
    let marched = march_solve(&model, &solver)?.last().as_matrix().clone();
    let est = monte_carlo_average(&model, cfg.nu, horizon, samples(cfg)?, seed)?;
    let (series_json, series_value) = match neumann_series(&model, &solver, horizon) {
        Ok(eval) => {
            let value = eval.value.into_inner();
            let d = sup_distance(&marched, &value);
            (
                json!({ "max_abs_diff": d, "tolerance": SERIES_TOL, "pass": d <= SERIES_TOL }),
                Some(value),
            )
        }
        Err(e) => {
            let advice = match e {
                VolterraError::GridTooCoarse { .. } => "refine the grid until h*nu <= 0.5",
                VolterraError::TailBoundExceedsTol { .. } => {
                    "raise series_cap or drop it to use the default"
                }
                _ => "check the configuration",
            };
            (
                json!({ "pass": false, "error": e.to_string(), "advice": advice }),
                None,
            )
        }
    };
    let solver_vs_mc = mc_pair(&est.mean, &est.stderr, &marched);
    let series_vs_mc = match &series_value {
        Some(v) => mc_pair(&est.mean, &est.stderr, v),
        None => json!({ "pass": false, "error": "series unavailable" }),
    };
    let pass = [&series_json, &solver_vs_mc, &series_vs_mc]
        .iter()
        .all(|v| v["pass"].as_bool() == Some(true));
    let verdict = json!({
        "horizon": horizon,
        "nu": cfg.nu,
        "samples": est.samples,
        "seed": seed,
        "max_stderr": est.max_stderr(),
        "solver_vs_series": series_json,
        "solver_vs_mc": solver_vs_mc,
        "series_vs_mc": series_vs_mc,
        "pass": pass,
    });
    let mut out = Output::new(json_bytes(&verdict));
    out.summary.push(format!("compare pass={pass}"));
    if !pass {
        out.failure = Some(CliError::Numerical("cross-check failed".into()));
    }
    Ok(out)
}

fn cmd_asymptote(cfg: &RunConfig) -> Result<Output, CliError> {
    let model = cfg.model()?;
    let mut opts = ConvergenceOptions::default();
    if let Some(e) = cfg.eps_conv {
        opts.eps_conv = e;
    }
    if let Some(w) = cfg.window {
        opts.window = w;
    }
    let report = convergence_report(&model, &cfg.solver()?, &opts)?;
    let mut body = Vec::new();
    write_convergence_csv(&mut body, &report)?;
    let verdict = json!({
        "verdict": report.verdict,
        "final_c": report.c_values.last(),
        "max_block_c": report.max_c(),
        "final_distance": report.final_distance(),
        "eps_conv": opts.eps_conv,
        "blocks": report.partition.blocks(),
        "id_sector": report.partition.id_sector(),
        "predicted_limit": matrix_json(report.predicted_limit.as_matrix()),
    });
    let mut out = Output::new(body);
    out.summary.push(format!(
        "verdict={}",
        serde_json::to_string(&report.verdict).expect("json")
    ));
    out.sidecar = Some(("verdict.json", json_bytes(&verdict)));
    Ok(out)
}

fn cmd_genericity(cfg: &RunConfig) -> Result<Output, CliError> {
    let model = cfg.bath_model().map_err(|e| match e {
        reduktor::config::ConfigError::Missing(_) => {
            CliError::Usage("genericity needs a bath model".into())
        }
        other => other.into(),
    })?;
    let grid = cfg.time_grid()?;
    let times: Vec<f64> = grid.nodes().collect();
    let delta = cfg.delta_threshold.unwrap_or(DEFAULT_DELTA);
    let report = genericity_check(&model, &times, delta)?;
    let v = json!({
        "generic": report.generic,
        "witness_t": report.witness_t,
        "c_min": report.c_min,
        "delta_threshold": delta,
        "samples": report.samples.len(),
    });
    let mut out = Output::new(json_bytes(&v));
    out.summary.push(format!("generic={}", report.generic));
    Ok(out)
}

fn cmd_scalar(cfg: &RunConfig) -> Result<Output, CliError> {
    let spec = cfg
        .scalar
        .as_ref()
        .ok_or_else(|| CliError::Usage("config needs a `scalar` section".into()))?;
    let traj = match spec.method {
        ScalarMethod::March => {
            let input: ScalarInput = spec
                .input
                .clone()
                .ok_or_else(|| CliError::Usage("scalar march needs `input`".into()))?
                .into();
            scalar_march(&input, cfg.nu, &cfg.time_grid()?)?
        }
        ScalarMethod::Delay => {
            let tau = spec
                .tau
                .ok_or_else(|| CliError::Usage("scalar delay needs `tau`".into()))?;
            let intervals = spec
                .intervals
                .ok_or_else(|| CliError::Usage("scalar delay needs `intervals`".into()))?;
            let m = spec
                .steps_per_interval
                .unwrap_or(DEFAULT_STEPS_PER_INTERVAL);
            piecewise_delay_solve(tau, cfg.nu, intervals, m)?
        }
        ScalarMethod::Trig => {
            if cfg.nu != 1.0 {
                return Err(CliError::Validation(format!(
                    "scalar trig requires nu = 1, got {}",
                    cfg.nu
                )));
            }
            trig_ode_solve(&cfg.time_grid()?)?
        }
    };
    let mut body = Vec::new();
    write_scalar_csv(&mut body, &traj)?;
    let mut out = Output::new(body);
    out.summary.push(format!(
        "final_beta={}",
        fmt_num(*traj.beta.last().expect("nonempty"))
    ));
    out.summary.push(format!("jumps={}", traj.jumps.len()));
    Ok(out)
}

fn sidecar_path(out: &Path, suffix: &str) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    out.with_file_name(format!("{stem}.{suffix}"))
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = load(cli)?;
    let seed = cli.seed.or(cfg.seed).unwrap_or(0);
    let output = match cli.command {
        Command::Solve => cmd_solve(&cfg),
        Command::Series => cmd_series(&cfg),
        Command::Simulate => cmd_simulate(&cfg, seed),
        Command::Compare => cmd_compare(&cfg, seed),
        Command::Asymptote => cmd_asymptote(&cfg),
        Command::Genericity => cmd_genericity(&cfg),
        Command::Scalar => cmd_scalar(&cfg),
    }?;
    let stdout = io::stdout();
    let mut lock = stdout.lock();
    match &cli.out {
        Some(path) => {
            fs::write(path, &output.body)?;
            if let Some((suffix, bytes)) = &output.sidecar {
                fs::write(sidecar_path(path, suffix), bytes)?;
            }
            if !cli.quiet {
                for line in &output.summary {
                    writeln!(lock, "{line}")?;
                }
            }
        }
        None => {
            lock.write_all(&output.body)?;
            if let Some((_, bytes)) = &output.sidecar {
                lock.write_all(b"\n")?;
                lock.write_all(bytes)?;
            }
            if !cli.quiet {
                for line in &output.summary {
                    eprintln!("{line}");
                }
            }
        }
    }
    match output.failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.workers {
        Some(0) => Err(CliError::Usage("--workers must be at least 1".into())),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| run(&cli)),
            Err(e) => Err(CliError::Usage(format!("cannot start {n} workers: {e}"))),
        },
        None => run(&cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
