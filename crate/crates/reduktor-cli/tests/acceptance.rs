//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.

use std::f64::consts::{PI, TAU};
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use reduktor::asymptotics::{
    convergence_report, cyclic_example, periodic_model, rescaling_check, ConvergenceOptions,
    Verdict,
};
use reduktor::channel::{pauli_x, second_order_matrix, BathModel, Propagator, C64};
use reduktor::config::{GridSpec, InputSpec, RunConfig, ScalarMethod, ScalarSpec};
use reduktor::dstoch::{
    compression, decomposability_witness, validate_dstoch, DStochMatrix, Permutation,
};
use reduktor::jump_mc::monte_carlo_average;
use reduktor::scalar::{
    piecewise_delay_solve, scalar_march, trig_ode_solve, trig_ode_states, ScalarInput,
};
use reduktor::source::ConstantSource;
use reduktor::volterra::{
    kernel_normalization_residual, march_solve, march_solve_general, neumann_series, Kernel,
    SolverConfig, TimeGrid,
};

/// Fixed Monte Carlo seed.
const SEED: u64 = 20_261_017;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn cfg(nu: f64, t_max: f64, steps: usize) -> SolverConfig {
    SolverConfig::new(nu, TimeGrid::new(t_max, steps).unwrap()).unwrap()
}

fn closed_form(m: &DMatrix<f64>, nu: f64, t: f64) -> DMatrix<f64> {
    let n = m.nrows();
    ((m - DMatrix::identity(n, n)) * (nu * t)).exp() * m
}

fn symmetric_constants() -> Vec<DStochMatrix> {
    [
        [0.5, 0.3, 0.2, 0.3, 0.4, 0.3, 0.2, 0.3, 0.5],
        [0.1, 0.6, 0.3, 0.6, 0.2, 0.2, 0.3, 0.2, 0.5],
        [0.8, 0.1, 0.1, 0.1, 0.0, 0.9, 0.1, 0.9, 0.0],
    ]
    .iter()
    .map(|v| validate_dstoch(DMatrix::from_row_slice(3, 3, v), 1e-14).unwrap())
    .collect()
}

fn constant_closed_form() -> Outcome {
    let mut worst: f64 = 0.0;
    for m in symmetric_constants() {
        for nu in [0.5, 1.0, 2.0] {
            let traj = march_solve(&ConstantSource(m.clone()), &cfg(nu, 10.0, 10_000)).unwrap();
            for (t, v) in traj.times().zip(&traj.values) {
                worst = worst.max((v.as_matrix() - closed_form(m.as_matrix(), nu, t)).amax());
            }
        }
    }
    outcome(
        worst <= 1e-6,
        format!("max error {worst:.2e} over 9 runs on [0, 10], h = 1e-3"),
    )
}

fn oracle_triangle() -> Outcome {
    let mut worst_series: f64 = 0.0;
    let mut agreeing = 0;
    let mut pairs = 0;
    for (k, n) in [2, 3, 2, 3, 2].into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(101 + k as u64);
        let prop = BathModel::random(n, 2, 1.0, true, &mut rng).propagator();
        let c = cfg(1.0, 3.0, 3000);
        let traj = march_solve(&prop, &c).unwrap();
        for t in [1.0, 2.0, 3.0] {
            let marched = traj.at(t).unwrap().as_matrix();
            let series = neumann_series(&prop, &c, t).unwrap().value.into_inner();
            worst_series = worst_series.max((marched - &series).amax());
            let est = monte_carlo_average(&prop, 1.0, t, 100_000, SEED).unwrap();
            pairs += 1;
            if est.agreement(marched, 3.0) == 1.0 && est.agreement(&series, 3.0) == 1.0 {
                agreeing += 1;
            }
        }
    }
    let fraction = agreeing as f64 / pairs as f64;
    outcome(
        worst_series <= 1e-6 && fraction >= 0.99,
        format!("march vs series {worst_series:.2e}; Monte Carlo within 3 stderr on {agreeing}/{pairs} pairs"),
    )
}

fn switching_example() -> Outcome {
    let m = 200;
    let mut pieces: f64 = 0.0;
    let mut jumps: f64 = 0.0;
    let mut cross: f64 = 0.0;
    for (tau, nu) in [(1.0, 1.0), (0.5, 2.0)] {
        let delay = piecewise_delay_solve(tau, nu, 10, m).unwrap();
        for (i, t) in delay.grid.nodes().enumerate().take(2 * m) {
            let exact = if i < m {
                1.0
            } else {
                1.0 + (nu * tau - nu * t - 1.0) * (-nu * tau).exp()
            };
            pieces = pieces.max((delay.beta[i] - exact).abs());
        }
        for k in 1..=5 {
            let j = delay
                .jumps
                .iter()
                .find(|j| (j.t - k as f64 * tau).abs() < 1e-12)
                .unwrap();
            let exact = (-1f64).powi(k) * (-nu * k as f64 * tau).exp();
            jumps = jumps.max((j.size() - exact).abs());
        }
        let march = scalar_march(&ScalarInput::alternating(tau), nu, &delay.grid).unwrap();
        cross = cross.max(delay.sup_distance(&march));
    }
    outcome(
        pieces <= 1e-10 && jumps <= 1e-8 && cross <= 1e-6,
        format!("pieces {pieces:.2e}, jumps {jumps:.2e}, delay vs march {cross:.2e}"),
    )
}

fn cosine_example() -> Outcome {
    let g = TimeGrid::new(5.0, 5000).unwrap();
    let ode = trig_ode_solve(&g).unwrap();
    let march = scalar_march(&ScalarInput::half_cosine(), 1.0, &g).unwrap();
    let gap = ode.sup_distance(&march);
    let imag = trig_ode_states(&g)
        .iter()
        .zip(g.nodes())
        .map(|(s, t)| s.reconstruct(t).im.abs())
        .fold(0.0, f64::max);
    let start = ode.beta[0];
    outcome(
        gap <= 1e-6 && imag <= 1e-9 && start == 1.0,
        format!("ODE vs march {gap:.2e}, max imaginary part {imag:.2e}, beta(0) = {start}"),
    )
}

fn convergence_battery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_ratio: f64 = 0.0;
    let mut worst_distance: f64 = 0.0;
    let mut converged = 0;
    for k in 0..10 {
        let n = 2 + k % 3;
        let n2 = 1 + k % 3;
        let nu = [0.5, 1.0, 2.0][k % 3];
        let prop = BathModel::random(n, n2, 1.0, true, &mut rng).propagator();
        let mut ok = true;
        for mult in [50.0, 75.0] {
            let grid = TimeGrid::with_step(mult / nu, 0.01 / nu).unwrap();
            let report = convergence_report(
                &prop,
                &SolverConfig::new(nu, grid).unwrap(),
                &ConvergenceOptions::default(),
            )
            .unwrap();
            let ratio = report.block_c_values.last().unwrap() / report.max_c();
            if mult == 50.0 {
                worst_ratio = worst_ratio.max(ratio);
                ok &= ratio <= 0.1;
            }
            worst_distance = worst_distance.max(report.final_distance());
            ok &= report.final_distance() < 1e-3 && report.verdict == Verdict::Converged;
        }
        converged += ok as usize;
    }
    let h = DMatrix::from_diagonal(&DVector::from_vec(vec![
        C64::new(1.0, 0.0),
        C64::new(-0.3, 0.0),
        C64::new(2.2, 0.0),
    ]));
    let frozen = BathModel::bathless(h).unwrap().propagator();
    let report = convergence_report(
        &frozen,
        &cfg(1.0, 50.0, 5000),
        &ConvergenceOptions::default(),
    )
    .unwrap();
    let identity_gap = report
        .trajectory
        .values
        .iter()
        .map(|m| (m.as_matrix() - DMatrix::identity(3, 3)).amax())
        .fold(0.0, f64::max);
    let frozen_ok = report.verdict == Verdict::IdentitySectorOnly && identity_gap < 1e-14;
    outcome(
        converged == 10 && frozen_ok,
        format!(
            "{converged}/10 converged (c ratio <= {worst_ratio:.2e}, distance <= {worst_distance:.2e}); eigenbasis model off identity by {identity_gap:.2e}"
        ),
    )
}

fn cyclic_counterexample() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut unit_c = true;
    for p in [
        Permutation::cyclic_shift(3),
        Permutation::cyclic_shift(3).repeated(2),
    ] {
        unit_c &= (compression(&DStochMatrix::permutation(&p)) - 1.0).abs() < 1e-12;
        for nu in [1.0, 2.0] {
            let r = cyclic_example(&p, 3, nu, 30.0 / nu, 3000).unwrap();
            worst = worst.max(r.limit_residual);
        }
    }
    outcome(
        unit_c && worst < 1e-8,
        format!("c(P) = 1: {unit_c}; limit residual {worst:.2e}"),
    )
}

fn rescaling_law() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let periodic = periodic_model(3, 2, &mut rng).propagator();
    let sx = BathModel::bathless(pauli_x()).unwrap().propagator();
    let steps = (TAU / 1e-3).round() as usize;
    let mut worst: f64 = 0.0;
    for source in [&periodic, &sx] {
        for tau in [PI, 4.0 * PI] {
            worst = worst.max(rescaling_check(source, tau, &cfg(1.0, TAU, steps)).unwrap());
        }
    }
    outcome(worst < 1e-7, format!("max residual {worst:.2e}"))
}

fn m2_difference(prop: &Propagator, h: f64) -> DMatrix<f64> {
    let n = prop.model().n();
    let d = |h: f64| {
        let m = prop.transition_raw(h);
        (&m + m.transpose() - DMatrix::identity(n, n) * 2.0) / (h * h)
    };
    (d(h) * 4.0 - d(2.0 * h)) / 3.0
}

fn second_order_checks() -> Outcome {
    let mut worst_order = f64::INFINITY;
    let mut worst_fd: f64 = 0.0;
    let mut worst_form = f64::NEG_INFINITY;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let n = 2 + seed as usize % 3;
        let model = BathModel::random(n, 1 + seed as usize % 3, 1.0, true, &mut rng);
        let prop = model.propagator();
        let m2 = second_order_matrix(&model);
        worst_fd = worst_fd.max((&m2 - m2_difference(&prop, 1e-3)).amax() / m2.amax().max(1.0));
        let err = |h: f64| {
            (prop.transition_raw(h) - DMatrix::identity(n, n) - &m2 * (h * h / 2.0)).amax()
        };
        worst_order = worst_order.min((err(1e-2) / err(1e-3)).log10());
        for _ in 0..1000 {
            let raw = DVector::from_fn(n, |_, _| rng.random::<f64>());
            let p = &raw / raw.sum();
            worst_form = worst_form.max((p.transpose() * &m2 * &p)[(0, 0)]);
        }
    }

    let perms: Vec<DMatrix<f64>> = Permutation::all(3).iter().map(|p| p.to_matrix()).collect();
    let mut grid_checked = 0;
    let mut grid_mismatch = 0;
    for a in 0..6 {
        for b in a..6 {
            for c in b..6 {
                for i in 0..=10 {
                    for j in 0..=(10 - i) {
                        let k = 10 - i - j;
                        let raw = &perms[a] * (i as f64 / 10.0)
                            + &perms[b] * (j as f64 / 10.0)
                            + &perms[c] * (k as f64 / 10.0);
                        let m = validate_dstoch(raw, 1e-12).unwrap();
                        let full = compression(&m) >= 1.0 - 1e-8;
                        let witness = decomposability_witness(&m, 1e-8).unwrap().is_some();
                        grid_checked += 1;
                        grid_mismatch += (full != witness) as usize;
                    }
                }
            }
        }
    }
    outcome(
        worst_order >= 2.7 && worst_fd < 1e-6 && worst_form <= 1e-12 && grid_mismatch == 0,
        format!(
            "expansion order >= {worst_order:.2}, M2 vs differences {worst_fd:.2e}, max p^T M2 p {worst_form:.2e}, witness grid {grid_mismatch} mismatches of {grid_checked}"
        ),
    )
}

fn generalized_kernel() -> Outcome {
    let mut residual: f64 = 0.0;
    for t in [0.5, 1.0, 3.0, 10.0] {
        residual = residual.max(kernel_normalization_residual(
            &Kernel::poisson(1.0),
            t,
            1000,
        ));
        residual = residual.max(kernel_normalization_residual(
            &Kernel::poisson(2.5),
            t,
            1000,
        ));
        residual = residual.max(kernel_normalization_residual(&Kernel::rational(), t, 1000));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let prop = BathModel::random(3, 2, 1.0, true, &mut rng).propagator();
    let c = cfg(1.3, 3.0, 600);
    let plain = march_solve(&prop, &c).unwrap();
    let general = march_solve_general(&prop, &Kernel::poisson(1.3), &c.grid).unwrap();
    let gap = plain.sup_distance(&general);
    outcome(
        residual < 1e-8 && gap <= 1e-10,
        format!("max normalization residual {residual:.2e}; general vs Poisson march {gap:.2e}"),
    )
}

fn write_config(dir: &Path, name: &str, cfg: &RunConfig) -> String {
    let path = dir.join(name);
    fs::write(&path, cfg.to_json()).unwrap();
    path.to_str().unwrap().to_string()
}

fn cli_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let model = BathModel::random(3, 2, 1.0, true, &mut rng);
    let grid = GridSpec {
        t_max: 2.0,
        steps: 2000,
    };
    let mut bath = RunConfig::from_model(&model, 1.0, grid);
    bath.samples = Some(20_000);
    bath.seed = Some(SEED);
    let bath = write_config(dir.path(), "bath.json", &bath);
    let long = write_config(
        dir.path(),
        "long.json",
        &RunConfig::from_model(
            &model,
            1.0,
            GridSpec {
                t_max: 20.0,
                steps: 2000,
            },
        ),
    );
    let mut switching = RunConfig::bare(
        1.0,
        GridSpec {
            t_max: 6.0,
            steps: 600,
        },
    );
    switching.scalar = Some(ScalarSpec {
        method: ScalarMethod::March,
        input: Some(InputSpec::Piecewise {
            tau: 1.0,
            pattern: vec![1.0, 0.0],
        }),
        tau: None,
        intervals: None,
        steps_per_interval: None,
    });
    let switching = write_config(dir.path(), "switching.json", &switching);
    let mut delay = RunConfig::bare(
        1.0,
        GridSpec {
            t_max: 6.0,
            steps: 600,
        },
    );
    delay.scalar = Some(ScalarSpec {
        method: ScalarMethod::Delay,
        input: None,
        tau: Some(1.0),
        intervals: Some(6),
        steps_per_interval: Some(100),
    });
    let delay = write_config(dir.path(), "delay.json", &delay);
    let mut trig = RunConfig::bare(
        1.0,
        GridSpec {
            t_max: 5.0,
            steps: 1000,
        },
    );
    trig.scalar = Some(ScalarSpec {
        method: ScalarMethod::Trig,
        input: None,
        tau: None,
        intervals: None,
        steps_per_interval: None,
    });
    let trig = write_config(dir.path(), "trig.json", &trig);

    let runs: [(&str, &String); 9] = [
        ("solve", &bath),
        ("series", &bath),
        ("simulate", &bath),
        ("compare", &bath),
        ("asymptote", &long),
        ("genericity", &bath),
        ("scalar", &switching),
        ("scalar", &delay),
        ("scalar", &trig),
    ];
    let mut failures = Vec::new();
    for (command, config) in runs {
        let output = |workers: &str| {
            let out = Command::new(env!("CARGO_BIN_EXE_reduktor"))
                .args([command, "--config", config, "--workers", workers, "--quiet"])
                .env_remove("REDUKTOR_WORKERS")
                .output()
                .unwrap();
            (out.status.code(), out.stdout)
        };
        let reference = output("1");
        let identical = reference.0 == Some(0)
            && [output("1"), output("2"), output("8")]
                .iter()
                .all(|o| *o == reference);
        if !identical {
            failures.push(command);
        }
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!(
                "{} command runs byte-identical across repeats and workers 1, 2, 8",
                runs.len()
            )
        } else {
            format!("differing or failing: {failures:?}")
        },
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("closed form for constant input", constant_closed_form),
        ("march, series and Monte Carlo agree", oracle_triangle),
        ("switching input pieces and jumps", switching_example),
        ("cosine input cross-method", cosine_example),
        ("convergence to the predicted limit", convergence_battery),
        ("cyclic permutation limit", cyclic_counterexample),
        ("rescaling law", rescaling_law),
        ("second-order term and decomposability", second_order_checks),
        ("generalized kernel", generalized_kernel),
        ("command-line determinism", cli_determinism),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|_| outcome(false, "panicked".to_string()));
        let tag = if result.pass { "PASS" } else { "FAIL" };
        failed += (!result.pass) as usize;
        println!(
            "{tag} criterion {:>2}: {name}: {} [{:.1}s]",
            k + 1,
            result.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
