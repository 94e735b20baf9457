use nalgebra::DMatrix;
use proptest::prelude::*;
use reduktor::channel::C64;
use reduktor::scalar::*;
use reduktor::volterra::{march_solve, SolverConfig, TimeGrid};

fn grid(t_max: f64, steps: usize) -> TimeGrid {
    TimeGrid::new(t_max, steps).unwrap()
}

/// Largest entrywise gap between the lifted scalar solution and the matrix solver.
fn lift_gap(input: &ScalarInput, nu: f64, n: usize, g: TimeGrid) -> f64 {
    let scalar = scalar_march(input, nu, &g).unwrap();
    let lifted = lift_scalar(&scalar, n).unwrap();
    let source = LiftedSource {
        input: input.clone(),
        n,
    };
    let full = march_solve(&source, &SolverConfig::new(nu, g).unwrap()).unwrap();
    lifted.sup_distance(&full)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn lifted_family_is_closed_under_products(a in 0.0f64..=1.0, b in 0.0f64..=1.0, n in 2usize..6) {
        let prod = lift_value(a, n) * lift_value(b, n);
        prop_assert!((prod - lift_value(a * b, n)).amax() < 1e-14);
    }

    #[test]
    fn scalar_march_commutes_with_lift_constant(alpha in 0.0f64..=1.0, nu in 0.0f64..3.0, n in 2usize..5) {
        prop_assert!(lift_gap(&ScalarInput::Constant(alpha), nu, n, grid(4.0, 400)) < 1e-9);
    }

    #[test]
    fn scalar_march_commutes_with_lift_piecewise(p in prop::collection::vec(0.0f64..=1.0, 1..4), nu in 0.0f64..3.0, n in 2usize..5) {
        let input = ScalarInput::Piecewise { tau: 0.5, pattern: p };
        prop_assert!(lift_gap(&input, nu, n, grid(4.0, 400)) < 1e-9);
    }

    #[test]
    fn scalar_march_commutes_with_lift_trig(mean in 0.3f64..0.7, nu in 0.0f64..3.0, n in 2usize..5) {
        let amplitude = mean.min(1.0 - mean);
        let input = ScalarInput::Trig { mean, amplitude };
        prop_assert!(lift_gap(&input, nu, n, grid(4.0, 400)) < 1e-9);
    }

    #[test]
    fn scalar_march_commutes_with_lift_tabulated(v in prop::collection::vec(0.0f64..=1.0, 2..6), nu in 0.0f64..3.0) {
        let times = (0..v.len()).map(|k| k as f64 * 0.8).collect();
        let input = ScalarInput::Tabulated { times, values: v };
        prop_assert!(lift_gap(&input, nu, 3, grid(4.0, 400)) < 1e-9);
    }
}

#[test]
fn lift_endpoints() {
    assert_eq!(lift_value(1.0, 3), DMatrix::identity(3, 3));
    assert!((lift_value(0.0, 3) - DMatrix::from_element(3, 3, 1.0 / 3.0)).amax() < 1e-16);
}

#[test]
fn identity_and_zero_inputs() {
    let g = grid(5.0, 500);
    let one = scalar_march(&ScalarInput::Constant(1.0), 1.3, &g).unwrap();
    assert!(one.beta.iter().all(|&b| (b - 1.0).abs() < 1e-14));
    let zero = scalar_march(&ScalarInput::Constant(0.0), 1.3, &g).unwrap();
    assert!(zero.beta.iter().all(|&b| b == 0.0));
}

fn second_piece(tau: f64, nu: f64, t: f64) -> f64 {
    1.0 + (nu * tau - nu * t - 1.0) * (-nu * tau).exp()
}

#[test]
fn switching_input_first_two_intervals() {
    for (tau, nu) in [(1.0, 1.0), (0.5, 2.0)] {
        let m = 200;
        let g = grid(2.0 * tau, 2 * m);
        let traj = scalar_march(&ScalarInput::alternating(tau), nu, &g).unwrap();
        for (i, t) in g.nodes().enumerate().take(2 * m) {
            let expected = if i < m { 1.0 } else { second_piece(tau, nu, t) };
            assert!((traj.beta[i] - expected).abs() < 1e-8, "t = {t}");
        }
    }
}

#[test]
fn delay_solution_reproduces_exact_pieces_and_jumps() {
    for (tau, nu) in [(1.0, 1.0), (0.5, 2.0)] {
        let m = 200;
        let traj = piecewise_delay_solve(tau, nu, 10, m).unwrap();
        for (i, t) in traj.grid.nodes().enumerate().take(2 * m) {
            let expected = if i < m { 1.0 } else { second_piece(tau, nu, t) };
            assert!((traj.beta[i] - expected).abs() < 1e-10, "t = {t}");
        }
        for k in 1..=5 {
            let jump = traj
                .jumps
                .iter()
                .find(|j| (j.t - k as f64 * tau).abs() < 1e-12)
                .unwrap();
            let expected = (-1f64).powi(k) * (-nu * k as f64 * tau).exp();
            assert!((jump.size() - expected).abs() < 1e-8, "k = {k}");
        }
    }
}

#[test]
fn delay_solution_agrees_with_march() {
    for (tau, nu) in [(1.0, 1.0), (0.5, 2.0)] {
        let m = 200;
        let delay = piecewise_delay_solve(tau, nu, 10, m).unwrap();
        let march = scalar_march(&ScalarInput::alternating(tau), nu, &delay.grid).unwrap();
        assert!(delay.sup_distance(&march) < 1e-6);
    }
}

#[test]
fn misaligned_switching_is_rejected() {
    let err = scalar_march(&ScalarInput::alternating(0.33), 1.0, &grid(1.0, 10)).unwrap_err();
    assert!(matches!(err, ScalarError::MisalignedGrid { .. }));
}

#[test]
fn cosine_input_initial_value() {
    assert_eq!(TrigState::initial().reconstruct(0.0), C64::new(1.0, 0.0));
    let traj = trig_ode_solve(&grid(5.0, 5000)).unwrap();
    assert_eq!(traj.beta[0], 1.0);
}

#[test]
fn cosine_input_cross_method() {
    let g = grid(5.0, 5000);
    let ode = trig_ode_solve(&g).unwrap();
    let march = scalar_march(&ScalarInput::half_cosine(), 1.0, &g).unwrap();
    assert!(ode.sup_distance(&march) < 1e-6);
    let imag = trig_ode_states(&g)
        .iter()
        .zip(g.nodes())
        .map(|(s, t)| s.reconstruct(t).im.abs())
        .fold(0.0, f64::max);
    assert!(imag < 1e-9);
}

#[test]
fn cosine_input_lifted_matches_matrix_solver() {
    let g = grid(5.0, 5000);
    let lifted = lift_scalar(&trig_ode_solve(&g).unwrap(), 3).unwrap();
    let source = LiftedSource {
        input: ScalarInput::half_cosine(),
        n: 3,
    };
    let full = march_solve(&source, &SolverConfig::new(1.0, g).unwrap()).unwrap();
    assert!(lifted.sup_distance(&full) < 1e-6);
}

/// The constant-coefficient system with the b-equation and initial data
/// exactly as printed (conjugate partner taken as `b̄`).
fn printed_cosine_system(g: &TimeGrid) -> Vec<f64> {
    let i = C64::i();
    let one = C64::new(1.0, 0.0);
    let third = |a: [f64; 3], b: [C64; 3]| {
        (
            a[2] - a[1] + 0.5 * a[0],
            -(3.0 * i - one) * b[2] + 2.0 * (i + one) * b[1] + 0.25 * b[0],
        )
    };
    let step = |a: [f64; 3], b: [C64; 3], h: f64| {
        let f = |a: [f64; 3], b: [C64; 3]| {
            let (a3, b3) = third(a, b);
            ([a[1], a[2], a3], [b[1], b[2], b3])
        };
        let add = |a: [f64; 3], b: [C64; 3], da: [f64; 3], db: [C64; 3], w: f64| {
            (
                [a[0] + w * da[0], a[1] + w * da[1], a[2] + w * da[2]],
                [b[0] + db[0] * w, b[1] + db[1] * w, b[2] + db[2] * w],
            )
        };
        let (ka1, kb1) = f(a, b);
        let (a2, b2) = add(a, b, ka1, kb1, h / 2.0);
        let (ka2, kb2) = f(a2, b2);
        let (a3, b3) = add(a, b, ka2, kb2, h / 2.0);
        let (ka3, kb3) = f(a3, b3);
        let (a4, b4) = add(a, b, ka3, kb3, h);
        let (ka4, kb4) = f(a4, b4);
        let (a, b) = add(a, b, ka1, kb1, h / 6.0);
        let (a, b) = add(a, b, ka2, kb2, h / 3.0);
        let (a, b) = add(a, b, ka3, kb3, h / 3.0);
        add(a, b, ka4, kb4, h / 6.0)
    };
    let mut a = [0.5, 0.5, 0.5];
    let mut b = [
        C64::new(0.25, 0.0),
        C64::new(-0.25, 0.0),
        C64::new(-0.25, 0.25),
    ];
    let mut out = Vec::with_capacity(g.steps + 1);
    for (k, t) in g.nodes().enumerate() {
        if k > 0 {
            (a, b) = step(a, b, g.h());
        }
        let z = b[0] * C64::new(0.0, t).exp();
        out.push((-t).exp() * (a[0] + 2.0 * z.re));
    }
    out
}

#[test]
fn printed_cosine_data_does_not_solve_the_equation() {
    let g = grid(5.0, 5000);
    let march = scalar_march(&ScalarInput::half_cosine(), 1.0, &g).unwrap();
    let printed = printed_cosine_system(&g);
    let gap = printed
        .iter()
        .zip(&march.beta)
        .map(|(p, m)| (p - m).abs())
        .fold(0.0, f64::max);
    assert!(gap > 0.1, "printed system unexpectedly agrees: {gap:e}");
}

#[test]
fn generic_input_envelope_decays() {
    let g = grid(60.0, 6000);
    let traj = scalar_march(&ScalarInput::half_cosine(), 1.0, &g).unwrap();
    let window_sup = |start: f64| {
        traj.grid
            .nodes()
            .zip(&traj.beta)
            .filter(|(t, _)| *t >= start && *t <= start + 5.0)
            .map(|(_, b)| b.abs())
            .fold(0.0, f64::max)
    };
    let sups: Vec<f64> = (2..11).map(|k| window_sup(5.0 * k as f64)).collect();
    assert!(sups.windows(2).all(|w| w[1] < w[0]), "{sups:?}");
}
