mod common;

use std::sync::Arc;

use common::{lattice, random_dims, random_lq};
use fbsde_nash::adjoint::{adjoint_coefficients, solve_adjoint, AdjointTrajectory};
use fbsde_nash::drivers::{sample_ensemble, Backend, RegressionConfig, TimeGrid};
use fbsde_nash::equilibrium::eval_cost;
use fbsde_nash::fbsde::{dynamics_residuals, solve_fbsde, ControlProcess, FbsdeConfig, StateTrajectory};
use fbsde_nash::hamiltonian::{
    check_pointwise_min, hamiltonian_gradient, projected_residual, vi_residual, CertificateOptions,
};
use fbsde_nash::problem::{lq_to_problem, validate_problem, ControlBoxSpec, DerivativeCheckOptions, ControlBox, GameProblem, Player, Point, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_vec(rng: &mut ChaCha8Rng, len: usize, radius: f64) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-radius..radius)).collect()
}

struct RandomPoint {
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    u1: Vec<f64>,
    u2: Vec<f64>,
}

impl RandomPoint {
    fn new(problem: &GameProblem, rng: &mut ChaCha8Rng, radius: f64) -> Self {
        let d = problem.dims;
        Self {
            x: random_vec(rng, d.n, radius),
            y: random_vec(rng, d.m, radius),
            z: random_vec(rng, d.m * d.d, radius),
            u1: random_vec(rng, d.k1, radius),
            u2: random_vec(rng, d.k2, radius),
        }
    }

    fn point(&self, t: f64) -> Point<'_> {
        Point {
            t,
            x: &self.x,
            y: &self.y,
            z: &self.z,
            u1: &self.u1,
            u2: &self.u2,
        }
    }
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * (1.0 + a.abs().max(b.abs()))
}

fn small_problem(seed: u64) -> GameProblem {
    lq_to_problem(&random_lq(seed, random_dims(seed), 0.2)).unwrap()
}

fn solved(problem: &GameProblem, backend: &Backend, seed: u64) -> Option<(ControlProcess, StateTrajectory)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u1 = random_vec(&mut rng, problem.dims.k1, 1.0);
    let u2 = random_vec(&mut rng, problem.dims.k2, 1.0);
    let u = ControlProcess::constant(problem, backend, &u1, &u2);
    let cfg = FbsdeConfig { max_picard: 200, damping: 1.0, tol: 1e-24 };
    let (traj, diag) = solve_fbsde(problem, &u, backend, &cfg).ok()?;
    diag.converged.then_some((u, traj))
}

fn adjoint(problem: &GameProblem, traj: &StateTrajectory, u: &ControlProcess, backend: &Backend, player: Player) -> Option<AdjointTrajectory> {
    let cfg = FbsdeConfig { max_picard: 40, damping: 1.0, tol: 1e-300 };
    solve_adjoint(problem, traj, u, player, backend, &cfg).ok().map(|(a, _)| a)
}

/// Adds `c` to the running cost of `player` without touching its gradients.
fn shift_running(problem: &GameProblem, player: Player, c: f64) -> GameProblem {
    let mut out = problem.clone();
    let l = &mut out.costs.running[player.index()];
    let value = l.value.clone();
    l.value = Arc::new(move |pt: &Point<'_>| value(pt) + c);
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn lq_derivatives_agree_with_finite_differences(seed in any::<u64>()) {
        let problem = lq_to_problem(&random_lq(seed, random_dims(seed), 1.0)).unwrap();
        let opts = DerivativeCheckOptions { samples: 20, seed, ..Default::default() };
        let report = validate_problem(&problem, &opts, 10.0).unwrap();
        prop_assert!(report.passed, "max rel error {}", report.max_rel_error);
        prop_assert!(report.max_rel_error <= 1e-6);
    }

    #[test]
    fn validation_is_deterministic(seed in any::<u64>(), check_seed in any::<u64>()) {
        let problem = small_problem(seed);
        let opts = DerivativeCheckOptions { samples: 10, seed: check_seed, ..Default::default() };
        let a = validate_problem(&problem, &opts, 10.0).unwrap();
        let b = validate_problem(&problem, &opts, 10.0).unwrap();
        prop_assert_eq!(a.reports, b.reports);
        prop_assert_eq!(a.warnings, b.warnings);
    }

    #[test]
    fn cost_scaling_scales_every_cost_term(seed in any::<u64>(), c in 0.01f64..100.0) {
        let problem = small_problem(seed);
        let mut scaled = problem.clone();
        scaled.scale_costs(Player::One, c);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..10 {
            let rp = RandomPoint::new(&problem, &mut rng, 10.0);
            let pt = rp.point(0.3);
            let (l, ls) = (problem.costs.running[0].eval(&pt), scaled.costs.running[0].eval(&pt));
            prop_assert!(close(ls, c * l, 1e-13));
            let (phi, phis) = (problem.costs.terminal[0].eval(&rp.x), scaled.costs.terminal[0].eval(&rp.x));
            prop_assert!(close(phis, c * phi, 1e-13));
            let (h, hs) = (problem.costs.initial[0].eval(&rp.y), scaled.costs.initial[0].eval(&rp.y));
            prop_assert!(close(hs, c * h, 1e-13));
            // the other player is untouched
            prop_assert_eq!(problem.costs.running[1].eval(&pt), scaled.costs.running[1].eval(&pt));
        }
    }

    #[test]
    fn lattice_expectation_is_linear(steps in 1usize..12, j_frac in 0.0f64..1.0, a in -5.0f64..5.0, b in -5.0f64..5.0, seed in any::<u64>()) {
        let backend = lattice(1.0, steps);
        let j = ((steps as f64 * j_frac) as usize).min(steps - 1);
        let nodes = backend.scenarios(j + 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = random_vec(&mut rng, nodes, 10.0);
        let w = random_vec(&mut rng, nodes, 10.0);
        let combo: Vec<f64> = v.iter().zip(&w).map(|(p, q)| a * p + b * q).collect();
        let proj = backend.projector(j, &[], 0).unwrap();
        let (ev, ew, ec) = (proj.expect(&v, 1), proj.expect(&w, 1), proj.expect(&combo, 1));
        for l in 0..=j {
            prop_assert!(close(ec[l], a * ev[l] + b * ew[l], 1e-12));
        }
    }

    #[test]
    fn lattice_expectation_preserves_level_constants(steps in 1usize..12, value in -100.0f64..100.0, dim in 1usize..4) {
        let backend = lattice(2.0, steps);
        for j in 0..steps {
            let next = vec![value; backend.scenarios(j + 1) * dim];
            let e = backend.projector(j, &[], 0).unwrap().expect(&next, dim);
            prop_assert!(e.iter().all(|v| *v == value));
        }
    }

    #[test]
    fn lattice_tower_property(steps in 2usize..10, seed in any::<u64>()) {
        // Iterated one-step expectations from the terminal level reproduce
        // the weighted mean at the root.
        let backend = lattice(1.0, steps);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let terminal = random_vec(&mut rng, backend.scenarios(steps), 5.0);
        let mean = backend.expectation(steps, &terminal);
        let mut v = terminal;
        for j in (0..steps).rev() {
            v = backend.projector(j, &[], 0).unwrap().expect(&v, 1);
        }
        prop_assert!(close(v[0], mean, 1e-12));
    }

    #[test]
    fn regression_projection_is_idempotent(seed in any::<u64>(), degree in 1usize..4) {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let backend = Backend::monte_carlo(
            sample_ensemble(grid, 400, 1, seed).unwrap(),
            RegressionConfig { degree, include_brownian: true },
        ).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let regressors = random_vec(&mut rng, 400, 2.0);
        let next = random_vec(&mut rng, 400, 3.0);
        let proj = backend.projector(2, &regressors, 1).unwrap();
        let once = proj.expect(&next, 1);
        let twice = proj.expect(&once, 1);
        let scale = once.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for (a, b) in once.iter().zip(&twice) {
            prop_assert!((a - b).abs() <= 1e-8 * scale, "{a} vs {b}");
        }
    }

    #[test]
    fn projected_residual_vanishes_exactly_at_box_stationary_points(
        spec in prop::collection::vec((0u8..3, 0u8..3), 1..5),
        lo in -3.0f64..0.0,
        width in 0.5f64..3.0,
        mag in 0.01f64..5.0,
    ) {
        // spec: (position: 0 lower / 1 interior / 2 upper, gradient sign: 0 zero / 1 positive / 2 negative)
        let k = spec.len();
        let bx = ControlBox::new(vec![lo; k], vec![lo + width; k]).unwrap();
        let mut u = Vec::new();
        let mut g = Vec::new();
        let mut stationary = true;
        for (pos, sign) in &spec {
            u.push(match pos { 0 => lo, 1 => lo + 0.5 * width, _ => lo + width });
            let gc = match sign { 0 => 0.0, 1 => mag, _ => -mag };
            g.push(gc);
            stationary &= match pos { 0 => gc >= 0.0, 1 => gc == 0.0, _ => gc <= 0.0 };
        }
        let rho = projected_residual(&u, &g, &bx);
        prop_assert_eq!(rho == 0.0, stationary, "rho = {}", rho);
    }

    #[test]
    fn adjoint_drift_is_negative_hamiltonian_gradient(seed in any::<u64>()) {
        let problem = small_problem(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let dims = problem.dims;
        for _ in 0..10 {
            let rp = RandomPoint::new(&problem, &mut rng, 10.0);
            let (p, q, k) = (random_vec(&mut rng, dims.n, 5.0), random_vec(&mut rng, dims.n * dims.d, 5.0), random_vec(&mut rng, dims.m, 5.0));
            let mult = fbsde_nash::hamiltonian::Multipliers { p: &p, q: &q, k: &k };
            for player in Player::BOTH {
                let coeffs = adjoint_coefficients(&problem, &rp.point(0.1), &mult, player);
                for (i, var) in [Var::X, Var::Y, Var::Z].into_iter().enumerate() {
                    let h = hamiltonian_gradient(&problem, &rp.point(0.1), &mult, player, var);
                    for (a, b) in coeffs[i].iter().zip(h.iter()) {
                        prop_assert!(close(*a, -b, 1e-12));
                    }
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn state_solution_satisfies_dynamics_and_pinning(seed in any::<u64>(), steps in 2usize..8) {
        let problem = small_problem(seed);
        let backend = lattice(problem.horizon, steps);
        let solved = solved(&problem, &backend, seed);
        prop_assume!(solved.is_some());
        let (u, traj) = solved.unwrap();
        prop_assert_eq!(traj.x.at(0, 0), problem.initial.as_slice());
        let xi = problem.terminal.as_constant().unwrap();
        for s in 0..backend.scenarios(steps) {
            prop_assert_eq!(traj.y.at(steps, s), xi);
        }
        let (fx, fy) = dynamics_residuals(&problem, &u, &traj, &backend).unwrap();
        prop_assert!(fx <= 1e-20, "forward residual {fx}");
        prop_assert!(fy <= 1e-18, "backward residual {fy}");
    }

    #[test]
    fn adjoint_endpoints_are_pinned(seed in any::<u64>(), steps in 2usize..8) {
        let problem = small_problem(seed);
        let backend = lattice(problem.horizon, steps);
        let solved = solved(&problem, &backend, seed);
        prop_assume!(solved.is_some());
        let (u, traj) = solved.unwrap();
        for player in Player::BOTH {
            let adj = adjoint(&problem, &traj, &u, &backend, player);
            prop_assume!(adj.is_some());
            let adj = adj.unwrap();
            let i = player.index();
            let k0 = problem.costs.initial[i].grad(traj.y.at(0, 0));
            for (a, b) in adj.k.at(0, 0).iter().zip(k0.iter()) {
                prop_assert!(close(*a, -b, 1e-14));
            }
            for s in 0..backend.scenarios(steps) {
                let pn = problem.costs.terminal[i].grad(traj.x.at(steps, s));
                for (a, b) in adj.p.at(steps, s).iter().zip(pn.iter()) {
                    prop_assert!(close(*a, *b, 1e-14));
                }
            }
        }
    }

    #[test]
    fn adjoint_scales_linearly_with_costs(seed in any::<u64>(), c in 0.1f64..10.0) {
        let problem = small_problem(seed);
        let backend = lattice(problem.horizon, 4);
        let solved = solved(&problem, &backend, seed);
        prop_assume!(solved.is_some());
        let (u, traj) = solved.unwrap();
        let mut scaled = problem.clone();
        scaled.scale_costs(Player::One, c);
        let base = adjoint(&problem, &traj, &u, &backend, Player::One);
        let big = adjoint(&scaled, &traj, &u, &backend, Player::One);
        prop_assume!(base.is_some() && big.is_some());
        let (base, big) = (base.unwrap(), big.unwrap());
        for (a, b) in [(&base.k, &big.k), (&base.p, &big.p), (&base.q, &big.q)] {
            let mut expected = a.clone();
            expected.scale(c);
            let scale = (0..expected.levels())
                .flat_map(|j| expected.level(j).iter().copied())
                .fold(1.0f64, |m, v| m.max(v.abs()));
            prop_assert!(expected.max_abs_diff(b) <= 1e-9 * scale);
        }
    }

    #[test]
    fn running_cost_constants_leave_first_order_conditions_unchanged(seed in any::<u64>(), c in -50.0f64..50.0) {
        let mut spec = random_lq(seed, random_dims(seed), 0.2);
        spec.u1_box = Some(ControlBoxSpec { lower: vec![-1.0; spec.k1], upper: vec![1.0; spec.k1] });
        let problem = lq_to_problem(&spec).unwrap();
        let shifted = shift_running(&problem, Player::One, c);
        let backend = lattice(problem.horizon, 4);
        let solved = solved(&problem, &backend, seed);
        prop_assume!(solved.is_some());
        let (mut u, traj) = solved.unwrap();
        u.project(&problem);
        let adj = [Player::One, Player::Two].map(|p| adjoint(&problem, &traj, &u, &backend, p));
        let adj_s = [Player::One, Player::Two].map(|p| adjoint(&shifted, &traj, &u, &backend, p));
        prop_assume!(adj.iter().chain(&adj_s).all(Option::is_some));
        let adj = adj.map(Option::unwrap);
        let adj_s = adj_s.map(Option::unwrap);
        prop_assert_eq!(&adj, &adj_s);

        let vi = vi_residual(&problem, &traj, &adj[0], &adj[1], &u, &backend).unwrap();
        let vi_s = vi_residual(&shifted, &traj, &adj_s[0], &adj_s[1], &u, &backend).unwrap();
        prop_assert_eq!(vi.players[0].rho, vi_s.players[0].rho);
        prop_assert_eq!(vi.players[1].rho, vi_s.players[1].rho);

        let opts = CertificateOptions { grid: 5, radius: Some(2.0), ..Default::default() };
        let pw = check_pointwise_min(&problem, &traj, &adj[0], &u, &backend, &opts).unwrap();
        let pw_s = check_pointwise_min(&shifted, &traj, &adj_s[0], &u, &backend, &opts).unwrap();
        prop_assert_eq!(pw.passed, pw_s.passed);
        prop_assert!((pw.worst_violation - pw_s.worst_violation).abs() <= 1e-9 * (1.0 + c.abs()));

        for player in Player::BOTH {
            let cost = eval_cost(&problem, &traj, &u, player, &backend).value;
            let cost_s = eval_cost(&shifted, &traj, &u, player, &backend).value;
            let shift = if player == Player::One { c * problem.horizon } else { 0.0 };
            prop_assert!(close(cost_s, cost + shift, 1e-12));
        }
    }
}
