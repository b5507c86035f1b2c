//! Equilibrium search: costs, Gâteaux derivatives, projected-gradient
//! iteration on the first-order conditions, and independent oracles.

mod oracle;
mod riccati;

pub use oracle::{brute_force_nash, grid_cost_bound, OracleOptions, OracleReport, OracleStatus};
pub use riccati::{riccati_from_lq, solve_riccati, RiccatiSolution, RiccatiSpec};

use serde::{Deserialize, Serialize};

use crate::adjoint::{solve_adjoint_warm, AdjointTrajectory};
use crate::drivers::Backend;
use crate::error::{Error, Result};
use crate::fbsde::{solve_fbsde_warm, ControlProcess, FbsdeConfig, SolveDiagnostics, StateTrajectory};
use crate::hamiltonian::{build_certificate, control_gradient, vi_from_gradient, CertificateOptions, VerificationCertificate};
use crate::problem::{GameProblem, Player, Point};
use crate::process::Process;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub value: f64,
    /// Sample standard error on Monte Carlo, 0 on the lattice.
    pub std_error: f64,
}

/// `J_i = E[Σ_j l_i dt + φ_i(x_N) + h_i(y_0)]`.
pub fn eval_cost(
    problem: &GameProblem,
    traj: &StateTrajectory,
    u: &ControlProcess,
    player: Player,
    backend: &Backend,
) -> CostEstimate {
    let i = player.index();
    let grid = *backend.grid();
    let dt = grid.dt();
    let steps = grid.steps();
    let l = &problem.costs.running[i];
    let phi = &problem.costs.terminal[i];
    let h = &problem.costs.initial[i];
    let running = |j: usize| -> Vec<f64> {
        let t = grid.t(j);
        crate::process::fill_level(backend.scenarios(j), 1, |s, out| out[0] = l.eval(&traj.point(u, t, j, s)))
    };
    let terminal = crate::process::fill_level(backend.scenarios(steps), 1, |s, out| out[0] = phi.eval(traj.x.at(steps, s)));
    let initial = crate::process::fill_level(backend.scenarios(0), 1, |s, out| out[0] = h.eval(traj.y.at(0, s)));
    if backend.is_lattice() {
        let mut value = backend.expectation(steps, &terminal) + backend.expectation(0, &initial);
        for j in 0..steps {
            value += dt * backend.expectation(j, &running(j));
        }
        CostEstimate { value, std_error: 0.0 }
    } else {
        let mut per_path: Vec<f64> = terminal.iter().zip(&initial).map(|(a, b)| a + b).collect();
        for j in 0..steps {
            for (c, r) in per_path.iter_mut().zip(running(j)) {
                *c += dt * r;
            }
        }
        let p = per_path.len() as f64;
        let mean = per_path.iter().sum::<f64>() / p;
        let var = if p > 1.0 {
            per_path.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (p - 1.0)
        } else {
            0.0
        };
        CostEstimate {
            value: mean,
            std_error: (var / p).sqrt(),
        }
    }
}

/// State and both adjoints along one control.
#[derive(Clone, Debug)]
pub struct SolvedState {
    pub traj: StateTrajectory,
    pub adjoints: [AdjointTrajectory; 2],
    pub state_diagnostics: SolveDiagnostics,
    pub adjoint_diagnostics: [SolveDiagnostics; 2],
}

impl SolvedState {
    pub fn converged(&self) -> bool {
        self.state_diagnostics.converged && self.adjoint_diagnostics.iter().all(|d| d.converged)
    }
}

/// Solves the state FBSDE and both adjoint systems, optionally warm-started.
pub fn solve_state(
    problem: &GameProblem,
    u: &ControlProcess,
    backend: &Backend,
    cfg: &FbsdeConfig,
    warm: Option<&SolvedState>,
) -> Result<SolvedState> {
    let (traj, sd) = solve_fbsde_warm(problem, u, backend, cfg, warm.map(|w| &w.traj))?;
    let (a1, a2) = rayon::join(
        || solve_adjoint_warm(problem, &traj, u, Player::One, backend, cfg, warm.map(|w| &w.adjoints[0])),
        || solve_adjoint_warm(problem, &traj, u, Player::Two, backend, cfg, warm.map(|w| &w.adjoints[1])),
    );
    let ((a1, d1), (a2, d2)) = (a1?, a2?);
    Ok(SolvedState {
        traj,
        adjoints: [a1, a2],
        state_diagnostics: sd,
        adjoint_diagnostics: [d1, d2],
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateauxReport {
    /// `Σ_j dt E⟨H_{iu_i}, v⟩`
    pub adjoint_form: f64,
    /// `[J_i(u + εv) - J_i(u - εv)] / 2ε`
    pub finite_diff_form: f64,
    pub epsilon: f64,
    /// Set when `u ± εv` leaves the control box (the box is ignored for the
    /// perturbed solves).
    pub left_box: bool,
}

fn perturbed(u: &ControlProcess, player: Player, v: &Process, eps: f64) -> ControlProcess {
    let mut w = u.clone();
    let p = w.get_mut(player);
    for j in 0..p.levels() {
        for (a, b) in p.level_mut(j).iter_mut().zip(v.level(j)) {
            *a += eps * b;
        }
    }
    w
}

/// Directional derivative of `J_i` along `v` (a process shaped like
/// player `i`'s control), by the adjoint formula and by central differences
/// of full re-solves.
pub fn gateaux_derivative(
    problem: &GameProblem,
    u: &ControlProcess,
    player: Player,
    v: &Process,
    backend: &Backend,
    cfg: &FbsdeConfig,
    eps: f64,
) -> Result<GateauxReport> {
    let base = solve_state(problem, u, backend, cfg, None)?;
    if !base.converged() {
        return Err(Error::NotConverged("FBSDE or adjoint solve at the base control".into()));
    }
    v.check_shape(u.get(player), "direction")?;
    let grad = control_gradient(problem, &base.traj, &base.adjoints[player.index()], u, backend);
    let grid = *backend.grid();
    let k = v.dim();
    let mut adjoint_form = 0.0;
    for j in 0..grid.steps() {
        let per: Vec<f64> = (0..backend.scenarios(j))
            .map(|s| grad.at(j, s).iter().zip(v.at(j, s)).map(|(a, b)| a * b).sum())
            .collect();
        if k > 0 {
            adjoint_form += grid.dt() * backend.expectation(j, &per);
        }
    }
    let mut costs = [0.0; 2];
    let mut left_box = false;
    for (slot, sign) in [(0, 1.0), (1, -1.0)] {
        let w = perturbed(u, player, v, sign * eps);
        left_box |= !w.is_feasible(problem);
        let (traj, diag) = solve_fbsde_warm(problem, &w, backend, cfg, Some(&base.traj))?;
        if !diag.converged {
            return Err(Error::NotConverged(format!(
                "FBSDE at the perturbed control (residual {:.3e})",
                diag.residual
            )));
        }
        costs[slot] = eval_cost(problem, &traj, &w, player, backend).value;
    }
    Ok(GateauxReport {
        adjoint_form,
        finite_diff_form: (costs[0] - costs[1]) / (2.0 * eps),
        epsilon: eps,
        left_box,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateMode {
    Simultaneous,
    BestResponseSweep,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradientConfig {
    pub step: f64,
    pub max_halvings: usize,
    pub max_iter: usize,
    /// Stopping tolerance ρ* on `max(ρ_1, ρ_2)`.
    pub tol: f64,
    pub mode: UpdateMode,
    /// Iterations without a relative merit improvement of `1e-9` before the
    /// search is declared stalled.
    pub stall_window: usize,
}

impl Default for GradientConfig {
    fn default() -> Self {
        Self {
            step: 0.1,
            max_halvings: 20,
            max_iter: 500,
            tol: 1e-6,
            mode: UpdateMode::Simultaneous,
            stall_window: 50,
        }
    }
}

impl GradientConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || !(self.tol > 0.0) {
            return Err(Error::Invalid("gradient step and tolerance must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub j1: f64,
    pub j2: f64,
    pub rho1: f64,
    pub rho2: f64,
    /// Step accepted to reach this iterate (0 for the initial point).
    pub alpha: f64,
}

#[derive(Clone, Debug)]
pub struct EquilibriumReport {
    pub controls: ControlProcess,
    pub state: SolvedState,
    pub costs: [CostEstimate; 2],
    pub rho: [f64; 2],
    pub history: Vec<IterationRecord>,
    pub certificate: VerificationCertificate,
    pub converged: bool,
    pub stalled: bool,
    pub iterations: usize,
}

impl EquilibriumReport {
    pub fn merit(&self) -> f64 {
        self.rho[0].max(self.rho[1])
    }
}

struct Evaluated {
    state: SolvedState,
    grads: [Process; 2],
    rho: [f64; 2],
}

fn evaluate(
    problem: &GameProblem,
    u: &ControlProcess,
    backend: &Backend,
    cfg: &FbsdeConfig,
    warm: Option<&SolvedState>,
) -> Result<Evaluated> {
    let state = solve_state(problem, u, backend, cfg, warm)?;
    let grads = Player::BOTH.map(|p| control_gradient(problem, &state.traj, &state.adjoints[p.index()], u, backend));
    let rho = Player::BOTH.map(|p| vi_from_gradient(problem, p, &grads[p.index()], u, backend).rho);
    Ok(Evaluated { state, grads, rho })
}

fn step(problem: &GameProblem, u: &ControlProcess, player: Player, grad: &Process, alpha: f64) -> ControlProcess {
    let mut w = perturbed(u, player, grad, -alpha);
    let bx = problem.control_box(player);
    let p = w.get_mut(player);
    let k = p.dim();
    if k > 0 {
        for j in 0..p.levels() {
            for slot in p.level_mut(j).chunks_mut(k) {
                bx.project(slot);
            }
        }
    }
    w
}

/// Projected-gradient search from the box midpoint.
pub fn solve_nash(
    problem: &GameProblem,
    backend: &Backend,
    fbsde_cfg: &FbsdeConfig,
    grad_cfg: &GradientConfig,
    cert_opts: &CertificateOptions,
) -> Result<EquilibriumReport> {
    solve_nash_from(problem, backend, fbsde_cfg, grad_cfg, cert_opts, ControlProcess::midpoint(problem, backend))
}

/// Projected-gradient search from `initial` (projected onto the boxes).
pub fn solve_nash_from(
    problem: &GameProblem,
    backend: &Backend,
    fbsde_cfg: &FbsdeConfig,
    grad_cfg: &GradientConfig,
    cert_opts: &CertificateOptions,
    initial: ControlProcess,
) -> Result<EquilibriumReport> {
    grad_cfg.validate()?;
    let mut u = initial;
    u.check_layout(problem, backend)?;
    u.project(problem);
    let mut cur = evaluate(problem, &u, backend, fbsde_cfg, None)?;
    let record = |it: usize, u: &ControlProcess, ev: &Evaluated, alpha: f64| {
        let j = Player::BOTH.map(|p| eval_cost(problem, &ev.state.traj, u, p, backend).value);
        IterationRecord {
            iteration: it,
            j1: j[0],
            j2: j[1],
            rho1: ev.rho[0],
            rho2: ev.rho[1],
            alpha,
        }
    };
    let merit = |ev: &Evaluated| ev.rho[0].max(ev.rho[1]);
    let mut history = vec![record(0, &u, &cur, 0.0)];
    let mut converged = merit(&cur) <= grad_cfg.tol;
    let mut stalled = false;
    let mut best_merit = merit(&cur);
    let mut since_improvement = 0;

    let mut it = 0;
    while !converged && it < grad_cfg.max_iter {
        it += 1;
        let mut alpha = grad_cfg.step;
        let mut accepted = None;
        for _ in 0..=grad_cfg.max_halvings {
            let trial = match grad_cfg.mode {
                UpdateMode::Simultaneous => {
                    let w = step(problem, &u, Player::One, &cur.grads[0], alpha);
                    let w = step(problem, &w, Player::Two, &cur.grads[1], alpha);
                    evaluate(problem, &w, backend, fbsde_cfg, Some(&cur.state)).map(|ev| (w, ev))
                }
                UpdateMode::BestResponseSweep => {
                    let w = step(problem, &u, Player::One, &cur.grads[0], alpha);
                    evaluate(problem, &w, backend, fbsde_cfg, Some(&cur.state)).and_then(|mid| {
                        let w = step(problem, &w, Player::Two, &mid.grads[1], alpha);
                        evaluate(problem, &w, backend, fbsde_cfg, Some(&mid.state)).map(|ev| (w, ev))
                    })
                }
            };
            match trial {
                Ok((w, ev)) if merit(&ev) < merit(&cur) => {
                    accepted = Some((w, ev));
                    break;
                }
                Ok(_) | Err(Error::Diverged(_)) | Err(Error::NonFinite { .. }) => alpha *= 0.5,
                Err(e) => return Err(e),
            }
        }
        let Some((w, ev)) = accepted else {
            stalled = true;
            break;
        };
        u = w;
        cur = ev;
        history.push(record(it, &u, &cur, alpha));
        let m = merit(&cur);
        converged = m <= grad_cfg.tol;
        if m < best_merit * (1.0 - 1e-9) {
            best_merit = m;
            since_improvement = 0;
        } else {
            since_improvement += 1;
            if since_improvement >= grad_cfg.stall_window {
                stalled = true;
                break;
            }
        }
    }

    let certificate = build_certificate(
        problem,
        &cur.state.traj,
        [&cur.state.adjoints[0], &cur.state.adjoints[1]],
        &u,
        backend,
        cert_opts,
    )?;
    let costs = Player::BOTH.map(|p| eval_cost(problem, &cur.state.traj, &u, p, backend));
    Ok(EquilibriumReport {
        controls: u,
        costs,
        rho: cur.rho,
        iterations: history.len(),
        history,
        certificate,
        converged,
        stalled,
        state: cur.state,
    })
}

/// Evaluation point helper for callers holding a solved state.
pub fn node_point<'a>(state: &'a SolvedState, u: &'a ControlProcess, backend: &Backend, j: usize, s: usize) -> Point<'a> {
    state.traj.point(u, backend.grid().t(j), j, s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drivers::{sample_ensemble, BinomialLattice, RegressionConfig, TimeGrid};
    use crate::fbsde::solve_fbsde;
    use crate::problem::{lq_to_problem, ControlBoxSpec, Dims, EndpointCost, LqGameSpec, RunningCost, Var};
    use crate::hamiltonian::Verdict;

    fn lattice(n: usize) -> Backend {
        Backend::lattice(BinomialLattice::new(TimeGrid::new(1.0, n).unwrap()))
    }

    fn tight() -> FbsdeConfig {
        FbsdeConfig {
            max_picard: 400,
            damping: 0.5,
            tol: 1e-26,
        }
    }

    #[test]
    fn zero_problem_costs() {
        let dims = Dims::new(1, 1, 1, 1, 1).unwrap();
        let mut p = GameProblem::zero(dims, 1.0, vec![1.0], vec![0.0]).unwrap();
        p.costs.terminal = [EndpointCost::half_square(1), EndpointCost::half_square(1)];
        p.costs.initial = [EndpointCost::half_square(1), EndpointCost::half_square(1)];
        let b = lattice(8);
        let u = ControlProcess::midpoint(&p, &b);
        let (traj, _) = solve_fbsde(&p, &u, &b, &FbsdeConfig::default()).unwrap();
        for player in Player::BOTH {
            assert_eq!(eval_cost(&p, &traj, &u, player, &b), CostEstimate { value: 0.5, std_error: 0.0 });
        }
    }

    #[test]
    fn unit_running_cost_gives_horizon() {
        let dims = Dims::new(1, 1, 1, 1, 1).unwrap();
        let mut p = GameProblem::zero(dims, 1.7, vec![1.0], vec![0.0]).unwrap();
        p.costs.running[1] = RunningCost::new(&dims, |_| 1.0);
        let b = Backend::lattice(BinomialLattice::new(TimeGrid::new(1.7, 10).unwrap()));
        let u = ControlProcess::midpoint(&p, &b);
        let (traj, _) = solve_fbsde(&p, &u, &b, &FbsdeConfig::default()).unwrap();
        let j = eval_cost(&p, &traj, &u, Player::Two, &b).value;
        assert!((j - 1.7).abs() < 1e-14);

        let e = sample_ensemble(TimeGrid::new(1.7, 10).unwrap(), 100, 1, 1).unwrap();
        let mc = Backend::monte_carlo(e, RegressionConfig::default()).unwrap();
        let u = ControlProcess::midpoint(&p, &mc);
        let (traj, _) = solve_fbsde(&p, &u, &mc, &FbsdeConfig::default()).unwrap();
        let c = eval_cost(&p, &traj, &u, Player::Two, &mc);
        assert!((c.value - 1.7).abs() < 1e-12 && c.std_error < 1e-12);
    }

    pub(crate) fn game_spec() -> LqGameSpec {
        let dims = Dims::new(1, 1, 1, 1, 1).unwrap();
        let mut s = LqGameSpec::zero(dims, 1.0, vec![1.0], vec![0.2]);
        s.drift = s
            .drift
            .set(Var::X, vec![vec![-0.3]])
            .set(Var::Y, vec![vec![0.1]])
            .set(Var::U1, vec![vec![1.0]])
            .set(Var::U2, vec![vec![-0.5]]);
        s.diffusion[0] = s.diffusion[0].clone().set(Var::X, vec![vec![0.2]]).set(Var::U2, vec![vec![0.1]]);
        s.driver = s
            .driver
            .set(Var::X, vec![vec![0.3]])
            .set(Var::Y, vec![vec![-0.1]])
            .set(Var::Z, vec![vec![0.1]])
            .set(Var::U1, vec![vec![0.2]]);
        for (i, pc) in s.players.iter_mut().enumerate() {
            pc.q = Some(vec![vec![1.0]]);
            pc.r = Some(vec![vec![0.2 * i as f64]]);
            pc.n = Some(vec![vec![1.0 + i as f64]]);
            pc.m = Some(vec![vec![0.1]]);
            pc.g = Some(vec![vec![0.5]]);
            pc.h = Some(vec![vec![0.3]]);
        }
        s.u1_box = Some(ControlBoxSpec { lower: vec![-2.0], upper: vec![2.0] });
        s.u2_box = Some(ControlBoxSpec { lower: vec![-2.0], upper: vec![2.0] });
        s
    }

    #[test]
    fn gateaux_zero_direction_and_inert_controls() {
        let p = lq_to_problem(&game_spec()).unwrap();
        let b = lattice(8);
        let u = ControlProcess::constant(&p, &b, &[0.1], &[0.2]);
        let v = Process::zeros(1, &b.sizes(8));
        let g = gateaux_derivative(&p, &u, Player::One, &v, &b, &tight(), 1e-4).unwrap();
        assert_eq!(g.adjoint_form, 0.0);
        assert!(g.finite_diff_form.abs() < 1e-12);

        let inert = GameProblem::zero(Dims::new(1, 1, 1, 1, 1).unwrap(), 1.0, vec![1.0], vec![0.0]).unwrap();
        let u = ControlProcess::constant(&inert, &b, &[0.1], &[0.2]);
        let mut v = Process::zeros(1, &b.sizes(8));
        v.level_mut(3)[1] = 1.0;
        let g = gateaux_derivative(&inert, &u, Player::Two, &v, &b, &tight(), 1e-4).unwrap();
        assert_eq!(g.adjoint_form, 0.0);
        assert_eq!(g.finite_diff_form, 0.0);
    }

    #[test]
    fn gateaux_matches_central_difference() {
        let p = lq_to_problem(&game_spec()).unwrap();
        let b = lattice(16);
        let u = ControlProcess::from_fn(&p, &b, |pl, _, t, w| vec![0.2 * t - 0.1 * w[0] + 0.05 * pl.number() as f64]);
        for player in Player::BOTH {
            let v = Process::from_levels(
                1,
                (0..16).map(|j| (0..=j).map(|l| ((j * 7 + l * 3) % 5) as f64 * 0.2 - 0.4).collect()).collect(),
            );
            let g = gateaux_derivative(&p, &u, player, &v, &b, &tight(), 1e-4).unwrap();
            assert!(!g.left_box);
            let rel = (g.adjoint_form - g.finite_diff_form).abs() / (g.finite_diff_form.abs() + 1e-12);
            assert!(rel < 1e-6, "{g:?}");
        }
    }

    #[test]
    fn inert_controls_converge_immediately() {
        let p = GameProblem::zero(Dims::new(1, 1, 1, 1, 1).unwrap(), 1.0, vec![1.0], vec![0.0]).unwrap();
        let b = lattice(6);
        let cert = CertificateOptions { radius: Some(1.0), ..Default::default() };
        let r = solve_nash(&p, &b, &FbsdeConfig::default(), &GradientConfig::default(), &cert).unwrap();
        assert!(r.converged);
        assert_eq!(r.iterations, 1);
        assert_eq!(r.rho, [0.0, 0.0]);
        assert_eq!(r.controls, ControlProcess::midpoint(&p, &b));
        assert_eq!(r.certificate.verdict, Verdict::Certified);
    }

    #[test]
    fn lq_game_converges_and_is_certified() {
        let p = lq_to_problem(&game_spec()).unwrap();
        let b = lattice(16);
        let cfg = FbsdeConfig { tol: 1e-20, max_picard: 200, ..Default::default() };
        let r = solve_nash(&p, &b, &cfg, &GradientConfig::default(), &CertificateOptions::default()).unwrap();
        assert!(r.converged, "{:?}", r.history.last());
        assert!(r.merit() <= 1e-6);
        // accepted steps never increase the merit
        assert!(r.history.windows(2).all(|w| w[1].rho1.max(w[1].rho2) <= w[0].rho1.max(w[0].rho2)));
        assert_eq!(r.certificate.verdict, Verdict::Certified);

        // fresh re-solve at the reported controls
        let fresh = evaluate(&p, &r.controls, &b, &cfg, None).unwrap();
        assert!(fresh.rho[0].max(fresh.rho[1]) <= 2e-6);

        // warm restart leaves the point unchanged
        let again = solve_nash_from(&p, &b, &cfg, &GradientConfig::default(), &CertificateOptions::default(), r.controls.clone())
            .unwrap();
        assert!(again.controls.u1.max_abs_diff(&r.controls.u1) <= 1e-6);
        assert!(again.controls.u2.max_abs_diff(&r.controls.u2) <= 1e-6);

        // best-response sweeps reach the same point
        let br = GradientConfig { mode: UpdateMode::BestResponseSweep, ..Default::default() };
        let s = solve_nash(&p, &b, &cfg, &br, &CertificateOptions::default()).unwrap();
        assert!(s.converged);
        assert!(s.controls.u1.max_abs_diff(&r.controls.u1) < 1e-4);
    }

    #[test]
    fn symmetric_game_gives_equal_controls() {
        let dims = Dims::new(1, 1, 1, 1, 1).unwrap();
        let mut s = LqGameSpec::zero(dims, 1.0, vec![1.0], vec![0.0]);
        s.drift = s.drift.set(Var::X, vec![vec![-0.2]]).set(Var::U1, vec![vec![0.7]]).set(Var::U2, vec![vec![0.7]]);
        s.driver = s.driver.set(Var::X, vec![vec![0.3]]);
        for pc in s.players.iter_mut() {
            pc.q = Some(vec![vec![1.0]]);
            pc.n = Some(vec![vec![0.8]]);
            pc.m = Some(vec![vec![0.2]]);
            pc.g = Some(vec![vec![1.0]]);
        }
        s.u1_box = Some(ControlBoxSpec { lower: vec![-1.0], upper: vec![1.0] });
        s.u2_box = s.u1_box.clone();
        let p = lq_to_problem(&s).unwrap();
        let b = lattice(10);
        let r = solve_nash(&p, &b, &tight(), &GradientConfig::default(), &CertificateOptions::default()).unwrap();
        assert_eq!(r.controls.u1, r.controls.u2);
    }

    #[test]
    fn unilateral_deviations_do_not_help() {
        let p = lq_to_problem(&game_spec()).unwrap();
        let b = lattice(8);
        let cfg = FbsdeConfig { tol: 1e-22, max_picard: 300, ..Default::default() };
        let gc = GradientConfig { tol: 1e-9, ..Default::default() };
        let r = solve_nash(&p, &b, &cfg, &gc, &CertificateOptions::default()).unwrap();
        assert_eq!(r.certificate.verdict, Verdict::Certified);
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            for player in Player::BOTH {
                let mut w = r.controls.clone();
                let pr = w.get_mut(player);
                for j in 0..pr.levels() {
                    for v in pr.level_mut(j) {
                        *v += rng.gen_range(-0.1..0.1);
                    }
                }
                w.project(&p);
                let (traj, _) = solve_fbsde(&p, &w, &b, &cfg).unwrap();
                let j = eval_cost(&p, &traj, &w, player, &b).value;
                assert!(j >= r.costs[player.index()].value - 1e-6);
            }
        }
    }
}
