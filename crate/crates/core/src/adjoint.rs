//! Per-player adjoint FBSDE
//!
//! ```text
//! dk = -H_y dt - H_z dB,   k(0) = -h_y(y(0))
//! dp = -H_x dt + q dB,     p(T) = φ_x(x(T))
//! ```
//!
//! discretized as the exact adjoint of the state scheme in [`crate::fbsde`]:
//!
//! ```text
//! p̂_j = E_j p_{j+1},  q_j = E_j[p_{j+1} ΔBᵀ]/dt,
//! k̃_j = k_j - dt (l_y + b_yᵀ p̂_j + σ_yᵀ q_j),
//! p_j = p̂_j + dt H_x(p̂_j, q_j, k̃_j),
//! k_{j+1} = k_j - dt H_y(p̂_j, q_j, k̃_j) - H_z(p̂_j, q_j, k̃_j) ΔB_j.
//! ```
//!
//! With this choice `dt·H_u(p̂_j, q_j, k̃_j)` is the gradient of the discrete
//! cost with respect to the control at node `(j, s)` whenever the Jacobians
//! of `f` do not depend on `y`, and exactly on the lattice for LQ games.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::drivers::Backend;
use crate::error::{Error, Result};
use crate::fbsde::{ControlProcess, FbsdeConfig, SolveDiagnostics, StateTrajectory};
use crate::hamiltonian::{hamiltonian_gradient, Multipliers};
use crate::problem::{GameProblem, Player, Point, Var};
use crate::process::{fill_level, first_non_finite, Process};

/// Adjoint processes of one player.
///
/// `k`, `p` live on levels `0..=N`, `q` on `0..N`. `p_cond = E_j p_{j+1}` and
/// `k_eval = k̃_j` are the multipliers at which `H` is evaluated on step `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdjointTrajectory {
    pub player: Player,
    pub k: Process,
    pub p: Process,
    pub q: Process,
    pub p_cond: Process,
    pub k_eval: Process,
}

impl AdjointTrajectory {
    /// Multipliers `(p̂_j, q_j, k̃_j)` used for the Hamiltonian on step `j < N`.
    pub fn multipliers(&self, j: usize, s: usize) -> Multipliers<'_> {
        Multipliers {
            p: self.p_cond.at(j, s),
            q: self.q.at(j, s),
            k: self.k_eval.at(j, s),
        }
    }

    /// Left-endpoint values `(p_j, q_j, k_j)`.
    pub fn raw(&self, j: usize, s: usize) -> Multipliers<'_> {
        Multipliers {
            p: self.p.at(j, s),
            q: self.q.at(j, s),
            k: self.k.at(j, s),
        }
    }

    pub fn steps(&self) -> usize {
        self.q.levels()
    }
}

/// `(-H_x, -H_y, -H_z)` assembled directly from the coefficient Jacobians
/// (`b_vᵀ p + σ_vᵀ q - f_vᵀ k + l_v`), i.e. the drift/diffusion coefficients
/// of the adjoint system.
pub fn adjoint_coefficients(
    problem: &GameProblem,
    pt: &Point<'_>,
    mult: &Multipliers<'_>,
    player: Player,
) -> [DVector<f64>; 3] {
    let p = DVector::from_column_slice(mult.p);
    let q = DVector::from_column_slice(mult.q);
    let k = DVector::from_column_slice(mult.k);
    let c = &problem.coeffs;
    let l = &problem.costs.running[player.index()];
    [Var::X, Var::Y, Var::Z].map(|v| {
        let bx = c.b.jacobian(v, pt);
        let sx = c.sigma.jacobian(v, pt);
        let fx = c.f.jacobian(v, pt);
        -(bx.tr_mul(&p) + sx.tr_mul(&q) - fx.tr_mul(&k) + l.gradient(v, pt))
    })
}

fn weights(backend: &Backend) -> impl Fn(usize) -> Vec<f64> + '_ {
    move |j| backend.weights(j).to_vec()
}

/// Solves the adjoint system of `player` along `(traj, u)`, starting from
/// `(p̂, q) = 0`.
pub fn solve_adjoint(
    problem: &GameProblem,
    traj: &StateTrajectory,
    u: &ControlProcess,
    player: Player,
    backend: &Backend,
    cfg: &FbsdeConfig,
) -> Result<(AdjointTrajectory, SolveDiagnostics)> {
    solve_adjoint_warm(problem, traj, u, player, backend, cfg, None)
}

struct Sweep {
    p: Process,
    p_cond: Process,
    q: Process,
    k_eval: Process,
    ridge: usize,
}

pub fn solve_adjoint_warm(
    problem: &GameProblem,
    traj: &StateTrajectory,
    u: &ControlProcess,
    player: Player,
    backend: &Backend,
    cfg: &FbsdeConfig,
    guess: Option<&AdjointTrajectory>,
) -> Result<(AdjointTrajectory, SolveDiagnostics)> {
    cfg.validate()?;
    let dims = problem.dims;
    let (n, d) = (dims.n, dims.d);
    let steps = backend.steps();
    let sizes = backend.sizes(steps + 1);
    u.check_layout(problem, backend)?;
    let reference = Process::zeros(dims.n, &sizes);
    traj.x.check_shape(&reference, "state trajectory")?;

    let (mut p_cond, mut q) = match guess {
        Some(g) => {
            g.p_cond.check_shape(&Process::zeros(n, &sizes[..steps]), "warm-start p")?;
            g.q.check_shape(&Process::zeros(n * d, &sizes[..steps]), "warm-start q")?;
            (g.p_cond.clone(), g.q.clone())
        }
        None => (
            Process::zeros(n, &sizes[..steps]),
            Process::zeros(n * d, &sizes[..steps]),
        ),
    };

    let mut diag = SolveDiagnostics::default();
    let mut best: Option<(f64, AdjointTrajectory)> = None;
    let mut initial = None;
    for iter in 0..cfg.max_picard {
        let k = forward_k(problem, traj, u, player, backend, &p_cond, &q)?;
        let sweep = backward_p(problem, traj, u, player, backend, &k)?;
        diag.ridge_fallbacks += sweep.ridge;
        let dp = sweep.p_cond.mean_square_diff(&p_cond, weights(backend));
        let dq = sweep.q.mean_square_diff(&q, weights(backend));
        let residual = dp.iter().zip(&dq).map(|(a, b)| a + b).fold(0.0, f64::max);
        diag.record(residual);
        let init = *initial.get_or_insert(residual);

        let candidate = AdjointTrajectory {
            player,
            k,
            p: sweep.p,
            q: sweep.q.clone(),
            p_cond: sweep.p_cond.clone(),
            k_eval: sweep.k_eval,
        };
        if best.as_ref().map_or(true, |(r, _)| residual < *r) {
            best = Some((residual, candidate.clone()));
        }
        if residual <= cfg.tol {
            diag.converged = true;
            return Ok((candidate, diag));
        }
        if residual > 10.0 * f64::max(init, cfg.tol) {
            return Err(Error::Diverged(Box::new(diag)));
        }
        let theta = if iter == 0 { 1.0 } else { cfg.damping };
        p_cond.blend(&sweep.p_cond, theta);
        q.blend(&sweep.q, theta);
    }
    let (r, adj) = best.expect("at least one Picard iteration");
    diag.residual = r;
    Ok((adj, diag))
}

/// `k̃ = k - dt·H_y(p̂, q, 0)`.
fn k_tilde(problem: &GameProblem, pt: &Point<'_>, p: &[f64], q: &[f64], k: &[f64], player: Player, dt: f64) -> Vec<f64> {
    let zero = vec![0.0; k.len()];
    let hy = hamiltonian_gradient(problem, pt, &Multipliers { p, q, k: &zero }, player, Var::Y);
    k.iter().zip(hy.iter()).map(|(a, b)| a - dt * b).collect()
}

fn forward_k(
    problem: &GameProblem,
    traj: &StateTrajectory,
    u: &ControlProcess,
    player: Player,
    backend: &Backend,
    p_cond: &Process,
    q: &Process,
) -> Result<Process> {
    let dims = problem.dims;
    let (m, d) = (dims.m, dims.d);
    let grid = *backend.grid();
    let dt = grid.dt();
    let h = &problem.costs.initial[player.index()];
    let mut levels = Vec::with_capacity(grid.steps() + 1);
    levels.push(fill_level(backend.scenarios(0), m, |s, out| {
        let g = h.grad(traj.y.at(0, s));
        for r in 0..m {
            out[r] = -g[r];
        }
    }));
    for j in 0..grid.steps() {
        let t = grid.t(j);
        let kj: &Vec<f64> = &levels[j];
        let count = backend.scenarios(j);
        let eval = |s: usize| {
            let pt = traj.point(u, t, j, s);
            let kt = k_tilde(problem, &pt, p_cond.at(j, s), q.at(j, s), &kj[s * m..(s + 1) * m], player, dt);
            let mult = Multipliers {
                p: p_cond.at(j, s),
                q: q.at(j, s),
                k: &kt,
            };
            (
                hamiltonian_gradient(problem, &pt, &mult, player, Var::Y),
                hamiltonian_gradient(problem, &pt, &mult, player, Var::Z),
            )
        };
        let both: Vec<(DVector<f64>, DVector<f64>)> = {
            use rayon::prelude::*;
            (0..count).into_par_iter().map(eval).collect()
        };
        let mut drift = vec![0.0; count * m];
        let mut diffusion = vec![0.0; count * m * d];
        for (s, (hy, hz)) in both.iter().enumerate() {
            for r in 0..m {
                drift[s * m + r] = -hy[r];
            }
            for c in 0..m * d {
                diffusion[s * m * d + c] = -hz[c];
            }
        }
        let next = backend.advance(j, kj, &drift, &diffusion, m);
        if let Some(s) = first_non_finite(&next, m) {
            return Err(Error::NonFinite {
                what: "adjoint k",
                step: j + 1,
                scenario: s,
            });
        }
        levels.push(next);
    }
    Ok(Process::from_levels(m, levels))
}

fn backward_p(
    problem: &GameProblem,
    traj: &StateTrajectory,
    u: &ControlProcess,
    player: Player,
    backend: &Backend,
    k: &Process,
) -> Result<Sweep> {
    let dims = problem.dims;
    let (n, m, d) = (dims.n, dims.m, dims.d);
    let grid = *backend.grid();
    let steps = grid.steps();
    let dt = grid.dt();
    let phi = &problem.costs.terminal[player.index()];
    let mut p_levels = vec![Vec::new(); steps + 1];
    let mut pc_levels = vec![Vec::new(); steps];
    let mut q_levels = vec![Vec::new(); steps];
    let mut ke_levels = vec![Vec::new(); steps];
    p_levels[steps] = fill_level(backend.scenarios(steps), n, |s, out| {
        out.copy_from_slice(phi.grad(traj.x.at(steps, s)).as_slice());
    });
    let mut ridge = 0;
    for j in (0..steps).rev() {
        let t = grid.t(j);
        let proj = backend.projector(j, traj.x.level(j), n)?;
        if proj.ridge_fallback() {
            ridge += 1;
        }
        let p_hat = proj.expect(&p_levels[j + 1], n);
        let q_j = proj.expect_increment(&p_levels[j + 1], n);
        let count = backend.scenarios(j);
        let ke = fill_level(count, m, |s, out| {
            let pt = traj.point(u, t, j, s);
            let kt = k_tilde(
                problem,
                &pt,
                &p_hat[s * n..(s + 1) * n],
                &q_j[s * n * d..(s + 1) * n * d],
                k.at(j, s),
                player,
                dt,
            );
            out.copy_from_slice(&kt);
        });
        let p_j = fill_level(count, n, |s, out| {
            let pt = traj.point(u, t, j, s);
            let mult = Multipliers {
                p: &p_hat[s * n..(s + 1) * n],
                q: &q_j[s * n * d..(s + 1) * n * d],
                k: &ke[s * m..(s + 1) * m],
            };
            let hx = hamiltonian_gradient(problem, &pt, &mult, player, Var::X);
            for r in 0..n {
                out[r] = p_hat[s * n + r] + dt * hx[r];
            }
        });
        if let Some(s) = first_non_finite(&p_j, n) {
            return Err(Error::NonFinite {
                what: "adjoint p",
                step: j,
                scenario: s,
            });
        }
        p_levels[j] = p_j;
        pc_levels[j] = p_hat;
        q_levels[j] = q_j;
        ke_levels[j] = ke;
    }
    Ok(Sweep {
        p: Process::from_levels(n, p_levels),
        p_cond: Process::from_levels(n, pc_levels),
        q: Process::from_levels(n * d, q_levels),
        k_eval: Process::from_levels(m, ke_levels),
        ridge,
    })
}

/// Terms of the discrete integration-by-parts identity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualityReport {
    pub residual: f64,
    pub dt: f64,
    pub scenarios: usize,
    /// `E⟨p̄_N, x_N - x̄_N⟩`
    pub terminal: f64,
    /// `E⟨k̄_0, y_0 - ȳ_0⟩`
    pub initial: f64,
    /// `Σ dt E[⟨H̄_x, Δx⟩ + ⟨H̄_y, Δy⟩ + ⟨H̄_z, Δz⟩]`
    pub gradient_integral: f64,
    /// `Σ dt E[⟨p̄, Δb⟩ + ⟨q̄, Δσ⟩ - ⟨k̄, Δf⟩]`
    pub coefficient_integral: f64,
}

/// Residual of
/// `E⟨p̄(T), Δx(T)⟩ - E⟨k̄(0), Δy(0)⟩ + E∫⟨H̄_{(x,y,z)}, Δ(x,y,z)⟩ dt
///  - E∫[⟨p̄, Δb⟩ + ⟨q̄, Δσ⟩ - ⟨k̄, Δf⟩] dt`,
/// which vanishes in continuous time. `Δ` is "state under `u`" minus "state
/// under `ū`"; `H̄` and the adjoints are taken along `(traj_bar, u_bar)`.
#[allow(clippy::too_many_arguments)]
pub fn duality_residual(
    problem: &GameProblem,
    traj: &StateTrajectory,
    traj_bar: &StateTrajectory,
    adj_bar: &AdjointTrajectory,
    u: &ControlProcess,
    u_bar: &ControlProcess,
    backend: &Backend,
) -> Result<DualityReport> {
    let dims = problem.dims;
    let (n, m) = (dims.n, dims.m);
    for (a, b, what) in [
        (&traj.x, &traj_bar.x, "x"),
        (&traj.y, &traj_bar.y, "y"),
        (&traj.z, &traj_bar.z, "z"),
        (&adj_bar.p, &traj_bar.x, "p"),
    ] {
        a.check_shape(b, what)?;
    }
    if traj.x.scenarios(backend.steps()) != backend.scenarios(backend.steps()) {
        return Err(Error::Mismatch("trajectories do not belong to this backend".into()));
    }
    u.check_layout(problem, backend)?;
    u_bar.check_layout(problem, backend)?;
    let grid = *backend.grid();
    let steps = grid.steps();
    let dt = grid.dt();
    let player = adj_bar.player;

    let diff_dot = |a: &[f64], b: &[f64], w: &[f64]| -> f64 { a.iter().zip(b).zip(w).map(|((x, y), z)| (x - y) * z).sum() };

    let terminal = {
        let per: Vec<f64> = (0..backend.scenarios(steps))
            .map(|s| diff_dot(traj.x.at(steps, s), traj_bar.x.at(steps, s), adj_bar.p.at(steps, s)))
            .collect();
        backend.expectation(steps, &per)
    };
    let initial = {
        let per: Vec<f64> = (0..backend.scenarios(0))
            .map(|s| diff_dot(traj.y.at(0, s), traj_bar.y.at(0, s), adj_bar.k.at(0, s)))
            .collect();
        backend.expectation(0, &per)
    };
    let mut gradient_integral = 0.0;
    let mut coefficient_integral = 0.0;
    for j in 0..steps {
        let t = grid.t(j);
        let (g, c): (Vec<f64>, Vec<f64>) = {
            use rayon::prelude::*;
            (0..backend.scenarios(j))
                .into_par_iter()
                .map(|s| {
                    let pt = traj.point(u, t, j, s);
                    let bar = traj_bar.point(u_bar, t, j, s);
                    let mult = adj_bar.raw(j, s);
                    let mut g = 0.0;
                    for v in [Var::X, Var::Y, Var::Z] {
                        let hv = hamiltonian_gradient(problem, &bar, &mult, player, v);
                        g += diff_dot(pt.get(v), bar.get(v), hv.as_slice());
                    }
                    let cf = &problem.coeffs;
                    let db = cf.b.eval(&pt) - cf.b.eval(&bar);
                    let ds = cf.sigma.eval(&pt) - cf.sigma.eval(&bar);
                    let df = cf.f.eval(&pt) - cf.f.eval(&bar);
                    let c = dot(mult.p, db.as_slice()) + dot(mult.q, ds.as_slice()) - dot(mult.k, df.as_slice());
                    (g, c)
                })
                .unzip()
        };
        gradient_integral += dt * backend.expectation(j, &g);
        coefficient_integral += dt * backend.expectation(j, &c);
    }
    let _ = (n, m);
    let residual = terminal - initial + gradient_integral - coefficient_integral;
    if !residual.is_finite() {
        return Err(Error::NonFinite {
            what: "duality residual",
            step: steps,
            scenario: 0,
        });
    }
    Ok(DualityReport {
        residual,
        dt,
        scenarios: backend.scenarios(steps),
        terminal,
        initial,
        gradient_integral,
        coefficient_integral,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drivers::{BinomialLattice, TimeGrid};
    use crate::fbsde::solve_fbsde;
    use crate::problem::{lq_to_problem, CostSet, Dims, EndpointCost, LqGameSpec, RunningCost};

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
    fn zero_problem_adjoints_are_constant() {
        let dims = Dims::new(1, 1, 1, 1, 1).unwrap();
        let mut p = GameProblem::zero(dims, 1.0, vec![1.3], vec![0.4]).unwrap();
        p.costs.terminal = [EndpointCost::half_square(1), EndpointCost::half_square(1)];
        p.costs.initial = [EndpointCost::half_square(1), EndpointCost::half_square(1)];
        let b = lattice(8);
        let u = ControlProcess::midpoint(&p, &b);
        let (traj, _) = solve_fbsde(&p, &u, &b, &FbsdeConfig::default()).unwrap();
        for player in Player::BOTH {
            let (adj, diag) = solve_adjoint(&p, &traj, &u, player, &b, &FbsdeConfig::default()).unwrap();
            assert!(diag.converged);
            for j in 0..=8 {
                assert!(adj.p.level(j).iter().all(|&v| v == 1.3));
                assert!(adj.k.level(j).iter().all(|&v| v == -0.4));
            }
            assert!((0..8).all(|j| adj.q.level(j).iter().all(|&v| v == 0.0)));
        }
    }

    #[test]
    fn unit_running_gradient_gives_time_to_go() {
        let dims = Dims::new(1, 1, 1, 1, 1).unwrap();
        let mut p = GameProblem::zero(dims, 1.0, vec![0.0], vec![0.0]).unwrap();
        p.costs.running[0] = RunningCost::new(&dims, |pt| pt.x[0]).with_gradient(Var::X, |_| DVector::from_element(1, 1.0));
        let b = lattice(16);
        let u = ControlProcess::midpoint(&p, &b);
        let (traj, _) = solve_fbsde(&p, &u, &b, &FbsdeConfig::default()).unwrap();
        let (adj, _) = solve_adjoint(&p, &traj, &u, Player::One, &b, &FbsdeConfig::default()).unwrap();
        let grid = b.grid();
        for j in 0..=16 {
            let expect = grid.horizon() - grid.t(j);
            assert!(adj.p.level(j).iter().all(|v| (v - expect).abs() < 1e-14));
        }
    }

    pub(crate) fn coupled_spec() -> LqGameSpec {
        let dims = Dims::new(1, 1, 1, 1, 1).unwrap();
        let mut s = LqGameSpec::zero(dims, 1.0, vec![1.0], vec![0.5]);
        s.drift = s
            .drift
            .set(Var::X, vec![vec![-0.5]])
            .set(Var::Y, vec![vec![0.2]])
            .set(Var::U1, vec![vec![1.0]])
            .set(Var::U2, vec![vec![0.5]]);
        s.diffusion[0] = s.diffusion[0]
            .clone()
            .set(Var::X, vec![vec![0.2]])
            .set(Var::Z, vec![vec![0.1]])
            .set(Var::U1, vec![vec![0.1]])
            .with_constant(vec![0.3]);
        s.driver = s
            .driver
            .set(Var::X, vec![vec![0.4]])
            .set(Var::Y, vec![vec![-0.2]])
            .set(Var::Z, vec![vec![0.1]])
            .set(Var::U2, vec![vec![1.0]]);
        for (i, pc) in s.players.iter_mut().enumerate() {
            pc.q = Some(vec![vec![1.0 + i as f64]]);
            pc.r = Some(vec![vec![0.5]]);
            pc.s = 0.2;
            pc.n = Some(vec![vec![1.0]]);
            pc.m = Some(vec![vec![0.3]]);
            pc.g = Some(vec![vec![1.0]]);
            pc.h = Some(vec![vec![0.5 + i as f64]]);
        }
        s
    }

    #[test]
    fn adjoint_coefficients_match_hamiltonian_gradients() {
        let p = lq_to_problem(&coupled_spec()).unwrap();
        let b = lattice(12);
        let u = ControlProcess::constant(&p, &b, &[0.3], &[-0.2]);
        let (traj, _) = solve_fbsde(&p, &u, &b, &tight()).unwrap();
        for player in Player::BOTH {
            let (adj, diag) = solve_adjoint(&p, &traj, &u, player, &b, &tight()).unwrap();
            assert!(diag.converged);
            for j in 0..12 {
                for s in 0..=j {
                    let pt = traj.point(&u, b.grid().t(j), j, s);
                    let mult = adj.multipliers(j, s);
                    let coef = adjoint_coefficients(&p, &pt, &mult, player);
                    for (c, v) in coef.iter().zip([Var::X, Var::Y, Var::Z]) {
                        let h = hamiltonian_gradient(&p, &pt, &mult, player, v);
                        assert!((c + &h).amax() <= 1e-14 * (1.0 + h.amax()));
                    }
                }
            }
        }
    }

    #[test]
    fn boundary_values_are_pinned() {
        let p = lq_to_problem(&coupled_spec()).unwrap();
        let b = lattice(10);
        let u = ControlProcess::constant(&p, &b, &[0.1], &[0.1]);
        let (traj, _) = solve_fbsde(&p, &u, &b, &tight()).unwrap();
        for player in Player::BOTH {
            let (adj, _) = solve_adjoint(&p, &traj, &u, player, &b, &FbsdeConfig::default()).unwrap();
            let i = player.index();
            for s in 0..=10 {
                assert_eq!(adj.p.at(10, s)[0], p.costs.terminal[i].grad(traj.x.at(10, s))[0]);
            }
            assert_eq!(adj.k.at(0, 0)[0], -p.costs.initial[i].grad(traj.y.at(0, 0))[0]);
        }
    }

    #[test]
    fn scaling_costs_scales_adjoints() {
        let p = lq_to_problem(&coupled_spec()).unwrap();
        let mut scaled = p.clone();
        scaled.scale_costs(Player::Two, 3.0);
        let b = lattice(10);
        let u = ControlProcess::constant(&p, &b, &[0.1], &[0.1]);
        let (traj, _) = solve_fbsde(&p, &u, &b, &tight()).unwrap();
        let (a, _) = solve_adjoint(&p, &traj, &u, Player::Two, &b, &tight()).unwrap();
        let (c, _) = solve_adjoint(&scaled, &traj, &u, Player::Two, &b, &tight()).unwrap();
        for (x, y) in [(&a.p, &c.p), (&a.k, &c.k), (&a.q, &c.q)] {
            let mut x3 = x.clone();
            x3.scale(3.0);
            assert!(x3.max_abs_diff(y) < 1e-12);
        }
    }

    #[test]
    fn duality_residual_vanishes_for_equal_controls() {
        let p = lq_to_problem(&coupled_spec()).unwrap();
        let b = lattice(8);
        let u = ControlProcess::constant(&p, &b, &[0.1], &[0.1]);
        let (traj, _) = solve_fbsde(&p, &u, &b, &tight()).unwrap();
        let (adj, _) = solve_adjoint(&p, &traj, &u, Player::One, &b, &tight()).unwrap();
        let r = duality_residual(&p, &traj, &traj, &adj, &u, &u, &b).unwrap();
        assert_eq!(r.residual, 0.0);
    }

    #[test]
    fn duality_residual_vanishes_on_zero_problem() {
        let dims = Dims::new(1, 1, 1, 1, 1).unwrap();
        let mut p = GameProblem::zero(dims, 1.0, vec![1.0], vec![0.0]).unwrap();
        p.costs = CostSet::zero(&dims);
        let b = lattice(8);
        let u = ControlProcess::constant(&p, &b, &[0.0], &[0.0]);
        let v = ControlProcess::constant(&p, &b, &[1.0], &[-2.0]);
        let (tu, _) = solve_fbsde(&p, &u, &b, &tight()).unwrap();
        let (tv, _) = solve_fbsde(&p, &v, &b, &tight()).unwrap();
        let (adj, _) = solve_adjoint(&p, &tu, &u, Player::One, &b, &tight()).unwrap();
        let r = duality_residual(&p, &tv, &tu, &adj, &v, &u, &b).unwrap();
        assert_eq!(r.residual, 0.0);
    }

    #[test]
    fn duality_rejects_mismatched_grids() {
        let p = lq_to_problem(&coupled_spec()).unwrap();
        let b = lattice(8);
        let c = lattice(4);
        let u = ControlProcess::constant(&p, &b, &[0.1], &[0.1]);
        let w = ControlProcess::constant(&p, &c, &[0.1], &[0.1]);
        let (t8, _) = solve_fbsde(&p, &u, &b, &tight()).unwrap();
        let (t4, _) = solve_fbsde(&p, &w, &c, &tight()).unwrap();
        let (adj, _) = solve_adjoint(&p, &t8, &u, Player::One, &b, &tight()).unwrap();
        assert!(duality_residual(&p, &t4, &t8, &adj, &w, &u, &b).is_err());
    }
}
