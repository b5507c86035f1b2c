//! Controlled FBSDE state solver: Picard iteration between an explicit
//! Euler forward pass for `x` and a conditional-expectation backward pass
//! for `(y, z)`.

use serde::{Deserialize, Serialize};

use crate::drivers::Backend;
use crate::error::{Error, Result};
use crate::problem::{GameProblem, Player, Point};
use crate::process::{fill_level, first_non_finite, Process};

/// Adapted, piecewise-constant controls of both players, stored per
/// `(step, scenario)` for steps `0..N`.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlProcess {
    pub u1: Process,
    pub u2: Process,
}

impl ControlProcess {
    /// Controls given as functions of `(player, step, t, B(t))`.
    pub fn from_fn<F>(problem: &GameProblem, backend: &Backend, f: F) -> Self
    where
        F: Fn(Player, usize, f64, &[f64]) -> Vec<f64> + Sync + Send,
    {
        let n = backend.steps();
        let grid = *backend.grid();
        let build = |player: Player| {
            let k = problem.dims.control_dim(player);
            let levels = (0..n)
                .map(|j| {
                    fill_level(backend.scenarios(j), k, |s, out| {
                        out.copy_from_slice(&f(player, j, grid.t(j), backend.brownian(j, s)))
                    })
                })
                .collect();
            Process::from_levels(k, levels)
        };
        Self {
            u1: build(Player::One),
            u2: build(Player::Two),
        }
    }

    pub fn constant(problem: &GameProblem, backend: &Backend, u1: &[f64], u2: &[f64]) -> Self {
        Self::from_fn(problem, backend, |player, _, _, _| match player {
            Player::One => u1.to_vec(),
            Player::Two => u2.to_vec(),
        })
    }

    /// Box midpoints (0 on unbounded coordinates).
    pub fn midpoint(problem: &GameProblem, backend: &Backend) -> Self {
        let m1 = problem.boxes[0].midpoint();
        let m2 = problem.boxes[1].midpoint();
        Self::constant(problem, backend, &m1, &m2)
    }

    pub fn get(&self, player: Player) -> &Process {
        match player {
            Player::One => &self.u1,
            Player::Two => &self.u2,
        }
    }

    pub fn get_mut(&mut self, player: Player) -> &mut Process {
        match player {
            Player::One => &mut self.u1,
            Player::Two => &mut self.u2,
        }
    }

    pub fn steps(&self) -> usize {
        self.u1.levels()
    }

    pub fn project(&mut self, problem: &GameProblem) {
        for player in Player::BOTH {
            let bx = problem.control_box(player);
            let p = self.get_mut(player);
            let k = p.dim();
            if k == 0 {
                continue;
            }
            for j in 0..p.levels() {
                for slot in p.level_mut(j).chunks_mut(k) {
                    bx.project(slot);
                }
            }
        }
    }

    pub fn is_feasible(&self, problem: &GameProblem) -> bool {
        Player::BOTH.iter().all(|&player| {
            let bx = problem.control_box(player);
            let p = self.get(player);
            let k = p.dim();
            k == 0 || (0..p.levels()).all(|j| p.level(j).chunks(k).all(|u| bx.contains(u)))
        })
    }

    /// Checks that the controls fit the backend's grid and scenario layout.
    pub fn check_layout(&self, problem: &GameProblem, backend: &Backend) -> Result<()> {
        let n = backend.steps();
        for player in Player::BOTH {
            let p = self.get(player);
            let k = problem.dims.control_dim(player);
            if p.dim() != k || p.levels() != n {
                return Err(Error::Mismatch(format!(
                    "controls of player {} have dimension {} on {} steps, expected {k} on {n}",
                    player.number(),
                    p.dim(),
                    p.levels()
                )));
            }
            for j in 0..n {
                if p.level(j).len() != k * backend.scenarios(j) {
                    return Err(Error::Mismatch(format!(
                        "controls of player {} have the wrong scenario count at step {j}",
                        player.number()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Discretized `(x, y, z)`: `x`, `y` on levels `0..=N`, `z` on `0..N`.
#[derive(Clone, Debug, PartialEq)]
pub struct StateTrajectory {
    pub x: Process,
    pub y: Process,
    pub z: Process,
}

impl StateTrajectory {
    /// Evaluation point at step `j < N`, scenario `s`.
    pub fn point<'a>(&'a self, u: &'a ControlProcess, t: f64, j: usize, s: usize) -> Point<'a> {
        Point {
            t,
            x: self.x.at(j, s),
            y: self.y.at(j, s),
            z: self.z.at(j, s),
            u1: u.u1.at(j, s),
            u2: u.u2.at(j, s),
        }
    }

    pub fn steps(&self) -> usize {
        self.z.levels()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FbsdeConfig {
    pub max_picard: usize,
    /// Damping θ of the update `new·θ + old·(1 - θ)`; the first update of a
    /// solve is always taken in full.
    pub damping: f64,
    /// Tolerance on `max_j (E|Δy_j|² + E|Δz_j|²)` between Picard iterates.
    pub tol: f64,
}

impl Default for FbsdeConfig {
    fn default() -> Self {
        Self {
            max_picard: 50,
            damping: 0.5,
            tol: 1e-8,
        }
    }
}

impl FbsdeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Invalid(format!("damping must lie in (0, 1], got {}", self.damping)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Invalid(format!("tolerance must be positive, got {}", self.tol)));
        }
        if self.max_picard == 0 {
            return Err(Error::Invalid("max_picard must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    pub history: Vec<f64>,
    /// Number of regression solves that needed the ridge fallback.
    pub ridge_fallbacks: usize,
    /// Set when the residual history is not monotonically decreasing.
    pub non_monotone: bool,
}

impl SolveDiagnostics {
    pub(crate) fn record(&mut self, residual: f64) {
        if let Some(&last) = self.history.last() {
            if residual > last {
                self.non_monotone = true;
            }
        }
        self.history.push(residual);
        self.iterations = self.history.len();
        self.residual = residual;
    }
}

/// Explicit Euler pass `x_{j+1} = x_j + b dt + σ ΔB_j`, with `b`, `σ`
/// evaluated at the guess `(y, z)`.
pub fn forward_pass(
    problem: &GameProblem,
    u: &ControlProcess,
    y: &Process,
    z: &Process,
    backend: &Backend,
) -> Result<Process> {
    let dims = problem.dims;
    let (n, d) = (dims.n, dims.d);
    let grid = *backend.grid();
    let steps = grid.steps();
    let mut levels: Vec<Vec<f64>> = Vec::with_capacity(steps + 1);
    levels.push(problem.initial.repeat(backend.scenarios(0)));
    for j in 0..steps {
        let t = grid.t(j);
        let s_count = backend.scenarios(j);
        let xj = &levels[j];
        let pt = |s: usize| Point {
            t,
            x: &xj[s * n..(s + 1) * n],
            y: y.at(j, s),
            z: z.at(j, s),
            u1: u.u1.at(j, s),
            u2: u.u2.at(j, s),
        };
        let drift = fill_level(s_count, n, |s, out| {
            out.copy_from_slice(problem.coeffs.b.eval(&pt(s)).as_slice());
        });
        let diffusion = fill_level(s_count, n * d, |s, out| {
            out.copy_from_slice(problem.coeffs.sigma.eval(&pt(s)).as_slice());
        });
        let next = backend.advance(j, xj, &drift, &diffusion, n);
        if let Some(s) = first_non_finite(&next, n) {
            return Err(Error::NonFinite {
                what: "forward state x",
                step: j + 1,
                scenario: s,
            });
        }
        levels.push(next);
    }
    Ok(Process::from_levels(n, levels))
}

/// Backward pass: `y_N = ξ(B_T)`, `z_j = E_j[y_{j+1} ΔBᵀ]/dt`,
/// `y_j = ŷ_j + f(t_j, x_j, ŷ_j, z_j, u_j) dt` with `ŷ_j = E_j y_{j+1}`.
/// Returns `(y, z, ridge fallback count)`.
pub fn backward_pass(
    problem: &GameProblem,
    u: &ControlProcess,
    x: &Process,
    backend: &Backend,
) -> Result<(Process, Process, usize)> {
    let dims = problem.dims;
    let (n, m, d) = (dims.n, dims.m, dims.d);
    let grid = *backend.grid();
    let steps = grid.steps();
    let dt = grid.dt();
    let mut y_levels: Vec<Vec<f64>> = vec![Vec::new(); steps + 1];
    let mut z_levels: Vec<Vec<f64>> = vec![Vec::new(); steps];
    y_levels[steps] = fill_level(backend.scenarios(steps), m, |s, out| {
        out.copy_from_slice(problem.terminal.eval(backend.brownian(steps, s)).as_slice());
    });
    if let Some(s) = first_non_finite(&y_levels[steps], m) {
        return Err(Error::NonFinite {
            what: "terminal value ξ",
            step: steps,
            scenario: s,
        });
    }
    let mut ridge = 0;
    for j in (0..steps).rev() {
        let t = grid.t(j);
        let proj = backend.projector(j, x.level(j), n)?;
        if proj.ridge_fallback() {
            ridge += 1;
        }
        let y_hat = proj.expect(&y_levels[j + 1], m);
        let z_j = proj.expect_increment(&y_levels[j + 1], m);
        let y_j = fill_level(backend.scenarios(j), m, |s, out| {
            let pt = Point {
                t,
                x: x.at(j, s),
                y: &y_hat[s * m..(s + 1) * m],
                z: &z_j[s * m * d..(s + 1) * m * d],
                u1: u.u1.at(j, s),
                u2: u.u2.at(j, s),
            };
            let f = problem.coeffs.f.eval(&pt);
            for r in 0..m {
                out[r] = y_hat[s * m + r] + f[r] * dt;
            }
        });
        for (what, level, width) in [("backward state y", &y_j, m), ("backward state z", &z_j, m * d)] {
            if let Some(s) = first_non_finite(level, width) {
                return Err(Error::NonFinite { what, step: j, scenario: s });
            }
        }
        y_levels[j] = y_j;
        z_levels[j] = z_j;
    }
    Ok((Process::from_levels(m, y_levels), Process::from_levels(m * d, z_levels), ridge))
}

/// Solves the state FBSDE from the initial guess `(y, z) = 0`.
pub fn solve_fbsde(
    problem: &GameProblem,
    u: &ControlProcess,
    backend: &Backend,
    cfg: &FbsdeConfig,
) -> Result<(StateTrajectory, SolveDiagnostics)> {
    solve_fbsde_warm(problem, u, backend, cfg, None)
}

/// As [`solve_fbsde`], starting the Picard loop from `guess`'s `(y, z)`.
///
/// On convergence the returned `x` is the exact forward pass of the returned
/// `(y, z)`; the backward equation holds to within `cfg.tol`. If the cap is
/// reached the iterate with the smallest residual is returned with
/// `converged = false`.
pub fn solve_fbsde_warm(
    problem: &GameProblem,
    u: &ControlProcess,
    backend: &Backend,
    cfg: &FbsdeConfig,
    guess: Option<&StateTrajectory>,
) -> Result<(StateTrajectory, SolveDiagnostics)> {
    cfg.validate()?;
    let dims = problem.dims;
    backend.check_compatible(dims.d, problem.horizon)?;
    u.check_layout(problem, backend)?;
    let steps = backend.steps();
    let sizes = backend.sizes(steps + 1);
    let (mut y, mut z) = match guess {
        Some(g) => {
            let y0 = Process::zeros(dims.m, &sizes);
            let z0 = Process::zeros(dims.m * dims.d, &sizes[..steps]);
            g.y.check_shape(&y0, "warm-start y")?;
            g.z.check_shape(&z0, "warm-start z")?;
            (g.y.clone(), g.z.clone())
        }
        None => (
            Process::zeros(dims.m, &sizes),
            Process::zeros(dims.m * dims.d, &sizes[..steps]),
        ),
    };

    let mut diag = SolveDiagnostics::default();
    let mut best: Option<(f64, StateTrajectory)> = None;
    let mut initial = None;
    for iter in 0..cfg.max_picard {
        let x = forward_pass(problem, u, &y, &z, backend)?;
        let (y_new, z_new, ridge) = backward_pass(problem, u, &x, backend)?;
        diag.ridge_fallbacks += ridge;
        let dy = y_new.mean_square_diff(&y, |j| backend.weights(j).to_vec());
        let dz = z_new.mean_square_diff(&z, |j| backend.weights(j).to_vec());
        let residual = (0..=steps)
            .map(|j| dy[j] + if j < steps { dz[j] } else { 0.0 })
            .fold(0.0, f64::max);
        diag.record(residual);
        let init = *initial.get_or_insert(residual);

        let mut y_ret = y.clone();
        y_ret.set_level(steps, y_new.level(steps).to_vec());
        let candidate = StateTrajectory {
            x,
            y: y_ret,
            z: z.clone(),
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
        y.blend(&y_new, theta);
        z.blend(&z_new, theta);
    }
    let (r, traj) = best.expect("at least one Picard iteration");
    diag.residual = r;
    Ok((traj, diag))
}

/// Discrete dynamics residuals of a trajectory:
/// `(max_j E|x_{j+1} - Euler(x_j)|², max_j E|y_j - ŷ_j - f dt|²)`.
pub fn dynamics_residuals(
    problem: &GameProblem,
    u: &ControlProcess,
    traj: &StateTrajectory,
    backend: &Backend,
) -> Result<(f64, f64)> {
    let x = forward_pass(problem, u, &traj.y, &traj.z, backend)?;
    let (y, _, _) = backward_pass(problem, u, &traj.x, backend)?;
    let fx = x.mean_square_diff(&traj.x, |j| backend.weights(j).to_vec());
    let fy = y.mean_square_diff(&traj.y, |j| backend.weights(j).to_vec());
    Ok((fx.into_iter().fold(0.0, f64::max), fy.into_iter().fold(0.0, f64::max)))
}
