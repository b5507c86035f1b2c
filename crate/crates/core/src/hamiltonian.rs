//! Hamiltonians `H_i = -⟨k, f⟩ + ⟨p, b⟩ + ⟨q, σ⟩ + l_i`, the variational
//! inequality residuals of the first-order conditions, and the sampled
//! sufficient-condition checks behind [`VerificationCertificate`].
//!
//! Pointwise optimality is checked as a *minimum* of `H_i` over `U_i`, the
//! second player's condition uses `H_2` with player 2's adjoints.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adjoint::AdjointTrajectory;
use crate::drivers::Backend;
use crate::error::{Error, Result};
use crate::fbsde::{ControlProcess, StateTrajectory};
use crate::problem::{ControlBox, Dims, GameProblem, Player, Point, Var};
use crate::process::Process;

/// Convention recorded in certificates.
pub const CONVENTION: &str =
    "pointwise minimum of H_i over U_i; player 2 uses H_2 differentiated in u2 with adjoints (p2, q2, k2)";

/// Adjoint values `(p, q, k)` at which a Hamiltonian is evaluated.
#[derive(Clone, Copy, Debug)]
pub struct Multipliers<'a> {
    pub p: &'a [f64],
    pub q: &'a [f64],
    pub k: &'a [f64],
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn hamiltonian_value(problem: &GameProblem, pt: &Point<'_>, mult: &Multipliers<'_>, player: Player) -> f64 {
    let c = &problem.coeffs;
    -dot(mult.k, c.f.eval(pt).as_slice())
        + dot(mult.p, c.b.eval(pt).as_slice())
        + dot(mult.q, c.sigma.eval(pt).as_slice())
        + problem.costs.running[player.index()].eval(pt)
}

/// `H_v = b_vᵀ p + σ_vᵀ q - f_vᵀ k + l_v`.
pub fn hamiltonian_gradient(
    problem: &GameProblem,
    pt: &Point<'_>,
    mult: &Multipliers<'_>,
    player: Player,
    var: Var,
) -> DVector<f64> {
    let c = &problem.coeffs;
    let mut g = problem.costs.running[player.index()].gradient(var, pt);
    g.gemv_tr(1.0, &c.b.jacobian(var, pt), &DVector::from_column_slice(mult.p), 1.0);
    g.gemv_tr(1.0, &c.sigma.jacobian(var, pt), &DVector::from_column_slice(mult.q), 1.0);
    g.gemv_tr(-1.0, &c.f.jacobian(var, pt), &DVector::from_column_slice(mult.k), 1.0);
    g
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HamiltonianPoint {
    pub value: f64,
    /// Gradients in the order `x, y, z, u1, u2`.
    pub gradients: [Vec<f64>; 5],
}

impl HamiltonianPoint {
    pub fn gradient(&self, var: Var) -> &[f64] {
        &self.gradients[var.index()]
    }
}

pub fn eval_hamiltonian(
    problem: &GameProblem,
    pt: &Point<'_>,
    mult: &Multipliers<'_>,
    player: Player,
) -> Result<HamiltonianPoint> {
    let dims = problem.dims;
    let finite = pt.concat().iter().chain(mult.p).chain(mult.q).chain(mult.k).all(|v| v.is_finite());
    if !finite {
        return Err(Error::Invalid("Hamiltonian evaluated at a non-finite point".into()));
    }
    if mult.p.len() != dims.n || mult.q.len() != dims.n * dims.d || mult.k.len() != dims.m {
        return Err(Error::Dims("multipliers do not match (n, n·d, m)".into()));
    }
    Ok(HamiltonianPoint {
        value: hamiltonian_value(problem, pt, mult, player),
        gradients: Var::ALL.map(|v| hamiltonian_gradient(problem, pt, mult, player, v).as_slice().to_vec()),
    })
}

/// `|u - Proj_U(u - g)|`.
pub fn projected_residual(u: &[f64], g: &[f64], bx: &ControlBox) -> f64 {
    let mut w: Vec<f64> = u.iter().zip(g).map(|(a, b)| a - b).collect();
    bx.project(&mut w);
    u.iter().zip(&w).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
}

/// `min_{v ∈ U ∩ [u-1, u+1]} ⟨g, v - u⟩`, computed coordinate-wise.
fn inner_product_min(u: &[f64], g: &[f64], bx: &ControlBox) -> f64 {
    (0..u.len())
        .map(|c| {
            let lo = bx.lower()[c].max(u[c] - 1.0) - u[c];
            let hi = bx.upper()[c].min(u[c] + 1.0) - u[c];
            f64::min(g[c] * lo, g[c] * hi)
        })
        .sum()
}

/// Field of `H_{i u_i}` along a solved trajectory, evaluated at the
/// adjoint multipliers of each step.
pub fn control_gradient(
    problem: &GameProblem,
    traj: &StateTrajectory,
    adj: &AdjointTrajectory,
    u: &ControlProcess,
    backend: &Backend,
) -> Process {
    let player = adj.player;
    let k = problem.dims.control_dim(player);
    let grid = *backend.grid();
    let levels = (0..grid.steps())
        .map(|j| {
            let t = grid.t(j);
            crate::process::fill_level(backend.scenarios(j), k, |s, out| {
                let pt = traj.point(u, t, j, s);
                let g = hamiltonian_gradient(problem, &pt, &adj.multipliers(j, s), player, player.control());
                out.copy_from_slice(g.as_slice());
            })
        })
        .collect();
    Process::from_levels(k, levels)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlayerVi {
    pub player: usize,
    /// `max_j (E r_j²)^{1/2}`
    pub rho: f64,
    /// `min` over nodes of `min_{v ∈ U_i, |v - u| ≤ 1} ⟨H_{iu_i}, v - u_i⟩`.
    pub inner_product_min: f64,
    pub worst_step: usize,
    pub worst_scenario: usize,
    pub worst_value: f64,
    #[serde(skip)]
    pub pointwise: Process,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ViResidualReport {
    pub players: [PlayerVi; 2],
    pub convention: &'static str,
}

impl ViResidualReport {
    pub fn rho(&self, player: Player) -> f64 {
        self.players[player.index()].rho
    }

    pub fn merit(&self) -> f64 {
        self.players[0].rho.max(self.players[1].rho)
    }
}

/// VI residual of one player from a precomputed `H_{iu_i}` field.
pub fn vi_from_gradient(problem: &GameProblem, player: Player, grad: &Process, u: &ControlProcess, backend: &Backend) -> PlayerVi {
    let bx = problem.control_box(player);
    let k = problem.dims.control_dim(player);
    let up = u.get(player);
    let steps = backend.steps();
    let mut rho = 0.0f64;
    let mut ip = 0.0f64;
    let mut worst = (0, 0, 0.0);
    let mut levels = Vec::with_capacity(steps);
    for j in 0..steps {
        let count = backend.scenarios(j);
        let r: Vec<f64> = if k == 0 {
            vec![0.0; count]
        } else {
            (0..count).map(|s| projected_residual(up.at(j, s), grad.at(j, s), bx)).collect()
        };
        if k > 0 {
            for s in 0..count {
                ip = ip.min(inner_product_min(up.at(j, s), grad.at(j, s), bx));
            }
        }
        for (s, &v) in r.iter().enumerate() {
            if v > worst.2 {
                worst = (j, s, v);
            }
        }
        let sq: Vec<f64> = r.iter().map(|v| v * v).collect();
        rho = rho.max(backend.expectation(j, &sq).sqrt());
        levels.push(r);
    }
    PlayerVi {
        player: player.number(),
        rho,
        inner_product_min: ip,
        worst_step: worst.0,
        worst_scenario: worst.1,
        worst_value: worst.2,
        pointwise: Process::from_levels(1, levels),
    }
}

/// Variational inequality residuals of both players along `(traj, u)`.
pub fn vi_residual(
    problem: &GameProblem,
    traj: &StateTrajectory,
    adj1: &AdjointTrajectory,
    adj2: &AdjointTrajectory,
    u: &ControlProcess,
    backend: &Backend,
) -> Result<ViResidualReport> {
    if adj1.player != Player::One || adj2.player != Player::Two {
        return Err(Error::Mismatch("adjoints must belong to players 1 and 2 in order".into()));
    }
    let g1 = control_gradient(problem, traj, adj1, u, backend);
    let g2 = control_gradient(problem, traj, adj2, u, backend);
    Ok(ViResidualReport {
        players: [
            vi_from_gradient(problem, Player::One, &g1, u, backend),
            vi_from_gradient(problem, Player::Two, &g2, u, backend),
        ],
        convention: CONVENTION,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertificateOptions {
    /// Grid points per control coordinate for the pointwise minimum.
    pub grid: usize,
    /// Truncation radius for unbounded control boxes.
    pub radius: Option<f64>,
    /// Tolerance on `H_i(ū) - H_i(v)`.
    pub tol: f64,
    /// Midpoint samples per convexity check.
    pub samples: usize,
    /// Trajectory nodes at which the Hamiltonian's convexity is sampled.
    pub nodes: usize,
    /// Half-width of the neighbourhood sampled around each such node.
    pub neighbourhood: f64,
    /// Half-width of the box on which `φ_i` and `h_i` are sampled.
    pub endpoint_radius: f64,
    pub seed: u64,
}

impl Default for CertificateOptions {
    fn default() -> Self {
        Self {
            grid: 11,
            radius: None,
            tol: 1e-8,
            samples: 10_000,
            nodes: 16,
            neighbourhood: 1.0,
            endpoint_radius: 10.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointwiseReport {
    pub passed: bool,
    /// Largest `H_i(ū) - H_i(v)` found (≤ 0 means no grid point beats ū).
    pub worst_violation: f64,
    pub step: usize,
    pub scenario: usize,
    pub t: f64,
    pub test_point: Vec<f64>,
    pub points_checked: usize,
}

fn control_grid(bx: &ControlBox, g: usize) -> Vec<Vec<f64>> {
    let k = bx.dim();
    let axes: Vec<Vec<f64>> = (0..k)
        .map(|c| {
            let (lo, hi) = (bx.lower()[c], bx.upper()[c]);
            if g <= 1 || lo == hi {
                vec![0.5 * (lo + hi)]
            } else {
                (0..g).map(|i| lo + (hi - lo) * i as f64 / (g - 1) as f64).collect()
            }
        })
        .collect();
    let mut pts = vec![Vec::new()];
    for axis in &axes {
        pts = pts
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push(*v);
                    q
                })
            })
            .collect();
    }
    pts
}

fn with_control<'a>(pt: &Point<'a>, player: Player, v: &'a [f64]) -> Point<'a> {
    let mut out = *pt;
    match player {
        Player::One => out.u1 = v,
        Player::Two => out.u2 = v,
    }
    out
}

/// Checks `H_i(.., v, ū_{-i}, p̄, q̄, k̄) ≥ H_i(.., ū_i, ..) - tol` for `v` on a
/// grid over `U_i` (truncated to `[-R, R]` when unbounded) at every node.
pub fn check_pointwise_min(
    problem: &GameProblem,
    traj: &StateTrajectory,
    adj: &AdjointTrajectory,
    u: &ControlProcess,
    backend: &Backend,
    opts: &CertificateOptions,
) -> Result<PointwiseReport> {
    let player = adj.player;
    let full = problem.control_box(player);
    let bx = if full.is_bounded() {
        full.clone()
    } else {
        match opts.radius {
            Some(r) => full.truncated(r),
            None => return Err(Error::UnboundedBox { player: player.number() }),
        }
    };
    let points = control_grid(&bx, opts.grid.max(1));
    let grid = *backend.grid();
    let nodes: Vec<(usize, usize)> = (0..grid.steps())
        .flat_map(|j| (0..backend.scenarios(j)).map(move |s| (j, s)))
        .collect();
    let results: Vec<(f64, usize)> = nodes
        .par_iter()
        .map(|&(j, s)| {
            let pt = traj.point(u, grid.t(j), j, s);
            let mult = adj.multipliers(j, s);
            let h_bar = hamiltonian_value(problem, &pt, &mult, player);
            let mut worst = (f64::NEG_INFINITY, 0);
            for (i, v) in points.iter().enumerate() {
                let h = hamiltonian_value(problem, &with_control(&pt, player, v), &mult, player);
                let viol = h_bar - h;
                if viol > worst.0 {
                    worst = (viol, i);
                }
            }
            worst
        })
        .collect();
    let mut best = (f64::NEG_INFINITY, 0, 0);
    for (idx, (viol, i)) in results.iter().enumerate() {
        if *viol > best.0 {
            best = (*viol, idx, *i);
        }
    }
    let (j, s) = nodes.get(best.1).copied().unwrap_or((0, 0));
    let worst_violation = best.0.max(0.0).max(if nodes.is_empty() { 0.0 } else { best.0 });
    Ok(PointwiseReport {
        passed: !(worst_violation > opts.tol),
        worst_violation,
        step: j,
        scenario: s,
        t: grid.t(j),
        test_point: points.get(best.2).cloned().unwrap_or_default(),
        points_checked: nodes.len() * points.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexityWitness {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// `f((a+b)/2) - (f(a) + f(b))/2`
    pub violation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexityReport {
    pub function: String,
    pub samples: usize,
    /// `true` means "not refuted by the samples".
    pub passed: bool,
    pub max_violation: f64,
    pub witness: Option<ConvexityWitness>,
}

/// Midpoint convexity sampling of `f` on the box `[lower, upper]`; stops at
/// the first violation.
pub fn check_convexity<F>(name: &str, f: F, lower: &[f64], upper: &[f64], samples: usize, seed: u64) -> ConvexityReport
where
    F: Fn(&[f64]) -> f64,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = lower.len();
    let mut max_violation = f64::NEG_INFINITY;
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..dim)
            .map(|c| if lower[c] < upper[c] { rng.gen_range(lower[c]..=upper[c]) } else { lower[c] })
            .collect()
    };
    for done in 0..samples {
        let a = draw(&mut rng);
        let b = draw(&mut rng);
        let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
        let (fa, fb) = (f(&a), f(&b));
        let viol = f(&mid) - 0.5 * (fa + fb);
        max_violation = max_violation.max(viol);
        let tol = 1e-9 * (1.0 + fa.abs() + fb.abs());
        if viol > tol || !viol.is_finite() {
            return ConvexityReport {
                function: name.to_string(),
                samples: done + 1,
                passed: false,
                max_violation: viol,
                witness: Some(ConvexityWitness { a, b, violation: viol }),
            };
        }
    }
    ConvexityReport {
        function: name.to_string(),
        samples,
        passed: true,
        max_violation: if samples == 0 { 0.0 } else { max_violation },
        witness: None,
    }
}

/// Sampled convexity of `(x, y, z, u_i) ↦ H_i` around trajectory nodes, with
/// `t`, the adjoints and the other player's control frozen.
fn hamiltonian_convexity(
    problem: &GameProblem,
    traj: &StateTrajectory,
    adj: &AdjointTrajectory,
    u: &ControlProcess,
    backend: &Backend,
    opts: &CertificateOptions,
) -> ConvexityReport {
    let player = adj.player;
    let dims: Dims = problem.dims;
    let grid = *backend.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x4841_4d49);
    let nodes = opts.nodes.max(1);
    let per_node = (opts.samples / nodes).max(1);
    let bx = problem.control_box(player);
    let name = format!("H{}", player.number());
    let mut total = 0;
    let mut max_violation = f64::NEG_INFINITY;
    for node in 0..nodes {
        let j = rng.gen_range(0..grid.steps());
        let s = rng.gen_range(0..backend.scenarios(j));
        let pt = traj.point(u, grid.t(j), j, s);
        let mult = adj.multipliers(j, s);
        let own = pt.get(player.control());
        let center: Vec<f64> = [pt.x, pt.y, pt.z, own].concat();
        let r = opts.neighbourhood;
        let mut lower: Vec<f64> = center.iter().map(|c| c - r).collect();
        let mut upper: Vec<f64> = center.iter().map(|c| c + r).collect();
        let off = dims.n + dims.m + dims.m * dims.d;
        for c in 0..own.len() {
            lower[off + c] = lower[off + c].max(bx.lower()[c]);
            upper[off + c] = upper[off + c].min(bx.upper()[c]);
        }
        let eval = |v: &[f64]| {
            let (x, rest) = v.split_at(dims.n);
            let (y, rest) = rest.split_at(dims.m);
            let (z, ui) = rest.split_at(dims.m * dims.d);
            let q = Point { t: pt.t, x, y, z, u1: pt.u1, u2: pt.u2 };
            hamiltonian_value(problem, &with_control(&q, player, ui), &mult, player)
        };
        let rep = check_convexity(&name, eval, &lower, &upper, per_node, opts.seed.wrapping_add(node as u64));
        total += rep.samples;
        max_violation = max_violation.max(rep.max_violation);
        if !rep.passed {
            return ConvexityReport { samples: total, ..rep };
        }
    }
    ConvexityReport {
        function: name,
        samples: total,
        passed: true,
        max_violation,
        witness: None,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Witness {
    Stationarity {
        player: usize,
        step: usize,
        scenario: usize,
        t: f64,
        test_point: Vec<f64>,
        violation: f64,
    },
    Convexity {
        player: usize,
        function: String,
        a: Vec<f64>,
        b: Vec<f64>,
        violation: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Verdict {
    Certified,
    Refuted { witness: Witness },
    Inconclusive { reason: String },
}

impl Verdict {
    pub fn label(&self) -> &'static str {
        match self {
            Verdict::Certified => "certified",
            Verdict::Refuted { .. } => "refuted",
            Verdict::Inconclusive { .. } => "inconclusive",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlayerCertificate {
    pub player: usize,
    /// `None` when the check was inapplicable (unbounded box without radius).
    pub pointwise: Option<PointwiseReport>,
    pub hamiltonian_convexity: ConvexityReport,
    /// `φ_i` in `x`
    pub terminal_convexity: ConvexityReport,
    /// `h_i` in `y`
    pub initial_convexity: ConvexityReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationCertificate {
    pub players: Vec<PlayerCertificate>,
    pub verdict: Verdict,
    pub convention: String,
}

/// Runs every sufficient-condition check for both players. Convexity
/// failures take precedence over stationarity failures in the verdict.
pub fn build_certificate(
    problem: &GameProblem,
    traj: &StateTrajectory,
    adjoints: [&AdjointTrajectory; 2],
    u: &ControlProcess,
    backend: &Backend,
    opts: &CertificateOptions,
) -> Result<VerificationCertificate> {
    let dims = problem.dims;
    let mut players = Vec::new();
    let mut convexity_witness = None;
    let mut stationarity_witness = None;
    let mut inconclusive = None;
    for (player, adj) in Player::BOTH.into_iter().zip(adjoints) {
        if adj.player != player {
            return Err(Error::Mismatch("adjoints must belong to players 1 and 2 in order".into()));
        }
        let i = player.index();
        let pointwise = match check_pointwise_min(problem, traj, adj, u, backend, opts) {
            Ok(r) => Some(r),
            Err(Error::UnboundedBox { player }) => {
                inconclusive.get_or_insert(format!(
                    "control box of player {player} is unbounded and no search radius was given"
                ));
                None
            }
            Err(e) => return Err(e),
        };
        let ham = hamiltonian_convexity(problem, traj, adj, u, backend, opts);
        let er = opts.endpoint_radius;
        let phi = &problem.costs.terminal[i];
        let h = &problem.costs.initial[i];
        let term = check_convexity(
            &format!("phi{}", player.number()),
            |v| phi.eval(v),
            &vec![-er; dims.n],
            &vec![er; dims.n],
            opts.samples,
            opts.seed.wrapping_add(101 + i as u64),
        );
        let init = check_convexity(
            &format!("h{}", player.number()),
            |v| h.eval(v),
            &vec![-er; dims.m],
            &vec![er; dims.m],
            opts.samples,
            opts.seed.wrapping_add(201 + i as u64),
        );
        for rep in [&ham, &term, &init] {
            if let (None, Some(w)) = (&convexity_witness, &rep.witness) {
                convexity_witness = Some(Witness::Convexity {
                    player: player.number(),
                    function: rep.function.clone(),
                    a: w.a.clone(),
                    b: w.b.clone(),
                    violation: w.violation,
                });
            }
        }
        if let Some(r) = &pointwise {
            if !r.passed && stationarity_witness.is_none() {
                stationarity_witness = Some(Witness::Stationarity {
                    player: player.number(),
                    step: r.step,
                    scenario: r.scenario,
                    t: r.t,
                    test_point: r.test_point.clone(),
                    violation: r.worst_violation,
                });
            }
        }
        players.push(PlayerCertificate {
            player: player.number(),
            pointwise,
            hamiltonian_convexity: ham,
            terminal_convexity: term,
            initial_convexity: init,
        });
    }
    let verdict = match (convexity_witness, stationarity_witness, inconclusive) {
        (Some(w), _, _) | (None, Some(w), _) => Verdict::Refuted { witness: w },
        (None, None, Some(reason)) => Verdict::Inconclusive { reason },
        (None, None, None) => Verdict::Certified,
    };
    Ok(VerificationCertificate {
        players,
        verdict,
        convention: CONVENTION.to_string(),
    })
}
