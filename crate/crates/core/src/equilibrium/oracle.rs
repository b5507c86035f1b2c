//! Brute-force Nash oracle on small lattices.
//!
//! Controls are restricted to node functions taking values on finite grids.
//! The full cost table over joint assignments is enumerated, exact best
//! responses are iterated from the midpoint assignment, and the result is
//! checked against every unilateral grid deviation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::eval_cost;
use crate::drivers::{Backend, BinomialLattice};
use crate::error::{Error, Result};
use crate::fbsde::{solve_fbsde, ControlProcess, FbsdeConfig};
use crate::problem::{GameProblem, Player};
use crate::process::Process;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleOptions {
    /// Maximum number of node evaluations, `|A_1|·|A_2|·nodes`.
    pub budget: u64,
    pub fbsde: FbsdeConfig,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            budget: 1_000_000,
            fbsde: FbsdeConfig {
                max_picard: 200,
                damping: 0.5,
                tol: 1e-24,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleStatus {
    /// Best-response iteration reached a fixed point.
    Nash,
    /// Best responses cycled; a pure grid Nash point was found by scanning.
    CycleResolved,
    /// Best responses cycled and no pure grid Nash point exists.
    NoPureNash,
}

#[derive(Clone, Debug, Serialize)]
pub struct OracleReport {
    pub status: OracleStatus,
    /// Assignment indices; node slots are ordered by `(step, node, coordinate)`
    /// with the first slot most significant.
    pub indices: [u64; 2],
    /// Controls per player and step, node-major.
    pub node_controls: [Vec<Vec<f64>>; 2],
    pub costs: [f64; 2],
    /// `J_i(a) - min_{a_i'} J_i(a_i', a_{-i})`, over all grid deviations.
    pub max_unilateral_gain: [f64; 2],
    pub iterations: usize,
    pub evaluations: u64,
    #[serde(skip)]
    pub controls: ControlProcess,
}

struct Layout {
    steps: usize,
    nodes: usize,
    dims: [usize; 2],
}

impl Layout {
    fn slots(&self, player: usize) -> usize {
        self.nodes * self.dims[player]
    }

    fn decode(&self, player: usize, mut index: u128, grid: &[f64]) -> Process {
        let k = self.dims[player];
        let g = grid.len() as u128;
        let mut flat = vec![0.0; self.slots(player)];
        for slot in flat.iter_mut().rev() {
            *slot = grid[(index % g) as usize];
            index /= g;
        }
        let mut levels = Vec::with_capacity(self.steps);
        let mut offset = 0;
        for j in 0..self.steps {
            let len = (j + 1) * k;
            levels.push(flat[offset..offset + len].to_vec());
            offset += len;
        }
        Process::from_levels(k, levels)
    }

    /// Index with every slot at the middle grid point.
    fn midpoint(&self, player: usize, grid_len: usize) -> u128 {
        let mid = ((grid_len - 1) / 2) as u128;
        (0..self.slots(player)).fold(0u128, |acc, _| acc * grid_len as u128 + mid)
    }
}

fn count(grid_len: usize, slots: usize) -> u128 {
    (0..slots).fold(1u128, |acc, _| acc.saturating_mul(grid_len as u128))
}

fn argmin(mut values: impl Iterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, values.next().unwrap_or(f64::INFINITY));
    for (i, v) in values.enumerate() {
        if v < best.1 {
            best = (i + 1, v);
        }
    }
    best
}

/// Grid Nash point of `problem` on `lattice` by exhaustive enumeration.
pub fn brute_force_nash(
    problem: &GameProblem,
    lattice: &BinomialLattice,
    grids: [&[f64]; 2],
    opts: &OracleOptions,
) -> Result<OracleReport> {
    opts.fbsde.validate()?;
    let backend = Backend::lattice(lattice.clone());
    backend.check_compatible(problem.dims.d, problem.horizon)?;
    let steps = backend.steps();
    let layout = Layout {
        steps,
        nodes: steps * (steps + 1) / 2,
        dims: [problem.dims.k1, problem.dims.k2],
    };
    for player in Player::BOTH {
        let i = player.index();
        if layout.dims[i] == 0 {
            continue;
        }
        let grid = grids[i];
        if grid.is_empty() || grid.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("control grid of player {} must be non-empty and finite", player.number())));
        }
        let bx = problem.control_box(player);
        if grid.iter().any(|&v| (0..bx.dim()).any(|c| v < bx.lower()[c] || v > bx.upper()[c])) {
            return Err(Error::Invalid(format!("control grid of player {} leaves its box", player.number())));
        }
    }
    let sizes = [0, 1].map(|i| count(grids[i].len().max(1), layout.slots(i)));
    let required = sizes[0].saturating_mul(sizes[1]).saturating_mul(layout.nodes as u128);
    if required > opts.budget as u128 {
        return Err(Error::Budget {
            required,
            budget: opts.budget as u128,
        });
    }
    let (a1, a2) = (sizes[0] as usize, sizes[1] as usize);

    let controls = |i1: usize, i2: usize| ControlProcess {
        u1: layout.decode(0, i1 as u128, grids[0]),
        u2: layout.decode(1, i2 as u128, grids[1]),
    };
    let table: Vec<[f64; 2]> = (0..a1 * a2)
        .into_par_iter()
        .map(|e| {
            let u = controls(e / a2, e % a2);
            let (traj, diag) = solve_fbsde(problem, &u, &backend, &opts.fbsde)?;
            if !diag.converged {
                return Err(Error::NotConverged(format!(
                    "FBSDE at grid assignment {e} (residual {:.3e})",
                    diag.residual
                )));
            }
            Ok(Player::BOTH.map(|p| eval_cost(problem, &traj, &u, p, &backend).value))
        })
        .collect::<Result<_>>()?;
    let cost = |i1: usize, i2: usize, p: usize| table[i1 * a2 + i2][p];
    // best own cost against each opponent assignment
    let min1: Vec<f64> = (0..a2).map(|i2| argmin((0..a1).map(|i1| cost(i1, i2, 0))).1).collect();
    let min2: Vec<f64> = (0..a1).map(|i1| argmin((0..a2).map(|i2| cost(i1, i2, 1))).1).collect();

    let mid = [
        layout.midpoint(0, grids[0].len().max(1)) as usize,
        layout.midpoint(1, grids[1].len().max(1)) as usize,
    ];
    let mut visited = vec![mid];
    let mut current = mid;
    let mut iterations = 0;
    let status = loop {
        iterations += 1;
        let b1 = argmin((0..a1).map(|i1| cost(i1, current[1], 0))).0;
        let b2 = argmin((0..a2).map(|i2| cost(b1, i2, 1))).0;
        let next = [b1, b2];
        if next == current {
            break OracleStatus::Nash;
        }
        if visited.contains(&next) {
            let found = (0..a1 * a2).find(|&e| {
                let (i1, i2) = (e / a2, e % a2);
                cost(i1, i2, 0) <= min1[i2] && cost(i1, i2, 1) <= min2[i1]
            });
            match found {
                Some(e) => {
                    current = [e / a2, e % a2];
                    break OracleStatus::CycleResolved;
                }
                None => {
                    current = next;
                    break OracleStatus::NoPureNash;
                }
            }
        }
        visited.push(next);
        current = next;
    };

    let [i1, i2] = current;
    let u = controls(i1, i2);
    let node_controls = [&u.u1, &u.u2].map(|p| (0..p.levels()).map(|j| p.level(j).to_vec()).collect());
    Ok(OracleReport {
        status,
        indices: [i1 as u64, i2 as u64],
        node_controls,
        costs: [cost(i1, i2, 0), cost(i1, i2, 1)],
        max_unilateral_gain: [cost(i1, i2, 0) - min1[i2], cost(i1, i2, 1) - min2[i1]],
        iterations,
        evaluations: (a1 * a2) as u64,
        controls: u,
    })
}

/// Bound on `|J_i(u) - J_i(ū)|` over controls within `h` of `ū` in every
/// node coordinate: `h·Σ|∂J_i| + ½h²·Σ|∂²J_i|`, with derivatives taken by
/// central differences of step `h` over all node controls of both players.
/// Exact for games whose costs are quadratic in the node controls.
pub fn grid_cost_bound(
    problem: &GameProblem,
    backend: &Backend,
    u_bar: &ControlProcess,
    h: f64,
    cfg: &FbsdeConfig,
) -> Result<[f64; 2]> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Invalid(format!("grid spacing must be positive, got {h}")));
    }
    u_bar.check_layout(problem, backend)?;
    let mut coords = Vec::new();
    for player in Player::BOTH {
        let p = u_bar.get(player);
        for j in 0..p.levels() {
            for e in 0..p.level(j).len() {
                coords.push((player, j, e));
            }
        }
    }
    let shifted = |moves: &[(usize, f64)]| {
        let mut w = u_bar.clone();
        for &(c, delta) in moves {
            let (player, j, e) = coords[c];
            w.get_mut(player).level_mut(j)[e] += delta;
        }
        w
    };
    let costs = |w: &ControlProcess| -> Result<[f64; 2]> {
        let (traj, diag) = solve_fbsde(problem, w, backend, cfg)?;
        if !diag.converged {
            return Err(Error::NotConverged(format!("FBSDE in the cost bound (residual {:.3e})", diag.residual)));
        }
        Ok(Player::BOTH.map(|p| eval_cost(problem, &traj, w, p, backend).value))
    };

    let base = costs(u_bar)?;
    let c = coords.len();
    let singles: Vec<[[f64; 2]; 2]> = (0..c)
        .into_par_iter()
        .map(|a| Ok([costs(&shifted(&[(a, h)]))?, costs(&shifted(&[(a, -h)]))?]))
        .collect::<Result<_>>()?;
    let pairs: Vec<(usize, usize)> = (0..c).flat_map(|a| (a + 1..c).map(move |b| (a, b))).collect();
    let mixed: Vec<[[f64; 2]; 4]> = pairs
        .par_iter()
        .map(|&(a, b)| {
            Ok([
                costs(&shifted(&[(a, h), (b, h)]))?,
                costs(&shifted(&[(a, h), (b, -h)]))?,
                costs(&shifted(&[(a, -h), (b, h)]))?,
                costs(&shifted(&[(a, -h), (b, -h)]))?,
            ])
        })
        .collect::<Result<_>>()?;

    Ok([0, 1].map(|i| {
        let grad: f64 = singles.iter().map(|[p, m]| ((p[i] - m[i]) / (2.0 * h)).abs()).sum();
        let diag: f64 = singles.iter().map(|[p, m]| ((p[i] - 2.0 * base[i] + m[i]) / (h * h)).abs()).sum();
        let off: f64 = mixed
            .iter()
            .map(|[pp, pm, mp, mm]| 2.0 * ((pp[i] - pm[i] - mp[i] + mm[i]) / (4.0 * h * h)).abs())
            .sum();
        h * grad + 0.5 * h * h * (diag + off)
    }))
}
