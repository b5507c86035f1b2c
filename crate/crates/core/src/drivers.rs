//! Discretized Brownian randomness.
//!
//! Two interchangeable backends share one scenario layout (level `j` holds
//! `scenarios(j)` entries):
//!
//! * [`PathEnsemble`]: `P` Monte Carlo paths, every level has `P` scenarios,
//!   conditional expectations by least-squares regression.
//! * [`BinomialLattice`]: recombining `±√dt` random walk (`d = 1`), level `j`
//!   has the `j + 1` nodes, conditional expectations are exact averages.
//!
//! On the lattice every process is a node function. A forward Euler step is
//! followed by conditional averaging onto the child node, which is exact
//! whenever the Euler map depends on the path only through the node.

use nalgebra::{Cholesky, DMatrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Name of the path generator, recorded in output metadata.
pub const GENERATOR: &str = "ChaCha8Rng(seed, stream = path index) + StandardNormal";

/// Chunk length for parallel reductions; fixed so sums do not depend on the
/// worker count.
const CHUNK: usize = 1024;

/// Ridge parameter used when a regression design is rank deficient.
pub const RIDGE: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Invalid("time grid needs at least one step".into()));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Invalid(format!("horizon must be positive, got {horizon}")));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// Knot `t_j`; `t_N` is exactly the horizon.
    pub fn t(&self, j: usize) -> f64 {
        if j == self.steps {
            self.horizon
        } else {
            j as f64 * self.dt()
        }
    }

    pub fn knots(&self) -> Vec<f64> {
        (0..=self.steps).map(|j| self.t(j)).collect()
    }
}

/// Monte Carlo Brownian increments. Path `p` is generated from its own
/// stream keyed by `(seed, p)`, so the ensemble never depends on scheduling.
#[derive(Clone, Debug)]
pub struct PathEnsemble {
    grid: TimeGrid,
    paths: usize,
    dim: usize,
    seed: u64,
    /// `increments[j][p * dim + c]`
    increments: Vec<Vec<f64>>,
    /// `brownian[j][p * dim + c]`, `j = 0..=N`
    brownian: Vec<Vec<f64>>,
}

pub fn sample_ensemble(grid: TimeGrid, paths: usize, dim: usize, seed: u64) -> Result<PathEnsemble> {
    if paths == 0 || dim == 0 {
        return Err(Error::Invalid(format!(
            "ensemble needs paths ≥ 1 and d ≥ 1 (got {paths}, {dim})"
        )));
    }
    let n = grid.steps();
    let sd = grid.dt().sqrt();
    let per_path: Vec<Vec<f64>> = (0..paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(p as u64);
            (0..n * dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    sd * z
                })
                .collect()
        })
        .collect();
    let mut increments = vec![vec![0.0; paths * dim]; n];
    let mut brownian = vec![vec![0.0; paths * dim]; n + 1];
    for (p, draws) in per_path.iter().enumerate() {
        for j in 0..n {
            for c in 0..dim {
                let db = draws[j * dim + c];
                increments[j][p * dim + c] = db;
                brownian[j + 1][p * dim + c] = brownian[j][p * dim + c] + db;
            }
        }
    }
    Ok(PathEnsemble {
        grid,
        paths,
        dim,
        seed,
        increments,
        brownian,
    })
}

impl PathEnsemble {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn increment(&self, j: usize, p: usize) -> &[f64] {
        &self.increments[j][p * self.dim..(p + 1) * self.dim]
    }

    pub fn increments(&self, j: usize) -> &[f64] {
        &self.increments[j]
    }

    pub fn brownian(&self, j: usize, p: usize) -> &[f64] {
        &self.brownian[j][p * self.dim..(p + 1) * self.dim]
    }
}

/// Recombining binomial lattice for one-dimensional Brownian motion.
/// Node `(j, l)`, `l = 0..=j`, carries `B = (2l - j)√dt`; moves up to
/// `(j+1, l+1)` or down to `(j+1, l)` with probability ½ each.
#[derive(Clone, Debug)]
pub struct BinomialLattice {
    grid: TimeGrid,
    brownian: Vec<Vec<f64>>,
    weights: Vec<Vec<f64>>,
}

impl BinomialLattice {
    pub fn new(grid: TimeGrid) -> Self {
        let sd = grid.dt().sqrt();
        let n = grid.steps();
        let brownian = (0..=n)
            .map(|j| (0..=j).map(|l| (2.0 * l as f64 - j as f64) * sd).collect())
            .collect();
        let mut weights: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
        weights.push(vec![1.0]);
        for j in 0..n {
            let prev = &weights[j];
            let next = (0..=j + 1)
                .map(|l| {
                    let up = if l > 0 { prev[l - 1] } else { 0.0 };
                    let down = if l <= j { prev[l] } else { 0.0 };
                    0.5 * (up + down)
                })
                .collect();
            weights.push(next);
        }
        Self {
            grid,
            brownian,
            weights,
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn nodes(&self, j: usize) -> usize {
        j + 1
    }

    pub fn brownian(&self, j: usize, l: usize) -> f64 {
        self.brownian[j][l]
    }

    /// Node probabilities `C(j, l) / 2^j`.
    pub fn weights(&self, j: usize) -> &[f64] {
        &self.weights[j]
    }
}

/// Least-squares Monte Carlo settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressionConfig {
    /// Total degree of the monomial basis, 1..=4.
    pub degree: usize,
    /// Add `B(t_j)` to the regressors (needed when `ξ` depends on `B(T)`).
    pub include_brownian: bool,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        Self {
            degree: 2,
            include_brownian: true,
        }
    }
}

impl RegressionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=4).contains(&self.degree) {
            return Err(Error::Invalid(format!(
                "regression degree must be in 1..=4, got {}",
                self.degree
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub enum Backend {
    MonteCarlo {
        ensemble: PathEnsemble,
        regression: RegressionConfig,
        weights: Vec<f64>,
    },
    Lattice(BinomialLattice),
}

impl Backend {
    pub fn monte_carlo(ensemble: PathEnsemble, regression: RegressionConfig) -> Result<Self> {
        regression.validate()?;
        let weights = vec![1.0 / ensemble.paths() as f64; ensemble.paths()];
        Ok(Backend::MonteCarlo {
            ensemble,
            regression,
            weights,
        })
    }

    pub fn lattice(lattice: BinomialLattice) -> Self {
        Backend::Lattice(lattice)
    }

    /// Checks that the backend can drive a problem with Brownian dimension `d`
    /// on horizon `horizon`.
    pub fn check_compatible(&self, d: usize, horizon: f64) -> Result<()> {
        if self.brownian_dim() != d {
            return Err(Error::Mismatch(format!(
                "backend has Brownian dimension {}, problem has d = {d}",
                self.brownian_dim()
            )));
        }
        if (self.grid().horizon() - horizon).abs() > 1e-12 * horizon {
            return Err(Error::Mismatch(format!(
                "backend horizon {} differs from problem horizon {horizon}",
                self.grid().horizon()
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> &TimeGrid {
        match self {
            Backend::MonteCarlo { ensemble, .. } => ensemble.grid(),
            Backend::Lattice(l) => l.grid(),
        }
    }

    pub fn steps(&self) -> usize {
        self.grid().steps()
    }

    pub fn brownian_dim(&self) -> usize {
        match self {
            Backend::MonteCarlo { ensemble, .. } => ensemble.dim(),
            Backend::Lattice(_) => 1,
        }
    }

    pub fn is_lattice(&self) -> bool {
        matches!(self, Backend::Lattice(_))
    }

    pub fn scenarios(&self, j: usize) -> usize {
        match self {
            Backend::MonteCarlo { ensemble, .. } => ensemble.paths(),
            Backend::Lattice(l) => l.nodes(j),
        }
    }

    /// Scenario counts of levels `0..levels`.
    pub fn sizes(&self, levels: usize) -> Vec<usize> {
        (0..levels).map(|j| self.scenarios(j)).collect()
    }

    pub fn weights(&self, j: usize) -> &[f64] {
        match self {
            Backend::MonteCarlo { weights, .. } => weights,
            Backend::Lattice(l) => l.weights(j),
        }
    }

    /// `B(t_j)` in scenario `s`.
    pub fn brownian(&self, j: usize, s: usize) -> &[f64] {
        match self {
            Backend::MonteCarlo { ensemble, .. } => ensemble.brownian(j, s),
            Backend::Lattice(l) => std::slice::from_ref(&l.brownian[j][s]),
        }
    }

    /// Weighted mean of a scalar per-scenario quantity at level `j`.
    pub fn expectation(&self, j: usize, values: &[f64]) -> f64 {
        ordered_dot(self.weights(j), values)
    }

    /// One explicit Euler step of a `dim`-dimensional process:
    /// `next = current + drift·dt + diffusion·ΔB_j`, with `diffusion` given
    /// per scenario as a row-major `dim × d` matrix. On the lattice the result
    /// is averaged onto the child nodes.
    pub fn advance(&self, j: usize, current: &[f64], drift: &[f64], diffusion: &[f64], dim: usize) -> Vec<f64> {
        let dt = self.grid().dt();
        match self {
            Backend::MonteCarlo { ensemble, .. } => {
                let d = ensemble.dim();
                let inc = ensemble.increments(j);
                let mut next = vec![0.0; current.len()];
                next.par_chunks_mut(dim.max(1))
                    .enumerate()
                    .for_each(|(p, out)| {
                        for r in 0..dim {
                            let mut v = current[p * dim + r] + drift[p * dim + r] * dt;
                            for c in 0..d {
                                v += diffusion[(p * dim + r) * d + c] * inc[p * d + c];
                            }
                            out[r] = v;
                        }
                    });
                next
            }
            Backend::Lattice(_) => {
                let sd = dt.sqrt();
                let parents = j + 1;
                let mut next = vec![0.0; (j + 2) * dim];
                for child in 0..=j + 1 {
                    let w_up = child as f64 / parents as f64;
                    for r in 0..dim {
                        let up = (child > 0).then(|| {
                            let l = child - 1;
                            current[l * dim + r] + drift[l * dim + r] * dt + diffusion[l * dim + r] * sd
                        });
                        let down = (child <= j).then(|| {
                            let l = child;
                            current[l * dim + r] + drift[l * dim + r] * dt - diffusion[l * dim + r] * sd
                        });
                        // written as down + w_up·(up - down) so equal parents average exactly
                        let v = match (up, down) {
                            (Some(a), Some(b)) => b + w_up * (a - b),
                            (Some(a), None) => a,
                            (None, Some(b)) => b,
                            (None, None) => unreachable!(),
                        };
                        next[child * dim + r] = v;
                    }
                }
                next
            }
        }
    }

    /// Conditional-expectation operator from level `j + 1` to level `j`.
    /// `regressors` (row-major, `rdim` per scenario) are used only by the
    /// Monte Carlo backend.
    pub fn projector(&self, j: usize, regressors: &[f64], rdim: usize) -> Result<StepProjector<'_>> {
        match self {
            Backend::Lattice(l) => Ok(StepProjector::Lattice {
                nodes: j + 1,
                inv_two_sd: 0.5 / l.grid().dt().sqrt(),
            }),
            Backend::MonteCarlo {
                ensemble, regression, ..
            } => {
                let paths = ensemble.paths();
                let mut columns: Vec<Vec<f64>> = (0..rdim)
                    .map(|r| (0..paths).map(|p| regressors[p * rdim + r]).collect())
                    .collect();
                if regression.include_brownian {
                    for c in 0..ensemble.dim() {
                        columns.push((0..paths).map(|p| ensemble.brownian(j, p)[c]).collect());
                    }
                }
                let basis = Basis::new(&columns, regression.degree);
                let reg = Regression::fit(basis, paths)?;
                Ok(StepProjector::Regression {
                    reg,
                    increments: ensemble.increments(j),
                    d: ensemble.dim(),
                    dt: ensemble.grid().dt(),
                })
            }
        }
    }
}

/// Dot product accumulated in fixed-size chunks, then summed in order.
fn ordered_dot(w: &[f64], v: &[f64]) -> f64 {
    w.par_chunks(CHUNK)
        .zip(v.par_chunks(CHUNK))
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
        .collect::<Vec<_>>()
        .into_iter()
        .sum()
}

/// Standardized monomial basis, row-major `paths × len`.
#[derive(Debug)]
struct Basis {
    len: usize,
    rows: Vec<f64>,
}

fn monomial_exponents(vars: usize, degree: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![0; vars]];
    for deg in 1..=degree {
        let mut current = vec![0; vars];
        fn rec(pos: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if pos + 1 == cur.len() {
                cur[pos] = left;
                out.push(cur.clone());
                return;
            }
            for e in (0..=left).rev() {
                cur[pos] = e;
                rec(pos + 1, left - e, cur, out);
            }
        }
        if vars > 0 {
            rec(0, deg, &mut current, &mut out);
        }
    }
    out
}

impl Basis {
    fn new(columns: &[Vec<f64>], degree: usize) -> Self {
        let paths = columns.first().map_or(0, Vec::len);
        // constant regressors carry no information; drop them
        let mut standardized: Vec<Vec<f64>> = Vec::new();
        for col in columns {
            let mean = col.iter().sum::<f64>() / paths as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / paths as f64;
            let sd = var.sqrt();
            if sd > 1e-12 * (1.0 + mean.abs()) {
                standardized.push(col.iter().map(|v| (v - mean) / sd).collect());
            }
        }
        let exps = monomial_exponents(standardized.len(), degree);
        let len = exps.len();
        let mut rows = vec![0.0; paths * len];
        rows.par_chunks_mut(len).enumerate().for_each(|(p, row)| {
            for (k, e) in exps.iter().enumerate() {
                row[k] = e
                    .iter()
                    .zip(&standardized)
                    .map(|(pow, col)| col[p].powi(*pow as i32))
                    .product();
            }
        });
        Self { len, rows }
    }
}

#[derive(Debug)]
pub struct Regression {
    basis: Basis,
    paths: usize,
    chol: Cholesky<f64, nalgebra::Dyn>,
    ridge: bool,
}

impl Regression {
    fn fit(basis: Basis, paths: usize) -> Result<Self> {
        let k = basis.len;
        let partial: Vec<Vec<f64>> = basis
            .rows
            .par_chunks(CHUNK * k)
            .map(|chunk| {
                let mut g = vec![0.0; k * k];
                for row in chunk.chunks(k) {
                    for a in 0..k {
                        for b in 0..=a {
                            g[a * k + b] += row[a] * row[b];
                        }
                    }
                }
                g
            })
            .collect();
        let mut gram = DMatrix::zeros(k, k);
        for g in &partial {
            for a in 0..k {
                for b in 0..=a {
                    gram[(a, b)] += g[a * k + b];
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                gram[(b, a)] = gram[(a, b)];
            }
        }
        gram /= paths as f64;
        let diag_max = (0..k).map(|a| gram[(a, a)]).fold(0.0, f64::max);
        let chol = Cholesky::new(gram.clone()).filter(|c| {
            let l = c.l_dirty();
            (0..k).all(|a| l[(a, a)] * l[(a, a)] > 1e-12 * diag_max)
        });
        let (chol, ridge) = match chol {
            Some(c) => (c, false),
            None => {
                let mut g = gram;
                for a in 0..k {
                    g[(a, a)] += RIDGE;
                }
                let c = Cholesky::new(g).ok_or_else(|| {
                    Error::Invalid("regression design is singular even with ridge".into())
                })?;
                (c, true)
            }
        };
        Ok(Self {
            basis,
            paths,
            chol,
            ridge,
        })
    }

    /// Fitted values of `values` (row-major `paths × dim`).
    fn project(&self, values: &[f64], dim: usize) -> Vec<f64> {
        let k = self.basis.len;
        let partial: Vec<Vec<f64>> = self
            .basis
            .rows
            .par_chunks(CHUNK * k)
            .zip(values.par_chunks(CHUNK * dim.max(1)))
            .map(|(rows, vals)| {
                let mut acc = vec![0.0; k * dim];
                for (row, v) in rows.chunks(k).zip(vals.chunks(dim.max(1))) {
                    for a in 0..k {
                        for c in 0..dim {
                            acc[a * dim + c] += row[a] * v[c];
                        }
                    }
                }
                acc
            })
            .collect();
        let mut rhs = DMatrix::zeros(k, dim);
        for acc in &partial {
            for a in 0..k {
                for c in 0..dim {
                    rhs[(a, c)] += acc[a * dim + c];
                }
            }
        }
        rhs /= self.paths as f64;
        let beta = self.chol.solve(&rhs);
        let mut out = vec![0.0; self.paths * dim];
        out.par_chunks_mut(dim.max(1)).enumerate().for_each(|(p, o)| {
            let row = &self.basis.rows[p * k..(p + 1) * k];
            for c in 0..dim {
                o[c] = (0..k).map(|a| row[a] * beta[(a, c)]).sum();
            }
        });
        out
    }

    pub fn basis_len(&self) -> usize {
        self.basis.len
    }
}

/// Conditional expectation `E[· | F_{t_j}]` of level-`(j+1)` data.
pub enum StepProjector<'a> {
    Lattice {
        nodes: usize,
        inv_two_sd: f64,
    },
    Regression {
        reg: Regression,
        increments: &'a [f64],
        d: usize,
        dt: f64,
    },
}

impl StepProjector<'_> {
    /// `E[v_{j+1} | F_j]` for `dim`-vectors.
    pub fn expect(&self, next: &[f64], dim: usize) -> Vec<f64> {
        match self {
            StepProjector::Lattice { nodes, .. } => {
                let mut out = vec![0.0; nodes * dim];
                for l in 0..*nodes {
                    for r in 0..dim {
                        out[l * dim + r] = 0.5 * (next[(l + 1) * dim + r] + next[l * dim + r]);
                    }
                }
                out
            }
            StepProjector::Regression { reg, .. } => reg.project(next, dim),
        }
    }

    /// `E[v_{j+1} ΔB_jᵀ | F_j] / dt`, row-major `dim × d` per scenario.
    pub fn expect_increment(&self, next: &[f64], dim: usize) -> Vec<f64> {
        match self {
            StepProjector::Lattice { nodes, inv_two_sd } => {
                let mut out = vec![0.0; nodes * dim];
                for l in 0..*nodes {
                    for r in 0..dim {
                        out[l * dim + r] = (next[(l + 1) * dim + r] - next[l * dim + r]) * inv_two_sd;
                    }
                }
                out
            }
            StepProjector::Regression {
                reg,
                increments,
                d,
                dt,
            } => {
                let paths = reg.paths;
                let width = dim * d;
                let mut weighted = vec![0.0; paths * width];
                weighted.par_chunks_mut(width.max(1)).enumerate().for_each(|(p, w)| {
                    for r in 0..dim {
                        for c in 0..*d {
                            w[r * d + c] = next[p * dim + r] * increments[p * d + c] / dt;
                        }
                    }
                });
                reg.project(&weighted, width)
            }
        }
    }

    pub fn ridge_fallback(&self) -> bool {
        match self {
            StepProjector::Lattice { .. } => false,
            StepProjector::Regression { reg, .. } => reg.ridge,
        }
    }
}

/// `E[values_{j+1} | F_{t_j}]` on either backend; returns the values and
/// whether the ridge fallback was used.
pub fn conditional_expectation(
    backend: &Backend,
    j: usize,
    next: &[f64],
    dim: usize,
    regressors: &[f64],
    rdim: usize,
) -> Result<(Vec<f64>, bool)> {
    let proj = backend.projector(j, regressors, rdim)?;
    Ok((proj.expect(next, dim), proj.ridge_fallback()))
}
