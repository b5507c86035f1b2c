//! Linear-quadratic game family.
//!
//! Coefficients are affine in `(x, y, z, u1, u2)`:
//!
//! ```text
//! b     = A x + B y + C z + D1 u1 + D2 u2 + e
//! σ_·c  = A_c x + B_c y + C_c z + D1_c u1 + D2_c u2 + e_c      (column c)
//! f     = F_x x + F_y y + F_z z + F_1 u1 + F_2 u2 + g
//! ```
//!
//! and costs are quadratic:
//!
//! ```text
//! l_i = ½ (x'Q_i x + y'R_i y + S_i |z|² + u_i'N_i u_i + u_j'M_i u_j),   j = 3 - i
//! φ_i = ½ x'G_i x,   h_i = ½ y'H_i y
//! ```

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{
    CoefficientSet, ControlBox, CostSet, Dims, EndpointCost, GameProblem, Player, Point,
    RunningCost, TerminalData, Var, VectorMap,
};
use crate::error::{Error, Result};

/// Row-major matrix as nested rows.
pub type Matrix = Vec<Vec<f64>>;

/// An affine map `A_x x + A_y y + A_z z + A_1 u1 + A_2 u2 + constant`; absent blocks are zero.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineMapSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<Matrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<Matrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<Matrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u1: Option<Matrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u2: Option<Matrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constant: Option<Vec<f64>>,
}

impl AffineMapSpec {
    fn block(&self, var: Var) -> Option<&Matrix> {
        match var {
            Var::X => self.x.as_ref(),
            Var::Y => self.y.as_ref(),
            Var::Z => self.z.as_ref(),
            Var::U1 => self.u1.as_ref(),
            Var::U2 => self.u2.as_ref(),
        }
    }

    fn block_mut(&mut self, var: Var) -> &mut Option<Matrix> {
        match var {
            Var::X => &mut self.x,
            Var::Y => &mut self.y,
            Var::Z => &mut self.z,
            Var::U1 => &mut self.u1,
            Var::U2 => &mut self.u2,
        }
    }

    pub fn set(mut self, var: Var, m: Matrix) -> Self {
        *self.block_mut(var) = Some(m);
        self
    }

    pub fn with_constant(mut self, c: Vec<f64>) -> Self {
        self.constant = Some(c);
        self
    }
}

/// Quadratic cost weights of one player. Absent matrices are zero.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlayerCostSpec {
    /// State weight `Q_i` (n×n).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Matrix>,
    /// Backward-state weight `R_i` (m×m).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<Matrix>,
    /// Scalar weight on `|z|²`.
    #[serde(default)]
    pub s: f64,
    /// Own control weight `N_i` (k_i×k_i).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<Matrix>,
    /// Weight `M_i` on the other player's control.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<Matrix>,
    /// Terminal weight `G_i` (n×n).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<Matrix>,
    /// Initial weight `H_i` (m×m) on `y(0)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<Matrix>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlBoxSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqGameSpec {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub k1: usize,
    pub k2: usize,
    pub horizon: f64,
    pub initial: Vec<f64>,
    /// Constant terminal value `ξ`.
    pub xi: Vec<f64>,
    #[serde(default)]
    pub drift: AffineMapSpec,
    /// One affine map per Brownian column; missing columns are zero.
    #[serde(default)]
    pub diffusion: Vec<AffineMapSpec>,
    #[serde(default)]
    pub driver: AffineMapSpec,
    #[serde(default)]
    pub players: [PlayerCostSpec; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u1_box: Option<ControlBoxSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u2_box: Option<ControlBoxSpec>,
}

impl LqGameSpec {
    /// All-zero spec of the given shape.
    pub fn zero(dims: Dims, horizon: f64, initial: Vec<f64>, xi: Vec<f64>) -> Self {
        Self {
            n: dims.n,
            m: dims.m,
            d: dims.d,
            k1: dims.k1,
            k2: dims.k2,
            horizon,
            initial,
            xi,
            drift: AffineMapSpec::default(),
            diffusion: vec![AffineMapSpec::default(); dims.d],
            driver: AffineMapSpec::default(),
            players: Default::default(),
            u1_box: None,
            u2_box: None,
        }
    }

    pub fn dims(&self) -> Dims {
        Dims {
            n: self.n,
            m: self.m,
            d: self.d,
            k1: self.k1,
            k2: self.k2,
        }
    }

    /// True when `N_i` is symmetric positive definite and `Q_i, R_i, G_i, H_i`
    /// are positive semidefinite with `S_i ≥ 0`; this makes `H_i` convex in
    /// `(x, y, z, u_i)`. Stored as information only; nothing enforces it.
    pub fn is_convex_for(&self, player: Player) -> Result<bool> {
        let dims = self.dims();
        let c = &self.players[player.index()];
        let k = dims.control_dim(player);
        let n = matrix_or_zero(&c.n, k, k, "N")?;
        let own_pd = k == 0 || (is_symmetric(&n) && Cholesky::new(n).is_some());
        let psd = |m: &Option<Matrix>, size: usize, name: &str| -> Result<bool> {
            let a = matrix_or_zero(m, size, size, name)?;
            let sym = (&a + a.transpose()) * 0.5;
            Ok(sym.symmetric_eigenvalues().iter().all(|v| *v >= -1e-12))
        };
        Ok(own_pd
            && c.s >= 0.0
            && psd(&c.q, dims.n, "Q")?
            && psd(&c.r, dims.m, "R")?
            && psd(&c.g, dims.n, "G")?
            && psd(&c.h, dims.m, "H")?)
    }
}

fn is_symmetric(a: &DMatrix<f64>) -> bool {
    (a - a.transpose()).amax() <= 1e-12 * (1.0 + a.amax())
}

fn to_matrix(m: &Matrix, rows: usize, cols: usize, name: &str) -> Result<DMatrix<f64>> {
    let found_cols = m.first().map_or(0, Vec::len);
    if m.len() != rows || m.iter().any(|r| r.len() != cols) {
        return Err(Error::Shape {
            name: name.to_string(),
            expected: (rows, cols),
            found: (m.len(), found_cols),
        });
    }
    Ok(DMatrix::from_fn(rows, cols, |i, j| m[i][j]))
}

fn matrix_or_zero(m: &Option<Matrix>, rows: usize, cols: usize, name: &str) -> Result<DMatrix<f64>> {
    match m {
        Some(m) if rows * cols == 0 && m.iter().all(Vec::is_empty) => Ok(DMatrix::zeros(rows, cols)),
        Some(m) => to_matrix(m, rows, cols, name),
        None => Ok(DMatrix::zeros(rows, cols)),
    }
}

fn vector_or_zero(v: &Option<Vec<f64>>, len: usize, name: &str) -> Result<DVector<f64>> {
    match v {
        Some(v) if v.len() != len => Err(Error::Shape {
            name: name.to_string(),
            expected: (len, 1),
            found: (v.len(), 1),
        }),
        Some(v) => Ok(DVector::from_column_slice(v)),
        None => Ok(DVector::zeros(len)),
    }
}

/// Dense affine map with blocks for every argument.
#[derive(Clone, Debug)]
struct Affine {
    blocks: [DMatrix<f64>; 5],
    constant: DVector<f64>,
}

impl Affine {
    fn from_spec(spec: &AffineMapSpec, rows: usize, dims: &Dims, name: &str) -> Result<Self> {
        let mut blocks: [DMatrix<f64>; 5] = Default::default();
        for var in Var::ALL {
            blocks[var.index()] =
                matrix_or_zero(&spec.block(var).cloned(), rows, dims.var_dim(var), &format!("{name}.{var}"))?;
        }
        let constant = vector_or_zero(&spec.constant, rows, &format!("{name}.constant"))?;
        Ok(Self { blocks, constant })
    }

    fn eval(&self, pt: &Point<'_>) -> DVector<f64> {
        let mut out = self.constant.clone();
        for var in Var::ALL {
            let block = &self.blocks[var.index()];
            if block.ncols() > 0 {
                out.gemv(1.0, block, &DVector::from_column_slice(pt.get(var)), 1.0);
            }
        }
        out
    }

    fn into_map(self, dims: &Dims) -> VectorMap {
        let out_dim = self.constant.len();
        let shared = Arc::new(self);
        let value = shared.clone();
        let mut map = VectorMap::new(out_dim, dims, move |pt| value.eval(pt));
        for var in Var::ALL {
            let s = shared.clone();
            map = map.with_jacobian(var, move |_| s.blocks[var.index()].clone());
        }
        map
    }
}

/// Interleaves per-column affine maps into the flattened `σ[r * d + c]` layout.
fn stack_columns(columns: &[Affine], n: usize, d: usize) -> Affine {
    let mut blocks: [DMatrix<f64>; 5] = Default::default();
    for var in Var::ALL {
        let cols = columns[0].blocks[var.index()].ncols();
        blocks[var.index()] = DMatrix::from_fn(n * d, cols, |row, col| {
            columns[row % d].blocks[var.index()][(row / d, col)]
        });
    }
    let constant = DVector::from_fn(n * d, |row, _| columns[row % d].constant[row / d]);
    Affine { blocks, constant }
}

/// Quadratic form `½ v'Av` with gradient `½(A + A')v`.
#[derive(Clone, Debug)]
struct Quadratic {
    a: DMatrix<f64>,
    sym: DMatrix<f64>,
}

impl Quadratic {
    fn new(a: DMatrix<f64>) -> Self {
        let sym = (&a + a.transpose()) * 0.5;
        Self { a, sym }
    }

    fn value(&self, v: &[f64]) -> f64 {
        if v.is_empty() {
            return 0.0;
        }
        let v = DVector::from_column_slice(v);
        0.5 * v.dot(&(&self.a * &v))
    }

    fn grad(&self, v: &[f64]) -> DVector<f64> {
        &self.sym * DVector::from_column_slice(v)
    }
}

struct QuadraticCost {
    q: Quadratic,
    r: Quadratic,
    s: f64,
    own: Quadratic,
    other: Quadratic,
    player: Player,
}

impl QuadraticCost {
    fn value(&self, pt: &Point<'_>) -> f64 {
        let own = pt.get(self.player.control());
        let other = pt.get(self.player.other().control());
        let zz: f64 = pt.z.iter().map(|v| v * v).sum();
        self.q.value(pt.x)
            + self.r.value(pt.y)
            + 0.5 * self.s * zz
            + self.own.value(own)
            + self.other.value(other)
    }
}

fn player_cost(spec: &PlayerCostSpec, dims: &Dims, player: Player) -> Result<(RunningCost, EndpointCost, EndpointCost)> {
    let tag = |m: &str| format!("players[{}].{m}", player.index());
    let own_dim = dims.control_dim(player);
    let other_dim = dims.control_dim(player.other());
    let cost = Arc::new(QuadraticCost {
        q: Quadratic::new(matrix_or_zero(&spec.q, dims.n, dims.n, &tag("q"))?),
        r: Quadratic::new(matrix_or_zero(&spec.r, dims.m, dims.m, &tag("r"))?),
        s: spec.s,
        own: Quadratic::new(matrix_or_zero(&spec.n, own_dim, own_dim, &tag("n"))?),
        other: Quadratic::new(matrix_or_zero(&spec.m, other_dim, other_dim, &tag("m"))?),
        player,
    });
    let c = cost.clone();
    let mut running = RunningCost::new(dims, move |pt| c.value(pt));
    let c = cost.clone();
    running = running.with_gradient(Var::X, move |pt| c.q.grad(pt.x));
    let c = cost.clone();
    running = running.with_gradient(Var::Y, move |pt| c.r.grad(pt.y));
    let s = spec.s;
    running = running.with_gradient(Var::Z, move |pt| DVector::from_column_slice(pt.z) * s);
    let c = cost.clone();
    running = running.with_gradient(player.control(), move |pt| c.own.grad(pt.get(c.player.control())));
    let c = cost;
    running = running.with_gradient(player.other().control(), move |pt| {
        c.other.grad(pt.get(c.player.other().control()))
    });

    let g = Arc::new(Quadratic::new(matrix_or_zero(&spec.g, dims.n, dims.n, &tag("g"))?));
    let g2 = g.clone();
    let terminal = EndpointCost::new(move |x| g.value(x), move |x| g2.grad(x));
    let h = Arc::new(Quadratic::new(matrix_or_zero(&spec.h, dims.m, dims.m, &tag("h"))?));
    let h2 = h.clone();
    let initial = EndpointCost::new(move |y| h.value(y), move |y| h2.grad(y));
    Ok((running, terminal, initial))
}

fn control_box(spec: &Option<ControlBoxSpec>, dim: usize, name: &str) -> Result<ControlBox> {
    match spec {
        None => Ok(ControlBox::unbounded(dim)),
        Some(b) => {
            if b.lower.len() != dim || b.upper.len() != dim {
                return Err(Error::Shape {
                    name: name.to_string(),
                    expected: (dim, 1),
                    found: (b.lower.len().max(b.upper.len()), 1),
                });
            }
            ControlBox::new(b.lower.clone(), b.upper.clone())
        }
    }
}

/// Builds the [`GameProblem`] of an LQ spec; derivative fields are the exact
/// matrix partials.
pub fn lq_to_problem(spec: &LqGameSpec) -> Result<GameProblem> {
    let dims = spec.dims();
    dims.validate()?;
    if spec.diffusion.len() > dims.d {
        return Err(Error::Dims(format!(
            "{} diffusion columns given, but d = {}",
            spec.diffusion.len(),
            dims.d
        )));
    }
    let b = Affine::from_spec(&spec.drift, dims.n, &dims, "drift")?;
    let f = Affine::from_spec(&spec.driver, dims.m, &dims, "driver")?;
    let mut columns = Vec::with_capacity(dims.d);
    for c in 0..dims.d {
        let col = spec.diffusion.get(c).cloned().unwrap_or_default();
        columns.push(Affine::from_spec(&col, dims.n, &dims, &format!("diffusion[{c}]"))?);
    }
    let sigma = stack_columns(&columns, dims.n, dims.d);
    let coeffs = CoefficientSet {
        b: b.into_map(&dims),
        sigma: sigma.into_map(&dims),
        f: f.into_map(&dims),
    };
    let (l1, phi1, h1) = player_cost(&spec.players[0], &dims, Player::One)?;
    let (l2, phi2, h2) = player_cost(&spec.players[1], &dims, Player::Two)?;
    let costs = CostSet {
        running: [l1, l2],
        terminal: [phi1, phi2],
        initial: [h1, h2],
    };
    if spec.xi.len() != dims.m {
        return Err(Error::Shape {
            name: "xi".into(),
            expected: (dims.m, 1),
            found: (spec.xi.len(), 1),
        });
    }
    if spec.initial.len() != dims.n {
        return Err(Error::Shape {
            name: "initial".into(),
            expected: (dims.n, 1),
            found: (spec.initial.len(), 1),
        });
    }
    let boxes = [
        control_box(&spec.u1_box, dims.k1, "u1_box")?,
        control_box(&spec.u2_box, dims.k2, "u2_box")?,
    ];
    GameProblem::new(
        dims,
        spec.horizon,
        spec.initial.clone(),
        TerminalData::constant(spec.xi.clone()),
        coeffs,
        costs,
        boxes,
    )
}
