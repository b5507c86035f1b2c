//! Game instances: coefficient and cost functions with their first
//! derivatives, dimensions, control sets and terminal data.
//!
//! Every function takes a [`Point`] `(t, x, y, z, u1, u2)`. Matrix-valued
//! quantities are flattened row-major:
//!
//! * `z ∈ R^{m×d}` is stored as `z[i * d + c]`,
//! * `σ ∈ R^{n×d}` is stored as `σ[r * d + c]`, column `c` multiplying `dB_c`.
//!
//! The Jacobian of a vector map with respect to an argument block is a dense
//! `out_dim × block_dim` matrix, so `σ_y` is the `(n·d) × m` stacking of the
//! `d` slices `∂σ_{·c}/∂y`.

mod check;
mod lq;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub use check::{
    check_derivatives, validate_problem, DerivativeCheckOptions, DerivativeReport, FnBundle,
    InputBlock, NonFiniteSample, PartialReport, ValidationReport,
};
pub use lq::{lq_to_problem, AffineMapSpec, ControlBoxSpec, LqGameSpec, Matrix, PlayerCostSpec};

/// Problem dimensions. `k1` or `k2` may be zero, which makes that player inert.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Dims {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub k1: usize,
    pub k2: usize,
}

impl Dims {
    pub fn new(n: usize, m: usize, d: usize, k1: usize, k2: usize) -> Result<Self> {
        let dims = Self { n, m, d, k1, k2 };
        dims.validate()?;
        Ok(dims)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 || self.d == 0 {
            return Err(Error::Dims(format!(
                "n, m, d must be at least 1 (got n={}, m={}, d={})",
                self.n, self.m, self.d
            )));
        }
        Ok(())
    }

    pub fn var_dim(&self, var: Var) -> usize {
        match var {
            Var::X => self.n,
            Var::Y => self.m,
            Var::Z => self.m * self.d,
            Var::U1 => self.k1,
            Var::U2 => self.k2,
        }
    }

    pub fn control_dim(&self, player: Player) -> usize {
        self.var_dim(player.control())
    }
}

/// Argument blocks of the coefficient and cost functions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Var {
    X,
    Y,
    Z,
    U1,
    U2,
}

impl Var {
    pub const ALL: [Var; 5] = [Var::X, Var::Y, Var::Z, Var::U1, Var::U2];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Var::X => "x",
            Var::Y => "y",
            Var::Z => "z",
            Var::U1 => "u1",
            Var::U2 => "u2",
        }
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Player {
    One,
    Two,
}

impl Player {
    pub const BOTH: [Player; 2] = [Player::One, Player::Two];

    pub fn index(self) -> usize {
        match self {
            Player::One => 0,
            Player::Two => 1,
        }
    }

    /// 1-based number used in reports and column names.
    pub fn number(self) -> usize {
        self.index() + 1
    }

    pub fn other(self) -> Player {
        match self {
            Player::One => Player::Two,
            Player::Two => Player::One,
        }
    }

    /// The argument block holding this player's control.
    pub fn control(self) -> Var {
        match self {
            Player::One => Var::U1,
            Player::Two => Var::U2,
        }
    }
}

/// Axis-aligned box `[lower, upper]`; entries may be infinite.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct ControlBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ControlBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Dims(format!(
                "control box bounds have lengths {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if lo.is_nan() || hi.is_nan() || lo > hi || *lo == f64::INFINITY || *hi == f64::NEG_INFINITY
            {
                return Err(Error::Invalid(format!(
                    "control box coordinate {i} is empty: [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn unbounded(dim: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; dim],
            upper: vec![f64::INFINITY; dim],
        }
    }

    pub fn symmetric(dim: usize, radius: f64) -> Self {
        Self {
            lower: vec![-radius; dim],
            upper: vec![radius; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn is_bounded(&self) -> bool {
        self.lower.iter().chain(&self.upper).all(|v| v.is_finite())
    }

    pub fn contains(&self, u: &[f64]) -> bool {
        u.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (lo, hi))| lo <= v && v <= hi)
    }

    pub fn project(&self, u: &mut [f64]) {
        for (v, (lo, hi)) in u.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*lo, *hi);
        }
    }

    /// Box midpoint; 0 (clamped into the box) on coordinates with an infinite side.
    pub fn midpoint(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| {
                if lo.is_finite() && hi.is_finite() {
                    0.5 * (lo + hi)
                } else {
                    0.0_f64.clamp(*lo, *hi)
                }
            })
            .collect()
    }

    /// Intersection with `[-radius, radius]` on every coordinate.
    pub fn truncated(&self, radius: f64) -> Self {
        Self {
            lower: self.lower.iter().map(|v| v.max(-radius)).collect(),
            upper: self.upper.iter().map(|v| v.min(radius)).collect(),
        }
    }
}

/// Evaluation point of the coefficient and running-cost functions.
#[derive(Clone, Copy, Debug)]
pub struct Point<'a> {
    pub t: f64,
    pub x: &'a [f64],
    pub y: &'a [f64],
    pub z: &'a [f64],
    pub u1: &'a [f64],
    pub u2: &'a [f64],
}

impl<'a> Point<'a> {
    pub fn get(&self, var: Var) -> &'a [f64] {
        match var {
            Var::X => self.x,
            Var::Y => self.y,
            Var::Z => self.z,
            Var::U1 => self.u1,
            Var::U2 => self.u2,
        }
    }

    /// Concatenation `(x, y, z, u1, u2)`.
    pub fn concat(&self) -> Vec<f64> {
        Var::ALL.iter().flat_map(|v| self.get(*v).iter().copied()).collect()
    }

    /// Splits a concatenated vector back into blocks.
    pub fn from_concat(t: f64, dims: &Dims, v: &'a [f64]) -> Self {
        let mut offset = 0;
        let mut take = |len: usize| {
            let s = &v[offset..offset + len];
            offset += len;
            s
        };
        let x = take(dims.n);
        let y = take(dims.m);
        let z = take(dims.m * dims.d);
        let u1 = take(dims.k1);
        let u2 = take(dims.k2);
        Self { t, x, y, z, u1, u2 }
    }
}

pub type MapFn = Arc<dyn Fn(&Point<'_>) -> DVector<f64> + Send + Sync>;
pub type JacobianFn = Arc<dyn Fn(&Point<'_>) -> DMatrix<f64> + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(&Point<'_>) -> f64 + Send + Sync>;
pub type EndpointFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type EndpointGradFn = Arc<dyn Fn(&[f64]) -> DVector<f64> + Send + Sync>;
pub type TerminalFn = Arc<dyn Fn(&[f64]) -> DVector<f64> + Send + Sync>;

/// A vector-valued map of `(t, x, y, z, u1, u2)` with its five Jacobian blocks.
#[derive(Clone)]
pub struct VectorMap {
    pub out_dim: usize,
    pub value: MapFn,
    pub jacobians: [JacobianFn; 5],
}

impl VectorMap {
    /// A map with all Jacobians identically zero; override with [`VectorMap::with_jacobian`].
    pub fn new<F>(out_dim: usize, dims: &Dims, value: F) -> Self
    where
        F: Fn(&Point<'_>) -> DVector<f64> + Send + Sync + 'static,
    {
        let jacobians = Var::ALL.map(|v| {
            let cols = dims.var_dim(v);
            Arc::new(move |_: &Point<'_>| DMatrix::zeros(out_dim, cols)) as JacobianFn
        });
        Self {
            out_dim,
            value: Arc::new(value),
            jacobians,
        }
    }

    pub fn zero(out_dim: usize, dims: &Dims) -> Self {
        Self::new(out_dim, dims, move |_| DVector::zeros(out_dim))
    }

    pub fn with_jacobian<F>(mut self, var: Var, jac: F) -> Self
    where
        F: Fn(&Point<'_>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.jacobians[var.index()] = Arc::new(jac);
        self
    }

    pub fn eval(&self, pt: &Point<'_>) -> DVector<f64> {
        (self.value)(pt)
    }

    pub fn jacobian(&self, var: Var, pt: &Point<'_>) -> DMatrix<f64> {
        (self.jacobians[var.index()])(pt)
    }
}

/// The state coefficients `b`, `σ` (flattened to `n·d`) and `f`.
#[derive(Clone)]
pub struct CoefficientSet {
    pub b: VectorMap,
    pub sigma: VectorMap,
    pub f: VectorMap,
}

impl CoefficientSet {
    pub fn zero(dims: &Dims) -> Self {
        Self {
            b: VectorMap::zero(dims.n, dims),
            sigma: VectorMap::zero(dims.n * dims.d, dims),
            f: VectorMap::zero(dims.m, dims),
        }
    }
}

/// Running cost `l_i` with its gradients.
#[derive(Clone)]
pub struct RunningCost {
    pub value: ScalarFn,
    pub gradients: [MapFn; 5],
}

impl RunningCost {
    pub fn new<F>(dims: &Dims, value: F) -> Self
    where
        F: Fn(&Point<'_>) -> f64 + Send + Sync + 'static,
    {
        let gradients = Var::ALL.map(|v| {
            let len = dims.var_dim(v);
            Arc::new(move |_: &Point<'_>| DVector::zeros(len)) as MapFn
        });
        Self {
            value: Arc::new(value),
            gradients,
        }
    }

    pub fn zero(dims: &Dims) -> Self {
        Self::new(dims, |_| 0.0)
    }

    pub fn with_gradient<F>(mut self, var: Var, grad: F) -> Self
    where
        F: Fn(&Point<'_>) -> DVector<f64> + Send + Sync + 'static,
    {
        self.gradients[var.index()] = Arc::new(grad);
        self
    }

    pub fn eval(&self, pt: &Point<'_>) -> f64 {
        (self.value)(pt)
    }

    pub fn gradient(&self, var: Var, pt: &Point<'_>) -> DVector<f64> {
        (self.gradients[var.index()])(pt)
    }
}

/// A cost on a single endpoint: `φ_i(x(T))` or `h_i(y(0))`.
#[derive(Clone)]
pub struct EndpointCost {
    pub value: EndpointFn,
    pub gradient: EndpointGradFn,
}

impl EndpointCost {
    pub fn new<F, G>(value: F, gradient: G) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
        G: Fn(&[f64]) -> DVector<f64> + Send + Sync + 'static,
    {
        Self {
            value: Arc::new(value),
            gradient: Arc::new(gradient),
        }
    }

    pub fn zero(dim: usize) -> Self {
        Self::new(|_| 0.0, move |_| DVector::zeros(dim))
    }

    /// `½ |v|²`.
    pub fn half_square(dim: usize) -> Self {
        Self::new(
            |v| 0.5 * v.iter().map(|a| a * a).sum::<f64>(),
            move |v| DVector::from_column_slice(&v[..dim]),
        )
    }

    pub fn eval(&self, v: &[f64]) -> f64 {
        (self.value)(v)
    }

    pub fn grad(&self, v: &[f64]) -> DVector<f64> {
        (self.gradient)(v)
    }
}

/// Costs of both players, indexed by [`Player::index`].
#[derive(Clone)]
pub struct CostSet {
    pub running: [RunningCost; 2],
    /// `φ_i`, evaluated at `x(T)`.
    pub terminal: [EndpointCost; 2],
    /// `h_i`, evaluated at `y(0)`.
    pub initial: [EndpointCost; 2],
}

impl CostSet {
    pub fn zero(dims: &Dims) -> Self {
        Self {
            running: [RunningCost::zero(dims), RunningCost::zero(dims)],
            terminal: [EndpointCost::zero(dims.n), EndpointCost::zero(dims.n)],
            initial: [EndpointCost::zero(dims.m), EndpointCost::zero(dims.m)],
        }
    }
}

/// Terminal condition `y(T) = ξ(B(T))`.
#[derive(Clone)]
pub struct TerminalData {
    xi: TerminalFn,
    constant: Option<Vec<f64>>,
}

impl TerminalData {
    pub fn constant(value: Vec<f64>) -> Self {
        let v = value.clone();
        Self {
            xi: Arc::new(move |_| DVector::from_column_slice(&v)),
            constant: Some(value),
        }
    }

    pub fn from_fn<F>(xi: F) -> Self
    where
        F: Fn(&[f64]) -> DVector<f64> + Send + Sync + 'static,
    {
        Self {
            xi: Arc::new(xi),
            constant: None,
        }
    }

    pub fn eval(&self, brownian: &[f64]) -> DVector<f64> {
        (self.xi)(brownian)
    }

    pub fn as_constant(&self) -> Option<&[f64]> {
        self.constant.as_deref()
    }
}

/// A complete game instance.
#[derive(Clone)]
pub struct GameProblem {
    pub dims: Dims,
    pub horizon: f64,
    pub initial: Vec<f64>,
    pub terminal: TerminalData,
    pub coeffs: CoefficientSet,
    pub costs: CostSet,
    pub boxes: [ControlBox; 2],
}

impl GameProblem {
    pub fn new(
        dims: Dims,
        horizon: f64,
        initial: Vec<f64>,
        terminal: TerminalData,
        coeffs: CoefficientSet,
        costs: CostSet,
        boxes: [ControlBox; 2],
    ) -> Result<Self> {
        dims.validate()?;
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Invalid(format!("horizon must be positive, got {horizon}")));
        }
        if initial.len() != dims.n {
            return Err(Error::Dims(format!(
                "initial state has length {}, expected n = {}",
                initial.len(),
                dims.n
            )));
        }
        if let Some(c) = terminal.as_constant() {
            if c.len() != dims.m {
                return Err(Error::Dims(format!(
                    "terminal value has length {}, expected m = {}",
                    c.len(),
                    dims.m
                )));
            }
        }
        for player in Player::BOTH {
            let b = &boxes[player.index()];
            if b.dim() != dims.control_dim(player) {
                return Err(Error::Dims(format!(
                    "control box of player {} has dimension {}, expected {}",
                    player.number(),
                    b.dim(),
                    dims.control_dim(player)
                )));
            }
        }
        let expected = [
            ("b", coeffs.b.out_dim, dims.n),
            ("sigma", coeffs.sigma.out_dim, dims.n * dims.d),
            ("f", coeffs.f.out_dim, dims.m),
        ];
        for (name, found, want) in expected {
            if found != want {
                return Err(Error::Dims(format!(
                    "{name} has output dimension {found}, expected {want}"
                )));
            }
        }
        Ok(Self {
            dims,
            horizon,
            initial,
            terminal,
            coeffs,
            costs,
            boxes,
        })
    }

    pub fn control_box(&self, player: Player) -> &ControlBox {
        &self.boxes[player.index()]
    }

    /// The problem with every coefficient and cost identically zero.
    pub fn zero(dims: Dims, horizon: f64, initial: Vec<f64>, xi: Vec<f64>) -> Result<Self> {
        Self::new(
            dims,
            horizon,
            initial,
            TerminalData::constant(xi),
            CoefficientSet::zero(&dims),
            CostSet::zero(&dims),
            [ControlBox::unbounded(dims.k1), ControlBox::unbounded(dims.k2)],
        )
    }

    /// Replaces the costs of `player` by `c` times themselves.
    pub fn scale_costs(&mut self, player: Player, c: f64) {
        let i = player.index();
        let running = self.costs.running[i].clone();
        let value = running.value.clone();
        let mut scaled = RunningCost {
            value: Arc::new(move |pt| c * value(pt)),
            gradients: running.gradients.clone(),
        };
        for var in Var::ALL {
            let g = running.gradients[var.index()].clone();
            scaled.gradients[var.index()] = Arc::new(move |pt| g(pt) * c);
        }
        self.costs.running[i] = scaled;
        for endpoint in [&mut self.costs.terminal[i], &mut self.costs.initial[i]] {
            let value = endpoint.value.clone();
            let grad = endpoint.gradient.clone();
            *endpoint = EndpointCost {
                value: Arc::new(move |v| c * value(v)),
                gradient: Arc::new(move |v| grad(v) * c),
            };
        }
    }
}

impl fmt::Debug for GameProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GameProblem")
            .field("dims", &self.dims)
            .field("horizon", &self.horizon)
            .field("initial", &self.initial)
            .field("boxes", &self.boxes)
            .finish_non_exhaustive()
    }
}
