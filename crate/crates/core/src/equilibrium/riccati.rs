//! Riccati oracle for the single-controller LQ problem
//!
//! ```text
//! dx = (A x + B u) dt + Σ_c (C_c x + D_c u) dB_c,
//! J  = E[∫ ½(x'Qx + u'Nu) dt + ½ x(T)'G x(T)]
//! ```
//!
//! with optimal feedback `u = -K(t) x`, where `P` solves
//!
//! ```text
//! -P' = A'P + PA + Σ C_c'PC_c + Q - (PB + Σ C_c'PD_c) (N + Σ D_c'PD_c)⁻¹ (B'P + Σ D_c'PC_c),
//! P(T) = G,   K = (N + Σ D_c'PD_c)⁻¹ (B'P + Σ D_c'PC_c).
//! ```

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::problem::LqGameSpec;

#[derive(Clone, Debug, PartialEq)]
pub struct RiccatiSpec {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// One `n×n` block per Brownian column.
    pub c: Vec<DMatrix<f64>>,
    /// One `n×k` block per Brownian column.
    pub d: Vec<DMatrix<f64>>,
    pub q: DMatrix<f64>,
    pub n: DMatrix<f64>,
    pub g: DMatrix<f64>,
}

impl RiccatiSpec {
    fn validate(&self) -> Result<()> {
        let n = self.a.nrows();
        let k = self.b.ncols();
        let square = |m: &DMatrix<f64>, size: usize| m.nrows() == size && m.ncols() == size;
        let ok = square(&self.a, n)
            && self.b.nrows() == n
            && self.c.len() == self.d.len()
            && self.c.iter().all(|m| square(m, n))
            && self.d.iter().all(|m| m.nrows() == n && m.ncols() == k)
            && square(&self.q, n)
            && square(&self.n, k)
            && square(&self.g, n);
        if ok {
            Ok(())
        } else {
            Err(Error::Dims("Riccati blocks have inconsistent shapes".into()))
        }
    }
}

fn block(m: &Option<Vec<Vec<f64>>>, rows: usize, cols: usize, name: &str) -> Result<DMatrix<f64>> {
    match m {
        None => Ok(DMatrix::zeros(rows, cols)),
        Some(v) if rows * cols == 0 => Ok(DMatrix::zeros(rows, cols)).and_then(|z| {
            if v.iter().all(|r| r.is_empty()) {
                Ok(z)
            } else {
                Err(Error::Shape { name: name.into(), expected: (rows, cols), found: (v.len(), v[0].len()) })
            }
        }),
        Some(v) => {
            if v.len() != rows || v.iter().any(|r| r.len() != cols) {
                return Err(Error::Shape {
                    name: name.into(),
                    expected: (rows, cols),
                    found: (v.len(), v.first().map_or(0, Vec::len)),
                });
            }
            Ok(DMatrix::from_fn(rows, cols, |i, j| v[i][j]))
        }
    }
}

fn is_zero(m: &Option<Vec<Vec<f64>>>) -> bool {
    m.as_ref().map_or(true, |m| m.iter().flatten().all(|v| *v == 0.0))
}

/// Player 1's control problem of an LQ game in which player 2 is inert and
/// `x` does not see `(y, z)`: the drift and diffusion have no `y`, `z`, `u2`
/// blocks or constants, and the driver does not depend on `x` or `u1`.
pub fn riccati_from_lq(spec: &LqGameSpec) -> Result<RiccatiSpec> {
    let dims = spec.dims();
    dims.validate()?;
    let (n, k) = (dims.n, dims.k1);
    let maps = std::iter::once(&spec.drift).chain(&spec.diffusion);
    for m in maps {
        if !(is_zero(&m.y) && is_zero(&m.z) && is_zero(&m.u2))
            || m.constant.as_ref().map_or(false, |c| c.iter().any(|v| *v != 0.0))
        {
            return Err(Error::Invalid(
                "forward coefficients must not depend on y, z or u2 and must have no constant".into(),
            ));
        }
    }
    if !(is_zero(&spec.driver.x) && is_zero(&spec.driver.u1)) {
        return Err(Error::Invalid("the driver must not depend on x or u1".into()));
    }
    let cost = &spec.players[0];
    if !is_zero(&cost.m) {
        return Err(Error::Invalid("player 1's cost must not depend on u2".into()));
    }
    if spec.diffusion.len() > dims.d {
        return Err(Error::Dims("more diffusion columns than Brownian dimensions".into()));
    }
    let mut c = Vec::with_capacity(dims.d);
    let mut d = Vec::with_capacity(dims.d);
    for col in 0..dims.d {
        match spec.diffusion.get(col) {
            Some(m) => {
                c.push(block(&m.x, n, n, "diffusion.x")?);
                d.push(block(&m.u1, n, k, "diffusion.u1")?);
            }
            None => {
                c.push(DMatrix::zeros(n, n));
                d.push(DMatrix::zeros(n, k));
            }
        }
    }
    let r = RiccatiSpec {
        a: block(&spec.drift.x, n, n, "drift.x")?,
        b: block(&spec.drift.u1, n, k, "drift.u1")?,
        c,
        d,
        q: block(&cost.q, n, n, "Q")?,
        n: block(&cost.n, k, k, "N")?,
        g: block(&cost.g, n, n, "G")?,
    };
    r.validate()?;
    Ok(r)
}

#[derive(Clone, Debug)]
pub struct RiccatiSolution {
    pub times: Vec<f64>,
    pub p: Vec<DMatrix<f64>>,
    pub gain: Vec<DMatrix<f64>>,
}

impl RiccatiSolution {
    /// `K(t)` by linear interpolation between knots.
    pub fn gain_at(&self, t: f64) -> DMatrix<f64> {
        let last = self.times.len() - 1;
        let (t0, t1) = (self.times[0], self.times[last]);
        let pos = ((t - t0) / (t1 - t0) * last as f64).clamp(0.0, last as f64);
        let i = (pos.floor() as usize).min(last.saturating_sub(1));
        if last == 0 {
            return self.gain[0].clone();
        }
        let w = pos - i as f64;
        &self.gain[i] * (1.0 - w) + &self.gain[i + 1] * w
    }

    /// Optimal feedback `-K(t) x`.
    pub fn control(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let k = self.gain_at(t);
        let u = -(k * nalgebra::DVector::from_column_slice(x));
        u.as_slice().to_vec()
    }

    /// `½ x'P(0)x`, the optimal cost from `x` at time 0.
    pub fn value(&self, x: &[f64]) -> f64 {
        let x = nalgebra::DVector::from_column_slice(x);
        0.5 * x.dot(&(&self.p[0] * &x))
    }
}

fn gain(spec: &RiccatiSpec, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut lhs = spec.n.clone();
    let mut rhs = spec.b.transpose() * p;
    for (c, d) in spec.c.iter().zip(&spec.d) {
        lhs += d.transpose() * p * d;
        rhs += d.transpose() * p * c;
    }
    let lhs = (&lhs + lhs.transpose()) * 0.5;
    match lhs.clone().cholesky() {
        Some(ch) => Ok(ch.solve(&rhs)),
        None if lhs.nrows() == 0 => Ok(rhs),
        None => Err(Error::Invalid("N + Σ D'PD is not positive definite".into())),
    }
}

/// `Ṗ` as a function of `P`.
fn derivative(spec: &RiccatiSpec, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = gain(spec, p)?;
    let mut out = spec.a.transpose() * p + p * &spec.a + &spec.q;
    let mut cross = p * &spec.b;
    for (c, d) in spec.c.iter().zip(&spec.d) {
        out += c.transpose() * p * c;
        cross += c.transpose() * p * d;
    }
    out -= cross * k;
    Ok(-out)
}

/// Integrates the Riccati equation backward from `P(T) = G` with classical
/// RK4, `substeps` stages per output interval.
pub fn solve_riccati(spec: &RiccatiSpec, horizon: f64, steps: usize, substeps: usize) -> Result<RiccatiSolution> {
    spec.validate()?;
    if !(horizon > 0.0 && horizon.is_finite()) || steps == 0 || substeps == 0 {
        return Err(Error::Invalid("Riccati grid needs a positive horizon and step counts".into()));
    }
    let h = horizon / (steps * substeps) as f64;
    let mut p = vec![DMatrix::zeros(0, 0); steps + 1];
    let mut cur = (&spec.g + spec.g.transpose()) * 0.5;
    p[steps] = cur.clone();
    for i in (0..steps).rev() {
        for _ in 0..substeps {
            // backward in time: P(t - h) = P(t) - h·Ṗ
            let k1 = derivative(spec, &cur)?;
            let k2 = derivative(spec, &(&cur - &k1 * (0.5 * h)))?;
            let k3 = derivative(spec, &(&cur - &k2 * (0.5 * h)))?;
            let k4 = derivative(spec, &(&cur - &k3 * h))?;
            cur -= (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            cur = (&cur + cur.transpose()) * 0.5;
        }
        if cur.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("Riccati solution blew up".into()));
        }
        p[i] = cur.clone();
    }
    let gain = p.iter().map(|pm| gain(spec, pm)).collect::<Result<_>>()?;
    Ok(RiccatiSolution {
        times: (0..=steps).map(|i| horizon * i as f64 / steps as f64).collect(),
        p,
        gain,
    })
}
