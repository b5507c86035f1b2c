//! Finite-difference checks of user-supplied derivatives.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{GameProblem, Player, Point, Var};
use crate::error::{Error, Result};

/// One named argument block of a [`FnBundle`] with its sampling range.
#[derive(Clone, Debug)]
pub struct InputBlock {
    pub name: String,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl InputBlock {
    pub fn new(name: impl Into<String>, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            lower,
            upper,
        }
    }

    pub fn cube(name: impl Into<String>, dim: usize, radius: f64) -> Self {
        Self::new(name, vec![-radius; dim], vec![radius; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }
}

type BundleValue<'a> = Box<dyn Fn(f64, &[f64]) -> Vec<f64> + Sync + 'a>;
type BundlePartial<'a> = Box<dyn Fn(f64, &[f64]) -> DMatrix<f64> + Sync + 'a>;

/// A function of `(t, v)`, `v` the concatenation of the input blocks, with
/// one claimed partial derivative per block.
pub struct FnBundle<'a> {
    pub name: String,
    pub out_dim: usize,
    pub horizon: f64,
    pub blocks: Vec<InputBlock>,
    pub value: BundleValue<'a>,
    pub partials: Vec<BundlePartial<'a>>,
}

impl<'a> FnBundle<'a> {
    pub fn new<F>(name: impl Into<String>, out_dim: usize, value: F) -> Self
    where
        F: Fn(f64, &[f64]) -> Vec<f64> + Sync + 'a,
    {
        Self {
            name: name.into(),
            out_dim,
            horizon: 1.0,
            blocks: Vec::new(),
            value: Box::new(value),
            partials: Vec::new(),
        }
    }

    pub fn block<J>(mut self, block: InputBlock, partial: J) -> Self
    where
        J: Fn(f64, &[f64]) -> DMatrix<f64> + Sync + 'a,
    {
        self.blocks.push(block);
        self.partials.push(Box::new(partial));
        self
    }

    pub fn horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    fn input_dim(&self) -> usize {
        self.blocks.iter().map(InputBlock::dim).sum()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DerivativeCheckOptions {
    pub samples: usize,
    pub seed: u64,
    /// Central-difference step.
    pub step: f64,
    pub rel_tol: f64,
}

impl Default for DerivativeCheckOptions {
    fn default() -> Self {
        Self {
            samples: 100,
            seed: 0,
            step: 1e-4,
            rel_tol: 1e-5,
        }
    }
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct PartialReport {
    pub name: String,
    /// Max over samples and entries of `|fd - claimed| / max(1, |fd|, |claimed|)`.
    pub max_rel_error: f64,
    pub worst_sample: Option<usize>,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct NonFiniteSample {
    pub sample: usize,
    pub t: f64,
    pub point: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct DerivativeReport {
    pub function: String,
    pub samples: usize,
    pub partials: Vec<PartialReport>,
    pub non_finite: Option<NonFiniteSample>,
    pub max_abs_value: f64,
    /// Largest claimed-derivative entry over the samples.
    pub max_derivative: f64,
    /// Same, with every sample point scaled by 1/10.
    pub max_derivative_inner: f64,
    pub passed: bool,
}

impl DerivativeReport {
    pub fn max_rel_error(&self) -> f64 {
        self.partials.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn partial(&self, name: &str) -> Option<&PartialReport> {
        self.partials.iter().find(|p| p.name == name)
    }
}

fn rel_error(fd: f64, claimed: f64) -> f64 {
    (fd - claimed).abs() / 1f64.max(fd.abs()).max(claimed.abs())
}

/// Compares every claimed partial of `bundle` with central finite differences
/// at `opts.samples` points drawn uniformly from the block ranges.
/// Deterministic given the seed. A partial of the wrong shape is a hard error.
pub fn check_derivatives(bundle: &FnBundle<'_>, opts: &DerivativeCheckOptions) -> Result<DerivativeReport> {
    if opts.samples == 0 {
        return Err(Error::Invalid("derivative check needs at least one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let dim = bundle.input_dim();
    let mut partials: Vec<PartialReport> = bundle
        .blocks
        .iter()
        .map(|b| PartialReport {
            name: format!("{}_{}", bundle.name, b.name),
            max_rel_error: 0.0,
            worst_sample: None,
            passed: true,
        })
        .collect();
    let mut non_finite = None;
    let mut max_abs_value = 0.0_f64;
    let mut max_derivative = 0.0_f64;
    let mut max_derivative_inner = 0.0_f64;
    let h = opts.step;

    for sample in 0..opts.samples {
        let t = rng.gen::<f64>() * bundle.horizon;
        let mut v = Vec::with_capacity(dim);
        for block in &bundle.blocks {
            for (lo, hi) in block.lower.iter().zip(&block.upper) {
                v.push(if lo == hi { *lo } else { rng.gen_range(*lo..*hi) });
            }
        }
        let value = (bundle.value)(t, &v);
        if value.iter().any(|a| !a.is_finite()) {
            if non_finite.is_none() {
                non_finite = Some(NonFiniteSample { sample, t, point: v.clone() });
            }
            continue;
        }
        max_abs_value = value.iter().fold(max_abs_value, |m, a| m.max(a.abs()));

        let inner: Vec<f64> = v.iter().map(|a| 0.1 * a).collect();
        let mut offset = 0;
        for (b, block) in bundle.blocks.iter().enumerate() {
            let jac = (bundle.partials[b])(t, &v);
            let expected = (bundle.out_dim, block.dim());
            if jac.shape() != expected {
                return Err(Error::Shape {
                    name: partials[b].name.clone(),
                    expected,
                    found: jac.shape(),
                });
            }
            max_derivative = max_derivative.max(jac.amax());
            max_derivative_inner = max_derivative_inner.max((bundle.partials[b])(t, &inner).amax());
            for c in 0..block.dim() {
                let mut plus = v.clone();
                let mut minus = v.clone();
                plus[offset + c] += h;
                minus[offset + c] -= h;
                let fp = (bundle.value)(t, &plus);
                let fm = (bundle.value)(t, &minus);
                for r in 0..bundle.out_dim {
                    let fd = (fp[r] - fm[r]) / (2.0 * h);
                    let err = rel_error(fd, jac[(r, c)]);
                    let report = &mut partials[b];
                    if !err.is_finite() || err > report.max_rel_error {
                        report.max_rel_error = if err.is_finite() { err } else { f64::INFINITY };
                        report.worst_sample = Some(sample);
                    }
                }
            }
            offset += block.dim();
        }
    }
    for p in &mut partials {
        p.passed = p.max_rel_error <= opts.rel_tol;
    }
    let passed = non_finite.is_none() && partials.iter().all(|p| p.passed);
    Ok(DerivativeReport {
        function: bundle.name.clone(),
        samples: opts.samples,
        partials,
        non_finite,
        max_abs_value,
        max_derivative,
        max_derivative_inner,
        passed,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub radius: f64,
    pub reports: Vec<DerivativeReport>,
    pub warnings: Vec<String>,
    pub max_rel_error: f64,
    pub passed: bool,
}

impl ValidationReport {
    pub fn function(&self, name: &str) -> Option<&DerivativeReport> {
        self.reports.iter().find(|r| r.function == name)
    }

    pub fn partial(&self, name: &str) -> Option<&PartialReport> {
        self.reports.iter().find_map(|r| r.partial(name))
    }
}

fn state_blocks(p: &GameProblem, radius: f64) -> Vec<InputBlock> {
    Var::ALL
        .iter()
        .map(|&var| match var {
            Var::U1 | Var::U2 => {
                let player = if var == Var::U1 { Player::One } else { Player::Two };
                let b = p.control_box(player).truncated(radius);
                InputBlock::new(var.name(), b.lower().to_vec(), b.upper().to_vec())
            }
            _ => InputBlock::cube(var.name(), p.dims.var_dim(var), radius),
        })
        .collect()
}

fn vector_bundle<'a>(
    p: &'a GameProblem,
    name: &str,
    map: &'a super::VectorMap,
    radius: f64,
) -> FnBundle<'a> {
    let dims = p.dims;
    let mut bundle = FnBundle::new(name, map.out_dim, move |t, v| {
        map.eval(&Point::from_concat(t, &dims, v)).as_slice().to_vec()
    })
    .horizon(p.horizon);
    for (var, block) in Var::ALL.iter().zip(state_blocks(p, radius)) {
        let var = *var;
        bundle = bundle.block(block, move |t, v| map.jacobian(var, &Point::from_concat(t, &dims, v)));
    }
    bundle
}

fn running_bundle(p: &GameProblem, player: Player, radius: f64) -> FnBundle<'_> {
    let dims = p.dims;
    let cost = &p.costs.running[player.index()];
    let mut bundle = FnBundle::new(format!("l{}", player.number()), 1, move |t, v| {
        vec![cost.eval(&Point::from_concat(t, &dims, v))]
    })
    .horizon(p.horizon);
    for (var, block) in Var::ALL.iter().zip(state_blocks(p, radius)) {
        let var = *var;
        bundle = bundle.block(block, move |t, v| {
            let g = cost.gradient(var, &Point::from_concat(t, &dims, v));
            DMatrix::from_row_slice(1, g.len(), g.as_slice())
        });
    }
    bundle
}

fn endpoint_bundle<'a>(
    name: String,
    arg: &str,
    dim: usize,
    cost: &'a super::EndpointCost,
    radius: f64,
) -> FnBundle<'a> {
    FnBundle::new(name, 1, move |_, v| vec![cost.eval(v)])
        .block(InputBlock::cube(arg, dim, radius), move |_, v| {
            let g = cost.grad(v);
            DMatrix::from_row_slice(1, g.len(), g.as_slice())
        })
}

/// Spot-checks every derivative of `p` against central finite differences
/// at points with all coordinates in `[-radius, radius]` (controls further
/// restricted to their boxes).
///
/// Warnings are informational: large sampling radii, and derivatives of
/// `b`, `σ`, `f` that grow between the inner and outer sample shells.
pub fn validate_problem(p: &GameProblem, opts: &DerivativeCheckOptions, radius: f64) -> Result<ValidationReport> {
    let dims = p.dims;
    let mut bundles = vec![
        vector_bundle(p, "b", &p.coeffs.b, radius),
        vector_bundle(p, "sigma", &p.coeffs.sigma, radius),
        vector_bundle(p, "f", &p.coeffs.f, radius),
    ];
    for player in Player::BOTH {
        let i = player.index();
        bundles.push(running_bundle(p, player, radius));
        bundles.push(endpoint_bundle(format!("phi{}", player.number()), "x", dims.n, &p.costs.terminal[i], radius));
        bundles.push(endpoint_bundle(format!("h{}", player.number()), "y", dims.m, &p.costs.initial[i], radius));
    }
    let mut reports = Vec::with_capacity(bundles.len());
    for (k, bundle) in bundles.iter().enumerate() {
        let o = DerivativeCheckOptions {
            seed: opts.seed.wrapping_add(k as u64),
            ..opts.clone()
        };
        reports.push(check_derivatives(bundle, &o)?);
    }

    let mut warnings = Vec::new();
    if radius > 100.0 {
        warnings.push(format!(
            "sampling radius {radius} is large: central differences with step {} lose accuracy to cancellation",
            opts.step
        ));
    }
    for r in reports.iter().take(3) {
        let inner = r.max_derivative_inner;
        if r.max_derivative > 10.0 * inner.max(1e-300) && r.max_derivative > 1e-12 {
            warnings.push(format!(
                "derivatives of {} grow with the argument ({:.3e} at radius {radius} vs {:.3e} at radius {}): bounded derivatives not supported by samples",
                r.function,
                r.max_derivative,
                inner,
                radius / 10.0
            ));
        }
    }
    for r in &reports {
        if let Some(nf) = &r.non_finite {
            warnings.push(format!("{} is non-finite at sample {} (t = {})", r.function, nf.sample, nf.t));
        }
    }
    let max_rel_error = reports.iter().map(DerivativeReport::max_rel_error).fold(0.0, f64::max);
    let passed = reports.iter().all(|r| r.passed);
    Ok(ValidationReport {
        radius,
        reports,
        warnings,
        max_rel_error,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{CoefficientSet, CostSet, ControlBox, Dims, TerminalData, VectorMap};
    use nalgebra::DVector;

    fn square_bundle<'a>(claimed: impl Fn(f64) -> f64 + Sync + 'a) -> FnBundle<'a> {
        FnBundle::new("f", 1, |_, v| vec![v[0] * v[0]]).block(InputBlock::cube("x", 1, 3.0), move |_, v| {
            DMatrix::from_element(1, 1, claimed(v[0]))
        })
    }

    #[test]
    fn square_with_correct_derivative() {
        let r = check_derivatives(&square_bundle(|x| 2.0 * x), &Default::default()).unwrap();
        assert!(r.passed);
        assert!(r.max_rel_error() < 1e-7);
    }

    #[test]
    fn square_with_half_derivative() {
        // fd of x² at x = 2 is 4; claimed 2 → |4 - 2| / 4
        let bundle = FnBundle::new("f", 1, |_, v| vec![v[0] * v[0]])
            .block(InputBlock::new("x", vec![2.0], vec![2.0]), |_, v| DMatrix::from_element(1, 1, v[0]));
        let r = check_derivatives(&bundle, &Default::default()).unwrap();
        assert!(!r.passed);
        assert!((r.max_rel_error() - 0.5).abs() < 1e-8, "{}", r.max_rel_error());
    }

    #[test]
    fn constant_function_is_exact() {
        let bundle = FnBundle::new("c", 2, |_, _| vec![3.0, -1.0])
            .block(InputBlock::cube("x", 3, 5.0), |_, _| DMatrix::zeros(2, 3));
        let r = check_derivatives(&bundle, &Default::default()).unwrap();
        assert!(r.passed);
        assert_eq!(r.max_rel_error(), 0.0);
    }

    #[test]
    fn non_finite_value_is_reported() {
        let bundle = FnBundle::new("log", 1, |_, v| vec![v[0].ln()])
            .block(InputBlock::cube("x", 1, 1.0), |_, v| DMatrix::from_element(1, 1, 1.0 / v[0]));
        let r = check_derivatives(&bundle, &Default::default()).unwrap();
        assert!(!r.passed);
        let nf = r.non_finite.unwrap();
        assert!(nf.point[0] < 0.0);
    }

    #[test]
    fn deterministic_given_seed() {
        let a = check_derivatives(&square_bundle(|x| 1.9 * x), &Default::default()).unwrap();
        let b = check_derivatives(&square_bundle(|x| 1.9 * x), &Default::default()).unwrap();
        assert_eq!(a, b);
    }

    fn cubic_problem(claimed: fn(f64) -> f64) -> GameProblem {
        let dims = Dims::new(1, 1, 1, 0, 0).unwrap();
        let mut coeffs = CoefficientSet::zero(&dims);
        coeffs.b = VectorMap::new(1, &dims, |pt| DVector::from_element(1, pt.x[0].powi(3)))
            .with_jacobian(Var::X, move |pt| DMatrix::from_element(1, 1, claimed(pt.x[0])));
        GameProblem::new(
            dims,
            1.0,
            vec![0.0],
            TerminalData::constant(vec![0.0]),
            coeffs,
            CostSet::zero(&dims),
            [ControlBox::unbounded(0), ControlBox::unbounded(0)],
        )
        .unwrap()
    }

    #[test]
    fn cubic_drift() {
        let opts = DerivativeCheckOptions::default();
        let good = validate_problem(&cubic_problem(|x| 3.0 * x * x), &opts, 2.0).unwrap();
        assert!(good.passed, "{:?}", good.partial("b_x"));
        // growing derivative is flagged but is not a failure
        assert!(good.warnings.iter().any(|w| w.contains("derivatives of b grow")));

        let bad = validate_problem(&cubic_problem(|x| 2.0 * x * x), &opts, 2.0).unwrap();
        assert!(!bad.passed);
        let b_x = bad.partial("b_x").unwrap();
        assert!(!b_x.passed);

        // Oracle: at the worst sample the error is x²/max(1, 3x²) from the
        // central difference of x³; with |x| up to 2 it reaches ≈ 1/3.
        assert!(b_x.max_rel_error > 0.3 && b_x.max_rel_error < 0.34, "{}", b_x.max_rel_error);
    }

    fn misshaped(var: Var, rows: usize, cols: usize) -> GameProblem {
        let dims = Dims::new(2, 1, 1, 0, 0).unwrap();
        let mut coeffs = CoefficientSet::zero(&dims);
        coeffs.b = VectorMap::zero(2, &dims).with_jacobian(var, move |_| DMatrix::zeros(rows, cols));
        GameProblem::new(
            dims,
            1.0,
            vec![0.0, 0.0],
            TerminalData::constant(vec![0.0]),
            coeffs,
            CostSet::zero(&dims),
            [ControlBox::unbounded(0), ControlBox::unbounded(0)],
        )
        .unwrap()
    }

    #[test]
    fn transposed_jacobian_is_a_shape_error() {
        // b_y is n×m = 2×1; its transpose is 1×2
        match validate_problem(&misshaped(Var::Y, 1, 2), &Default::default(), 1.0) {
            Err(Error::Shape { name, expected, found }) => {
                assert_eq!(name, "b_y");
                assert_eq!(expected, (2, 1));
                assert_eq!(found, (1, 2));
            }
            other => panic!("unexpected {other:?}"),
        }
        // b_x given with the n×m shape of b_y
        match validate_problem(&misshaped(Var::X, 2, 1), &Default::default(), 1.0) {
            Err(Error::Shape { name, expected, .. }) => {
                assert_eq!(name, "b_x");
                assert_eq!(expected, (2, 2));
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
