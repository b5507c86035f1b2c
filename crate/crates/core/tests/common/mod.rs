#![allow(dead_code)]

use fbsde_nash::drivers::{Backend, BinomialLattice, TimeGrid};
use fbsde_nash::problem::{AffineMapSpec, ControlBoxSpec, Dims, LqGameSpec, Matrix, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn lattice(horizon: f64, steps: usize) -> Backend {
    Backend::lattice(BinomialLattice::new(TimeGrid::new(horizon, steps).unwrap()))
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    (0..rows).map(|_| (0..cols).map(|_| rng.gen_range(-scale..scale)).collect()).collect()
}

fn random_affine(rng: &mut ChaCha8Rng, rows: usize, dims: &Dims, scale: f64) -> AffineMapSpec {
    let mut a = AffineMapSpec::default();
    for var in Var::ALL {
        a = a.set(var, random_matrix(rng, rows, dims.var_dim(var), scale));
    }
    a.with_constant((0..rows).map(|_| rng.gen_range(-scale..scale)).collect())
}

/// `A'A + shift·I`, symmetric positive semidefinite for `shift ≥ 0`.
fn random_gram(rng: &mut ChaCha8Rng, size: usize, shift: f64) -> Matrix {
    let a = random_matrix(rng, size, size, 1.0);
    (0..size)
        .map(|i| {
            (0..size)
                .map(|j| (0..size).map(|r| a[r][i] * a[r][j]).sum::<f64>() + if i == j { shift } else { 0.0 })
                .collect()
        })
        .collect()
}

/// Fully populated LQ game with every entry of magnitude at most `scale`
/// (cost weights are Gram matrices, hence convex).
pub fn random_lq(seed: u64, dims: Dims, scale: f64) -> LqGameSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = LqGameSpec::zero(
        dims,
        rng.gen_range(0.5..2.0),
        (0..dims.n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        (0..dims.m).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    );
    s.drift = random_affine(&mut rng, dims.n, &dims, scale);
    s.diffusion = (0..dims.d).map(|_| random_affine(&mut rng, dims.n, &dims, scale)).collect();
    s.driver = random_affine(&mut rng, dims.m, &dims, scale);
    for (i, pc) in s.players.iter_mut().enumerate() {
        let (own, other) = if i == 0 { (dims.k1, dims.k2) } else { (dims.k2, dims.k1) };
        pc.q = Some(random_gram(&mut rng, dims.n, 0.0));
        pc.r = Some(random_gram(&mut rng, dims.m, 0.0));
        pc.s = rng.gen_range(0.0..1.0);
        pc.n = Some(random_gram(&mut rng, own, 0.5));
        pc.m = Some(random_gram(&mut rng, other, 0.0));
        pc.g = Some(random_gram(&mut rng, dims.n, 0.0));
        pc.h = Some(random_gram(&mut rng, dims.m, 0.0));
    }
    s
}

pub fn random_dims(seed: u64) -> Dims {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    Dims::new(
        rng.gen_range(1..=3),
        rng.gen_range(1..=3),
        rng.gen_range(1..=2),
        rng.gen_range(0..=2),
        rng.gen_range(0..=2),
    )
    .unwrap()
}

/// Coupled, convex scalar game with controls in `[-2, 2]`.
pub fn coupled_game() -> LqGameSpec {
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
