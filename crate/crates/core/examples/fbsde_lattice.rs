//! Solves a linear FBSDE under fixed controls on refining lattices.
//!
//! With `dx = (u1 - 0.5 x) dt + 0.3 dB`, `dy = -(x - 0.2 y) dt + z dB`,
//! `y(T) = 0`, `y(0)` converges as the grid is refined.

use fbsde_nash::drivers::{Backend, BinomialLattice, TimeGrid};
use fbsde_nash::fbsde::{dynamics_residuals, solve_fbsde, ControlProcess, FbsdeConfig};
use fbsde_nash::problem::{lq_to_problem, Dims, LqGameSpec, Var};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dims = Dims::new(1, 1, 1, 1, 0)?;
    let mut spec = LqGameSpec::zero(dims, 1.0, vec![1.0], vec![0.0]);
    spec.drift = spec.drift.set(Var::X, vec![vec![-0.5]]).set(Var::U1, vec![vec![1.0]]);
    spec.diffusion[0] = spec.diffusion[0].clone().with_constant(vec![0.3]);
    spec.driver = spec.driver.set(Var::X, vec![vec![1.0]]).set(Var::Y, vec![vec![-0.2]]);
    let problem = lq_to_problem(&spec)?;
    let cfg = FbsdeConfig { max_picard: 200, damping: 1.0, tol: 1e-24 };

    println!("{:>6} {:>16} {:>10} {:>10}", "steps", "y(0)", "picard", "residual");
    for steps in [8, 16, 32, 64, 128] {
        let backend = Backend::lattice(BinomialLattice::new(TimeGrid::new(1.0, steps)?));
        let u = ControlProcess::constant(&problem, &backend, &[0.4], &[]);
        let (traj, diag) = solve_fbsde(&problem, &u, &backend, &cfg)?;
        let (_, ry) = dynamics_residuals(&problem, &u, &traj, &backend)?;
        println!("{steps:>6} {:>16.10} {:>10} {:>10.2e}", traj.y.at(0, 0)[0], diag.iterations, ry);
    }
    Ok(())
}
