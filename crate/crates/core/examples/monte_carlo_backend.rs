//! Same FBSDE on the lattice and on the regression (Monte Carlo) backend.

use fbsde_nash::drivers::{sample_ensemble, Backend, BinomialLattice, RegressionConfig, TimeGrid};
use fbsde_nash::equilibrium::eval_cost;
use fbsde_nash::fbsde::{solve_fbsde, ControlProcess, FbsdeConfig};
use fbsde_nash::problem::{lq_to_problem, Dims, LqGameSpec, Player, PlayerCostSpec, Var};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dims = Dims::new(1, 1, 1, 1, 1)?;
    let mut spec = LqGameSpec::zero(dims, 1.0, vec![1.0], vec![0.2]);
    spec.drift = spec.drift.set(Var::X, vec![vec![-0.3]]).set(Var::U1, vec![vec![1.0]]);
    spec.diffusion[0] = spec.diffusion[0].clone().set(Var::X, vec![vec![0.2]]).with_constant(vec![0.1]);
    spec.driver = spec.driver.set(Var::X, vec![vec![0.3]]).set(Var::Z, vec![vec![0.1]]);
    spec.players[0] = PlayerCostSpec { q: Some(vec![vec![1.0]]), g: Some(vec![vec![0.5]]), ..Default::default() };
    let problem = lq_to_problem(&spec)?;
    let cfg = FbsdeConfig { max_picard: 100, damping: 1.0, tol: 1e-16 };
    let steps = 16;
    let grid = TimeGrid::new(1.0, steps)?;

    let lattice = Backend::lattice(BinomialLattice::new(grid));
    let u = ControlProcess::constant(&problem, &lattice, &[-0.3], &[0.0]);
    let (traj, _) = solve_fbsde(&problem, &u, &lattice, &cfg)?;
    let j = eval_cost(&problem, &traj, &u, Player::One, &lattice);
    println!("lattice          y(0) = {:.6}  J1 = {:.6}", traj.y.at(0, 0)[0], j.value);

    for paths in [500, 2000, 8000] {
        let mc = Backend::monte_carlo(sample_ensemble(grid, paths, 1, 11)?, RegressionConfig::default())?;
        let u = ControlProcess::constant(&problem, &mc, &[-0.3], &[0.0]);
        let (traj, diag) = solve_fbsde(&problem, &u, &mc, &cfg)?;
        let y0 = mc.expectation(0, traj.y.level(0));
        let j = eval_cost(&problem, &traj, &u, Player::One, &mc);
        println!(
            "mc {paths:>6} paths  y(0) = {y0:.6}  J1 = {:.6} ± {:.1e}  (picard {})",
            j.value, j.std_error, diag.iterations
        );
    }
    Ok(())
}
