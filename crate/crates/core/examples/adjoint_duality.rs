//! The discrete duality residual between two controls shrinks linearly in
//! the step size.

use fbsde_nash::adjoint::{duality_residual, solve_adjoint};
use fbsde_nash::cli::{build, RunConfig};
use fbsde_nash::drivers::{Backend, BinomialLattice, TimeGrid};
use fbsde_nash::fbsde::{solve_fbsde, ControlProcess, FbsdeConfig};
use fbsde_nash::problem::Player;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = RunConfig::from_toml(include_str!("configs/lq_game.toml"))?;
    let (problem, _) = build(&cfg)?;
    let fb = FbsdeConfig { max_picard: 200, damping: 1.0, tol: 1e-26 };

    let mut last: Option<f64> = None;
    println!("{:>6} {:>12} {:>8}", "steps", "residual", "ratio");
    for steps in [8, 16, 32, 64, 128] {
        let backend = Backend::lattice(BinomialLattice::new(TimeGrid::new(problem.horizon, steps)?));
        let u_bar = ControlProcess::constant(&problem, &backend, &[0.1], &[-0.2]);
        let u = ControlProcess::from_fn(&problem, &backend, |player, _, t, b| match player {
            Player::One => vec![0.1 + 0.5 * t + 0.2 * b[0]],
            Player::Two => vec![-0.2 + 0.3 * (1.0 - t)],
        });
        let (bar, _) = solve_fbsde(&problem, &u_bar, &backend, &fb)?;
        let (traj, _) = solve_fbsde(&problem, &u, &backend, &fb)?;
        let (adj, _) = solve_adjoint(&problem, &bar, &u_bar, Player::One, &backend, &fb)?;
        let r = duality_residual(&problem, &traj, &bar, &adj, &u, &u_bar, &backend)?.residual.abs();
        match last {
            Some(prev) => println!("{steps:>6} {r:>12.4e} {:>8.3}", prev / r),
            None => println!("{steps:>6} {r:>12.4e}"),
        }
        last = Some(r);
    }
    Ok(())
}
