//! Enumerates every grid strategy pair of a two-step game and compares the
//! grid equilibrium with the gradient solver.

use fbsde_nash::cli::{build, RunConfig};
use fbsde_nash::drivers::{BinomialLattice, TimeGrid};
use fbsde_nash::equilibrium::{brute_force_nash, solve_nash, OracleOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = RunConfig::from_toml(include_str!("configs/oracle_2step.toml"))?;
    let (problem, backend) = build(&cfg)?;
    let grid1 = cfg.oracle.grid1.clone().unwrap_or_default();
    let grid2 = cfg.oracle.grid2.clone().unwrap_or_default();
    let lattice = BinomialLattice::new(TimeGrid::new(problem.horizon, backend.steps())?);

    let oracle = brute_force_nash(&problem, &lattice, [&grid1, &grid2], &OracleOptions::default())?;
    println!("status        {:?}", oracle.status);
    println!("evaluations   {}", oracle.evaluations);
    println!("grid J1, J2   {:.6}, {:.6}", oracle.costs[0], oracle.costs[1]);
    println!("max gains     {:.1e}, {:.1e}", oracle.max_unilateral_gain[0], oracle.max_unilateral_gain[1]);
    for (i, steps) in oracle.node_controls.iter().enumerate() {
        println!("u{} per step   {:?}", i + 1, steps);
    }

    let report = solve_nash(&problem, &backend, &cfg.fbsde, &cfg.gradient, &cfg.certificate)?;
    println!("solver J1, J2 {:.6}, {:.6}", report.costs[0].value, report.costs[1].value);
    for j in 0..backend.steps() {
        let u1: Vec<f64> = report.controls.u1.level(j).to_vec();
        let u2: Vec<f64> = report.controls.u2.level(j).to_vec();
        println!("step {j}        u1 {u1:.3?}  u2 {u2:.3?}");
    }
    Ok(())
}
