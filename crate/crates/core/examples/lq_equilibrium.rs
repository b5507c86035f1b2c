//! Solves the coupled two-player LQ game from `configs/lq_game.toml` and
//! prints the certificate.

use fbsde_nash::cli::{build, RunConfig};
use fbsde_nash::equilibrium::solve_nash;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = RunConfig::from_toml(include_str!("configs/lq_game.toml"))?;
    let (problem, backend) = build(&cfg)?;
    let report = solve_nash(&problem, &backend, &cfg.fbsde, &cfg.gradient, &cfg.certificate)?;

    println!("iterations   {}", report.iterations);
    println!("converged    {}", report.converged);
    println!("J1, J2       {:.8}, {:.8}", report.costs[0].value, report.costs[1].value);
    println!("rho1, rho2   {:.2e}, {:.2e}", report.rho[0], report.rho[1]);
    println!("certificate  {}", report.certificate.verdict.label());

    let u1 = report.controls.u1.at(0, 0)[0];
    let u2 = report.controls.u2.at(0, 0)[0];
    println!("u(0)         ({u1:.6}, {u2:.6})");
    Ok(())
}
