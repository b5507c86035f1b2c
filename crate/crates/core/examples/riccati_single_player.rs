//! Single-controller problem: the Riccati feedback against the FBSDE
//! gradient solver.

use fbsde_nash::cli::{build, RunConfig};
use fbsde_nash::equilibrium::{riccati_from_lq, solve_nash, solve_riccati};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = RunConfig::from_toml(include_str!("configs/riccati.toml"))?;
    let (problem, backend) = build(&cfg)?;
    let spec = riccati_from_lq(&cfg.problem)?;
    let sol = solve_riccati(&spec, problem.horizon, backend.steps(), 20)?;
    println!("riccati value  {:.6}", sol.value(&problem.initial));

    let report = solve_nash(&problem, &backend, &cfg.fbsde, &cfg.gradient, &cfg.certificate)?;
    println!("solver J1      {:.6}", report.costs[0].value);
    println!("certificate    {}", report.certificate.verdict.label());

    // Open-loop control against the feedback law at the lattice nodes.
    let grid = *backend.grid();
    let mut worst = 0.0f64;
    for j in 0..backend.steps() {
        for s in 0..backend.scenarios(j) {
            let x = report.state.traj.x.at(j, s);
            let fb = sol.control(grid.t(j), x)[0];
            worst = worst.max((report.controls.u1.at(j, s)[0] - fb).abs());
        }
    }
    println!("max |u - u_fb| {worst:.3e}");
    Ok(())
}
