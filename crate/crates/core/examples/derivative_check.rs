//! Finite-difference validation of a problem's derivatives, and of a
//! hand-written function whose claimed derivative is wrong.

use fbsde_nash::cli::{build, RunConfig};
use fbsde_nash::problem::{check_derivatives, validate_problem, DerivativeCheckOptions, FnBundle, InputBlock};
use nalgebra::DMatrix;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = RunConfig::from_toml(include_str!("configs/lq_game.toml"))?;
    let (problem, _) = build(&cfg)?;
    let opts = DerivativeCheckOptions::default();
    let report = validate_problem(&problem, &opts, 10.0)?;
    println!("lq game: passed = {}, max rel error = {:.2e}", report.passed, report.max_rel_error);

    // f(x) = sin(x0) x1, with the x1-partial off by a factor of two.
    let bundle = FnBundle::new("f", 1, |_, v| vec![v[0].sin() * v[1]]).block(InputBlock::cube("x", 2, 3.0), |_, v| {
        DMatrix::from_row_slice(1, 2, &[v[0].cos() * v[1], 2.0 * v[0].sin()])
    });
    let r = check_derivatives(&bundle, &opts)?;
    for p in &r.partials {
        println!("{:>8}: max rel error {:.2e}  {}", p.name, p.max_rel_error, if p.passed { "ok" } else { "FAIL" });
    }
    Ok(())
}
