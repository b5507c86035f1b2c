//! Open-loop Nash equilibria of two-player stochastic differential games
//! whose state follows a fully coupled forward-backward SDE
//!
//! ```text
//! dx = b(t, x, y, z, u1, u2) dt + σ(t, x, y, z, u1, u2) dB,   x(0) = a
//! dy = -f(t, x, y, z, u1, u2) dt + z dB,                      y(T) = ξ
//! ```
//!
//! with costs `J_i = E[∫ l_i dt + φ_i(x(T)) + h_i(y(0))]`.
//!
//! The pipeline is: build a [`GameProblem`](problem::GameProblem) (by hand or
//! from an [`LqGameSpec`](problem::LqGameSpec)), pick a [`Backend`](drivers::Backend),
//! solve the state with [`fbsde::solve_fbsde`], the adjoints with
//! [`adjoint::solve_adjoint`], and search for equilibria with
//! [`equilibrium::solve_nash`]. Candidates are certified by
//! [`hamiltonian::build_certificate`] and cross-checked by the oracles in
//! [`equilibrium`].

pub mod adjoint;
pub mod cli;
pub mod drivers;
pub mod equilibrium;
pub mod error;
pub mod fbsde;
pub mod hamiltonian;
pub mod problem;
pub mod process;

pub use error::{Error, Result};
