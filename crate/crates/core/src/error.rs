use thiserror::Error;

use crate::fbsde::SolveDiagnostics;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions: {0}")]
    Dims(String),

    #[error("{name}: expected shape {expected:?}, found {found:?}")]
    Shape {
        name: String,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("invalid parameter: {0}")]
    Invalid(String),

    #[error("non-finite {what} at step {step}, scenario {scenario}")]
    NonFinite {
        what: &'static str,
        step: usize,
        scenario: usize,
    },

    #[error(
        "Picard iteration diverged after {} iterations (residual {:.3e})",
        .0.iterations, .0.residual
    )]
    Diverged(Box<SolveDiagnostics>),

    #[error("Picard iteration did not converge: {0}")]
    NotConverged(String),

    #[error("mismatched inputs: {0}")]
    Mismatch(String),

    #[error("control box of player {player} is unbounded; a search radius is required")]
    UnboundedBox { player: usize },

    #[error("enumeration budget exceeded: {required} evaluations needed, budget is {budget}; use fewer steps or grid points")]
    Budget { required: u128, budget: u128 },
}

pub type Result<T> = std::result::Result<T, Error>;
