use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A tank level was negative where the model requires `h >= 0`.
    NegativeLevel {
        tank: usize,
        level: f64,
    },
    /// A Jacobian was requested at `h <= 0`, where `sqrt(h)` is not differentiable.
    Singular {
        tank: usize,
        level: f64,
    },
    /// The integrator produced a non-finite state.
    Integration {
        substep: usize,
    },
    /// A map evaluation produced a non-finite value while perturbing `coordinate`.
    NonFinite {
        coordinate: usize,
    },
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    Config(String),
    /// The constraint set of a QP is empty (or numerically inconsistent).
    Infeasible,
    /// The reduced Hessian has a negative eigenvalue.
    Indefinite {
        eigenvalue: f64,
    },
    /// The active-set iteration exceeded its change budget.
    Cycling {
        changes: usize,
    },
    /// The SQP could not produce a usable iterate.
    Solver(String),
    /// A DRTO solution violated the periodic closure `x_T = x_0`.
    PeriodicClosure {
        violation: f64,
    },
    /// No oracle start converged.
    OracleUnavailable,
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::NegativeLevel { tank, level } => {
                write!(f, "negative level in tank {}: {level:e} m", tank + 1)
            }
            Error::Singular { tank, level } => {
                write!(
                    f,
                    "jacobian singular at tank {} level {level:e} m",
                    tank + 1
                )
            }
            Error::Integration { substep } => {
                write!(
                    f,
                    "integration produced a non-finite state at substep {substep}"
                )
            }
            Error::NonFinite { coordinate } => {
                write!(
                    f,
                    "non-finite map value when perturbing coordinate {coordinate}"
                )
            }
            Error::Dimension {
                what,
                expected,
                found,
            } => write!(
                f,
                "dimension mismatch in {what}: expected {expected}, found {found}"
            ),
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::Infeasible => f.write_str("constraint set is infeasible"),
            Error::Indefinite { eigenvalue } => {
                write!(
                    f,
                    "reduced hessian is indefinite (eigenvalue {eigenvalue:e})"
                )
            }
            Error::Cycling { changes } => {
                write!(
                    f,
                    "active-set iteration did not terminate after {changes} changes"
                )
            }
            Error::Solver(msg) => write!(f, "solver failure: {msg}"),
            Error::PeriodicClosure { violation } => {
                write!(f, "periodic closure violated by {violation:e}")
            }
            Error::OracleUnavailable => f.write_str("oracle solve failed from every start"),
        }
    }
}

impl core::error::Error for Error {}

pub(crate) fn check_dim(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Dimension {
            what,
            expected,
            found,
        })
    }
}
