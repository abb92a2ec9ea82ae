use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::sparse::OpTag;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Rejected input (bad counts, bounds, parameters).
    InvalidInput(String),
    GridMismatch,
    WrongTag { expected: OpTag, found: OpTag },
    DimensionMismatch { expected: usize, found: usize },
    /// A factorization hit a (numerically) zero pivot.
    Singular(String),
    /// The generator has more than one kernel direction.
    KernelDeficient { residual: f64 },
    NonUnitMass(f64),
    /// A structural identity of the projected system failed.
    IdentityViolation { which: &'static str, residual: f64 },
    NotConverged { what: &'static str, residual: f64, iterations: usize },
    /// A complex eigenvalue fell inside a window that requires real ones.
    ComplexPair { index: usize, re: f64, im: f64 },
    NoSpectralGap { d: usize, gap: f64 },
    MissingEigenvectors(String),
    /// The operator of a Lyapunov equation has eigenvalues in the closed right half plane.
    NotStable { abscissa: f64 },
    /// Initial stabilization failed because a mode is (nearly) uncontrollable.
    Stabilization { eigenvalue: f64, margin: f64 },
    NewtonStagnation { history: Vec<f64> },
    StepSizeUnderflow { t: f64, h: f64 },
    MassDrift { t: f64, drift: f64 },
    /// Dense Schur decomposition failed to converge.
    Schur,
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidInput(msg) => write!(f, "invalid input: {msg}"),
            Error::GridMismatch => write!(f, "fields live on different grids"),
            Error::WrongTag { expected, found } => {
                write!(f, "operator tag {found:?} where {expected:?} was required")
            }
            Error::DimensionMismatch { expected, found } => {
                write!(f, "dimension mismatch: expected {expected}, found {found}")
            }
            Error::Singular(what) => write!(f, "singular system in {what}"),
            Error::KernelDeficient { residual } => {
                write!(f, "generator kernel is not one-dimensional (residual {residual:.3e})")
            }
            Error::NonUnitMass(m) => write!(f, "stationary state has mass {m}, expected 1"),
            Error::IdentityViolation { which, residual } => {
                write!(f, "projection identity {which} violated (relative residual {residual:.3e})")
            }
            Error::NotConverged { what, residual, iterations } => write!(
                f,
                "{what} did not converge after {iterations} iterations (residual {residual:.3e})"
            ),
            Error::ComplexPair { index, re, im } => {
                write!(f, "complex eigenvalue #{index} = {re} ± {im}i in the retained window")
            }
            Error::NoSpectralGap { d, gap } => {
                write!(f, "no spectral gap after eigenvalue {d} (gap {gap:.3e})")
            }
            Error::MissingEigenvectors(msg) => write!(f, "missing eigenvectors: {msg}"),
            Error::NotStable { abscissa } => {
                write!(f, "operator is not stable (spectral abscissa {abscissa:.6e})")
            }
            Error::Stabilization { eigenvalue, margin } => write!(
                f,
                "cannot stabilize mode with eigenvalue {eigenvalue:.6e}: Hautus margin {margin:.3e}"
            ),
            Error::NewtonStagnation { history } => {
                write!(f, "Newton-Kleinman stagnated; residual history {history:?}")
            }
            Error::StepSizeUnderflow { t, h } => {
                write!(f, "step size underflow at t = {t:.6e} (h = {h:.3e})")
            }
            Error::MassDrift { t, drift } => write!(f, "mass drift {drift:.3e} at t = {t:.6e}"),
            Error::Schur => write!(f, "real Schur decomposition did not converge"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}
