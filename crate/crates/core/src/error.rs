use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Errors raised by the cascade library.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A model parameter is outside its admissible range.
    InvalidParameter { name: &'static str, reason: String },
    /// A time argument that must be nonnegative was negative.
    NegativeTime(f64),
    /// A vector has the wrong length for the kernel it is used with.
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    /// The rate function carries neither a Lipschitz constant nor a global bound.
    MissingRateMetadata,
    /// A sufficient condition required by the requested construction fails.
    Infeasible {
        condition: &'static str,
        lhs: f64,
        rhs: f64,
    },
    /// Adaptive quadrature hit its refinement limit.
    QuadratureNonConvergence { estimate: f64 },
    /// The thinning bound was exceeded by the true intensity. This is always a
    /// bug in the bound computation, never a property of the model.
    DominationViolation {
        time: f64,
        intensity: f64,
        bound: f64,
        state: Vec<f64>,
    },
    /// The coupling rate `d` is not positive, so no contraction is certified.
    NoContractionCertificate { rate: f64 },
    /// Jump-time vector is not strictly decreasing inside `(0, T)`.
    InadmissibleTimes,
    /// A minorization probe uses a zero jump height in the target block.
    ZeroHeight { jump: usize, component: usize },
    /// Query grid is not sorted or leaves `[0, T]`.
    InvalidGrid,
    /// `eta` exceeds the drift rate `lambda`.
    ExponentTooLarge { eta: f64, lambda: f64 },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidParameter { name, reason } => {
                write!(f, "invalid parameter `{name}`: {reason}")
            }
            Error::NegativeTime(t) => write!(f, "time must be nonnegative, got {t}"),
            Error::DimensionMismatch {
                what,
                expected,
                found,
            } => write!(f, "{what}: expected length {expected}, found {found}"),
            Error::MissingRateMetadata => {
                write!(f, "rate function is neither bounded nor Lipschitz")
            }
            Error::Infeasible {
                condition,
                lhs,
                rhs,
            } => write!(f, "{condition} fails: {lhs} is not below {rhs}"),
            Error::QuadratureNonConvergence { estimate } => {
                write!(f, "quadrature did not converge (partial estimate {estimate})")
            }
            Error::DominationViolation {
                time,
                intensity,
                bound,
                ..
            } => write!(
                f,
                "thinning bound violated at t={time}: intensity {intensity} > bound {bound}"
            ),
            Error::NoContractionCertificate { rate } => {
                write!(f, "coupling rate d={rate} is not positive")
            }
            Error::InadmissibleTimes => {
                write!(f, "jump times must satisfy T > s_1 > ... > s_m > 0")
            }
            Error::ZeroHeight { jump, component } => {
                write!(f, "probe jump {jump} has zero height in component {component}")
            }
            Error::InvalidGrid => write!(f, "grid must be sorted and lie inside [0, T]"),
            Error::ExponentTooLarge { eta, lambda } => {
                write!(f, "eta={eta} exceeds the drift rate lambda={lambda}")
            }
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: &str) -> Error {
    Error::InvalidParameter {
        name,
        reason: String::from(reason),
    }
}
