//! Crate-wide error type.
//!
//! Every fallible operation returns [`Result`].  Message text is part of the
//! contract for the conditions that callers are expected to branch on
//! (gap-resolution failures, non-flat models passed to Fourier routines,
//! malformed gauge data), so the wording below is referenced by tests.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Grid construction rejected the requested resolution.
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    /// Conformal factor must be strictly positive on every site.
    #[error("invalid conformal factor: {0}")]
    InvalidConformalFactor(String),

    /// Two objects built over different grids were combined.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// Fourier analysis (coefficients, multipliers) needs the flat metric.
    #[error("Fourier analysis requires flat model")]
    FourierRequiresFlat,

    /// Finite-difference norms are implemented for orders 0, 1, 2 only.
    #[error("unsupported derivative order: {0}")]
    UnsupportedDerivativeOrder(usize),

    /// Tensor powers of the prequantum bundle are indexed by positive integers.
    #[error("flux must be a positive integer (got {0})")]
    InvalidFlux(i64),

    /// Plaquette angles are inconsistent with a constant-curvature bundle.
    #[error("curvature not of the form p\u{03c9}: {0}")]
    CurvatureMismatch(String),

    /// Edge-phase data does not match the grid of the model it is used with.
    #[error("phases/model grid mismatch: {0}")]
    PhasesGridMismatch(String),

    /// Potentials must be real-valued (Hermitian multiplication operators).
    #[error("potential must be Hermitian: {0}")]
    NonHermitianPotential(String),

    /// The iterative eigensolver exhausted its iteration budget.
    #[error("eigensolver failed to converge: {0}")]
    EigensolverFailed(String),

    /// Dense decomposition requested beyond the dense-path size limit.
    #[error("dimension {dim} exceeds dense eigensolver limit {limit}; request a bound count for the iterative path")]
    DenseTooLarge { dim: usize, limit: usize },

    /// The low cluster is not separated from the rest of the spectrum.
    #[error("no spectral gap resolved (increase N or p): {0}")]
    NoSpectralGap(String),

    /// The decomposition does not reach high enough to certify the cluster.
    #[error("spectral window too small: {0}")]
    SpectralWindowTooSmall(String),

    /// Multiplier extraction needs a translation-invariant kernel.
    #[error("multiplier analysis requires flat model")]
    MultiplierRequiresFlat,

    /// The kernel failed the translation-invariance cross-check.
    #[error("kernel not translation invariant: {0}")]
    NotTranslationInvariant(String),

    /// Model-kernel quadrature domain does not cover the Gaussian mass.
    #[error("quadrature window too small: {0}")]
    QuadratureWindowTooSmall(String),

    /// Near-diagonal comparison is defined on the flat models.
    #[error("near-diagonal comparison implemented for flat models only")]
    NearDiagonalRequiresFlat,

    /// Log-log fitting rejects non-positive ordinates and short sequences.
    #[error("cannot fit log of non-positive value")]
    NonPositiveLogFit,

    /// Fewer samples than the fit has degrees of freedom.
    #[error("too few points to fit: {0}")]
    TooFewPoints(usize),

    /// Backend linear-algebra failure (LAPACK info != 0 and similar).
    #[error("linear algebra backend error: {0}")]
    Backend(String),
}

pub type Result<T> = std::result::Result<T, Error>;
