//! Numerical laboratory for magnetic Laplacians and Bergman-type projector
//! kernels on model symplectic tori.
//!
//! The library builds gauge-covariant finite-difference Laplacians for the
//! tensor powers `L^p` of a prequantum line bundle over flat two- and
//! four-tori (and a conformally deformed two-torus), extracts the
//! lowest-Landau-level bound states, and assembles the associated projector
//! kernel `P(x, y)` together with the Markov-type smoothing operator
//! `Q` built from `K = |P|^2`.  Everything downstream — spectral-gap
//! detection, dimension counts, heat-kernel multipliers, near-diagonal
//! Gaussian asymptotics — lives in the modules below.
//!
//! Module map:
//!
//! * [`geometry`] — grids, quadrature weights, torus distances, finite
//!   differences, Fourier analysis.
//! * [`prequantum`] — Peierls edge phases with exact rational angles,
//!   plaquette curvature checks, gauge transformations.
//! * [`operator`] — covariant stencil assembly, renormalization by the
//!   curvature trace, potentials.
//! * [`spectral`] — dense (LAPACK) and iterative (Chebyshev-filtered
//!   subspace) Hermitian eigensolvers, bound-cluster detection, projector
//!   kernels.
//! * [`qkernel`] — the `Q` operator, Fourier multipliers, off-diagonal
//!   profiles, convergence-rate errors.
//! * [`model_asym`] — the continuum model Gaussian kernel and the
//!   near-diagonal comparison between lattice and model.

pub mod conventions;
pub mod error;
pub mod fit;
pub mod geometry;
pub mod model_asym;
pub mod operator;
pub mod prequantum;
pub mod qkernel;
pub mod spectral;

pub use error::{Error, Result};
