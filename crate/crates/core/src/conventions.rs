//! Sign and normalization conventions, fixed once for the whole crate.
//!
//! Getting these wrong produces silent sign errors that only surface as
//! O(1) mismatches in the near-diagonal comparison, so every choice is
//! written down here and the rest of the crate refers to this module
//! instead of re-deriving factors inline.
//!
//! # Geometry
//!
//! The torus `T^{2n} = R^{2n}/Z^{2n}` carries coordinates `x_1, …, x_{2n}`
//! in `[0, 1)` and the symplectic form
//!
//! ```text
//! ω = dx_1 ∧ dx_2 + … + dx_{2n-1} ∧ dx_{2n},
//! ```
//!
//! so the symplectic planes are the coordinate pairs `(2j-1, 2j)` and the
//! Liouville volume `∫ ω^n / n!` equals 1.  The complex structure `J` maps
//! `e_{2j-1} ↦ e_{2j}`, and the flat compatible metric is `g = ω(·, J·)`,
//! the standard one.  The conformal model replaces `g` by `λ(x) g` with
//! `λ > 0` while keeping `ω` and `J` fixed; its Riemannian volume element
//! is `λ^n dx`.
//!
//! # Prequantum curvature and Peierls phases
//!
//! The prequantum line bundle `L` has curvature `R^L = -2πi ω`, i.e.
//! `(i/2π) R^L = ω`.  For the tensor power `L^p` the holonomy around the
//! positively oriented elementary lattice plaquette in a symplectic plane
//! is therefore
//!
//! ```text
//! exp(-2πi p / N²)   —   angle  PLAQUETTE_ANGLE_UNIT · p / N²  (times 2π).
//! ```
//!
//! Edge phases are produced in the discrete Landau gauge: with integer
//! site coordinates `(i, j)` in a symplectic plane,
//!
//! * the edge leaving `x` along the second axis of the plane carries
//!   `exp(-2πi p i / N²)`,
//! * edges along the first axis carry 1, except on the seam `i = N-1`
//!   where they carry the boundary twist `exp(+2πi p j / N)`.
//!
//! This is the Peierls transcription of the continuum gauge
//! `∇ = d - 2πi p x_1 dx_2` per plane; the twist makes the bundle close up
//! on the torus, which is possible exactly because `p` is an integer.
//! All angles are computed as exact rationals (numerator/denominator in
//! integer arithmetic, reduced mod 1) before a single `sin`/`cos` call.
//!
//! # Normal frames and the Landau → radial gauge phase
//!
//! Near-diagonal comparisons trivialize the bundle at a base point `x_0`
//! by parallel transport along straight lines (the radial gauge).  For the
//! Landau gauge above, transporting from `x_0 + Z` back to `x_0` multiplies
//! a section value by the closed-form quadratic phase, per symplectic plane
//! `(a, b)`:
//!
//! ```text
//! G(Z) = exp[ -i p (2π x0_a Z_b + π Z_a Z_b) ].
//! ```
//!
//! The trivialized kernel is `G(Z) P(x_0+Z, x_0+Z') conj(G(Z'))`.
//!
//! # Model kernel normalization
//!
//! The continuum model kernel on `C^n ≅ R^{2n}` with curvature data
//! `a_j > 0` is
//!
//! ```text
//! 𝒫(Z, Z') = exp( -¼ Σ_j a_j ( |z_j|² + |z'_j|² - 2 z_j conj(z'_j) ) ),
//! ```
//!
//! `z_j = Z_{2j-1} + i Z_{2j}`.  For the standard flat torus `a_j = 2π`
//! ([`MODEL_A_FLAT`]), `|𝒫(Z, Z')|² = exp(-π |Z - Z'|²)` and `𝒫` reproduces
//! itself against the measure `Π_j (a_j / 2π) dZ`.  The lattice projector
//! at tensor power `p`, rescaled by `p^{-n}` and read in the radial gauge,
//! converges to `𝒫(√p Z, √p Z')`.

/// Plaquette angle per unit flux, in turns: the elementary plaquette in a
/// symplectic plane has angle `2π · PLAQUETTE_ANGLE_UNIT · p / N²`.
pub const PLAQUETTE_ANGLE_UNIT: f64 = -1.0;

/// Curvature datum `a_j = 2π` of the model Gaussian kernel matching the
/// standard flat metric (`g = ω(·, J·)`).
pub const MODEL_A_FLAT: f64 = 2.0 * std::f64::consts::PI;

/// Curvature trace `τ = 2πn` of the flat `2n`-torus with the standard
/// metric; the renormalized operator is `Δ - pτ + Φ`.
pub fn tau_flat(n_planes: usize) -> f64 {
    2.0 * std::f64::consts::PI * n_planes as f64
}

/// Infimum `μ₀` of the curvature acting on `(1,0)`-vectors for the flat
/// metric: `2π`.  The first excited Landau cluster sits at `≥ 2 μ₀ p - C`.
pub const MU0_FLAT: f64 = 2.0 * std::f64::consts::PI;
