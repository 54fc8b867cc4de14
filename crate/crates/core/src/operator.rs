//! Gauge-covariant finite-difference Bochner Laplacians and their
//! curvature renormalization.
//!
//! The raw operator is the Peierls stencil
//!
//! ```text
//! (A f)(x) = N² Σ_μ [ 2 f(x) - U_{x,μ} f(x+e_μ/N) - conj(U_{x-e_μ/N,μ}) f(x-e_μ/N) ],
//! ```
//!
//! self-adjoint for the plain `ℓ²` product.  The conformal model divides by
//! the metric factor, `H = λ^{-1} A`: in two dimensions the covariant
//! Dirichlet energy is conformally invariant, so the flat-measure stencil
//! energy is already the correct quadratic form and only the inner product
//! changes.  `H` is then self-adjoint for the λ-weighted product, which is
//! the statement the whole spectral layer relies on.
//!
//! Internally everything is stored in the *symmetrized* picture
//! `H̃ = W^{1/2} H W^{-1/2} = λ^{-1/2} A λ^{-1/2} + diagonal`, a plain
//! Hermitian matrix; eigenvectors convert back to section values through
//! `v = W^{-1/2} ṽ`, which makes them orthonormal for the quadrature
//! weights.  Renormalization subtracts `p τ` and adds the potential on the
//! diagonal, which reads the same in both pictures.

use num_complex::Complex64;

use crate::conventions;
use crate::error::{Error, Result};
use crate::geometry::{GridFunction, ManifoldModel};
use crate::prequantum::EdgePhaseField;

/// Size cap for materializing the operator as a dense matrix.
pub const DENSE_LIMIT: usize = 5000;

/// A real multiplication operator (the zeroth-order term `Φ`).
#[derive(Debug, Clone)]
pub struct Potential {
    values: Vec<f64>,
}

impl Potential {
    /// Identically zero potential.
    pub fn zero(model: &ManifoldModel) -> Self {
        Potential {
            values: vec![0.0; model.len()],
        }
    }

    /// Sample a real function of the point coordinates.
    pub fn from_fn(model: &ManifoldModel, f: impl Fn(&[f64]) -> f64) -> Self {
        Potential {
            values: (0..model.len()).map(|i| f(&model.point(i))).collect(),
        }
    }

    /// Wrap grid samples; rejects non-real values, since `Φ` must be a
    /// Hermitian multiplication operator.
    pub fn from_grid_function(model: &ManifoldModel, f: &GridFunction) -> Result<Self> {
        f.check_grid(model)?;
        let mut values = Vec::with_capacity(f.len());
        for v in f.values() {
            if v.im.abs() > 1e-12 {
                return Err(Error::NonHermitianPotential(format!(
                    "imaginary part {} in potential sample",
                    v.im
                )));
            }
            values.push(v.re);
        }
        Ok(Potential { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |a, &v| a.max(v.abs()))
    }
}

/// The curvature trace `τ` and the curvature infimum `μ₀` of the unit
/// bundle `L` for a model metric.
///
/// Flat kinds: `τ = 2πn`, `μ₀ = 2π`.  Conformal kind: the metric rescales
/// the Hermitian pairing on `(1,0)`-vectors, so `τ(x) = 2π/λ(x)` and
/// `μ₀ = 2π / max λ`.
#[derive(Debug, Clone)]
pub struct TauField {
    tau: Vec<f64>,
    mu0: f64,
}

impl TauField {
    pub fn tau(&self) -> &[f64] {
        &self.tau
    }

    pub fn mu0(&self) -> f64 {
        self.mu0
    }
}

/// Compute `τ` and `μ₀` for a model (unit curvature; the renormalization
/// of `L^p` subtracts `p · τ`).
pub fn compute_tau(model: &ManifoldModel) -> TauField {
    if model.is_flat() {
        TauField {
            tau: vec![conventions::tau_flat(model.planes()); model.len()],
            mu0: conventions::MU0_FLAT,
        }
    } else {
        let two_pi = 2.0 * std::f64::consts::PI;
        let max_lambda = model.lambda().iter().fold(0.0f64, |a, &l| a.max(l));
        TauField {
            tau: model.lambda().iter().map(|&l| two_pi / l).collect(),
            mu0: two_pi / max_lambda,
        }
    }
}

/// A self-adjoint lattice operator in symmetrized (plain-Hermitian) form:
/// diagonal plus one complex hop amplitude per directed edge.
#[derive(Debug, Clone)]
pub struct HermitianOperator {
    n: usize,
    axes: usize,
    dim: usize,
    sym_diag: Vec<f64>,
    /// `hop[axis][site]`: matrix entry `H̃[site, site+e_axis]`.
    hop: Vec<Vec<Complex64>>,
    fwd: Vec<Vec<u32>>,
    bwd: Vec<Vec<u32>>,
    sqrt_w: Vec<f64>,
    weights: Vec<f64>,
}

impl HermitianOperator {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn axes(&self) -> usize {
        self.axes
    }

    /// Quadrature weights of the model the operator was assembled on.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Symmetrized action `out = H̃ v` (plain Hermitian picture).
    pub fn apply_sym(&self, v: &[Complex64], out: &mut [Complex64]) {
        debug_assert_eq!(v.len(), self.dim);
        debug_assert_eq!(out.len(), self.dim);
        for (i, o) in out.iter_mut().enumerate() {
            *o = v[i] * self.sym_diag[i];
        }
        for axis in 0..self.axes {
            let hop = &self.hop[axis];
            let fwd = &self.fwd[axis];
            let bwd = &self.bwd[axis];
            for i in 0..self.dim {
                let b = bwd[i] as usize;
                out[i] += hop[i] * v[fwd[i] as usize] + hop[b].conj() * v[b];
            }
        }
    }

    /// Physical action on section values: `out = H f` with `H` self-adjoint
    /// for the weighted product, i.e. `W^{-1/2} H̃ W^{1/2} f`.
    pub fn apply_section(&self, f: &[Complex64], out: &mut [Complex64]) {
        let mut tmp = vec![Complex64::new(0.0, 0.0); self.dim];
        for i in 0..self.dim {
            tmp[i] = f[i] * self.sqrt_w[i];
        }
        let mut tmp2 = vec![Complex64::new(0.0, 0.0); self.dim];
        self.apply_sym(&tmp, &mut tmp2);
        for i in 0..self.dim {
            out[i] = tmp2[i] / self.sqrt_w[i];
        }
    }

    /// Convert a symmetrized eigenvector to section values, orthonormal for
    /// the quadrature weights.
    pub fn to_section(&self, v: &[Complex64]) -> Vec<Complex64> {
        v.iter()
            .zip(self.sqrt_w.iter())
            .map(|(x, s)| x / s)
            .collect()
    }

    /// Gershgorin bounds `(lower, upper)` on the symmetrized spectrum.
    pub fn gershgorin(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..self.dim {
            let mut radius = 0.0;
            for axis in 0..self.axes {
                radius += self.hop[axis][i].norm();
                radius += self.hop[axis][self.bwd[axis][i] as usize].norm();
            }
            lo = lo.min(self.sym_diag[i] - radius);
            hi = hi.max(self.sym_diag[i] + radius);
        }
        (lo, hi)
    }

    /// Materialize `H̃` as a dense column-major matrix (dimension-guarded).
    pub fn to_dense_sym(&self) -> Result<Vec<Complex64>> {
        if self.dim > DENSE_LIMIT {
            return Err(Error::DenseTooLarge {
                dim: self.dim,
                limit: DENSE_LIMIT,
            });
        }
        let d = self.dim;
        let mut m = vec![Complex64::new(0.0, 0.0); d * d];
        for i in 0..d {
            m[i * d + i] = Complex64::new(self.sym_diag[i], 0.0);
        }
        for axis in 0..self.axes {
            for i in 0..d {
                let j = self.fwd[axis][i] as usize;
                // Column-major: entry (row, col) at col*d + row.
                m[j * d + i] += self.hop[axis][i];
                m[i * d + j] += self.hop[axis][i].conj();
            }
        }
        Ok(m)
    }

    /// Largest deviation `|H̃ - H̃†|` over all entries of the dense form.
    pub fn hermiticity_defect(&self) -> Result<f64> {
        let m = self.to_dense_sym()?;
        let d = self.dim;
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                worst = worst.max((m[j * d + i] - m[i * d + j].conj()).norm());
            }
        }
        Ok(worst)
    }
}

/// Assemble the raw (un-renormalized) Bochner Laplacian for the bundle
/// described by `phases` over `model`.
///
/// The stencil is nonnegative by construction — it is the quadratic form
/// `Σ_edges |U f(x+e) - f(x)|²` — so the un-renormalized spectrum sits in
/// `[0, ∞)` up to solver roundoff.
pub fn assemble_bochner(
    model: &ManifoldModel,
    phases: &EdgePhaseField,
) -> Result<HermitianOperator> {
    phases.check_grid(model)?;
    let dim = model.len();
    let n2 = (model.n() * model.n()) as f64;
    let axes = model.axes();
    let lambda = model.lambda();

    let mut fwd = Vec::with_capacity(axes);
    let mut bwd = Vec::with_capacity(axes);
    for axis in 0..axes {
        let mut f = Vec::with_capacity(dim);
        let mut b = Vec::with_capacity(dim);
        for site in 0..dim {
            f.push(model.neighbor(site, axis, 1) as u32);
            b.push(model.neighbor(site, axis, -1) as u32);
        }
        fwd.push(f);
        bwd.push(b);
    }

    let sym_diag: Vec<f64> = (0..dim)
        .map(|i| 2.0 * axes as f64 * n2 / lambda[i])
        .collect();
    let mut hop = Vec::with_capacity(axes);
    for axis in 0..axes {
        let mut h = Vec::with_capacity(dim);
        for site in 0..dim {
            let j = fwd[axis][site] as usize;
            let scale = n2 / (lambda[site] * lambda[j]).sqrt();
            h.push(-phases.phase(axis, site) * scale);
        }
        hop.push(h);
    }

    Ok(HermitianOperator {
        n: model.n(),
        axes,
        dim,
        sym_diag,
        hop,
        fwd,
        bwd,
        sqrt_w: model.weights().iter().map(|&w| w.sqrt()).collect(),
        weights: model.weights().to_vec(),
    })
}

/// Renormalize: `H ↦ H - p τ + Φ`.  Both terms are diagonal, so the hops
/// are shared with the input operator.
pub fn renormalize(
    op: &HermitianOperator,
    tau: &TauField,
    p: i64,
    phi: Option<&Potential>,
) -> Result<HermitianOperator> {
    if tau.tau().len() != op.dim {
        return Err(Error::GridMismatch(format!(
            "tau has {} samples, operator dimension {}",
            tau.tau().len(),
            op.dim
        )));
    }
    if let Some(phi) = phi {
        if phi.values().len() != op.dim {
            return Err(Error::GridMismatch(format!(
                "potential has {} samples, operator dimension {}",
                phi.values().len(),
                op.dim
            )));
        }
    }
    let mut out = op.clone();
    for i in 0..op.dim {
        out.sym_diag[i] -= p as f64 * tau.tau()[i];
        if let Some(phi) = phi {
            out.sym_diag[i] += phi.values()[i];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_model, GridFunction, ModelKind};
    use crate::prequantum::build_landau_phases;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;

    #[test]
    fn free_stencil_symbol_matches_fourier_oracle() {
        // U ≡ 1: plane waves e^{2πik·x} are exact eigenvectors with
        // eigenvalue 4N² Σ_j sin²(π k_j / N).
        let n = 8;
        let m = build_model(ModelKind::FlatTorus2, n, None).unwrap();
        let op = assemble_bochner(&m, &EdgePhaseField::trivial(&m)).unwrap();
        for k in [[0i64, 0], [1, 0], [3, 5], [4, 4]] {
            let f = GridFunction::from_fn(&m, |x| {
                Complex64::new(0.0, 2.0 * PI * (k[0] as f64 * x[0] + k[1] as f64 * x[1])).exp()
            });
            let mut out = vec![Complex64::new(0.0, 0.0); m.len()];
            op.apply_section(f.values(), &mut out);
            let expect = 4.0
                * (n * n) as f64
                * ((PI * k[0] as f64 / n as f64).sin().powi(2)
                    + (PI * k[1] as f64 / n as f64).sin().powi(2));
            for (o, v) in out.iter().zip(f.values()) {
                assert!(
                    (o - v * expect).norm() < 1e-9 * (1.0 + expect),
                    "k={k:?}: symbol mismatch"
                );
            }
        }
    }

    #[test]
    fn weighted_self_adjointness() {
        // ⟨Hf, g⟩_w = ⟨f, Hg⟩_w on the conformal model with a cosine factor.
        let m = build_model(
            ModelKind::ConformalTorus2,
            12,
            Some(&|x: &[f64]| 1.0 + 0.3 * (2.0 * PI * x[0]).cos()),
        )
        .unwrap();
        let phases = build_landau_phases(&m, 2).unwrap();
        let op = assemble_bochner(&m, &phases).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut rand_fn = || {
            GridFunction::from_values(
                &m,
                (0..m.len())
                    .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                    .collect(),
            )
            .unwrap()
        };
        let f = rand_fn();
        let g = rand_fn();
        let mut hf = vec![Complex64::new(0.0, 0.0); m.len()];
        let mut hg = vec![Complex64::new(0.0, 0.0); m.len()];
        op.apply_section(f.values(), &mut hf);
        op.apply_section(g.values(), &mut hg);
        let dot = |a: &[Complex64], b: &[Complex64]| -> Complex64 {
            a.iter()
                .zip(b.iter())
                .zip(m.weights())
                .map(|((x, y), &w)| x.conj() * y * w)
                .sum()
        };
        let lhs = dot(&hf, g.values());
        let rhs = dot(f.values(), &hg);
        let scale = lhs.norm().max(rhs.norm()).max(1.0);
        assert!(
            (lhs - rhs).norm() / scale < 1e-12,
            "{lhs} vs {rhs} (relative {})",
            (lhs - rhs).norm() / scale
        );
    }

    #[test]
    fn hermiticity_defect_is_zero() {
        let m = build_model(ModelKind::FlatTorus2, 8, None).unwrap();
        let phases = build_landau_phases(&m, 3).unwrap();
        let op = assemble_bochner(&m, &phases).unwrap();
        assert_eq!(op.hermiticity_defect().unwrap(), 0.0);
    }

    #[test]
    fn conformal_with_unit_factor_equals_flat() {
        let mf = build_model(ModelKind::FlatTorus2, 10, None).unwrap();
        let mc = build_model(ModelKind::ConformalTorus2, 10, Some(&|_: &[f64]| 1.0)).unwrap();
        let p = 2;
        let of = assemble_bochner(&mf, &build_landau_phases(&mf, p).unwrap()).unwrap();
        let oc = assemble_bochner(&mc, &build_landau_phases(&mc, p).unwrap()).unwrap();
        for i in 0..of.dim() {
            assert_eq!(of.sym_diag[i], oc.sym_diag[i]);
            for axis in 0..2 {
                assert_eq!(of.hop[axis][i], oc.hop[axis][i]);
            }
        }
    }

    #[test]
    fn renormalize_shifts_diagonal_exactly() {
        let m = build_model(ModelKind::FlatTorus2, 8, None).unwrap();
        let p = 3i64;
        let op = assemble_bochner(&m, &build_landau_phases(&m, p).unwrap()).unwrap();
        let tau = compute_tau(&m);
        let phi = Potential::from_fn(&m, |x| 0.5 * (2.0 * PI * x[0]).cos());
        let ren = renormalize(&op, &tau, p, Some(&phi)).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let f: Vec<Complex64> = (0..m.len())
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let mut a = vec![Complex64::new(0.0, 0.0); m.len()];
        let mut b = vec![Complex64::new(0.0, 0.0); m.len()];
        op.apply_section(&f, &mut a);
        ren.apply_section(&f, &mut b);
        for i in 0..m.len() {
            let expect = a[i] + f[i] * (phi.values()[i] - p as f64 * tau.tau()[i]);
            assert!((b[i] - expect).norm() < 1e-10, "site {i}");
        }
    }

    #[test]
    fn tau_values() {
        let m2 = build_model(ModelKind::FlatTorus2, 8, None).unwrap();
        let m4 = build_model(ModelKind::FlatTorus4, 4, None).unwrap();
        assert!((compute_tau(&m2).tau()[0] - 2.0 * PI).abs() < 1e-15);
        assert!((compute_tau(&m4).tau()[0] - 4.0 * PI).abs() < 1e-15);
        assert!((compute_tau(&m2).mu0() - 2.0 * PI).abs() < 1e-15);
        let mc = build_model(
            ModelKind::ConformalTorus2,
            8,
            Some(&|x: &[f64]| 1.0 + 0.2 * (2.0 * PI * x[0]).cos()),
        )
        .unwrap();
        let tc = compute_tau(&mc);
        assert!((tc.mu0() - 2.0 * PI / 1.2).abs() < 1e-12);
        // Pointwise: τ(0) = 2π/1.2 at the crest of the factor.
        assert!((tc.tau()[0] - 2.0 * PI / 1.2).abs() < 1e-12);
    }

    #[test]
    fn non_real_potential_rejected() {
        let m = build_model(ModelKind::FlatTorus2, 4, None).unwrap();
        let f = GridFunction::from_fn(&m, |_| Complex64::new(0.0, 0.5));
        let err = Potential::from_grid_function(&m, &f).unwrap_err();
        assert!(err.to_string().contains("potential must be Hermitian"));
    }

    #[test]
    fn gershgorin_contains_free_spectrum() {
        let m = build_model(ModelKind::FlatTorus2, 8, None).unwrap();
        let op = assemble_bochner(&m, &EdgePhaseField::trivial(&m)).unwrap();
        let (lo, hi) = op.gershgorin();
        // Free spectrum is [0, 8N²].
        assert!(lo <= 0.0 && hi >= 8.0 * 64.0);
    }
}
