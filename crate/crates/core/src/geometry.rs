//! Discretized model manifolds: uniform grids on `T^{2n}`, quadrature
//! weights, torus distances, finite-difference `C^m` norms, and discrete
//! Fourier analysis.
//!
//! The grid is the uniform lattice `(Z/N)^{2n}` embedded in `[0,1)^{2n}`,
//! with sites indexed row-major (last axis fastest).  All higher modules
//! (stencils, projectors, kernels) address sites through the flat index,
//! so the indexing conventions live here and nowhere else.

use num_complex::Complex64;
use rustfft::FftPlanner;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

/// Which model manifold the grid discretizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    /// Flat `T^2`, standard metric, unit symplectic volume.
    FlatTorus2,
    /// Flat `T^4`, standard metric, product of two symplectic planes.
    FlatTorus4,
    /// `T^2` with metric `λ(x) (dx_1² + dx_2²)`, fixed symplectic form.
    ConformalTorus2,
}

impl ModelKind {
    /// Number of real coordinates (`2n`).
    pub fn axes(self) -> usize {
        match self {
            ModelKind::FlatTorus2 | ModelKind::ConformalTorus2 => 2,
            ModelKind::FlatTorus4 => 4,
        }
    }

    /// Number of symplectic planes (`n`).
    pub fn planes(self) -> usize {
        self.axes() / 2
    }

    pub fn is_flat(self) -> bool {
        !matches!(self, ModelKind::ConformalTorus2)
    }
}

/// A model manifold sampled on the uniform `N^{2n}` grid.
///
/// Holds the conformal factor samples (identically 1 for the flat kinds),
/// the quadrature weights `w_x = λ(x)^n / N^{2n}` that make
/// `Σ_x w_x ≈ ∫ dv`, and the resulting total Riemannian volume.
#[derive(Debug, Clone)]
pub struct ManifoldModel {
    kind: ModelKind,
    n: usize,
    lambda: Vec<f64>,
    weights: Vec<f64>,
    total_volume: f64,
}

impl ManifoldModel {
    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    /// Sites per axis.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of real coordinates (`2n`).
    pub fn axes(&self) -> usize {
        self.kind.axes()
    }

    /// Number of symplectic planes (`n`).
    pub fn planes(&self) -> usize {
        self.kind.planes()
    }

    /// Total number of grid sites, `N^{2n}`.
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn is_flat(&self) -> bool {
        self.kind.is_flat()
    }

    /// Conformal factor samples (`1` everywhere on the flat kinds).
    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    /// Quadrature weights `w_x = λ(x)^n / N^{2n}`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `Σ_x w_x`, the discretized Riemannian volume.
    pub fn total_volume(&self) -> f64 {
        self.total_volume
    }

    /// Row-major flat index of integer site coordinates.
    pub fn site_index(&self, coords: &[usize]) -> usize {
        debug_assert_eq!(coords.len(), self.axes());
        let mut idx = 0;
        for &c in coords {
            debug_assert!(c < self.n);
            idx = idx * self.n + c;
        }
        idx
    }

    /// Integer site coordinates of a flat index.
    pub fn site_coords(&self, mut idx: usize) -> Vec<usize> {
        let mut coords = vec![0usize; self.axes()];
        for a in (0..self.axes()).rev() {
            coords[a] = idx % self.n;
            idx /= self.n;
        }
        coords
    }

    /// Coordinates in `[0,1)^{2n}` of a flat index.
    pub fn point(&self, idx: usize) -> Vec<f64> {
        self.site_coords(idx)
            .into_iter()
            .map(|c| c as f64 / self.n as f64)
            .collect()
    }

    /// Flat index of the site shifted by `step` (±1) along `axis`, with wrap.
    pub fn neighbor(&self, idx: usize, axis: usize, step: i64) -> usize {
        let mut coords = self.site_coords(idx);
        let n = self.n as i64;
        coords[axis] = ((coords[axis] as i64 + step).rem_euclid(n)) as usize;
        self.site_index(&coords)
    }

    /// Per-axis minimal-image integer offset from `from` to `to`,
    /// each component in `[-N/2, N/2)`.
    pub fn min_image_offset(&self, from: usize, to: usize) -> Vec<i64> {
        let a = self.site_coords(from);
        let b = self.site_coords(to);
        let n = self.n as i64;
        a.iter()
            .zip(b.iter())
            .map(|(&ai, &bi)| {
                let mut d = (bi as i64 - ai as i64).rem_euclid(n);
                if d >= n - n / 2 {
                    d -= n;
                }
                d
            })
            .collect()
    }
}

/// Build a model manifold on the `N^{2n}` grid.
///
/// `lambda` supplies the conformal factor for [`ModelKind::ConformalTorus2`]
/// as a function of the point in `[0,1)²`; it is ignored for the flat kinds.
/// Fails with "invalid grid" for `N < 2` and "invalid conformal factor" if
/// any sample is non-positive or non-finite.
pub fn build_model(
    kind: ModelKind,
    n: usize,
    lambda: Option<&dyn Fn(&[f64]) -> f64>,
) -> Result<ManifoldModel> {
    if n < 2 {
        return Err(Error::InvalidGrid(format!(
            "need at least 2 sites per axis, got {n}"
        )));
    }
    let len = n.pow(kind.axes() as u32);
    let mut model = ManifoldModel {
        kind,
        n,
        lambda: vec![1.0; len],
        weights: Vec::new(),
        total_volume: 0.0,
    };
    if kind == ModelKind::ConformalTorus2 {
        let f = lambda.ok_or_else(|| {
            Error::InvalidConformalFactor("conformal model requires a factor".into())
        })?;
        for idx in 0..len {
            let v = f(&model.point(idx));
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConformalFactor(format!(
                    "factor must be positive and finite, got {v} at site {idx}"
                )));
            }
            model.lambda[idx] = v;
        }
    }
    let planes = kind.planes() as i32;
    let cell = 1.0 / len as f64;
    model.weights = model.lambda.iter().map(|l| l.powi(planes) * cell).collect();
    model.total_volume = model.weights.iter().sum();
    Ok(model)
}

/// Distance between two points of the flat unit torus given by their
/// coordinate difference; each component is reduced to its minimal image.
pub fn flat_torus_distance(delta: &[f64]) -> f64 {
    delta
        .iter()
        .map(|d| {
            let d = d.rem_euclid(1.0);
            let d = d.min(1.0 - d);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Riemannian distance between two grid sites.
///
/// Flat kinds: exact minimal-image Euclidean distance.  Conformal kind:
/// Dijkstra over the grid graph with edge length `√λ(midpoint)/N`
/// (midpoint value interpolated from the two endpoint samples), accurate to
/// the grid scale — sufficient for diagnostics, which is all it is used for.
pub fn torus_distance(model: &ManifoldModel, x: usize, y: usize) -> f64 {
    if model.is_flat() {
        let n = model.n as f64;
        let delta: Vec<f64> = model
            .min_image_offset(x, y)
            .iter()
            .map(|&d| d as f64 / n)
            .collect();
        return flat_torus_distance(&delta);
    }
    // Dijkstra with binary heap; order the heap by negated distance.
    let len = model.len();
    let mut dist = vec![f64::INFINITY; len];
    let mut done = vec![false; len];
    let mut heap: BinaryHeap<(std::cmp::Reverse<ordered::F64>, usize)> = BinaryHeap::new();
    dist[x] = 0.0;
    heap.push((std::cmp::Reverse(ordered::F64(0.0)), x));
    let inv_n = 1.0 / model.n as f64;
    while let Some((std::cmp::Reverse(ordered::F64(d)), site)) = heap.pop() {
        if done[site] {
            continue;
        }
        if site == y {
            return d;
        }
        done[site] = true;
        for axis in 0..model.axes() {
            for step in [-1i64, 1] {
                let nb = model.neighbor(site, axis, step);
                let mid = 0.5 * (model.lambda[site] + model.lambda[nb]);
                let w = mid.sqrt() * inv_n;
                if d + w < dist[nb] {
                    dist[nb] = d + w;
                    heap.push((std::cmp::Reverse(ordered::F64(d + w)), nb));
                }
            }
        }
    }
    dist[y]
}

/// Total-order wrapper for finite `f64` keys in the Dijkstra heap.
mod ordered {
    #[derive(PartialEq)]
    pub struct F64(pub f64);
    impl Eq for F64 {}
    #[allow(clippy::non_canonical_partial_ord_impl)]
    impl PartialOrd for F64 {
        fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
            self.0.partial_cmp(&other.0)
        }
    }
    impl Ord for F64 {
        fn cmp(&self, other: &Self) -> std::cmp::Ordering {
            self.partial_cmp(other).expect("distances are finite")
        }
    }
}

/// Complex-valued samples on the grid of a model.
#[derive(Debug, Clone)]
pub struct GridFunction {
    axes: usize,
    n: usize,
    values: Vec<Complex64>,
}

impl GridFunction {
    /// Sample a function of the point coordinates.
    pub fn from_fn(model: &ManifoldModel, f: impl Fn(&[f64]) -> Complex64) -> Self {
        let values = (0..model.len()).map(|i| f(&model.point(i))).collect();
        GridFunction {
            axes: model.axes(),
            n: model.n(),
            values,
        }
    }

    /// Sample a real-valued function of the point coordinates.
    pub fn from_real_fn(model: &ManifoldModel, f: impl Fn(&[f64]) -> f64) -> Self {
        Self::from_fn(model, |x| Complex64::new(f(x), 0.0))
    }

    /// Wrap raw values laid out in the model's site order.
    pub fn from_values(model: &ManifoldModel, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != model.len() {
            return Err(Error::GridMismatch(format!(
                "function has {} samples, grid has {} sites",
                values.len(),
                model.len()
            )));
        }
        Ok(GridFunction {
            axes: model.axes(),
            n: model.n(),
            values,
        })
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Check that the function lives on the same grid as `model`.
    pub fn check_grid(&self, model: &ManifoldModel) -> Result<()> {
        if self.axes != model.axes() || self.n != model.n() {
            return Err(Error::GridMismatch(format!(
                "function on {}^{} grid, model on {}^{}",
                self.n,
                self.axes,
                model.n(),
                model.axes()
            )));
        }
        Ok(())
    }

    /// Pointwise difference (same grid).
    pub fn sub(&self, other: &GridFunction) -> Result<GridFunction> {
        if self.axes != other.axes || self.n != other.n {
            return Err(Error::GridMismatch("subtracting different grids".into()));
        }
        let values = self
            .values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| a - b)
            .collect();
        Ok(GridFunction {
            axes: self.axes,
            n: self.n,
            values,
        })
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// Apply the first-order central difference `N (f(x+e_a/N) - f(x-e_a/N))/2`
/// along `axis`.
fn central_diff(f: &GridFunction, axis: usize) -> GridFunction {
    let n = f.n;
    let axes = f.axes;
    let scale = n as f64 / 2.0;
    let mut out = vec![Complex64::new(0.0, 0.0); f.values.len()];
    let stride = n.pow((axes - 1 - axis) as u32);
    let span = stride * n;
    for (idx, o) in out.iter_mut().enumerate() {
        let base = idx - idx % span;
        let off = idx % span;
        let fwd = base + (off + stride) % span;
        let bwd = base + (off + span - stride) % span;
        *o = (f.values[fwd] - f.values[bwd]) * scale;
    }
    GridFunction {
        axes,
        n,
        values: out,
    }
}

/// Apply the second-order central difference
/// `N² (f(x+e_a/N) - 2 f(x) + f(x-e_a/N))` along `axis`.
fn central_diff2(f: &GridFunction, axis: usize) -> GridFunction {
    let n = f.n;
    let axes = f.axes;
    let scale = (n * n) as f64;
    let mut out = vec![Complex64::new(0.0, 0.0); f.values.len()];
    let stride = n.pow((axes - 1 - axis) as u32);
    let span = stride * n;
    for (idx, o) in out.iter_mut().enumerate() {
        let base = idx - idx % span;
        let off = idx % span;
        let fwd = base + (off + stride) % span;
        let bwd = base + (off + span - stride) % span;
        *o = (f.values[fwd] - f.values[idx] * 2.0 + f.values[bwd]) * scale;
    }
    GridFunction {
        axes,
        n,
        values: out,
    }
}

/// Discrete `C^m` norm: the maximum of the sup norms of all mixed central
/// finite-difference derivatives of total order ≤ `m` (`m ≤ 2`).
///
/// Along each axis the first derivative is the symmetric difference scaled
/// by `N/2` and the pure second derivative is the three-point stencil scaled
/// by `N²`; mixed second derivatives compose two first-order differences.
pub fn cm_norm(model: &ManifoldModel, f: &GridFunction, m: usize) -> Result<f64> {
    f.check_grid(model)?;
    if m > 2 {
        return Err(Error::UnsupportedDerivativeOrder(m));
    }
    let mut best = f.sup_norm();
    if m >= 1 {
        for a in 0..model.axes() {
            best = best.max(central_diff(f, a).sup_norm());
        }
    }
    if m >= 2 {
        for a in 0..model.axes() {
            best = best.max(central_diff2(f, a).sup_norm());
            for b in (a + 1)..model.axes() {
                best = best.max(central_diff(&central_diff(f, a), b).sup_norm());
            }
        }
    }
    Ok(best)
}

/// Fourier coefficients of a grid function, normalized so that
/// `f(x) = Σ_k c_k exp(2πi k·x)` with `k` ranging over the standard DFT
/// frequency box `[-N/2, N/2)^{2n}`.
#[derive(Debug, Clone)]
pub struct FourierCoefficients {
    axes: usize,
    n: usize,
    /// Coefficients in DFT layout: index `t` along each axis holds
    /// frequency `t` for `t < N/2` and `t - N` otherwise.
    data: Vec<Complex64>,
}

impl FourierCoefficients {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn axes(&self) -> usize {
        self.axes
    }

    /// Coefficient of the mode `exp(2πi k·x)`; `k` is reduced mod `N` into
    /// the DFT box, so aliased queries return the aliased coefficient.
    pub fn coeff(&self, k: &[i64]) -> Complex64 {
        debug_assert_eq!(k.len(), self.axes);
        let n = self.n as i64;
        let mut idx = 0usize;
        for &ki in k {
            idx = idx * self.n + ki.rem_euclid(n) as usize;
        }
        self.data[idx]
    }

    /// Invert back to grid samples (exact up to roundoff).
    pub fn inverse(&self) -> GridFunction {
        let mut data = self.data.clone();
        fft_all_axes(&mut data, self.axes, self.n, rustfft::FftDirection::Inverse);
        GridFunction {
            axes: self.axes,
            n: self.n,
            values: data,
        }
    }
}

/// In-place multi-dimensional FFT over all axes of a row-major hypercube.
fn fft_all_axes(
    data: &mut [Complex64],
    axes: usize,
    n: usize,
    direction: rustfft::FftDirection,
) {
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft(n, direction);
    let mut lane = vec![Complex64::new(0.0, 0.0); n];
    for axis in 0..axes {
        let stride = n.pow((axes - 1 - axis) as u32);
        let span = stride * n;
        let blocks = data.len() / span;
        for block in 0..blocks {
            for inner in 0..stride {
                let base = block * span + inner;
                for t in 0..n {
                    lane[t] = data[base + t * stride];
                }
                fft.process(&mut lane);
                for t in 0..n {
                    data[base + t * stride] = lane[t];
                }
            }
        }
    }
}

/// Forward Fourier analysis on a flat model.
///
/// Fails with "Fourier analysis requires flat model" on the conformal kind:
/// the plane-wave modes are eigenfunctions of translation only for the flat
/// metric, which is what every downstream multiplier computation assumes.
pub fn fourier_coefficients(
    model: &ManifoldModel,
    f: &GridFunction,
) -> Result<FourierCoefficients> {
    if !model.is_flat() {
        return Err(Error::FourierRequiresFlat);
    }
    f.check_grid(model)?;
    let mut data = f.values.clone();
    fft_all_axes(&mut data, model.axes(), model.n(), rustfft::FftDirection::Forward);
    let scale = 1.0 / model.len() as f64;
    for v in data.iter_mut() {
        *v *= scale;
    }
    Ok(FourierCoefficients {
        axes: model.axes(),
        n: model.n(),
        data,
    })
}
