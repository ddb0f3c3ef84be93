//! Spectral representation of the second order operator `A` with conormal
//! (Neumann) boundary conditions on `O = (0, 1)`.
//!
//! Everything downstream works on eigenmode coefficients: the semigroup
//! `e^{tA}` is diagonal, so the fast `ε⁻¹A` part of the dynamics is
//! integrated exactly. Point values are only needed for Nemytskii operators
//! and are obtained on a fixed midpoint quadrature grid.

use std::f64::consts::{PI, SQRT_2};
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Sub};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when asserting discrete orthonormality of a basis.
pub const ORTHONORMALITY_TOL: f64 = 1e-10;

/// A function on `O`, stored by its coefficients in the eigenbasis `{e_k}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Field {
    coeffs: Vec<f64>,
}

impl Field {
    pub fn zeros(n: usize) -> Self {
        Field { coeffs: vec![0.0; n] }
    }

    pub fn from_coeffs(coeffs: Vec<f64>) -> Self {
        Field { coeffs }
    }

    /// The unit vector `e_k` in an `n`-mode truncation.
    pub fn unit(n: usize, k: usize) -> Self {
        let mut f = Field::zeros(n);
        f.coeffs[k] = 1.0;
        f
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn dot(&self, other: &Field) -> f64 {
        self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a * b).sum()
    }

    /// `H = L²(O)` norm; by Parseval the Euclidean norm of the coefficients.
    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scaled(&self, s: f64) -> Field {
        Field::from_coeffs(self.coeffs.iter().map(|c| c * s).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }

    /// Largest absolute coefficient among the non-constant modes.
    pub fn max_nonconstant(&self) -> f64 {
        self.coeffs.iter().skip(1).fold(0.0, |m, c| m.max(c.abs()))
    }
}

impl Index<usize> for Field {
    type Output = f64;
    fn index(&self, k: usize) -> &f64 {
        &self.coeffs[k]
    }
}

impl IndexMut<usize> for Field {
    fn index_mut(&mut self, k: usize) -> &mut f64 {
        &mut self.coeffs[k]
    }
}

impl Add for &Field {
    type Output = Field;
    fn add(self, rhs: &Field) -> Field {
        Field::from_coeffs(self.coeffs.iter().zip(&rhs.coeffs).map(|(a, b)| a + b).collect())
    }
}

impl Sub for &Field {
    type Output = Field;
    fn sub(self, rhs: &Field) -> Field {
        Field::from_coeffs(self.coeffs.iter().zip(&rhs.coeffs).map(|(a, b)| a - b).collect())
    }
}

impl AddAssign<&Field> for Field {
    fn add_assign(&mut self, rhs: &Field) {
        for (a, b) in self.coeffs.iter_mut().zip(&rhs.coeffs) {
            *a += b;
        }
    }
}

impl Mul<f64> for &Field {
    type Output = Field;
    fn mul(self, s: f64) -> Field {
        self.scaled(s)
    }
}

/// Boundary data `z ∈ Z = L²(∂O)`; in one dimension `∂O = {0, 1}` with
/// counting measure.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryData {
    pub values: [f64; 2],
}

impl BoundaryData {
    pub fn new(left: f64, right: f64) -> Self {
        BoundaryData { values: [left, right] }
    }

    pub fn zero() -> Self {
        BoundaryData::new(0.0, 0.0)
    }

    pub fn norm_sq(&self) -> f64 {
        self.values[0] * self.values[0] + self.values[1] * self.values[1]
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn dot(&self, other: &BoundaryData) -> f64 {
        self.values[0] * other.values[0] + self.values[1] * other.values[1]
    }

    pub fn scaled(&self, s: f64) -> BoundaryData {
        BoundaryData::new(self.values[0] * s, self.values[1] * s)
    }
}

/// Midpoint quadrature on `(0, L)`.
#[derive(Clone, Debug)]
pub struct Quadrature {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Quadrature {
    pub fn midpoint(points: usize, length: f64) -> Self {
        let h = length / points as f64;
        Quadrature {
            nodes: (0..points).map(|i| (i as f64 + 0.5) * h).collect(),
            weights: vec![h; points],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }
}

/// The invariant measure `μ(dξ) = m(ξ) dξ` of the diffusion generated by `A`.
#[derive(Clone, Debug)]
pub struct InvariantMeasure {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    density: Vec<f64>,
}

impl InvariantMeasure {
    /// Density at an arbitrary point (piecewise constant on the grid cells).
    pub fn density_at(&self, xi: f64) -> f64 {
        let n = self.nodes.len();
        let h = self.weights[0];
        let i = ((xi / h).floor().max(0.0) as usize).min(n - 1);
        self.density[i]
    }

    pub fn density_on_grid(&self) -> &[f64] {
        &self.density
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().zip(&self.density).map(|(w, m)| w * m).sum()
    }
}

#[derive(Clone, Debug)]
enum Basis {
    /// `e_0 = 1`, `e_k = √2 cos(kπξ)`.
    Cosine,
    /// Eigenvectors of a finite-volume discretization, tabulated on the grid.
    Tabulated,
}

/// Eigen-decomposition of `A` with conormal boundary condition.
///
/// Immutable after construction; every operation is a pure function of its
/// inputs, so an operator can be shared freely between threads.
#[derive(Clone, Debug)]
pub struct SpectralOperator {
    eigenvalues: Vec<f64>,
    basis: Basis,
    grid: Quadrature,
    /// `table[k][i] = e_k(ξ_i)`.
    table: Vec<Vec<f64>>,
    boundary: Vec<[f64; 2]>,
    density: Vec<f64>,
    density_uniform: bool,
    domain_length: f64,
}

/// Default number of quadrature points per mode.
pub const DEFAULT_POINTS_PER_MODE: usize = 8;

impl SpectralOperator {
    /// `A = d²/dξ²` on `(0,1)` with Neumann conditions, truncated to
    /// `n_modes` modes. Eigenvalues of `-A` are `(kπ)²`.
    pub fn neumann_laplacian_1d(n_modes: usize) -> Result<Self> {
        Self::neumann_laplacian_1d_with_grid(n_modes, DEFAULT_POINTS_PER_MODE * n_modes.max(2))
    }

    pub fn neumann_laplacian_1d_with_grid(n_modes: usize, points: usize) -> Result<Self> {
        if n_modes < 2 {
            return Err(Error::invalid(format!("n_modes must be >= 2, got {n_modes}")));
        }
        if points < 4 * n_modes {
            return Err(Error::invalid(format!(
                "quadrature needs at least 4 points per mode ({} < {})",
                points,
                4 * n_modes
            )));
        }
        let grid = Quadrature::midpoint(points, 1.0);
        let eigenvalues = (0..n_modes).map(|k| (k as f64 * PI).powi(2)).collect();
        let table = (0..n_modes)
            .map(|k| grid.nodes.iter().map(|&x| cosine_mode(k, x)).collect())
            .collect();
        let boundary = (0..n_modes)
            .map(|k| [cosine_mode(k, 0.0), cosine_mode(k, 1.0)])
            .collect();
        Ok(SpectralOperator {
            eigenvalues,
            basis: Basis::Cosine,
            density: vec![1.0; points],
            density_uniform: true,
            grid,
            table,
            boundary,
            domain_length: 1.0,
        })
    }

    /// Divergence-type operator `(a(ξ) u')'` on `(0,1)` with conormal
    /// condition `a u' · ν = 0`, eigen-decomposed through a symmetric
    /// finite-volume discretization on `cells` cells. Lebesgue measure is
    /// invariant, so `m ≡ 1`.
    pub fn divergence_1d<F>(n_modes: usize, cells: usize, diffusivity: F) -> Result<Self>
    where
        F: Fn(f64) -> f64,
    {
        if n_modes < 2 {
            return Err(Error::invalid(format!("n_modes must be >= 2, got {n_modes}")));
        }
        if cells < 4 * n_modes {
            return Err(Error::invalid(format!(
                "need at least 4 cells per mode ({} < {})",
                cells,
                4 * n_modes
            )));
        }
        let grid = Quadrature::midpoint(cells, 1.0);
        let h = 1.0 / cells as f64;
        let faces: Vec<f64> = (1..cells).map(|i| diffusivity(i as f64 * h)).collect();
        if faces.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
            return Err(Error::invalid("diffusivity must be positive and finite"));
        }
        let mut stiffness = DMatrix::<f64>::zeros(cells, cells);
        for (i, &a) in faces.iter().enumerate() {
            let c = a / (h * h);
            stiffness[(i, i)] += c;
            stiffness[(i + 1, i + 1)] += c;
            stiffness[(i, i + 1)] -= c;
            stiffness[(i + 1, i)] -= c;
        }
        let eig = SymmetricEigen::new(stiffness);
        let mut order: Vec<usize> = (0..cells).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

        let scale = 1.0 / h.sqrt();
        let mut eigenvalues = Vec::with_capacity(n_modes);
        let mut table = Vec::with_capacity(n_modes);
        let mut boundary = Vec::with_capacity(n_modes);
        for (k, &j) in order.iter().take(n_modes).enumerate() {
            let mut col: Vec<f64> = eig.eigenvectors.column(j).iter().map(|v| v * scale).collect();
            // Fix the sign so that e_k(0) > 0.
            if col[0] < 0.0 {
                col.iter_mut().for_each(|v| *v = -*v);
            }
            let lam = if k == 0 { 0.0 } else { eig.eigenvalues[j].max(0.0) };
            // u(ξ) ≈ A + Bξ² near a Neumann boundary.
            let left = (9.0 * col[0] - col[1]) / 8.0;
            let right = (9.0 * col[cells - 1] - col[cells - 2]) / 8.0;
            eigenvalues.push(lam);
            boundary.push([left, right]);
            table.push(col);
        }
        // The kernel is the constant vector; make it exactly so.
        table[0] = vec![1.0; cells];
        boundary[0] = [1.0, 1.0];

        Ok(SpectralOperator {
            eigenvalues,
            basis: Basis::Tabulated,
            density: vec![1.0; cells],
            density_uniform: true,
            grid,
            table,
            boundary,
            domain_length: 1.0,
        })
    }

    pub fn n_modes(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvalue(&self, k: usize) -> f64 {
        self.eigenvalues[k]
    }

    pub fn domain_length(&self) -> f64 {
        self.domain_length
    }

    pub fn grid(&self) -> &Quadrature {
        &self.grid
    }

    /// `e_k(ξ_i)` on the quadrature grid.
    pub fn mode_on_grid(&self, k: usize) -> &[f64] {
        &self.table[k]
    }

    pub fn eigenfunction_at(&self, k: usize, xi: f64) -> f64 {
        match self.basis {
            Basis::Cosine => cosine_mode(k, xi),
            Basis::Tabulated => interpolate(&self.grid.nodes, &self.table[k], xi),
        }
    }

    /// `(e_k(0), e_k(1))`.
    pub fn boundary_values(&self, k: usize) -> [f64; 2] {
        self.boundary[k]
    }

    /// `|e_k|_∞` estimated from the grid and boundary values.
    pub fn sup_norm(&self, k: usize) -> f64 {
        self.table[k]
            .iter()
            .chain(self.boundary[k].iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Smallest strictly positive eigenvalue.
    pub fn spectral_gap(&self) -> f64 {
        self.eigenvalues
            .iter()
            .copied()
            .filter(|&a| a > 0.0)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn invariant_measure(&self) -> InvariantMeasure {
        let mass = self.grid.integrate(&self.density);
        InvariantMeasure {
            nodes: self.grid.nodes.clone(),
            weights: self.grid.weights.clone(),
            density: self.density.iter().map(|m| m / mass).collect(),
        }
    }

    pub fn density_is_uniform(&self) -> bool {
        self.density_uniform
    }

    /// Point values of `h` on the quadrature grid.
    pub fn to_grid(&self, h: &Field) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.len()];
        for (c, row) in h.coeffs().iter().zip(&self.table) {
            if *c == 0.0 {
                continue;
            }
            for (o, e) in out.iter_mut().zip(row) {
                *o += c * e;
            }
        }
        out
    }

    /// Orthogonal projection of grid values onto the retained modes.
    pub fn project_grid(&self, values: &[f64]) -> Field {
        let w = &self.grid.weights;
        Field::from_coeffs(
            self.table
                .iter()
                .map(|row| row.iter().zip(values).zip(w).map(|((e, v), w)| e * v * w).sum())
                .collect(),
        )
    }

    pub fn project<F: Fn(f64) -> f64>(&self, func: F) -> Field {
        let values: Vec<f64> = self.grid.nodes.iter().map(|&x| func(x)).collect();
        self.project_grid(&values)
    }

    pub fn eval(&self, h: &Field, xi: f64) -> f64 {
        h.coeffs()
            .iter()
            .enumerate()
            .map(|(k, c)| c * self.eigenfunction_at(k, xi))
            .sum()
    }

    /// Largest deviation of the discrete Gram matrix from the identity.
    pub fn orthonormality_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for j in 0..self.n_modes() {
            for k in 0..=j {
                let g: f64 = self.table[j]
                    .iter()
                    .zip(&self.table[k])
                    .zip(&self.grid.weights)
                    .map(|((a, b), w)| a * b * w)
                    .sum();
                let target = if j == k { 1.0 } else { 0.0 };
                worst = worst.max((g - target).abs());
            }
        }
        worst
    }

    /// `e^{tA} h`: mode `k` is multiplied by `e^{-α_k t}`.
    pub fn semigroup_apply(&self, t: f64, h: &Field) -> Result<Field> {
        if !(t >= 0.0) {
            return Err(Error::invalid(format!("semigroup time must be >= 0, got {t}")));
        }
        Ok(Field::from_coeffs(
            h.coeffs()
                .iter()
                .zip(&self.eigenvalues)
                .map(|(c, a)| c * (-a * t).exp())
                .collect(),
        ))
    }

    /// `⟨h, μ⟩ = ∫ h dμ`.
    pub fn invariant_average(&self, h: &Field) -> f64 {
        if self.density_uniform {
            h[0] / self.domain_length.sqrt()
        } else {
            let m = self.invariant_measure();
            self.grid.integrate(
                &self
                    .to_grid(h)
                    .iter()
                    .zip(m.density_on_grid())
                    .map(|(v, d)| v * d)
                    .collect::<Vec<_>>(),
            )
        }
    }

    /// `|h|_{H_μ}`.
    pub fn h_mu_norm(&self, h: &Field) -> f64 {
        if self.density_uniform {
            h.norm() / self.domain_length.sqrt()
        } else {
            let m = self.invariant_measure();
            let vals = self.to_grid(h);
            self.grid
                .integrate(
                    &vals
                        .iter()
                        .zip(m.density_on_grid())
                        .map(|(v, d)| v * v * d)
                        .collect::<Vec<_>>(),
                )
                .sqrt()
        }
    }

    /// The constant function `c` as a field.
    pub fn constant(&self, c: f64) -> Field {
        let mut f = Field::zeros(self.n_modes());
        f[0] = c * self.domain_length.sqrt();
        f
    }

    /// Checks `|e^{tA}h − ⟨h,μ⟩|_{H_μ} ≤ e^{−γt}|h|_{H_μ}` with `c = 1`.
    pub fn check_spectral_gap(&self, h: &Field, times: &[f64]) -> Result<SpectralGapReport> {
        if times.is_empty() {
            return Err(Error::invalid("times must be nonempty"));
        }
        let gap = self.spectral_gap();
        let mean = self.constant(self.invariant_average(h));
        let h_norm = self.h_mu_norm(h);
        let mut entries = Vec::with_capacity(times.len());
        for &t in times {
            let evolved = self.semigroup_apply(t, h)?;
            let lhs = self.h_mu_norm(&(&evolved - &mean));
            let bound = (-gap * t).exp() * h_norm;
            entries.push(GapEntry {
                t,
                lhs,
                bound,
                margin: bound - lhs,
            });
        }
        // Equality cases (h = e_1) may differ by a few ulps.
        let tol = 1e-12 * (1.0 + h_norm);
        let passed = entries.iter().all(|e| e.margin >= -tol);
        Ok(SpectralGapReport {
            gap,
            entries,
            passed,
        })
    }

    /// Neumann map `N_δ`: solution of `(δ − A)u = 0` with conormal
    /// derivative `h`. Mode `k` is `(h(0)e_k(0) + h(1)e_k(1)) / (δ + α_k)`.
    pub fn neumann_map(&self, delta: f64, h: &BoundaryData) -> Result<Field> {
        if !(delta > 0.0) {
            return Err(Error::invalid(format!("delta must be > 0, got {delta}")));
        }
        Ok(Field::from_coeffs(
            self.boundary
                .iter()
                .zip(&self.eigenvalues)
                .map(|(b, a)| (h.values[0] * b[0] + h.values[1] * b[1]) / (delta + a))
                .collect(),
        ))
    }

    /// Adjoint `N_δ^*: H → Z`, `⟨N_δ z, v⟩_H = ⟨z, N_δ^* v⟩_Z`.
    pub fn neumann_map_adjoint(&self, delta: f64, v: &Field) -> Result<BoundaryData> {
        if !(delta > 0.0) {
            return Err(Error::invalid(format!("delta must be > 0, got {delta}")));
        }
        let mut out = [0.0; 2];
        for ((c, b), a) in v.coeffs().iter().zip(&self.boundary).zip(&self.eigenvalues) {
            out[0] += c * b[0] / (delta + a);
            out[1] += c * b[1] / (delta + a);
        }
        Ok(BoundaryData { values: out })
    }

    /// The invariant density `m` as a field.
    pub fn density_field(&self) -> Field {
        let m = self.invariant_measure();
        self.project_grid(m.density_on_grid())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GapEntry {
    pub t: f64,
    pub lhs: f64,
    pub bound: f64,
    pub margin: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectralGapReport {
    pub gap: f64,
    pub entries: Vec<GapEntry>,
    pub passed: bool,
}

fn cosine_mode(k: usize, xi: f64) -> f64 {
    if k == 0 {
        1.0
    } else {
        SQRT_2 * (k as f64 * PI * xi).cos()
    }
}

fn interpolate(nodes: &[f64], values: &[f64], x: f64) -> f64 {
    let n = nodes.len();
    if x <= nodes[0] {
        return values[0];
    }
    if x >= nodes[n - 1] {
        return values[n - 1];
    }
    let h = nodes[1] - nodes[0];
    let i = (((x - nodes[0]) / h).floor() as usize).min(n - 2);
    let s = (x - nodes[i]) / h;
    values[i] * (1.0 - s) + values[i + 1] * s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference(n: usize) -> SpectralOperator {
        SpectralOperator::neumann_laplacian_1d(n).unwrap()
    }

    #[test]
    fn eigenvalues_and_gap() {
        let op = reference(4);
        let expected = [0.0, PI * PI, 4.0 * PI * PI, 9.0 * PI * PI];
        for (a, b) in op.eigenvalues().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((op.spectral_gap() - PI * PI).abs() < 1e-12);
    }

    #[test]
    fn eigenfunctions_solve_the_eigenproblem() {
        // Central differences on a fine grid: e_k'' = -α_k e_k, e_k'(0) = e_k'(1) = 0.
        let op = reference(4);
        let h = 1e-4;
        for k in 0..4 {
            for &x in &[0.1, 0.37, 0.5, 0.81] {
                let d2 = (op.eigenfunction_at(k, x + h) - 2.0 * op.eigenfunction_at(k, x)
                    + op.eigenfunction_at(k, x - h))
                    / (h * h);
                let rhs = -op.eigenvalue(k) * op.eigenfunction_at(k, x);
                assert!((d2 - rhs).abs() < 1e-4 * (1.0 + rhs.abs()), "k={k} x={x}");
            }
            for &x in &[0.0, 1.0] {
                let d1 = (op.eigenfunction_at(k, x + h) - op.eigenfunction_at(k, x - h)) / (2.0 * h);
                assert!(d1.abs() < 1e-10);
            }
        }
    }

    #[test]
    fn constant_mode_and_boundary_values() {
        let op = reference(4);
        assert_eq!(op.eigenfunction_at(0, 0.3), 1.0);
        let e0 = Field::unit(4, 0);
        assert!((e0.norm() - 1.0).abs() < 1e-15);
        let b = op.boundary_values(1);
        assert!((b[0] - SQRT_2).abs() < 1e-15);
        assert!((b[1] + SQRT_2).abs() < 1e-15);
        assert!(op.orthonormality_defect() < ORTHONORMALITY_TOL);
    }

    #[test]
    fn too_few_modes_rejected() {
        assert!(matches!(
            SpectralOperator::neumann_laplacian_1d(1),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn semigroup_examples() {
        let op = reference(4);
        let h = Field::from_coeffs(vec![0.3, -1.0, 2.0, 0.5]);
        assert_eq!(op.semigroup_apply(0.0, &h).unwrap(), h);
        let e1 = op.semigroup_apply(1.0 / (PI * PI), &Field::unit(4, 1)).unwrap();
        assert!((e1[1] - (-1.0f64).exp()).abs() < 1e-15);
        assert!((e1[1] - 0.367879).abs() < 1e-6);
        let e0 = op.semigroup_apply(3.7, &Field::unit(4, 0)).unwrap();
        assert_eq!(e0, Field::unit(4, 0));
        assert!(op.semigroup_apply(-1.0, &h).is_err());
    }

    #[test]
    fn invariant_average_examples() {
        let op = reference(8);
        assert_eq!(op.invariant_average(&Field::unit(8, 3)), 0.0);
        assert_eq!(op.invariant_average(&Field::unit(8, 0)), 1.0);
        let ramp = op.project(|x| x);
        assert!((op.invariant_average(&ramp) - 0.5).abs() < 1e-12);
        let m = op.invariant_measure();
        assert!((m.total_mass() - 1.0).abs() < 1e-12);
        assert_eq!(m.density_at(0.4), 1.0);
    }

    #[test]
    fn spectral_gap_check_examples() {
        let op = reference(6);
        let r = op.check_spectral_gap(&Field::unit(6, 1), &[1.0]).unwrap();
        assert!(r.passed);
        assert!((r.entries[0].lhs - (-PI * PI).exp()).abs() < 1e-15);
        assert!(r.entries[0].margin.abs() < 1e-15);

        let r0 = op.check_spectral_gap(&Field::unit(6, 0), &[0.0, 0.5, 2.0]).unwrap();
        assert!(r0.passed);
        assert!(r0.entries.iter().all(|e| e.lhs == 0.0));

        let h = Field::from_coeffs(vec![0.0, 0.4, -1.2, 0.9, 0.3, -0.7]);
        let r = op.check_spectral_gap(&h, &[0.5]).unwrap();
        assert!(r.passed && r.entries[0].margin >= 0.0);
        assert!(op.check_spectral_gap(&h, &[-0.1]).is_err());
        assert!(op.check_spectral_gap(&h, &[]).is_err());
    }

    #[test]
    fn neumann_map_examples() {
        let op = reference(8);
        let z = op.neumann_map(1.0, &BoundaryData::zero()).unwrap();
        assert!(z.coeffs().iter().all(|c| *c == 0.0));
        let u = op.neumann_map(1.0, &BoundaryData::new(1.0, 1.0)).unwrap();
        assert!((u[0] - 2.0).abs() < 1e-15);
        let u = op.neumann_map(1.0, &BoundaryData::new(1.0, 0.0)).unwrap();
        assert!((u[1] - SQRT_2 / (1.0 + PI * PI)).abs() < 1e-15);
        assert!(op.neumann_map(0.0, &BoundaryData::new(1.0, 0.0)).is_err());
    }

    #[test]
    fn closed_form_neumann_solution_has_expected_mean() {
        // u - u'' = 0, -u'(0) = 1, u'(1) = 1: u = cosh(ξ - 1/2) / sinh(1/2).
        let op = reference(8);
        let mean = op.project(|x| (x - 0.5).cosh() / 0.5f64.sinh())[0];
        let u = op.neumann_map(1.0, &BoundaryData::new(1.0, 1.0)).unwrap();
        assert!((mean - u[0]).abs() < 1e-4);
    }

    #[test]
    fn adjoint_pairs_with_neumann_map() {
        let op = reference(6);
        let z = BoundaryData::new(0.7, -1.3);
        let v = Field::from_coeffs(vec![0.2, 1.0, -0.5, 0.3, 0.0, 0.8]);
        for delta in [0.5, 1.0, 7.0] {
            let lhs = op.neumann_map(delta, &z).unwrap().dot(&v);
            let rhs = z.dot(&op.neumann_map_adjoint(delta, &v).unwrap());
            assert!((lhs - rhs).abs() < 1e-14);
        }
    }

    #[test]
    fn divergence_builder_matches_reference_for_unit_diffusivity() {
        let op = SpectralOperator::divergence_1d(5, 400, |_| 1.0).unwrap();
        assert!(op.orthonormality_defect() < ORTHONORMALITY_TOL);
        let reference = reference(5);
        for k in 0..5 {
            let rel = (op.eigenvalue(k) - reference.eigenvalue(k)).abs() / (1.0 + reference.eigenvalue(k));
            assert!(rel < 1e-3, "k={k}");
            let b = op.boundary_values(k);
            let rb = reference.boundary_values(k);
            assert!((b[0] - rb[0]).abs() < 1e-3 && (b[1] - rb[1]).abs() < 1e-3, "k={k}");
        }
        assert_eq!(op.eigenvalue(0), 0.0);
    }

    #[test]
    fn divergence_builder_variable_coefficient() {
        let op = SpectralOperator::divergence_1d(4, 200, |x| 1.0 + 0.5 * x).unwrap();
        assert!(op.orthonormality_defect() < ORTHONORMALITY_TOL);
        let ev = op.eigenvalues();
        assert!(ev.windows(2).all(|w| w[0] <= w[1]));
        assert!(ev[1] > PI * PI && ev[1] < 1.5 * PI * PI);
        // Mass is conserved by the semigroup.
        let h = op.project(|x| x * x);
        let e = op.semigroup_apply(0.3, &h).unwrap();
        assert!((op.invariant_average(&e) - op.invariant_average(&h)).abs() < 1e-14);
    }
}
