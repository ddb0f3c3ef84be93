//! Reaction and noise-gain coefficients, their Nemytskii operators, and the
//! averaged coefficients `F̄`, `Ḡ`, `Σ̄` of the fast-transport limit.
//!
//! Coefficients come from a small catalog of closed forms so that configs
//! stay reproducible and Lipschitz constants are known exactly.

use std::fmt;
use std::f64::consts::PI;

use rand::Rng;
use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::noise::{CovarianceSpectrumB, CovarianceSpectrumQ};
use crate::spectral::{BoundaryData, Field, SpectralOperator};

/// A scalar coefficient `(t, ξ, r) ↦ value`. All entries are autonomous.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Coefficient {
    Zero,
    Constant {
        value: f64,
    },
    /// `slope · r + offset`
    Linear {
        slope: f64,
        #[serde(default)]
        offset: f64,
    },
    /// `slope · r + amplitude · sin(wavenumber · π · ξ)`
    LinearPlusSource {
        slope: f64,
        amplitude: f64,
        #[serde(default = "unit")]
        wavenumber: f64,
    },
    /// `slope · ξ · r`
    SpaceWeighted { slope: f64 },
    /// `rate · c · (1 − c/capacity)` with `c = clamp(r, 0, capacity)`
    LogisticClipped { rate: f64, capacity: f64 },
}

fn unit() -> f64 {
    1.0
}

impl Coefficient {
    pub fn eval(&self, _t: f64, xi: f64, r: f64) -> f64 {
        match *self {
            Coefficient::Zero => 0.0,
            Coefficient::Constant { value } => value,
            Coefficient::Linear { slope, offset } => slope * r + offset,
            Coefficient::LinearPlusSource {
                slope,
                amplitude,
                wavenumber,
            } => slope * r + amplitude * (wavenumber * PI * xi).sin(),
            Coefficient::SpaceWeighted { slope } => slope * xi * r,
            Coefficient::LogisticClipped { rate, capacity } => {
                let c = r.clamp(0.0, capacity);
                rate * c * (1.0 - c / capacity)
            }
        }
    }

    /// `∂f/∂r`.
    pub fn d_dr(&self, _t: f64, xi: f64, r: f64) -> f64 {
        match *self {
            Coefficient::Zero | Coefficient::Constant { .. } => 0.0,
            Coefficient::Linear { slope, .. } | Coefficient::LinearPlusSource { slope, .. } => slope,
            Coefficient::SpaceWeighted { slope } => slope * xi,
            Coefficient::LogisticClipped { rate, capacity } => {
                if r <= 0.0 || r >= capacity {
                    0.0
                } else {
                    rate * (1.0 - 2.0 * r / capacity)
                }
            }
        }
    }

    /// Lipschitz constant in `r`, uniform in `(t, ξ) ∈ [0,∞) × [0,1]`.
    pub fn lipschitz(&self) -> f64 {
        match *self {
            Coefficient::Zero | Coefficient::Constant { .. } => 0.0,
            Coefficient::Linear { slope, .. }
            | Coefficient::LinearPlusSource { slope, .. }
            | Coefficient::SpaceWeighted { slope } => slope.abs(),
            Coefficient::LogisticClipped { rate, .. } => rate.abs(),
        }
    }

    /// `sup_r |f(t,ξ,r)|` if finite.
    pub fn sup_bound(&self) -> Option<f64> {
        match *self {
            Coefficient::Zero => Some(0.0),
            Coefficient::Constant { value } => Some(value.abs()),
            Coefficient::Linear { slope, offset } if slope == 0.0 => Some(offset.abs()),
            Coefficient::LinearPlusSource { slope, amplitude, .. } if slope == 0.0 => {
                Some(amplitude.abs())
            }
            Coefficient::SpaceWeighted { slope } if slope == 0.0 => Some(0.0),
            Coefficient::LogisticClipped { rate, capacity } => Some(rate.abs() * capacity / 4.0),
            _ => None,
        }
    }

    /// `Some(slope)` when `f(t,ξ,r) = slope·r + f(t,ξ,0)` with a
    /// ξ-independent slope.
    pub fn affine_slope(&self) -> Option<f64> {
        match *self {
            Coefficient::Zero | Coefficient::Constant { .. } => Some(0.0),
            Coefficient::Linear { slope, .. } | Coefficient::LinearPlusSource { slope, .. } => {
                Some(slope)
            }
            Coefficient::SpaceWeighted { slope } if slope == 0.0 => Some(0.0),
            _ => None,
        }
    }

    /// True when the value does not depend on `ξ`.
    pub fn is_space_independent(&self) -> bool {
        match *self {
            Coefficient::Zero
            | Coefficient::Constant { .. }
            | Coefficient::Linear { .. }
            | Coefficient::LogisticClipped { .. } => true,
            Coefficient::LinearPlusSource { amplitude, .. } => amplitude == 0.0,
            Coefficient::SpaceWeighted { slope } => slope == 0.0,
        }
    }

    /// `Some(c)` when the coefficient is the constant `c`.
    pub fn constant_value(&self) -> Option<f64> {
        match *self {
            Coefficient::Zero => Some(0.0),
            Coefficient::Constant { value } => Some(value),
            Coefficient::Linear { slope, offset } if slope == 0.0 => Some(offset),
            _ => None,
        }
    }
}

/// Boundary gain `σ(t, p)` at the two boundary points, constant in time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryGain {
    pub left: f64,
    pub right: f64,
}

impl BoundaryGain {
    pub fn uniform(value: f64) -> Self {
        BoundaryGain {
            left: value,
            right: value,
        }
    }

    pub fn at(&self, _t: f64, point: usize) -> f64 {
        if point == 0 {
            self.left
        } else {
            self.right
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSet {
    pub f: Coefficient,
    pub g: Coefficient,
    pub sigma: BoundaryGain,
    pub lipschitz_bound_f: f64,
    pub lipschitz_bound_g: f64,
    pub g_sup_bound: Option<f64>,
}

impl CoefficientSet {
    /// Lipschitz bounds and the `g` sup bound are taken from the catalog.
    pub fn new(f: Coefficient, g: Coefficient, sigma: BoundaryGain) -> Self {
        CoefficientSet {
            lipschitz_bound_f: f.lipschitz(),
            lipschitz_bound_g: g.lipschitz(),
            g_sup_bound: g.sup_bound(),
            f,
            g,
            sigma,
        }
    }

    pub fn f_at(&self, t: f64, xi: f64, r: f64) -> f64 {
        self.f.eval(t, xi, r)
    }

    pub fn g_at(&self, t: f64, xi: f64, r: f64) -> f64 {
        self.g.eval(t, xi, r)
    }

    pub fn sigma_at(&self, t: f64, point: usize) -> f64 {
        self.sigma.at(t, point)
    }

    /// `F(t,u)(ξ) = f(t,ξ,u(ξ))`, evaluated on the quadrature grid and
    /// projected back onto the modes.
    pub fn nemytskii_f(&self, op: &SpectralOperator, t: f64, u: &Field) -> Field {
        nemytskii(op, &self.f, t, u)
    }

    /// `G(t,u)h = g(t,·,u)·h`.
    pub fn nemytskii_g(&self, op: &SpectralOperator, t: f64, u: &Field, h: &Field) -> Field {
        let ug = op.to_grid(u);
        let hg = op.to_grid(h);
        let vals: Vec<f64> = op
            .grid()
            .nodes
            .iter()
            .zip(ug.iter().zip(&hg))
            .map(|(&x, (&uv, &hv))| self.g.eval(t, x, uv) * hv)
            .collect();
        op.project_grid(&vals)
    }

    /// Stochastic Lipschitz and boundedness probe over random samples.
    pub fn check_lipschitz<R: Rng>(&self, rng: &mut R, samples: usize, r_range: f64, horizon: f64) -> LipschitzReport {
        let mut worst_f = 0.0f64;
        let mut worst_g = 0.0f64;
        let mut sup_f0 = 0.0f64;
        let mut sup_g0 = 0.0f64;
        for _ in 0..samples {
            let t = rng.random::<f64>() * horizon;
            let xi = rng.random::<f64>();
            let r1 = (2.0 * rng.random::<f64>() - 1.0) * r_range;
            let r2 = (2.0 * rng.random::<f64>() - 1.0) * r_range;
            if r1 == r2 {
                continue;
            }
            let dr = (r1 - r2).abs();
            worst_f = worst_f.max((self.f.eval(t, xi, r1) - self.f.eval(t, xi, r2)).abs() / dr);
            worst_g = worst_g.max((self.g.eval(t, xi, r1) - self.g.eval(t, xi, r2)).abs() / dr);
            sup_f0 = sup_f0.max(self.f.eval(t, xi, 0.0).abs());
            sup_g0 = sup_g0.max(self.g.eval(t, xi, 0.0).abs());
        }
        let tol = 1e-9;
        let passed = worst_f <= self.lipschitz_bound_f * (1.0 + tol) + tol
            && worst_g <= self.lipschitz_bound_g * (1.0 + tol) + tol
            && sup_f0.is_finite()
            && sup_g0.is_finite();
        LipschitzReport {
            samples,
            observed_f: worst_f,
            observed_g: worst_g,
            declared_f: self.lipschitz_bound_f,
            declared_g: self.lipschitz_bound_g,
            sup_f_at_zero: sup_f0,
            sup_g_at_zero: sup_g0,
            passed,
        }
    }
}

pub(crate) fn nemytskii(op: &SpectralOperator, c: &Coefficient, t: f64, u: &Field) -> Field {
    if c.constant_value() == Some(0.0) {
        return Field::zeros(op.n_modes());
    }
    if let (Some(slope), true) = (c.affine_slope(), c.is_space_independent()) {
        // slope·u + offset on the constant mode, exact in the spectral basis.
        let mut out = u.scaled(slope);
        out[0] += op.constant(c.eval(t, 0.5, 0.0))[0];
        return out;
    }
    let ug = op.to_grid(u);
    let vals: Vec<f64> = op
        .grid()
        .nodes
        .iter()
        .zip(&ug)
        .map(|(&x, &v)| c.eval(t, x, v))
        .collect();
    op.project_grid(&vals)
}

/// Evidence from sampled Lipschitz ratios; never a proof.
#[derive(Clone, Debug, Serialize)]
pub struct LipschitzReport {
    pub samples: usize,
    pub observed_f: f64,
    pub observed_g: f64,
    pub declared_f: f64,
    pub declared_g: f64,
    pub sup_f_at_zero: f64,
    pub sup_g_at_zero: f64,
    pub passed: bool,
}

/// The limit ratio `ρ̄ = lim β(ε)/α(ε) ∈ [0, +∞]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RhoBar {
    Finite(f64),
    Infinite,
}

impl RhoBar {
    pub fn finite(rho: f64) -> Result<Self> {
        if !(rho >= 0.0) || !rho.is_finite() {
            return Err(Error::invalid(format!("rho_bar must be a finite nonnegative number, got {rho}")));
        }
        Ok(RhoBar::Finite(rho))
    }

    /// `(1/(1+ρ̄), ρ̄/(1+ρ̄))`, mapped to `(0, 1)` at infinity.
    pub fn weights(&self) -> (f64, f64) {
        match *self {
            RhoBar::Finite(r) => (1.0 / (1.0 + r), r / (1.0 + r)),
            RhoBar::Infinite => (0.0, 1.0),
        }
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, RhoBar::Infinite)
    }
}

impl fmt::Display for RhoBar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RhoBar::Finite(r) => write!(f, "{r}"),
            RhoBar::Infinite => write!(f, "inf"),
        }
    }
}

impl Serialize for RhoBar {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            RhoBar::Finite(r) => s.serialize_f64(*r),
            RhoBar::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for RhoBar {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct RhoVisitor;
        impl Visitor<'_> for RhoVisitor {
            type Value = RhoBar;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a nonnegative number or \"inf\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<RhoBar, E> {
                RhoBar::finite(v).map_err(E::custom)
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<RhoBar, E> {
                Ok(RhoBar::Finite(v as f64))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<RhoBar, E> {
                RhoBar::finite(v as f64).map_err(E::custom)
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<RhoBar, E> {
                match v {
                    "inf" | "infinity" | "+inf" => Ok(RhoBar::Infinite),
                    _ => Err(E::custom(format!("expected \"inf\", got {v:?}"))),
                }
            }
        }
        d.deserialize_any(RhoVisitor)
    }
}

/// The one-dimensional averaged dynamics: `F̄`, the interior row
/// `√Q[G(t,u)m]`, the boundary row `δ₀√B[Σ(t)N*_{δ₀}m]`, and the noise
/// intensity `H_ρ̄`.
#[derive(Clone, Debug)]
pub struct AveragedModel {
    op: SpectralOperator,
    coefficients: CoefficientSet,
    q: CovarianceSpectrumQ,
    b: CovarianceSpectrumB,
    delta0: f64,
    rho_bar: RhoBar,
    density_grid: Vec<f64>,
    /// `N*_{δ₀} m` at the two boundary points.
    adjoint_density: [f64; 2],
}

impl AveragedModel {
    pub fn new(
        op: &SpectralOperator,
        coefficients: CoefficientSet,
        q: CovarianceSpectrumQ,
        b: CovarianceSpectrumB,
        delta0: f64,
        rho_bar: RhoBar,
    ) -> Result<Self> {
        if !(delta0 > 0.0) {
            return Err(Error::invalid(format!("delta0 must be > 0, got {delta0}")));
        }
        if q.len() != op.n_modes() {
            return Err(Error::invalid(format!(
                "Q spectrum has {} eigenvalues for {} modes",
                q.len(),
                op.n_modes()
            )));
        }
        let measure = op.invariant_measure();
        let density_grid = measure.density_on_grid().to_vec();
        let adjoint_density = if op.density_is_uniform() {
            // m = |O|⁻¹ has only a constant-mode component.
            let m0 = op.constant(1.0 / op.domain_length())[0];
            let b0 = op.boundary_values(0);
            [m0 * b0[0] / delta0, m0 * b0[1] / delta0]
        } else {
            op.neumann_map_adjoint(delta0, &op.density_field())?.values
        };
        Ok(AveragedModel {
            op: op.clone(),
            coefficients,
            q,
            b,
            delta0,
            rho_bar,
            density_grid,
            adjoint_density,
        })
    }

    pub fn operator(&self) -> &SpectralOperator {
        &self.op
    }

    pub fn coefficients(&self) -> &CoefficientSet {
        &self.coefficients
    }

    pub fn q_spectrum(&self) -> &CovarianceSpectrumQ {
        &self.q
    }

    pub fn b_spectrum(&self) -> &CovarianceSpectrumB {
        &self.b
    }

    pub fn delta0(&self) -> f64 {
        self.delta0
    }

    pub fn rho_bar(&self) -> RhoBar {
        self.rho_bar
    }

    pub fn with_rho_bar(&self, rho_bar: RhoBar) -> Self {
        let mut m = self.clone();
        m.rho_bar = rho_bar;
        m
    }

    fn mu_average<F: Fn(f64) -> f64>(&self, func: F) -> f64 {
        let grid = self.op.grid();
        grid.nodes
            .iter()
            .zip(&grid.weights)
            .zip(&self.density_grid)
            .map(|((&x, w), m)| w * m * func(x))
            .sum()
    }

    /// `F̄(t,u) = ∫ f(t,ξ,u) dμ(ξ)`.
    pub fn averaged_f(&self, t: f64, u: f64) -> f64 {
        let f = &self.coefficients.f;
        if f.is_space_independent() {
            return f.eval(t, 0.5, u);
        }
        self.mu_average(|x| f.eval(t, x, u))
    }

    pub fn averaged_f_du(&self, t: f64, u: f64) -> f64 {
        let f = &self.coefficients.f;
        if f.is_space_independent() {
            return f.d_dr(t, 0.5, u);
        }
        self.mu_average(|x| f.d_dr(t, x, u))
    }

    fn g_row_with<F: Fn(f64, f64) -> f64>(&self, u: f64, g: F) -> Field {
        let n = self.op.n_modes();
        let lambdas = self.q.lambdas();
        if self.coefficients.g.is_space_independent() && self.op.density_is_uniform() {
            // g(u)·m is constant, so only the e_0 component survives.
            let mut row = Field::zeros(n);
            row[0] = lambdas[0] * self.op.constant(g(0.5, u) / self.op.domain_length())[0];
            return row;
        }
        let grid = self.op.grid();
        let vals: Vec<f64> = grid
            .nodes
            .iter()
            .zip(&self.density_grid)
            .map(|(&x, m)| g(x, u) * m)
            .collect();
        let proj = self.op.project_grid(&vals);
        Field::from_coeffs(proj.coeffs().iter().zip(lambdas).map(|(c, l)| c * l).collect())
    }

    /// `√Q[G(t,u)m]`: component `j` is `λ_j ⟨g(t,·,u)m, e_j⟩`.
    pub fn averaged_g_row(&self, t: f64, u: f64) -> Field {
        let g = &self.coefficients.g;
        self.g_row_with(u, |x, r| g.eval(t, x, r))
    }

    pub fn averaged_g_row_du(&self, t: f64, u: f64) -> Field {
        let g = &self.coefficients.g;
        self.g_row_with(u, |x, r| g.d_dr(t, x, r))
    }

    /// `Ḡ(t,u)[√Q h] = ⟨h, √Q[G(t,u)m]⟩`.
    pub fn averaged_g_pairing(&self, t: f64, u: f64, h: &Field) -> f64 {
        self.averaged_g_row(t, u).dot(h)
    }

    /// `δ₀√B[Σ(t)N*_{δ₀}m]`: component `p` is `δ₀ θ_p σ(t,p) (N*m)(p)`.
    pub fn averaged_sigma_row(&self, t: f64) -> BoundaryData {
        let th = self.b.thetas();
        BoundaryData::new(
            self.delta0 * th[0] * self.coefficients.sigma_at(t, 0) * self.adjoint_density[0],
            self.delta0 * th[1] * self.coefficients.sigma_at(t, 1) * self.adjoint_density[1],
        )
    }

    /// `H_ρ̄(t,u) = [|√Q[G m]|² + ρ̄²|δ₀√B[ΣN*m]|²] / (1+ρ̄)²`.
    pub fn noise_intensity(&self, t: f64, u: f64) -> f64 {
        let (wh, wz) = self.rho_bar.weights();
        let mut h = 0.0;
        if wh != 0.0 {
            let row = self.averaged_g_row(t, u);
            h += wh * wh * row.dot(&row);
        }
        h + wz * wz * self.averaged_sigma_row(t).norm_sq()
    }

    pub fn noise_intensity_du(&self, t: f64, u: f64) -> f64 {
        let (wh, _) = self.rho_bar.weights();
        if wh == 0.0 || self.coefficients.g.lipschitz() == 0.0 {
            return 0.0;
        }
        2.0 * wh * wh * self.averaged_g_row(t, u).dot(&self.averaged_g_row_du(t, u))
    }

    /// True for additive interior noise (`g` constant) and time-independent `σ`.
    pub fn is_additive(&self) -> bool {
        self.coefficients.g.constant_value().is_some()
    }

    pub fn check_nondegeneracy(&self, t_grid: &[f64], u_grid: &[f64], floor: f64) -> Result<NondegeneracyReport> {
        if t_grid.is_empty() || u_grid.is_empty() {
            return Err(Error::invalid("nondegeneracy grids must be nonempty"));
        }
        let mut min = f64::INFINITY;
        let mut at = (0.0, 0.0);
        for &t in t_grid {
            for &u in u_grid {
                let h = self.noise_intensity(t, u);
                if h < min {
                    min = h;
                    at = (t, u);
                }
            }
        }
        Ok(NondegeneracyReport {
            min_h: min,
            at_t: at.0,
            at_u: at.1,
            floor,
            passed: min > floor,
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct NondegeneracyReport {
    pub min_h: f64,
    pub at_t: f64,
    pub at_u: f64,
    pub floor: f64,
    pub passed: bool,
}
