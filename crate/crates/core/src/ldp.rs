//! Action functional of the averaged dynamics, its minimizing control,
//! the prefix action `J_δ`, and the quasi-potential.
//!
//! Two discretizations coexist on purpose. [`action_i`] and
//! [`minimizing_control`] use nodal values (centered differences, trapezoid
//! rule), so that `½|φ̂|² = I(w)` holds node by node. The path optimizer
//! works with the segment form (exact slopes, midpoint rule), which has no
//! odd-even decoupling and is what the minimization actually needs.

use std::io::Write;
use std::path::Path;

use crate::coefficients::AveragedModel;
use crate::error::{Error, Result};
use crate::exit::DomainSpec;
use crate::optimize::{minimize_tridiagonal, DEFAULT_GRAD_TOL, DEFAULT_MAX_ITERS};
use crate::solver::{fmt_f64, Control, ControlValue, FieldTrajectory, ScalarTrajectory};
use crate::spectral::{BoundaryData, Field};

/// Non-constant modes above this size count as spatial dependence.
pub const SPATIAL_TOL: f64 = 1e-12;

pub const DEFAULT_HORIZONS: [f64; 3] = [2.0, 4.0, 8.0];
pub const DEFAULT_NODES: usize = 200;

/// Piecewise-linear path on a uniform grid over `[t0, t1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarPath {
    t0: f64,
    t1: f64,
    values: Vec<f64>,
}

impl ScalarPath {
    pub fn new(t0: f64, t1: f64, values: Vec<f64>) -> Result<Self> {
        if !(t1 > t0) {
            return Err(Error::invalid(format!("path interval [{t0}, {t1}] is empty")));
        }
        if values.len() < 2 {
            return Err(Error::invalid("a path needs at least two nodes"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("path values must be finite"));
        }
        Ok(ScalarPath { t0, t1, values })
    }

    pub fn from_fn<F: Fn(f64) -> f64>(t0: f64, t1: f64, nodes: usize, f: F) -> Result<Self> {
        if nodes < 2 {
            return Err(Error::invalid("a path needs at least two nodes"));
        }
        let h = (t1 - t0) / (nodes - 1) as f64;
        Self::new(t0, t1, (0..nodes).map(|i| f(t0 + i as f64 * h)).collect())
    }

    /// Requires a uniform time grid.
    pub fn from_trajectory(traj: &ScalarTrajectory) -> Result<Self> {
        let n = traj.times.len();
        if n < 2 {
            return Err(Error::invalid("a path needs at least two nodes"));
        }
        let (t0, t1) = (traj.times[0], traj.times[n - 1]);
        let h = (t1 - t0) / (n - 1) as f64;
        for (i, t) in traj.times.iter().enumerate() {
            if (t - (t0 + i as f64 * h)).abs() > 1e-9 * (1.0 + t.abs()) {
                return Err(Error::invalid("trajectory grid is not uniform"));
            }
        }
        Self::new(t0, t1, traj.values.clone())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn start(&self) -> f64 {
        self.t0
    }

    pub fn end(&self) -> f64 {
        self.t1
    }

    pub fn step(&self) -> f64 {
        (self.t1 - self.t0) / (self.values.len() - 1) as f64
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn time(&self, i: usize) -> f64 {
        if i + 1 == self.values.len() {
            self.t1
        } else {
            self.t0 + i as f64 * self.step()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.values.len()).map(|i| self.time(i)).collect()
    }

    /// Index of the segment containing `t` (clamped to the interval).
    pub fn segment(&self, t: f64) -> usize {
        let s = ((t - self.t0) / self.step()).floor();
        (s.max(0.0) as usize).min(self.values.len() - 2)
    }

    pub fn slope(&self, seg: usize) -> f64 {
        (self.values[seg + 1] - self.values[seg]) / self.step()
    }

    pub fn eval(&self, t: f64) -> f64 {
        let s = self.segment(t);
        self.values[s] + (t - self.time(s)) * self.slope(s)
    }

    /// Nodal derivative: centered inside, one-sided at the ends.
    pub fn nodal_derivative(&self) -> Vec<f64> {
        let n = self.values.len();
        let h = self.step();
        (0..n)
            .map(|i| {
                if i == 0 {
                    (self.values[1] - self.values[0]) / h
                } else if i == n - 1 {
                    (self.values[n - 1] - self.values[n - 2]) / h
                } else {
                    (self.values[i + 1] - self.values[i - 1]) / (2.0 * h)
                }
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "value"])?;
        for (i, v) in self.values.iter().enumerate() {
            w.write_record([fmt_f64(self.time(i)), fmt_f64(*v)])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Value of the rate function; `Infinite` marks paths outside its
/// effective domain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ActionValue {
    Finite(f64),
    Infinite,
}

impl ActionValue {
    pub fn value(&self) -> f64 {
        match *self {
            ActionValue::Finite(v) => v,
            ActionValue::Infinite => f64::INFINITY,
        }
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, ActionValue::Infinite)
    }
}

/// Nodal control values `(φ_H, φ_Z)`.
#[derive(Clone, Debug)]
pub struct ControlPath {
    pub times: Vec<f64>,
    pub phi_h: Vec<Field>,
    pub phi_z: Vec<BoundaryData>,
}

impl ControlPath {
    /// `|φ|²_{L²(0,T;V)}` by the trapezoid rule, with
    /// `|φ(t)|²_V = |φ_H|² + |φ_Z|²`.
    pub fn l2_norm_sq(&self) -> f64 {
        let sq: Vec<f64> = self
            .phi_h
            .iter()
            .zip(&self.phi_z)
            .map(|(h, z)| h.dot(h) + z.norm_sq())
            .collect();
        trapezoid(&self.times, &sq)
    }

    /// CSV with header `t,phi_H_0,…,phi_Z_0,phi_Z_1`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let n = self.phi_h.first().map_or(0, Field::len);
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((0..n).map(|k| format!("phi_H_{k}")));
        header.push("phi_Z_0".into());
        header.push("phi_Z_1".into());
        w.write_record(&header)?;
        for ((t, h), z) in self.times.iter().zip(&self.phi_h).zip(&self.phi_z) {
            let mut rec = vec![fmt_f64(*t)];
            rec.extend(h.coeffs().iter().map(|c| fmt_f64(*c)));
            rec.push(fmt_f64(z.values[0]));
            rec.push(fmt_f64(z.values[1]));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

impl Control for ControlPath {
    /// Linear interpolation between nodes.
    fn value(&self, t: f64, inside: f64) -> ControlValue {
        let n = self.times.len();
        let seg = self.times.partition_point(|&s| s <= inside).clamp(1, n - 1) - 1;
        let (a, b) = (self.times[seg], self.times[seg + 1]);
        let w = ((t - a) / (b - a)).clamp(0.0, 1.0);
        ControlValue {
            phi_h: &self.phi_h[seg].scaled(1.0 - w) + &self.phi_h[seg + 1].scaled(w),
            phi_z: BoundaryData::new(
                (1.0 - w) * self.phi_z[seg].values[0] + w * self.phi_z[seg + 1].values[0],
                (1.0 - w) * self.phi_z[seg].values[1] + w * self.phi_z[seg + 1].values[1],
            ),
        }
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.times.clone()
    }
}

fn trapezoid(t: &[f64], v: &[f64]) -> f64 {
    t.windows(2)
        .zip(v.windows(2))
        .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
        .sum()
}

fn positive_intensity(model: &AveragedModel, t: f64, u: f64) -> Result<f64> {
    let h = model.noise_intensity(t, u);
    if h > 0.0 {
        Ok(h)
    } else {
        Err(Error::Nondegeneracy { t, u, value: h })
    }
}

/// `I(w) = ½∫|w′ − F̄(t,w)|²/H(t,w) dt` on the path's interval.
pub fn action_i(model: &AveragedModel, w: &ScalarPath) -> Result<ActionValue> {
    let d = w.nodal_derivative();
    let times = w.times();
    let mut run = Vec::with_capacity(w.len());
    for i in 0..w.len() {
        let (t, u) = (times[i], w.values[i]);
        let h = positive_intensity(model, t, u)?;
        let r = d[i] - model.averaged_f(t, u);
        run.push(0.5 * r * r / h);
    }
    Ok(ActionValue::Finite(trapezoid(&times, &run)))
}

/// `I^x(w)`: `+∞` unless `w` starts at `x_mean`.
pub fn action_from(model: &AveragedModel, x_mean: f64, w: &ScalarPath) -> Result<ActionValue> {
    if (w.values[0] - x_mean).abs() > SPATIAL_TOL * (1.0 + x_mean.abs()) {
        return Ok(ActionValue::Infinite);
    }
    action_i(model, w)
}

/// Action of a field-valued path: `+∞` as soon as any state has a
/// non-constant component, otherwise the action of its constant mode.
pub fn action_field_path(model: &AveragedModel, traj: &FieldTrajectory) -> Result<ActionValue> {
    if traj.states.iter().any(|s| s.max_nonconstant() > SPATIAL_TOL) {
        return Ok(ActionValue::Infinite);
    }
    let scalar = traj.mean_mode(model.operator());
    action_i(model, &ScalarPath::from_trajectory(&scalar)?)
}

/// The control `φ̂` attaining the action of `w`, with
/// `φ̂_H = w_H c √Q[G(w)m]`, `φ̂_Z = w_Z c δ₀√B[ΣN*m]` and
/// `c = (w′ − F̄(w))/H(w)`.
///
/// `nodes` holds the nodal values (centered differences). As a
/// [`Control`] it is evaluated exactly on each segment of `w`.
pub struct MinimizingControl<'a> {
    model: &'a AveragedModel,
    path: ScalarPath,
    pub nodes: ControlPath,
}

impl MinimizingControl<'_> {
    fn at(&self, t: f64, u: f64, slope: f64) -> ControlValue {
        control_value(self.model, t, u, slope, self.model.noise_intensity(t, u))
    }

    pub fn path(&self) -> &ScalarPath {
        &self.path
    }
}

fn control_value(model: &AveragedModel, t: f64, u: f64, slope: f64, h: f64) -> ControlValue {
    let (wh, wz) = model.rho_bar().weights();
    let c = (slope - model.averaged_f(t, u)) / h;
    ControlValue {
        phi_h: if wh == 0.0 {
            Field::zeros(model.operator().n_modes())
        } else {
            model.averaged_g_row(t, u).scaled(wh * c)
        },
        phi_z: model.averaged_sigma_row(t).scaled(wz * c),
    }
}

impl Control for MinimizingControl<'_> {
    fn value(&self, t: f64, inside: f64) -> ControlValue {
        let seg = self.path.segment(inside);
        let u = self.path.values[seg] + (t - self.path.time(seg)) * self.path.slope(seg);
        self.at(t, u, self.path.slope(seg))
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.path.times()
    }
}

pub fn minimizing_control<'a>(model: &'a AveragedModel, w: &ScalarPath) -> Result<MinimizingControl<'a>> {
    let d = w.nodal_derivative();
    let times = w.times();
    let mut phi_h = Vec::with_capacity(w.len());
    let mut phi_z = Vec::with_capacity(w.len());
    for i in 0..w.len() {
        let h = positive_intensity(model, times[i], w.values[i])?;
        let v = control_value(model, times[i], w.values[i], d[i], h);
        phi_h.push(v.phi_h);
        phi_z.push(v.phi_z);
    }
    Ok(MinimizingControl {
        model,
        path: w.clone(),
        nodes: ControlPath { times, phi_h, phi_z },
    })
}

/// Segment form of the discrete action for a path with fixed end values;
/// writes the gradient with respect to the interior nodes. Returns NaN if
/// `H ≤ 0` is met.
fn segment_action(model: &AveragedModel, t0: f64, h: f64, a: f64, b: f64, interior: &[f64], grad: &mut [f64]) -> f64 {
    let m = interior.len();
    let node = |i: usize| -> f64 {
        if i == 0 {
            a
        } else if i == m + 1 {
            b
        } else {
            interior[i - 1]
        }
    };
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut total = 0.0;
    for i in 0..=m {
        let (wl, wr) = (node(i), node(i + 1));
        let tm = t0 + (i as f64 + 0.5) * h;
        let mid = 0.5 * (wl + wr);
        let s = (wr - wl) / h;
        let hh = model.noise_intensity(tm, mid);
        if !(hh > 0.0) {
            return f64::NAN;
        }
        let r = s - model.averaged_f(tm, mid);
        total += h * 0.5 * r * r / hh;
        let dl_ds = r / hh;
        let dl_dm = -r * model.averaged_f_du(tm, mid) / hh - 0.5 * r * r * model.noise_intensity_du(tm, mid) / (hh * hh);
        if i >= 1 {
            grad[i - 1] += -dl_ds + 0.5 * h * dl_dm;
        }
        if i < m {
            grad[i] += dl_ds + 0.5 * h * dl_dm;
        }
    }
    total
}

/// Minimal discrete action over paths on `[t0, t1]` from `a` to `b` with
/// `nodes` grid points, starting from the straight line.
pub fn minimize_action(model: &AveragedModel, t0: f64, t1: f64, a: f64, b: f64, nodes: usize) -> Result<(f64, ScalarPath)> {
    if !(t1 > t0) {
        return Err(Error::invalid(format!("horizon [{t0}, {t1}] is empty")));
    }
    if nodes < 2 {
        return Err(Error::invalid("need at least two path nodes"));
    }
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::invalid("path endpoints must be finite"));
    }
    let h = (t1 - t0) / (nodes - 1) as f64;
    let x0: Vec<f64> = (1..nodes - 1).map(|i| a + (b - a) * i as f64 / (nodes - 1) as f64).collect();
    let f = |x: &[f64], g: &mut [f64]| segment_action(model, t0, h, a, b, x, g);
    let res = minimize_tridiagonal(&f, x0, DEFAULT_GRAD_TOL, DEFAULT_MAX_ITERS)?;
    let mut values = Vec::with_capacity(nodes);
    values.push(a);
    values.extend_from_slice(&res.x);
    values.push(b);
    let path = ScalarPath::new(t0, t1, values)?;
    if !res.value.is_finite() {
        let (i, u) = path
            .values
            .iter()
            .enumerate()
            .find(|(i, u)| !(model.noise_intensity(path.time(*i), **u) > 0.0))
            .map(|(i, u)| (i, *u))
            .unwrap_or((0, a));
        return Err(Error::Nondegeneracy {
            t: path.time(i),
            u,
            value: model.noise_intensity(path.time(i), u),
        });
    }
    Ok((res.value, path))
}

/// `J_δ(x, y) = inf{ I_{0,δ}(w) : w(0) = x_mean, w(δ) = y }`.
pub fn prefix_action_j(model: &AveragedModel, x_mean: f64, y_delta: f64, delta: f64, nodes: usize) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::invalid(format!("delta must be > 0, got {delta}")));
    }
    minimize_action(model, 0.0, delta, x_mean, y_delta, nodes).map(|(v, _)| v)
}

/// `V(y) = −(2/H)∫₀^y F̄(σ)dσ` for additive, autonomous noise.
pub fn quasi_potential_explicit(model: &AveragedModel, y: f64) -> Result<f64> {
    if !model.is_additive() {
        return Err(Error::NotApplicable(
            "the explicit quasi-potential needs additive interior noise (g constant)".into(),
        ));
    }
    let h = positive_intensity(model, 0.0, 0.0)?;
    if y == 0.0 {
        return Ok(0.0);
    }
    Ok(-2.0 / h * simpson(|s| model.averaged_f(0.0, s), 0.0, y, 1024))
}

fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> f64 {
    let n = panels + panels % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// `inf_T inf{ I_{0,T}(w) : w(0) = 0, w(T) = y }` over the given horizons.
pub fn quasi_potential_variational(model: &AveragedModel, y: f64, horizons: &[f64], nodes: usize) -> Result<f64> {
    if !y.is_finite() {
        return Err(Error::invalid("y must be finite"));
    }
    if horizons.is_empty() {
        return Err(Error::invalid("need at least one horizon"));
    }
    if y == 0.0 {
        return Ok(0.0);
    }
    let mut best = f64::INFINITY;
    for &t in horizons {
        let (v, _) = minimize_action(model, 0.0, t, 0.0, y, nodes)?;
        best = best.min(v);
    }
    Ok(best)
}

/// `V(y)`, explicit when the noise is additive, variational otherwise.
pub fn quasi_potential(model: &AveragedModel, y: f64) -> Result<f64> {
    if model.is_additive() {
        quasi_potential_explicit(model, y)
    } else {
        quasi_potential_variational(model, y, &DEFAULT_HORIZONS, DEFAULT_NODES)
    }
}

/// `V̄(D) = min(V(y₁), V(y₂))` over the endpoints of the constant section.
pub fn v_bar(model: &AveragedModel, domain: &DomainSpec) -> Result<f64> {
    let (y1, y2) = domain.constant_section;
    Ok(quasi_potential(model, y1)?.min(quasi_potential(model, y2)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{BoundaryGain, Coefficient, CoefficientSet, RhoBar};
    use crate::noise::{CovarianceSpectrumB, CovarianceSpectrumQ};
    use crate::solver::{solve_controlled_ode, solve_limit_ode};
    use crate::spectral::SpectralOperator;

    fn model(f: Coefficient, g: Coefficient, lambda: f64, thetas: [f64; 2], rho: RhoBar) -> AveragedModel {
        let op = SpectralOperator::neumann_laplacian_1d(4).unwrap();
        AveragedModel::new(
            &op,
            CoefficientSet::new(f, g, BoundaryGain::uniform(1.0)),
            CovarianceSpectrumQ::flat(4, lambda),
            CovarianceSpectrumB::new(thetas).unwrap(),
            1.0,
            rho,
        )
        .unwrap()
    }

    /// `F̄ = slope·u + offset`, `H = 1`.
    fn unit_model(slope: f64, offset: f64) -> AveragedModel {
        let m = model(
            Coefficient::Linear { slope, offset },
            Coefficient::Constant { value: 1.0 },
            1.0,
            [1.0, 1.0],
            RhoBar::Finite(0.0),
        );
        assert!((m.noise_intensity(0.0, 0.3) - 1.0).abs() < 1e-14);
        m
    }

    #[test]
    fn action_examples() {
        let m = unit_model(-1.0, 0.0);
        let flow = solve_limit_ode(&m, 1.0, 1.0, 1e-3).unwrap();
        let w = ScalarPath::from_trajectory(&flow).unwrap();
        assert!(action_i(&m, &w).unwrap().value() < 1e-8);

        let free = unit_model(0.0, 0.0);
        let line = ScalarPath::from_fn(0.0, 1.0, 101, |t| t).unwrap();
        assert!((action_i(&free, &line).unwrap().value() - 0.5).abs() < 1e-12);

        // ½∫(1+t)² = 7/6; the trapezoid rule on a quadratic is off by h²/12.
        let fine = ScalarPath::from_fn(0.0, 1.0, 2001, |t| t).unwrap();
        let v = action_i(&m, &fine).unwrap().value();
        assert!((v - 7.0 / 6.0).abs() < 1e-7, "{v}");
    }

    #[test]
    fn endpoint_and_spatial_guards() {
        let m = unit_model(-1.0, 0.0);
        let line = ScalarPath::from_fn(0.0, 1.0, 11, |t| t).unwrap();
        assert!(action_from(&m, 0.5, &line).unwrap().is_infinite());
        assert!(!action_from(&m, 0.0, &line).unwrap().is_infinite());

        let op = m.operator();
        let mut states: Vec<Field> = line.values().iter().map(|v| op.constant(*v)).collect();
        let traj = FieldTrajectory {
            times: line.times(),
            states: states.clone(),
            seed: None,
            stream: None,
        };
        let flat = action_field_path(&m, &traj).unwrap();
        assert!((flat.value() - action_i(&m, &line).unwrap().value()).abs() < 1e-12);
        states[5][2] = 1e-6;
        let bumpy = FieldTrajectory { states, ..traj };
        assert!(action_field_path(&m, &bumpy).unwrap().is_infinite());
    }

    #[test]
    fn degenerate_intensity_is_reported() {
        let m = model(
            Coefficient::Linear { slope: -1.0, offset: 0.0 },
            Coefficient::Linear { slope: 1.0, offset: 0.0 },
            1.0,
            [1.0, 1.0],
            RhoBar::Finite(0.0),
        );
        let w = ScalarPath::from_fn(0.0, 1.0, 11, |t| t - 0.5).unwrap();
        assert!(matches!(action_i(&m, &w), Err(Error::Nondegeneracy { .. })));
        assert!(matches!(minimizing_control(&m, &w), Err(Error::Nondegeneracy { .. })));
    }

    #[test]
    fn minimizing_control_examples() {
        let m = unit_model(-1.0, 0.0);
        let flow = ScalarPath::from_trajectory(&solve_limit_ode(&m, 1.0, 1.0, 1e-3).unwrap()).unwrap();
        let c = minimizing_control(&m, &flow).unwrap();
        assert!(c.nodes.l2_norm_sq() < 1e-8);

        let line = ScalarPath::from_fn(0.0, 1.0, 2001, |t| t).unwrap();
        let c = minimizing_control(&m, &line).unwrap();
        assert!((c.nodes.l2_norm_sq() - 7.0 / 3.0).abs() < 1e-6);
        let a = action_i(&m, &line).unwrap().value();
        assert!((0.5 * c.nodes.l2_norm_sq() - a).abs() < 1e-12 * a);
    }

    #[test]
    fn duality_and_round_trip_with_boundary_rows() {
        for rho in [RhoBar::Finite(0.0), RhoBar::Finite(0.7), RhoBar::Finite(3.0), RhoBar::Infinite] {
            let m = model(
                Coefficient::LogisticClipped { rate: 1.0, capacity: 1.0 },
                Coefficient::Constant { value: 0.8 },
                1.3,
                [0.6, 1.1],
                rho,
            );
            let w = ScalarPath::new(0.0, 1.0, vec![0.1, 0.4, -0.2, 0.3, 0.35, 0.0, 0.5]).unwrap();
            let c = minimizing_control(&m, &w).unwrap();
            let a = action_i(&m, &w).unwrap().value();
            assert!((0.5 * c.nodes.l2_norm_sq() - a).abs() <= 1e-10 * a);
            let tr = solve_controlled_ode(&m, w.values()[0], &c, 1.0, 1e-4).unwrap();
            let err = tr.times.iter().zip(&tr.values).map(|(t, v)| (v - w.eval(*t)).abs()).fold(0.0, f64::max);
            assert!(err < 1e-9, "rho {rho}: {err}");
        }
    }

    #[test]
    fn prefix_action_examples() {
        let free = unit_model(0.0, 0.0);
        for delta in [0.25, 0.5, 1.0] {
            let j = prefix_action_j(&free, 0.2, 0.9, delta, 41).unwrap();
            assert!((j - 0.49 / (2.0 * delta)).abs() < 1e-10, "{j}");
        }
        let j: Vec<f64> = [0.2, 0.4, 0.8].iter().map(|d| prefix_action_j(&free, 0.0, 1.0, *d, 41).unwrap()).collect();
        assert!(j[0] >= j[1] && j[1] >= j[2]);

        let m = unit_model(-1.0, 0.0);
        let end = solve_limit_ode(&m, 1.0, 0.5, 1e-3).unwrap().last();
        assert!(prefix_action_j(&m, 1.0, end, 0.5, 51).unwrap() < 1e-8);
        assert!(prefix_action_j(&m, 1.0, end, 0.0, 51).is_err());
    }

    #[test]
    fn segment_gradient_matches_finite_differences() {
        let op = SpectralOperator::neumann_laplacian_1d(8).unwrap();
        let m = AveragedModel::new(
            &op,
            CoefficientSet::new(
                Coefficient::LinearPlusSource { slope: -1.5, amplitude: 0.4, wavenumber: 1.0 },
                Coefficient::Linear { slope: 0.3, offset: 1.0 },
                BoundaryGain { left: 1.0, right: 0.5 },
            ),
            CovarianceSpectrumQ::flat(8, 1.0),
            CovarianceSpectrumB::new([0.8, 1.2]).unwrap(),
            1.0,
            RhoBar::Finite(0.5),
        )
        .unwrap();
        let x: Vec<f64> = (0..9).map(|i| 0.2 - 0.05 * i as f64 + 0.03 * (i as f64).sin()).collect();
        let mut g = vec![0.0; x.len()];
        segment_action(&m, 0.0, 0.04, 0.2, -0.3, &x, &mut g);
        let mut scratch = vec![0.0; x.len()];
        for i in 0..x.len() {
            let e = 1e-6;
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[i] += e;
            xm[i] -= e;
            let fd = (segment_action(&m, 0.0, 0.04, 0.2, -0.3, &xp, &mut scratch) - segment_action(&m, 0.0, 0.04, 0.2, -0.3, &xm, &mut scratch)) / (2.0 * e);
            assert!((fd - g[i]).abs() < 1e-7 * (1.0 + g[i].abs()), "node {i}: fd {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn two_stage_decomposition() {
        // F̄ = −u: min over z of J_δ(x,z) + inf I_{δ,T}(z → y) equals the
        // one-stage minimum.
        let m = unit_model(-1.0, 0.0);
        let (x, y, delta, t) = (0.3, -0.4, 0.5, 2.0);
        let (full, path) = minimize_action(&m, 0.0, t, x, y, 81).unwrap();
        let z = path.eval(delta);
        let two = prefix_action_j(&m, x, z, delta, 21).unwrap() + minimize_action(&m, delta, t, z, y, 61).unwrap().0;
        assert!((full - two).abs() < 1e-8, "{full} vs {two}");
        let nearby = prefix_action_j(&m, x, z + 0.05, delta, 21).unwrap() + minimize_action(&m, delta, t, z + 0.05, y, 61).unwrap().0;
        assert!(nearby > two);
    }

    #[test]
    fn explicit_quasi_potential_examples() {
        let m = unit_model(-1.0, 0.0);
        assert_eq!(quasi_potential_explicit(&m, 0.0).unwrap(), 0.0);
        for y in [0.25, -0.5, 1.0] {
            assert!((quasi_potential_explicit(&m, y).unwrap() - y * y).abs() < 1e-12);
        }
        let mult = model(
            Coefficient::Linear { slope: -1.0, offset: 0.0 },
            Coefficient::Linear { slope: 1.0, offset: 1.0 },
            1.0,
            [1.0, 1.0],
            RhoBar::Finite(1.0),
        );
        assert!(matches!(quasi_potential_explicit(&mult, 0.3), Err(Error::NotApplicable(_))));
    }

    #[test]
    fn divergence_form_constants() {
        // V(y) = −(1+ρ̄)²/(c₁+c₂ρ̄²)·∫₀^y ∫ f dξ dσ with c₁ = |√Q G m|², c₂ = |δ₀√BΣN*m|².
        let op = SpectralOperator::divergence_1d(6, 240, |x| 1.0 + 0.5 * x).unwrap();
        let f = Coefficient::LinearPlusSource { slope: -2.0, amplitude: 0.3, wavenumber: 1.0 };
        for rho in [0.0, 0.5, 2.0] {
            let m = AveragedModel::new(
                &op,
                CoefficientSet::new(f.clone(), Coefficient::Constant { value: 0.7 }, BoundaryGain::uniform(1.2)),
                CovarianceSpectrumQ::flat(6, 0.9),
                CovarianceSpectrumB::new([0.5, 1.5]).unwrap(),
                1.0,
                RhoBar::Finite(rho),
            )
            .unwrap();
            let c1 = m.averaged_g_row(0.0, 0.0).norm().powi(2);
            let c2 = m.averaged_sigma_row(0.0).norm_sq();
            let y = 0.4;
            let inner = |s: f64| op.grid().integrate(&op.grid().nodes.iter().map(|xi| f.eval(0.0, *xi, s)).collect::<Vec<_>>());
            let integral = simpson(inner, 0.0, y, 200);
            let formula = -2.0 * (1.0 + rho).powi(2) / (c1 + c2 * rho * rho) * integral;
            let v = quasi_potential_explicit(&m, y).unwrap();
            assert!((v - formula).abs() < 1e-10 * formula.abs(), "{v} vs {formula}");
        }
    }

    #[test]
    fn variational_quasi_potential_matches_explicit() {
        let m = unit_model(-1.0, 0.0);
        assert_eq!(quasi_potential_variational(&m, 0.0, &DEFAULT_HORIZONS, 200).unwrap(), 0.0);
        for y in [0.25, 0.5, 1.0] {
            let v = quasi_potential_variational(&m, y, &DEFAULT_HORIZONS, 200).unwrap();
            assert!((v - y * y).abs() < 0.02 * y * y, "{y}: {v}");
        }
        let short = quasi_potential_variational(&m, 0.5, &[2.0], 200).unwrap();
        let both = quasi_potential_variational(&m, 0.5, &[2.0, 8.0], 200).unwrap();
        assert!(short >= both);
    }

    #[test]
    fn path_helpers() {
        let w = ScalarPath::from_fn(0.0, 2.0, 5, |t| t * t).unwrap();
        assert_eq!(w.segment(0.0), 0);
        assert_eq!(w.segment(2.0), 3);
        assert!((w.eval(0.75) - 0.625).abs() < 1e-15);
        assert!(ScalarPath::new(0.0, 1.0, vec![1.0]).is_err());
        assert!(ScalarPath::new(1.0, 1.0, vec![1.0, 2.0]).is_err());
        let mut buf = Vec::new();
        w.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("t,value\n"));
    }
}
