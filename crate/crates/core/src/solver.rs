//! Time steppers: the full SPDE in mild form, the averaged SDE, the limit
//! ODE, the controlled (skeleton) ODE, and a single forward solve of the
//! controlled SPDE.
//!
//! The SPDE stepper is an exponential integrator in the eigenbasis. The
//! stiff `ε⁻¹A` part, and the linear part of `f` when `f` is affine with a
//! space-independent slope, are propagated exactly; the remaining reaction
//! term is frozen over the step and integrated with `φ₁`. The time step is
//! therefore independent of `ε`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::coefficients::{AveragedModel, CoefficientSet, RhoBar};
use crate::error::{Error, Result};
use crate::noise::{b_innovation, boundary_coupling, q_innovation, CovarianceSpectrumB, CovarianceSpectrumQ, Multiplier, OuPropagator, RngStream};
use crate::spectral::{BoundaryData, Field, SpectralOperator};

/// Any coefficient above this magnitude aborts the path.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

/// `α(ε) = coef · ε^exponent`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleLaw {
    pub coef: f64,
    pub exponent: f64,
}

impl ScaleLaw {
    pub fn new(coef: f64, exponent: f64) -> Self {
        ScaleLaw { coef, exponent }
    }

    pub fn zero() -> Self {
        ScaleLaw::new(0.0, 0.0)
    }

    pub fn value(&self, eps: f64) -> f64 {
        if self.coef == 0.0 {
            0.0
        } else {
            self.coef * eps.powf(self.exponent)
        }
    }

    /// `lim_{ε→0} β(ε)/α(ε)` for two power laws.
    pub fn limit_ratio(alpha: &ScaleLaw, beta: &ScaleLaw) -> Option<RhoBar> {
        match (alpha.coef == 0.0, beta.coef == 0.0) {
            (true, true) => None,
            (true, false) => Some(RhoBar::Infinite),
            (false, true) => Some(RhoBar::Finite(0.0)),
            (false, false) => {
                let d = beta.exponent - alpha.exponent;
                if d.abs() < 1e-12 {
                    Some(RhoBar::Finite((beta.coef / alpha.coef).abs()))
                } else if d > 0.0 {
                    Some(RhoBar::Finite(0.0))
                } else {
                    Some(RhoBar::Infinite)
                }
            }
        }
    }
}

/// The bundle `(ε, α(ε), β(ε), ρ̄, γ(ε))` with `γ = (α + β)²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MultiscaleParams {
    pub eps: f64,
    pub alpha: f64,
    pub beta: f64,
    pub rho_bar: RhoBar,
    pub gamma: f64,
}

impl MultiscaleParams {
    pub fn new(eps: f64, alpha: f64, beta: f64, rho_bar: RhoBar) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::invalid(format!("eps must be > 0, got {eps}")));
        }
        if !(alpha >= 0.0) || !(beta >= 0.0) {
            return Err(Error::invalid("alpha and beta must be nonnegative"));
        }
        Ok(MultiscaleParams {
            eps,
            alpha,
            beta,
            rho_bar,
            gamma: (alpha + beta) * (alpha + beta),
        })
    }

    pub fn from_laws(eps: f64, alpha: &ScaleLaw, beta: &ScaleLaw, rho_bar: RhoBar) -> Result<Self> {
        Self::new(eps, alpha.value(eps), beta.value(eps), rho_bar)
    }

    /// Noise switched off at scale `eps`.
    pub fn deterministic(eps: f64) -> Result<Self> {
        Self::new(eps, 0.0, 0.0, RhoBar::Finite(0.0))
    }

    /// `β/α` at the current ε (`+∞` when `α = 0 < β`).
    pub fn ratio(&self) -> f64 {
        if self.alpha == 0.0 {
            if self.beta == 0.0 {
                f64::NAN
            } else {
                f64::INFINITY
            }
        } else {
            self.beta / self.alpha
        }
    }
}

/// The physical system: operator, coefficients, noise spectra and `δ₀`.
#[derive(Clone, Debug)]
pub struct System {
    pub op: SpectralOperator,
    pub coefficients: CoefficientSet,
    pub q: CovarianceSpectrumQ,
    pub b: CovarianceSpectrumB,
    pub delta0: f64,
}

impl System {
    pub fn new(
        op: SpectralOperator,
        coefficients: CoefficientSet,
        q: CovarianceSpectrumQ,
        b: CovarianceSpectrumB,
        delta0: f64,
    ) -> Result<Self> {
        if !(delta0 > 0.0) {
            return Err(Error::invalid(format!("delta0 must be > 0, got {delta0}")));
        }
        if q.len() != op.n_modes() {
            return Err(Error::invalid("Q spectrum length must equal the number of modes"));
        }
        Ok(System {
            op,
            coefficients,
            q,
            b,
            delta0,
        })
    }

    pub fn averaged(&self, rho_bar: RhoBar) -> Result<AveragedModel> {
        AveragedModel::new(&self.op, self.coefficients.clone(), self.q.clone(), self.b, self.delta0, rho_bar)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FieldTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<Field>,
    pub seed: Option<u64>,
    pub stream: Option<u64>,
}

impl FieldTrajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> &Field {
        self.states.last().expect("trajectory is never empty")
    }

    /// Constant-mode component as a scalar trajectory.
    pub fn mean_mode(&self, op: &SpectralOperator) -> ScalarTrajectory {
        ScalarTrajectory {
            times: self.times.clone(),
            values: self.states.iter().map(|s| op.invariant_average(s)).collect(),
        }
    }

    /// CSV with header `t,mode_0,…,mode_{N-1}`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let n = self.states.first().map_or(0, Field::len);
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((0..n).map(|k| format!("mode_{k}")));
        w.write_record(&header)?;
        for (t, s) in self.times.iter().zip(&self.states) {
            let mut rec = vec![fmt_f64(*t)];
            rec.extend(s.coeffs().iter().map(|c| fmt_f64(*c)));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalarTrajectory {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl ScalarTrajectory {
    pub fn last(&self) -> f64 {
        *self.values.last().expect("trajectory is never empty")
    }

    /// CSV with header `t,value`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "value"])?;
        for (t, v) in self.times.iter().zip(&self.values) {
            w.write_record([fmt_f64(*t), fmt_f64(*v)])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.17e}")
}

/// Number of steps of size `dt` covering `[0, T]`.
pub(crate) fn step_count(t_final: f64, dt: f64) -> Result<usize> {
    if !(t_final > 0.0) || !(dt > 0.0) || dt > t_final * (1.0 + 1e-12) {
        return Err(Error::invalid(format!("need 0 < dt <= T, got dt = {dt}, T = {t_final}")));
    }
    let n = (t_final / dt).round();
    if (n * dt - t_final).abs() > 1e-9 * t_final {
        return Err(Error::invalid(format!("T = {t_final} is not a multiple of dt = {dt}")));
    }
    Ok(n as usize)
}

/// `(e^z − 1)/z` with `φ₁(0) = 1`.
pub fn phi1(z: f64) -> f64 {
    if z.abs() < 1e-8 {
        1.0 + z / 2.0
    } else {
        z.exp_m1() / z
    }
}

/// A control `φ = (φ_H, φ_Z) ∈ L²(0,T;V)`.
pub struct ControlValue {
    pub phi_h: Field,
    pub phi_z: BoundaryData,
}

pub trait Control: Sync {
    /// Control at time `t`. `inside` is a time strictly inside the
    /// integration sub-interval containing `t`; piecewise definitions use
    /// it to choose the branch at breakpoints.
    fn value(&self, t: f64, inside: f64) -> ControlValue;

    /// Times where the control may be discontinuous.
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }
}

/// `φ ≡ 0`.
pub struct ZeroControl {
    pub n_modes: usize,
}

impl Control for ZeroControl {
    fn value(&self, _t: f64, _inside: f64) -> ControlValue {
        ControlValue {
            phi_h: Field::zeros(self.n_modes),
            phi_z: BoundaryData::zero(),
        }
    }
}

/// Weights multiplying the interior and boundary controls in the
/// controlled SPDE.
#[derive(Clone, Copy, Debug)]
pub enum ForcingWeights {
    /// `(α/√γ, β/√γ)` from the multiscale parameters.
    FromParams,
    /// Explicit weights, e.g. the limits `(1/(1+ρ̄), ρ̄/(1+ρ̄))`.
    Explicit(f64, f64),
}

impl ForcingWeights {
    pub fn limit(rho_bar: RhoBar) -> Self {
        let (a, b) = rho_bar.weights();
        ForcingWeights::Explicit(a, b)
    }

    fn resolve(&self, params: &MultiscaleParams) -> Result<(f64, f64)> {
        match *self {
            ForcingWeights::Explicit(a, b) => Ok((a, b)),
            ForcingWeights::FromParams => {
                if params.gamma <= 0.0 {
                    return Err(Error::invalid("forcing weights from params need gamma > 0"));
                }
                let s = params.gamma.sqrt();
                Ok((params.alpha / s, params.beta / s))
            }
        }
    }
}

enum Reaction {
    /// `f(t,ξ,r) = s·r + f(t,ξ,0)`; `s` is absorbed in the linear part.
    Affine { source: Field },
    General,
}

/// One-step exponential integrator for the SPDE in mild form.
pub struct SpdeStepper<'a> {
    sys: &'a System,
    params: MultiscaleParams,
    dt: f64,
    decay: Vec<f64>,
    phi1_dt: Vec<f64>,
    prop: OuPropagator,
    reaction: Reaction,
    coupling: Vec<[f64; 2]>,
    scratch: Vec<f64>,
}

impl<'a> SpdeStepper<'a> {
    pub fn new(sys: &'a System, params: MultiscaleParams, dt: f64) -> Result<Self> {
        let op = &sys.op;
        let f = &sys.coefficients.f;
        let (slope, reaction) = match f.affine_slope() {
            Some(s) => (
                s,
                Reaction::Affine {
                    source: crate::coefficients::nemytskii(op, f, 0.0, &Field::zeros(op.n_modes())),
                },
            ),
            None => (0.0, Reaction::General),
        };
        if !(dt > 0.0) || !(params.eps > 0.0) {
            return Err(Error::invalid("eps and dt must be > 0"));
        }
        // Linear rate of mode k: κ_k = α_k/ε − s.
        let rates: Vec<f64> = op.eigenvalues().iter().map(|a| a / params.eps - slope).collect();
        let decay = rates.iter().map(|k| (-k * dt).exp()).collect();
        let phi1_dt = rates.iter().map(|k| phi1(-k * dt) * dt).collect();
        let std = rates
            .iter()
            .map(|&k| {
                let v = if k == 0.0 { dt } else { -(-2.0 * k * dt).exp_m1() / (2.0 * k) };
                v.sqrt()
            })
            .collect();
        let decay_ou = rates.iter().map(|k| (-k * dt).exp()).collect();
        let coupling = boundary_coupling(op, &sys.coefficients.sigma, sys.delta0, 0.0)?;
        Ok(SpdeStepper {
            sys,
            params,
            dt,
            decay,
            phi1_dt,
            prop: OuPropagator { decay: decay_ou, std },
            reaction,
            coupling,
            scratch: vec![0.0; op.n_modes()],
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn params(&self) -> &MultiscaleParams {
        &self.params
    }

    /// Advances `u` from `t` to `t + dt`. `forcing` carries a control value
    /// and its `(interior, boundary)` weights.
    pub fn step(&mut self, t: f64, u: &mut Field, rng: &mut RngStream, forcing: Option<(&ControlValue, (f64, f64))>) {
        let op = &self.sys.op;
        let cs = &self.sys.coefficients;
        let n = op.n_modes();
        let mut drive = match &self.reaction {
            Reaction::Affine { source } => source.clone(),
            Reaction::General => cs.nemytskii_f(op, t, u),
        };
        let needs_mult = self.params.alpha > 0.0 || forcing.is_some_and(|(_, (wh, _))| wh != 0.0);
        let mult = if needs_mult {
            Some(Multiplier::frozen(op, &cs.g, t, u))
        } else {
            None
        };
        if let Some((ctrl, (wh, wz))) = forcing {
            if wh != 0.0 {
                let lam_phi: Vec<f64> = ctrl
                    .phi_h
                    .coeffs()
                    .iter()
                    .zip(self.sys.q.lambdas())
                    .map(|(p, l)| p * l)
                    .collect();
                let g_phi = mult.as_ref().expect("multiplier computed").apply(&lam_phi);
                for k in 0..n {
                    drive[k] += wh * g_phi[k];
                }
            }
            if wz != 0.0 {
                let th = self.sys.b.thetas();
                let z = [th[0] * ctrl.phi_z.values[0], th[1] * ctrl.phi_z.values[1]];
                for (k, b) in self.coupling.iter().enumerate() {
                    drive[k] += wz * (b[0] * z[0] + b[1] * z[1]);
                }
            }
        }
        let coeffs = u.coeffs_mut();
        for k in 0..n {
            coeffs[k] = self.decay[k] * coeffs[k] + self.phi1_dt[k] * drive[k];
        }
        if self.params.alpha > 0.0 {
            let eta = q_innovation(&self.prop, &self.sys.q, mult.as_ref().expect("multiplier computed"), rng, &mut self.scratch);
            for k in 0..n {
                coeffs[k] += self.params.alpha * eta[k];
            }
        }
        if self.params.beta > 0.0 {
            let eta = b_innovation(&self.prop, &self.sys.b, &self.coupling, rng);
            for k in 0..n {
                coeffs[k] += self.params.beta * eta[k];
            }
        }
    }
}

pub(crate) fn diverged(u: &Field) -> bool {
    u.coeffs().iter().any(|c| !c.is_finite() || c.abs() > DIVERGENCE_THRESHOLD)
}

/// Mild solution of the SPDE on `[0, T]` started at `x`.
pub fn solve_spde(
    sys: &System,
    params: &MultiscaleParams,
    x: &Field,
    t_final: f64,
    dt: f64,
    rng: &mut RngStream,
) -> Result<FieldTrajectory> {
    solve_spde_inner(sys, params, x, t_final, dt, rng, None)
}

/// Controlled SPDE: the SPDE recursion plus deterministic forcing
/// `w_H·G(u)[√Q φ_H]` and the boundary forcing `w_Z·(δ₀−A)N_{δ₀}[Σ√B φ_Z]`.
#[allow(clippy::too_many_arguments)]
pub fn solve_controlled_spde(
    sys: &System,
    params: &MultiscaleParams,
    x: &Field,
    control: &dyn Control,
    weights: ForcingWeights,
    t_final: f64,
    dt: f64,
    rng: &mut RngStream,
) -> Result<FieldTrajectory> {
    let w = weights.resolve(params)?;
    solve_spde_inner(sys, params, x, t_final, dt, rng, Some((control, w)))
}

fn solve_spde_inner(
    sys: &System,
    params: &MultiscaleParams,
    x: &Field,
    t_final: f64,
    dt: f64,
    rng: &mut RngStream,
    control: Option<(&dyn Control, (f64, f64))>,
) -> Result<FieldTrajectory> {
    if x.len() != sys.op.n_modes() {
        return Err(Error::invalid("initial state has the wrong number of modes"));
    }
    let n = step_count(t_final, dt)?;
    let mut stepper = SpdeStepper::new(sys, *params, dt)?;
    let mut times = Vec::with_capacity(n + 1);
    let mut states = Vec::with_capacity(n + 1);
    let mut u = x.clone();
    times.push(0.0);
    states.push(u.clone());
    for i in 0..n {
        let t = i as f64 * dt;
        match control {
            Some((c, w)) => {
                let v = c.value(t, t + 0.5 * dt);
                stepper.step(t, &mut u, rng, Some((&v, w)));
            }
            None => stepper.step(t, &mut u, rng, None),
        }
        if diverged(&u) {
            return Err(Error::Diverged {
                step: i + 1,
                time: (i + 1) as f64 * dt,
            });
        }
        times.push((i + 1) as f64 * dt);
        states.push(u.clone());
    }
    Ok(FieldTrajectory {
        times,
        states,
        seed: Some(rng.seed()),
        stream: Some(rng.stream()),
    })
}

fn rk4_step<F: Fn(f64, f64) -> f64>(rhs: &F, t: f64, u: f64, h: f64) -> f64 {
    let k1 = rhs(t, u);
    let k2 = rhs(t + 0.5 * h, u + 0.5 * h * k1);
    let k3 = rhs(t + 0.5 * h, u + 0.5 * h * k2);
    let k4 = rhs(t + h, u + h * k3);
    u + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

fn check_scalar(v: f64, step: usize, t: f64) -> Result<()> {
    if !v.is_finite() || v.abs() > DIVERGENCE_THRESHOLD {
        Err(Error::Diverged { step, time: t })
    } else {
        Ok(())
    }
}

/// Classical RK4 for `u' = F̄(t,u)`, `u(0) = x_mean`.
pub fn solve_limit_ode(model: &AveragedModel, x_mean: f64, t_final: f64, dt: f64) -> Result<ScalarTrajectory> {
    let n = step_count(t_final, dt)?;
    let rhs = |t: f64, u: f64| model.averaged_f(t, u);
    let mut values = Vec::with_capacity(n + 1);
    let mut u = x_mean;
    values.push(u);
    for i in 0..n {
        u = rk4_step(&rhs, i as f64 * dt, u, dt);
        check_scalar(u, i + 1, (i + 1) as f64 * dt)?;
        values.push(u);
    }
    Ok(ScalarTrajectory {
        times: (0..=n).map(|i| i as f64 * dt).collect(),
        values,
    })
}

/// Euler-Maruyama for `du = F̄(t,u)dt + √(gamma_scale·H_ρ̄(t,u)) dβ`.
pub fn solve_averaged_sde(
    model: &AveragedModel,
    gamma_scale: f64,
    x_mean: f64,
    t_final: f64,
    dt: f64,
    rng: &mut RngStream,
) -> Result<ScalarTrajectory> {
    if !(gamma_scale >= 0.0) {
        return Err(Error::invalid("gamma_scale must be nonnegative"));
    }
    let n = step_count(t_final, dt)?;
    let sq = dt.sqrt();
    let mut values = Vec::with_capacity(n + 1);
    let mut u = x_mean;
    values.push(u);
    for i in 0..n {
        let t = i as f64 * dt;
        let h = model.noise_intensity(t, u);
        if h < 0.0 {
            return Err(Error::Nondegeneracy { t, u, value: h });
        }
        let noise = if gamma_scale > 0.0 {
            (gamma_scale * h).sqrt() * sq * rng.standard_normal()
        } else {
            0.0
        };
        u += model.averaged_f(t, u) * dt + noise;
        check_scalar(u, i + 1, t + dt)?;
        values.push(u);
    }
    Ok(ScalarTrajectory {
        times: (0..=n).map(|i| i as f64 * dt).collect(),
        values,
    })
}

/// Right-hand side of the skeleton equation
/// `u' = F̄ + w_H⟨φ_H, √Q[G m]⟩ + w_Z⟨φ_Z, δ₀√B[ΣN*m]⟩`.
pub fn controlled_rhs(model: &AveragedModel, t: f64, u: f64, phi: &ControlValue) -> f64 {
    let (wh, wz) = model.rho_bar().weights();
    let mut v = model.averaged_f(t, u);
    if wh != 0.0 {
        v += wh * model.averaged_g_row(t, u).dot(&phi.phi_h);
    }
    if wz != 0.0 {
        v += wz * model.averaged_sigma_row(t).dot(&phi.phi_z);
    }
    v
}

/// RK4 for the skeleton equation. Steps crossing a control breakpoint are
/// split there, so piecewise controls are integrated without smearing.
pub fn solve_controlled_ode(
    model: &AveragedModel,
    x_mean: f64,
    control: &dyn Control,
    t_final: f64,
    dt: f64,
) -> Result<ScalarTrajectory> {
    let n = step_count(t_final, dt)?;
    let mut bps: Vec<f64> = control.breakpoints();
    bps.sort_by(f64::total_cmp);
    let mut values = Vec::with_capacity(n + 1);
    let mut u = x_mean;
    values.push(u);
    for i in 0..n {
        let t0 = i as f64 * dt;
        let t1 = (i + 1) as f64 * dt;
        let tol = 1e-12 * dt;
        let mut cuts = vec![t0];
        cuts.extend(bps.iter().copied().filter(|&b| b > t0 + tol && b < t1 - tol));
        cuts.push(t1);
        for w in cuts.windows(2) {
            let (a, b) = (w[0], w[1]);
            let inside = 0.5 * (a + b);
            let rhs = |t: f64, v: f64| controlled_rhs(model, t, v, &control.value(t, inside));
            let h = if cuts.len() == 2 { dt } else { b - a };
            u = rk4_step(&rhs, a, u, h);
        }
        check_scalar(u, i + 1, t1)?;
        values.push(u);
    }
    Ok(ScalarTrajectory {
        times: (0..=n).map(|i| i as f64 * dt).collect(),
        values,
    })
}

/// `sup_{t ∈ [δ,T]} |u_ε(t) − u(t)|_{H_μ}` over the shared time grid.
pub fn averaging_error(
    op: &SpectralOperator,
    traj: &FieldTrajectory,
    reference: &ScalarTrajectory,
    delta: f64,
    t_final: f64,
) -> Result<f64> {
    if !(delta >= 0.0 && delta < t_final) {
        return Err(Error::invalid(format!("delta must lie in [0, T), got {delta}")));
    }
    if traj.times.len() != reference.times.len()
        || traj
            .times
            .iter()
            .zip(&reference.times)
            .any(|(a, b)| (a - b).abs() > 1e-9 * (1.0 + a.abs()))
    {
        return Err(Error::invalid("trajectory and reference use different time grids"));
    }
    let tol = 1e-12 * (1.0 + t_final);
    let mut worst = 0.0f64;
    for ((t, s), r) in traj.times.iter().zip(&traj.states).zip(&reference.values) {
        if *t < delta - tol || *t > t_final + tol {
            continue;
        }
        let diff = s - &op.constant(*r);
        worst = worst.max(op.h_mu_norm(&diff));
    }
    Ok(worst)
}
