//! Exit domains `D = {h : ∫_O g(h(ξ))dξ < r}`, first-exit detection and
//! Monte Carlo estimates of `γ log 𝔼τ`.

use std::io::Write;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::AveragedModel;
use crate::error::{Error, Result};
use crate::ldp::v_bar;
use crate::noise::RngStream;
use crate::solver::{diverged, fmt_f64, solve_limit_ode, FieldTrajectory, MultiscaleParams, SpdeStepper, System};
use crate::spectral::{Field, SpectralOperator};

/// Seed of the sampled invariance probes attached by [`build_domain`].
pub const PROBE_SEED: u64 = 0x5eed;
pub const PROBE_SAMPLES: usize = 100;
pub const PROBE_TIMES: [f64; 3] = [0.01, 0.1, 1.0];

/// Convex `C²` profiles with quadratic growth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConvexProfile {
    /// `a s² + b s + c`, `a > 0`.
    Quadratic { a: f64, b: f64, c: f64 },
    /// `a s² + b log cosh(s)`, `a > 0`, `b ≥ 0`.
    QuadraticLogCosh { a: f64, b: f64 },
}

impl ConvexProfile {
    pub fn square() -> Self {
        ConvexProfile::Quadratic { a: 1.0, b: 0.0, c: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ConvexProfile::Quadratic { a, b, c } => a > 0.0 && b.is_finite() && c.is_finite(),
            ConvexProfile::QuadraticLogCosh { a, b } => a > 0.0 && b >= 0.0 && b.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("profile {self:?} is not convex with quadratic growth")))
        }
    }

    pub fn eval(&self, s: f64) -> f64 {
        match *self {
            ConvexProfile::Quadratic { a, b, c } => a * s * s + b * s + c,
            ConvexProfile::QuadraticLogCosh { a, b } => {
                // log cosh s = |s| + log(1 + e^{−2|s|}) − log 2
                let x = s.abs();
                a * s * s + b * (x + (-2.0 * x).exp().ln_1p() - std::f64::consts::LN_2)
            }
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct InvarianceReport {
    pub samples: usize,
    /// `min (G(x) − G(e^{tA}x))` over sampled `x` and `t`.
    pub min_margin: f64,
    pub semigroup_passed: bool,
    pub jensen_checked: usize,
    pub jensen_passed: bool,
    pub witness: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct DomainSpec {
    pub profile: ConvexProfile,
    pub r: f64,
    /// `|O|`.
    pub length: f64,
    /// `(y₁, y₂) = {y : |O| g(y) < r}`.
    pub constant_section: (f64, f64),
    pub probes: Option<InvarianceReport>,
}

impl DomainSpec {
    /// `G(h) = ∫_O g(h(ξ))dξ`. Quadratic profiles use Parseval.
    pub fn membership(&self, op: &SpectralOperator, h: &Field) -> f64 {
        match self.profile {
            ConvexProfile::Quadratic { a, b, c } => {
                a * h.dot(h) + b * h[0] * self.length.sqrt() + c * self.length
            }
            _ => {
                let vals: Vec<f64> = op.to_grid(h).iter().map(|v| self.profile.eval(*v)).collect();
                op.grid().integrate(&vals)
            }
        }
    }

    pub fn contains(&self, op: &SpectralOperator, h: &Field) -> bool {
        self.membership(op, h) < self.r
    }

    pub fn contains_constant(&self, y: f64) -> bool {
        self.length * self.profile.eval(y) < self.r
    }

    /// `min(|y₁|, y₂)`.
    pub fn inner_radius(&self) -> f64 {
        self.constant_section.0.abs().min(self.constant_section.1)
    }
}

/// Builds `D_g(r)` and attaches the sampled invariance probes.
pub fn build_domain(profile: ConvexProfile, r: f64, op: &SpectralOperator) -> Result<DomainSpec> {
    profile.validate()?;
    let length = op.domain_length();
    let level = |y: f64| length * profile.eval(y);
    if !(r > level(0.0)) {
        return Err(Error::invalid(format!(
            "level r = {r} must exceed |O| g(0) = {}",
            level(0.0)
        )));
    }
    let root = |dir: f64| -> f64 {
        let mut hi = 1.0;
        while level(dir * hi) < r {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if level(dir * mid) < r {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-16 * hi {
                break;
            }
        }
        dir * 0.5 * (lo + hi)
    };
    let mut dom = DomainSpec {
        profile: profile.clone(),
        r,
        length,
        constant_section: (root(-1.0), root(1.0)),
        probes: None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(PROBE_SEED);
    dom.probes = Some(invariance_probe(op, &dom, &mut rng, PROBE_SAMPLES, &PROBE_TIMES));
    Ok(dom)
}

/// A random field with decaying spectrum whose size is spread around the
/// domain's inner radius.
pub fn sample_field<R: Rng>(op: &SpectralOperator, dom: &DomainSpec, rng: &mut R) -> Field {
    let n = op.n_modes();
    let mut c: Vec<f64> = (0..n)
        .map(|k| rng.sample::<f64, _>(rand_distr::StandardNormal) / (1 + k) as f64)
        .collect();
    let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    let target = 2.0 * rng.random::<f64>() * dom.inner_radius() * dom.length.sqrt();
    c.iter_mut().for_each(|v| *v *= target / norm);
    Field::from_coeffs(c)
}

/// `G(e^{tA}x) ≤ G(x)` on sampled `(x, t)` and `⟨x,μ⟩ ∈ D` for sampled
/// `x ∈ D`.
pub fn invariance_probe<R: Rng>(op: &SpectralOperator, dom: &DomainSpec, rng: &mut R, samples: usize, times: &[f64]) -> InvarianceReport {
    let mut min_margin = f64::INFINITY;
    let mut jensen_checked = 0;
    let mut jensen_passed = true;
    let mut witness = None;
    let mut semigroup_passed = true;
    for _ in 0..samples {
        let x = sample_field(op, dom, rng);
        let gx = dom.membership(op, &x);
        for &t in times {
            let gt = dom.membership(op, &op.semigroup_apply(t, &x).expect("probe times are nonnegative"));
            let margin = gx - gt;
            min_margin = min_margin.min(margin);
            if margin < -1e-12 * (1.0 + gx.abs()) && semigroup_passed {
                semigroup_passed = false;
                witness = Some(format!("G grew from {gx} to {gt} at t = {t}"));
            }
        }
        if gx < dom.r {
            jensen_checked += 1;
            let avg = op.invariant_average(&x);
            if !dom.contains_constant(avg) && jensen_passed {
                jensen_passed = false;
                witness.get_or_insert_with(|| format!("average {avg} of a state in D lies outside D"));
            }
        }
    }
    InvarianceReport {
        samples,
        min_margin,
        semigroup_passed,
        jensen_checked,
        jensen_passed,
        witness,
    }
}

/// Linear interpolation of `G` between two steps; `None` if the level is
/// not reached.
fn crossing(t0: f64, g0: f64, t1: f64, g1: f64, r: f64) -> Option<f64> {
    if g1 < r {
        return None;
    }
    if g1 <= g0 {
        return Some(t1);
    }
    let w = ((r - g0) / (g1 - g0)).clamp(0.0, 1.0);
    Some(t0 + w * (t1 - t0))
}

#[derive(Clone, Debug)]
pub struct ExitOutcome {
    /// `None` when the path never left `D`.
    pub tau: Option<f64>,
    /// State at the first step with `G ≥ r`, or the last state.
    pub state: Field,
}

/// First time the trajectory reaches `∂D`.
pub fn first_exit_time(op: &SpectralOperator, traj: &FieldTrajectory, dom: &DomainSpec) -> Result<ExitOutcome> {
    let mut g_prev = dom.membership(op, &traj.states[0]);
    if g_prev >= dom.r {
        return Err(Error::invalid("trajectory starts outside the domain"));
    }
    for i in 1..traj.states.len() {
        let g = dom.membership(op, &traj.states[i]);
        if let Some(tau) = crossing(traj.times[i - 1], g_prev, traj.times[i], g, dom.r) {
            return Ok(ExitOutcome {
                tau: Some(tau),
                state: traj.states[i].clone(),
            });
        }
        g_prev = g;
    }
    Ok(ExitOutcome {
        tau: None,
        state: traj.last().clone(),
    })
}

#[derive(Clone, Debug)]
pub struct ExitOptions {
    pub n_paths: usize,
    pub dt: f64,
    /// Horizon per level; `None` uses `50·exp(V̄/γ)`.
    pub t_max: Option<f64>,
    /// Step budget per path, applied on top of the horizon.
    pub max_steps: u64,
    pub seed: u64,
    /// Radius `ρ` of the ball `B_ρ` whose re-entries are counted.
    pub rho_ball: Option<f64>,
}

impl Default for ExitOptions {
    fn default() -> Self {
        ExitOptions {
            n_paths: 500,
            dt: 1e-3,
            t_max: None,
            max_steps: 20_000_000,
            seed: 0,
            rho_ball: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct ExitSample {
    /// Exit time, or the horizon reached by a censored path.
    pub tau: f64,
    pub censored: bool,
    pub diverged: bool,
    /// `|u(τ) − ⟨u(τ),μ⟩|_{H_μ}` at exit.
    pub nonconstant_at_exit: f64,
    /// Re-entries into `B_ρ` after touching `∂B_{2ρ}`.
    pub rho_entries: u64,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct ExitStats {
    pub gamma: f64,
    pub eps: f64,
    pub alpha: f64,
    pub beta: f64,
    pub n: usize,
    pub censored: usize,
    pub diverged: usize,
    pub t_max: f64,
    pub mean_tau: f64,
    pub log_mean_tau: f64,
    pub gamma_log_mean: f64,
    /// `ε log 𝔼τ`, the alternative normalization.
    pub eps_log_mean: f64,
    /// 95% half-width of `γ log 𝔼τ` (delta method on the log of the mean).
    pub ci_halfwidth: f64,
    /// Censored paths are counted at `T_max`, so the mean is a lower bound.
    pub lower_bound_only: bool,
    pub v_bar_target: f64,
    /// Fraction of exits whose non-constant part is below `0.1·R`.
    pub concentrated_fraction: f64,
    pub mean_rho_entries: Option<f64>,
    pub samples: Vec<ExitSample>,
}

pub const EXIT_CSV_HEADER: [&str; 11] = [
    "gamma",
    "eps",
    "alpha",
    "beta",
    "n",
    "censored",
    "mean_tau",
    "log_mean_tau",
    "gamma_log_mean",
    "ci_halfwidth",
    "v_bar_target",
];

pub fn write_exit_csv<W: Write>(stats: &[ExitStats], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(EXIT_CSV_HEADER)?;
    for s in stats {
        w.write_record([
            fmt_f64(s.gamma),
            fmt_f64(s.eps),
            fmt_f64(s.alpha),
            fmt_f64(s.beta),
            s.n.to_string(),
            s.censored.to_string(),
            fmt_f64(s.mean_tau),
            fmt_f64(s.log_mean_tau),
            fmt_f64(s.gamma_log_mean),
            fmt_f64(s.ci_halfwidth),
            fmt_f64(s.v_bar_target),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn simulate_exit(
    sys: &System,
    params: &MultiscaleParams,
    dom: &DomainSpec,
    x: &Field,
    opts: &ExitOptions,
    t_max: f64,
    stream: u64,
) -> Result<ExitSample> {
    let op = &sys.op;
    let mut stepper = SpdeStepper::new(sys, *params, opts.dt)?;
    let mut rng = RngStream::new(opts.seed, stream);
    let steps = ((t_max / opts.dt).ceil() as u64).min(opts.max_steps);
    let mut u = x.clone();
    let mut g_prev = dom.membership(op, &u);
    let nonconst = |u: &Field| op.h_mu_norm(&(u - &op.constant(op.invariant_average(u))));
    let mut rho_entries = 0;
    let mut armed = false;
    for i in 0..steps {
        let t = i as f64 * opts.dt;
        stepper.step(t, &mut u, &mut rng, None);
        let t1 = (i + 1) as f64 * opts.dt;
        if diverged(&u) {
            return Ok(ExitSample {
                tau: t1,
                censored: true,
                diverged: true,
                nonconstant_at_exit: f64::NAN,
                rho_entries,
            });
        }
        let g = dom.membership(op, &u);
        if let Some(tau) = crossing(t, g_prev, t1, g, dom.r) {
            return Ok(ExitSample {
                tau,
                censored: false,
                diverged: false,
                nonconstant_at_exit: nonconst(&u),
                rho_entries,
            });
        }
        if let Some(rho) = opts.rho_ball {
            let d = op.h_mu_norm(&u);
            if d >= 2.0 * rho {
                armed = true;
            } else if armed && d < rho {
                rho_entries += 1;
                armed = false;
            }
        }
        g_prev = g;
    }
    Ok(ExitSample {
        tau: steps as f64 * opts.dt,
        censored: true,
        diverged: false,
        nonconstant_at_exit: f64::NAN,
        rho_entries,
    })
}

/// Reduces per-path samples to the level statistics.
pub fn summarize(params: &MultiscaleParams, samples: Vec<ExitSample>, t_max: f64, v_bar_target: f64, radius: f64) -> ExitStats {
    let n = samples.len();
    let nf = n as f64;
    let mean = samples.iter().map(|s| s.tau).sum::<f64>() / nf;
    let var = if n > 1 {
        samples.iter().map(|s| (s.tau - mean).powi(2)).sum::<f64>() / (nf - 1.0)
    } else {
        0.0
    };
    let censored = samples.iter().filter(|s| s.censored).count();
    let exited: Vec<&ExitSample> = samples.iter().filter(|s| !s.censored).collect();
    let concentrated = if exited.is_empty() {
        f64::NAN
    } else {
        exited.iter().filter(|s| s.nonconstant_at_exit < 0.1 * radius).count() as f64 / exited.len() as f64
    };
    let log_mean = mean.ln();
    let mean_rho = samples.iter().any(|s| s.rho_entries > 0).then(|| samples.iter().map(|s| s.rho_entries as f64).sum::<f64>() / nf);
    ExitStats {
        gamma: params.gamma,
        eps: params.eps,
        alpha: params.alpha,
        beta: params.beta,
        n,
        censored,
        diverged: samples.iter().filter(|s| s.diverged).count(),
        t_max,
        mean_tau: mean,
        log_mean_tau: log_mean,
        gamma_log_mean: params.gamma * log_mean,
        eps_log_mean: params.eps * log_mean,
        ci_halfwidth: 1.96 * params.gamma * (var / nf).sqrt() / mean,
        lower_bound_only: censored > 0,
        v_bar_target,
        concentrated_fraction: concentrated,
        mean_rho_entries: mean_rho,
        samples,
    }
}

/// Monte Carlo exit times for each parameter level. Path `p` of level `l`
/// uses stream `l·n_paths + p`, so results do not depend on scheduling.
pub fn exit_time_mc(
    sys: &System,
    model: &AveragedModel,
    dom: &DomainSpec,
    x: &Field,
    levels: &[MultiscaleParams],
    opts: &ExitOptions,
) -> Result<Vec<ExitStats>> {
    if opts.n_paths == 0 {
        return Err(Error::invalid("need at least one path"));
    }
    if !dom.contains(&sys.op, x) {
        return Err(Error::invalid("initial state lies outside the domain"));
    }
    let target = v_bar(model, dom)?;
    let mut out = Vec::with_capacity(levels.len());
    for (l, params) in levels.iter().enumerate() {
        if !(params.gamma > 0.0) {
            return Err(Error::invalid("exit levels need gamma > 0"));
        }
        let t_max = opts.t_max.unwrap_or_else(|| 50.0 * (target / params.gamma).exp());
        // Validates dt and eps before fanning out.
        SpdeStepper::new(sys, *params, opts.dt)?;
        let samples = (0..opts.n_paths)
            .into_par_iter()
            .map(|p| simulate_exit(sys, params, dom, x, opts, t_max, (l * opts.n_paths + p) as u64))
            .collect::<Result<Vec<_>>>()?;
        out.push(summarize(params, samples, t_max, target, dom.inner_radius()));
    }
    Ok(out)
}

/// Least-squares line through `(γ, γ log 𝔼τ)`, evaluated at `γ = 0`.
pub fn extrapolate_to_zero(stats: &[ExitStats]) -> Option<f64> {
    if stats.len() < 2 {
        return None;
    }
    let n = stats.len() as f64;
    let mx = stats.iter().map(|s| s.gamma).sum::<f64>() / n;
    let my = stats.iter().map(|s| s.gamma_log_mean).sum::<f64>() / n;
    let sxx: f64 = stats.iter().map(|s| (s.gamma - mx).powi(2)).sum();
    let sxy: f64 = stats.iter().map(|s| (s.gamma - mx) * (s.gamma_log_mean - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(my - sxy / sxx * mx)
}

#[derive(Clone, Debug, Serialize)]
pub struct ExitHypothesisReport {
    /// (i) `g` bounded.
    pub bounded_g: bool,
    /// (ii) flows from boundary-adjacent constants stay in `D̄`.
    pub flow_contained: bool,
    /// (ii) those flows approach a common point.
    pub flow_attracted: bool,
    /// (iii) semigroup invariance and the Jensen step.
    pub semigroup_invariant: bool,
    pub jensen: bool,
    pub witnesses: Vec<String>,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct ExitProbeConfig {
    pub horizon: f64,
    pub dt: f64,
    /// Starting points sit at this fraction of `y₁`, `y₂`.
    pub inset: f64,
    /// Attraction tolerance relative to the inner radius.
    pub attraction_tol: f64,
}

impl Default for ExitProbeConfig {
    fn default() -> Self {
        ExitProbeConfig {
            horizon: 20.0,
            dt: 1e-2,
            inset: 0.999,
            attraction_tol: 0.05,
        }
    }
}

pub fn check_exit_hypotheses(model: &AveragedModel, dom: &DomainSpec, cfg: &ExitProbeConfig) -> ExitHypothesisReport {
    let mut witnesses = Vec::new();
    let bounded_g = model.coefficients().g.sup_bound().is_some();
    if !bounded_g {
        witnesses.push(format!("g = {:?} has no finite bound", model.coefficients().g));
    }
    let tol = 1e-9 * (1.0 + dom.r.abs());
    let mut flow_contained = true;
    let mut ends = Vec::new();
    for y in [dom.constant_section.0, dom.constant_section.1] {
        let x = cfg.inset * y;
        match solve_limit_ode(model, x, cfg.horizon, cfg.dt) {
            Ok(tr) => {
                if let Some((t, u)) = tr
                    .times
                    .iter()
                    .zip(&tr.values)
                    .find(|(_, u)| dom.length * dom.profile.eval(**u) > dom.r + tol)
                {
                    flow_contained = false;
                    witnesses.push(format!("flow from {x} leaves D at t = {t} (u = {u})"));
                }
                ends.push(tr.last());
            }
            Err(e) => {
                flow_contained = false;
                witnesses.push(format!("flow from {x} failed: {e}"));
            }
        }
    }
    let flow_attracted = flow_contained && ends.len() == 2 && (ends[0] - ends[1]).abs() < cfg.attraction_tol * dom.inner_radius();
    if flow_contained && !flow_attracted {
        witnesses.push(format!("flows end at {ends:?}, not at a common point"));
    }
    let (semigroup_invariant, jensen) = match &dom.probes {
        Some(p) => {
            if let Some(w) = &p.witness {
                witnesses.push(w.clone());
            }
            (p.semigroup_passed, p.jensen_passed)
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(PROBE_SEED);
            let p = invariance_probe(model.operator(), dom, &mut rng, PROBE_SAMPLES, &PROBE_TIMES);
            if let Some(w) = &p.witness {
                witnesses.push(w.clone());
            }
            (p.semigroup_passed, p.jensen_passed)
        }
    };
    ExitHypothesisReport {
        bounded_g,
        flow_contained,
        flow_attracted,
        semigroup_invariant,
        jensen,
        passed: bounded_g && flow_contained && flow_attracted && semigroup_invariant && jensen,
        witnesses,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{BoundaryGain, Coefficient, CoefficientSet, RhoBar};
    use crate::noise::{CovarianceSpectrumB, CovarianceSpectrumQ};

    fn op() -> SpectralOperator {
        SpectralOperator::neumann_laplacian_1d(6).unwrap()
    }

    fn reference_system(f: Coefficient, g: Coefficient) -> System {
        System::new(
            op(),
            CoefficientSet::new(f, g, BoundaryGain::uniform(1.0)),
            CovarianceSpectrumQ::flat(6, std::f64::consts::SQRT_2),
            CovarianceSpectrumB::new([1.0, 1.0]).unwrap(),
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn ball_domain() {
        let op = op();
        let d = build_domain(ConvexProfile::square(), 0.25, &op).unwrap();
        assert!((d.constant_section.0 + 0.5).abs() < 1e-14);
        assert!((d.constant_section.1 - 0.5).abs() < 1e-14);
        let p = d.probes.as_ref().unwrap();
        assert!(p.semigroup_passed && p.jensen_passed && p.jensen_checked > 10);
        assert!(d.contains(&op, &op.constant(0.3)));
        assert!(!d.contains(&op, &op.constant(0.6)));
        assert!(build_domain(ConvexProfile::Quadratic { a: 1.0, b: 0.0, c: 0.3 }, 0.25, &op).is_err());
    }

    #[test]
    fn diagonal_decay_of_membership() {
        let op = op();
        let d = build_domain(ConvexProfile::square(), 0.25, &op).unwrap();
        let x = Field::unit(6, 1).scaled(0.4);
        for t in [0.0, 0.01, 0.1, 1.0] {
            let g = d.membership(&op, &op.semigroup_apply(t, &x).unwrap());
            let pi2 = std::f64::consts::PI.powi(2);
            assert!((g - 0.16 * (-2.0 * pi2 * t).exp()).abs() < 1e-15);
        }
        let c = op.constant(0.2);
        assert!(d.contains_constant(op.invariant_average(&c)));
    }

    #[test]
    fn log_cosh_profile_probes() {
        let op = SpectralOperator::neumann_laplacian_1d_with_grid(6, 512).unwrap();
        let d = build_domain(ConvexProfile::QuadraticLogCosh { a: 1.0, b: 0.5 }, 0.4, &op).unwrap();
        let (y1, y2) = d.constant_section;
        assert!((d.profile.eval(y2) - 0.4).abs() < 1e-12 && (y1 + y2).abs() < 1e-12);
        let p = d.probes.unwrap();
        assert!(p.jensen_passed);
        assert!(p.min_margin > -1e-9, "{}", p.min_margin);
    }

    #[test]
    fn ramp_exit_time() {
        let op = op();
        let d = build_domain(ConvexProfile::square(), 0.25, &op).unwrap();
        let times: Vec<f64> = (0..=10).map(|i| i as f64 * 0.1).collect();
        let traj = FieldTrajectory {
            states: times.iter().map(|t| op.constant(*t)).collect(),
            times,
            seed: None,
            stream: None,
        };
        let out = first_exit_time(&op, &traj, &d).unwrap();
        assert!((out.tau.unwrap() - 0.5).abs() < 1e-12);

        // Off-grid crossing: G = t² interpolated between 0.49 and 0.64.
        let times: Vec<f64> = (0..=10).map(|i| i as f64 * 0.15).collect();
        let traj = FieldTrajectory {
            states: times.iter().map(|t| op.constant(*t)).collect(),
            times,
            seed: None,
            stream: None,
        };
        let tau = first_exit_time(&op, &traj, &d).unwrap().tau.unwrap();
        let expect = 0.45 + 0.15 * (0.25 - 0.2025) / (0.36 - 0.2025);
        assert!((tau - expect).abs() < 1e-12);

        let bigger = build_domain(ConvexProfile::square(), 0.3, &op).unwrap();
        assert!(first_exit_time(&op, &traj, &bigger).unwrap().tau.unwrap() > tau);

        let outside = FieldTrajectory {
            states: vec![op.constant(0.7), op.constant(0.1)],
            times: vec![0.0, 1.0],
            seed: None,
            stream: None,
        };
        assert!(first_exit_time(&op, &outside, &d).is_err());
    }

    #[test]
    fn attracting_deterministic_path_is_censored() {
        let sys = reference_system(Coefficient::Linear { slope: -1.0, offset: 0.0 }, Coefficient::Constant { value: 1.0 });
        let p = MultiscaleParams::deterministic(0.01).unwrap();
        let d = build_domain(ConvexProfile::square(), 0.25, &sys.op).unwrap();
        let tr = crate::solver::solve_spde(&sys, &p, &sys.op.constant(0.45), 2.0, 1e-2, &mut RngStream::new(0, 0)).unwrap();
        assert!(first_exit_time(&sys.op, &tr, &d).unwrap().tau.is_none());
    }

    #[test]
    fn reference_intensity_and_v_bar() {
        let sys = reference_system(Coefficient::Linear { slope: -1.0, offset: 0.0 }, Coefficient::Constant { value: 1.0 });
        let m = sys.averaged(RhoBar::Finite(1.0)).unwrap();
        assert!((m.noise_intensity(0.0, 0.0) - 1.0).abs() < 1e-14);
        let d = build_domain(ConvexProfile::square(), 0.25, &sys.op).unwrap();
        assert!((v_bar(&m, &d).unwrap() - 0.25).abs() < 1e-12);
        let small = build_domain(ConvexProfile::square(), 1e-6, &sys.op).unwrap();
        assert!(v_bar(&m, &small).unwrap() < 1e-5);
    }

    #[test]
    fn asymmetric_v_bar() {
        let sys = reference_system(Coefficient::Linear { slope: -1.0, offset: 0.1 }, Coefficient::Constant { value: 1.0 });
        let m = sys.averaged(RhoBar::Finite(1.0)).unwrap();
        let d = build_domain(ConvexProfile::square(), 0.25, &sys.op).unwrap();
        let left = crate::ldp::quasi_potential_explicit(&m, -0.5).unwrap();
        let right = crate::ldp::quasi_potential_explicit(&m, 0.5).unwrap();
        // −2∫₀^y (−σ + 0.1) dσ = y² − 0.2y
        assert!((left - 0.35).abs() < 1e-12 && (right - 0.15).abs() < 1e-12);
        assert_eq!(v_bar(&m, &d).unwrap(), right);
    }

    #[test]
    fn hypothesis_probes() {
        let d = build_domain(ConvexProfile::square(), 0.25, &op()).unwrap();
        let good = reference_system(Coefficient::Linear { slope: -1.0, offset: 0.0 }, Coefficient::Constant { value: 1.0 })
            .averaged(RhoBar::Finite(1.0))
            .unwrap();
        let r = check_exit_hypotheses(&good, &d, &ExitProbeConfig::default());
        assert!(r.passed, "{r:?}");

        let repelling = reference_system(Coefficient::Linear { slope: 1.0, offset: 0.0 }, Coefficient::Constant { value: 1.0 })
            .averaged(RhoBar::Finite(1.0))
            .unwrap();
        let r = check_exit_hypotheses(&repelling, &d, &ExitProbeConfig::default());
        assert!(!r.flow_contained && !r.passed && !r.witnesses.is_empty());

        let unbounded = reference_system(Coefficient::Linear { slope: -1.0, offset: 0.0 }, Coefficient::Linear { slope: 1.0, offset: 1.0 })
            .averaged(RhoBar::Finite(1.0))
            .unwrap();
        let r = check_exit_hypotheses(&unbounded, &d, &ExitProbeConfig::default());
        assert!(!r.bounded_g && !r.passed);
    }

    #[test]
    fn exit_mc_is_deterministic_and_orders_levels() {
        let sys = reference_system(Coefficient::Linear { slope: -1.0, offset: 0.0 }, Coefficient::Constant { value: 1.0 });
        let m = sys.averaged(RhoBar::Finite(1.0)).unwrap();
        let d = build_domain(ConvexProfile::square(), 0.25, &sys.op).unwrap();
        let levels: Vec<MultiscaleParams> = [1.0, 0.5]
            .iter()
            .map(|g: &f64| {
                let a = 0.5 * g.sqrt();
                MultiscaleParams::new(g * g, a, a, RhoBar::Finite(1.0)).unwrap()
            })
            .collect();
        let opts = ExitOptions {
            n_paths: 40,
            dt: 2e-3,
            seed: 11,
            rho_ball: Some(0.1),
            ..Default::default()
        };
        let x = Field::zeros(6);
        let a = exit_time_mc(&sys, &m, &d, &x, &levels, &opts).unwrap();
        let b = exit_time_mc(&sys, &m, &d, &x, &levels, &opts).unwrap();
        assert_eq!(a, b);
        assert!(a[0].mean_tau < a[1].mean_tau);
        assert!(a[0].gamma_log_mean < 0.25);
        assert_eq!(a[0].censored, 0);

        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let c = pool.install(|| exit_time_mc(&sys, &m, &d, &x, &levels, &opts).unwrap());
        assert_eq!(a, c);

        let mut buf = Vec::new();
        write_exit_csv(&a, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("gamma,eps,alpha,beta,n,censored,mean_tau,log_mean_tau,gamma_log_mean,ci_halfwidth,v_bar_target\n"));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn short_horizon_censors_and_flags_lower_bound() {
        let sys = reference_system(Coefficient::Linear { slope: -1.0, offset: 0.0 }, Coefficient::Constant { value: 1.0 });
        let m = sys.averaged(RhoBar::Finite(1.0)).unwrap();
        let d = build_domain(ConvexProfile::square(), 0.25, &sys.op).unwrap();
        let level = [MultiscaleParams::new(0.0625, 0.125, 0.125, RhoBar::Finite(1.0)).unwrap()];
        let short = ExitOptions {
            n_paths: 20,
            dt: 2e-3,
            t_max: Some(0.05),
            seed: 5,
            ..Default::default()
        };
        let s = &exit_time_mc(&sys, &m, &d, &Field::zeros(6), &level, &short).unwrap()[0];
        assert_eq!(s.censored, 20);
        assert!(s.lower_bound_only);
        assert!((s.mean_tau - 0.05).abs() < 1e-12);

        // Raising T_max keeps exits that already happened.
        let long = ExitOptions { t_max: Some(50.0), ..short.clone() };
        let mid = ExitOptions { t_max: Some(2.0), ..short };
        let a = &exit_time_mc(&sys, &m, &d, &Field::zeros(6), &level, &mid).unwrap()[0];
        let b = &exit_time_mc(&sys, &m, &d, &Field::zeros(6), &level, &long).unwrap()[0];
        for (x, y) in a.samples.iter().zip(&b.samples) {
            if !x.censored {
                assert_eq!(x.tau, y.tau);
            } else {
                assert!(y.tau >= x.tau);
            }
        }
    }

    #[test]
    fn extrapolation() {
        let mk = |g: f64, v: f64| ExitStats {
            gamma: g,
            eps: g * g,
            alpha: 0.0,
            beta: 0.0,
            n: 1,
            censored: 0,
            diverged: 0,
            t_max: 1.0,
            mean_tau: 1.0,
            log_mean_tau: 0.0,
            gamma_log_mean: v,
            eps_log_mean: 0.0,
            ci_halfwidth: 0.0,
            lower_bound_only: false,
            v_bar_target: 0.25,
            concentrated_fraction: 1.0,
            mean_rho_entries: None,
            samples: vec![],
        };
        let s = vec![mk(0.2, 0.15), mk(0.1, 0.2)];
        assert!((extrapolate_to_zero(&s).unwrap() - 0.25).abs() < 1e-12);
        assert!(extrapolate_to_zero(&s[..1]).is_none());
    }
}
