//! Experiment configuration: a single JSON document. Every optional field
//! has a concrete default, and the resolved copy written next to the
//! results spells all of them out.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coefficients::{BoundaryGain, Coefficient, CoefficientSet, RhoBar};
use crate::error::{Error, Result};
use crate::exit::ConvexProfile;
use crate::noise::{CovarianceSpectrumB, CovarianceSpectrumQ, SpectrumLaw};
use crate::solver::{MultiscaleParams, ScaleLaw, System};
use crate::spectral::{Field, SpectralOperator};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Check,
    Simulate,
    Average,
    Action,
    Quasipotential,
    Exit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Diffusivity {
    Constant { value: f64 },
    /// `a + b ξ`
    Linear { a: f64, b: f64 },
}

impl Diffusivity {
    pub fn eval(&self, xi: f64) -> f64 {
        match *self {
            Diffusivity::Constant { value } => value,
            Diffusivity::Linear { a, b } => a + b * xi,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "builder", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorConfig {
    #[serde(rename = "neumann_laplacian_1d")]
    NeumannLaplacian1d {
        n_modes: usize,
        #[serde(default)]
        points: Option<usize>,
    },
    #[serde(rename = "divergence_1d")]
    Divergence1d {
        n_modes: usize,
        cells: usize,
        diffusivity: Diffusivity,
    },
}

impl OperatorConfig {
    pub fn build(&self) -> Result<SpectralOperator> {
        match self {
            OperatorConfig::NeumannLaplacian1d { n_modes, points: None } => SpectralOperator::neumann_laplacian_1d(*n_modes),
            OperatorConfig::NeumannLaplacian1d { n_modes, points: Some(p) } => {
                SpectralOperator::neumann_laplacian_1d_with_grid(*n_modes, *p)
            }
            OperatorConfig::Divergence1d { n_modes, cells, diffusivity } => {
                let d = diffusivity.clone();
                SpectralOperator::divergence_1d(*n_modes, *cells, move |x| d.eval(x))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientConfig {
    pub f: Coefficient,
    pub g: Coefficient,
    pub sigma: BoundaryGain,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub q: SpectrumLaw,
    pub b_thetas: [f64; 2],
    /// Spatial dimension used by the eigenvalue summability check.
    #[serde(default = "one")]
    pub dimension: usize,
    /// Boundary eigenvalue law for the summability check; defaults to the
    /// two entries of `b_thetas`.
    #[serde(default)]
    pub b_law: Option<SpectrumLaw>,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub eps: Vec<f64>,
    pub alpha: ScaleLaw,
    pub beta: ScaleLaw,
    pub rho_bar: RhoBar,
    /// Relative tolerance of the `ρ̄` consistency check.
    #[serde(default = "rho_tol")]
    pub rho_tolerance: f64,
}

fn rho_tol() -> f64 {
    1e-9
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub t_final: f64,
    /// Defaults to `10⁻³·T`.
    #[serde(default)]
    pub dt: Option<f64>,
    /// Start of the window `[δ, T]` for averaging errors.
    #[serde(default)]
    pub delta: f64,
}

impl SolverConfig {
    pub fn dt(&self) -> f64 {
        self.dt.unwrap_or(1e-3 * self.t_final)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialState {
    Constant { value: f64 },
    /// `amplitude·cos(wavenumber·π·ξ) + offset`
    Cosine { amplitude: f64, wavenumber: f64, offset: f64 },
    Modes { coeffs: Vec<f64> },
}

impl InitialState {
    pub fn build(&self, op: &SpectralOperator) -> Result<Field> {
        match self {
            InitialState::Constant { value } => Ok(op.constant(*value)),
            InitialState::Cosine { amplitude, wavenumber, offset } => {
                let (a, k, c) = (*amplitude, *wavenumber, *offset);
                Ok(op.project(|xi| a * (k * std::f64::consts::PI * xi).cos() + c))
            }
            InitialState::Modes { coeffs } => {
                if coeffs.len() > op.n_modes() {
                    return Err(Error::invalid("initial state has more modes than the operator"));
                }
                let mut f = Field::zeros(op.n_modes());
                f.coeffs_mut()[..coeffs.len()].copy_from_slice(coeffs);
                Ok(f)
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            InitialState::Constant { .. } => true,
            InitialState::Cosine { amplitude, .. } => *amplitude == 0.0,
            InitialState::Modes { coeffs } => coeffs.iter().skip(1).all(|c| *c == 0.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PathSpec {
    /// Straight line from `from` to `to`.
    Linear { from: f64, to: f64 },
    /// The limit flow started at `from`.
    Flow { from: f64 },
    Values { values: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionConfig {
    pub path: PathSpec,
    #[serde(default = "default_action_nodes")]
    pub nodes: usize,
    /// Step of the controlled-ODE round trip.
    #[serde(default = "default_round_trip_dt")]
    pub round_trip_dt: f64,
}

fn default_action_nodes() -> usize {
    101
}

fn default_round_trip_dt() -> f64 {
    1e-4
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuasipotentialConfig {
    pub ys: Vec<f64>,
    #[serde(default = "default_horizons")]
    pub horizons: Vec<f64>,
    #[serde(default = "default_qp_nodes")]
    pub nodes: usize,
}

fn default_horizons() -> Vec<f64> {
    crate::ldp::DEFAULT_HORIZONS.to_vec()
}

fn default_qp_nodes() -> usize {
    crate::ldp::DEFAULT_NODES
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExitConfig {
    pub profile: ConvexProfile,
    pub r: f64,
    #[serde(default = "default_exit_dt")]
    pub dt: f64,
    #[serde(default)]
    pub t_max: Option<f64>,
    #[serde(default = "default_max_steps")]
    pub max_steps: u64,
    #[serde(default)]
    pub rho_ball: Option<f64>,
}

fn default_exit_dt() -> f64 {
    1e-3
}

fn default_max_steps() -> u64 {
    20_000_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    /// Half-width of the state grid for the nondegeneracy scan.
    #[serde(default = "default_u_range")]
    pub u_range: f64,
    #[serde(default = "default_u_points")]
    pub u_points: usize,
    #[serde(default = "default_floor")]
    pub nondegeneracy_floor: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            u_range: default_u_range(),
            u_points: default_u_points(),
            nondegeneracy_floor: default_floor(),
            samples: default_samples(),
        }
    }
}

fn default_u_range() -> f64 {
    2.0
}

fn default_u_points() -> usize {
    41
}

fn default_floor() -> f64 {
    1e-8
}

fn default_samples() -> usize {
    100
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default = "default_paths")]
    pub paths: usize,
    pub operator: OperatorConfig,
    pub coefficients: CoefficientConfig,
    pub noise: NoiseConfig,
    #[serde(default = "default_delta0")]
    pub delta0: f64,
    pub schedule: ScheduleConfig,
    pub solver: SolverConfig,
    pub initial: InitialState,
    #[serde(default)]
    pub action: Option<ActionConfig>,
    #[serde(default)]
    pub quasipotential: Option<QuasipotentialConfig>,
    #[serde(default)]
    pub exit: Option<ExitConfig>,
    #[serde(default)]
    pub check: CheckConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("results")
}

fn default_paths() -> usize {
    100
}

fn default_delta0() -> f64 {
    1.0
}

fn config_error(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    /// Parses and validates; errors carry the offending field path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            config_error(path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_error(path.display().to_string(), e.to_string()))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schedule.eps.is_empty() {
            return Err(config_error("schedule.eps", "needs at least one value"));
        }
        for (i, e) in self.schedule.eps.iter().enumerate() {
            if !(*e > 0.0) {
                return Err(config_error(format!("schedule.eps[{i}]"), "must be > 0"));
            }
        }
        if !(self.solver.t_final > 0.0) {
            return Err(config_error("solver.t_final", "must be > 0"));
        }
        if !(self.solver.dt() > 0.0 && self.solver.dt() <= self.solver.t_final) {
            return Err(config_error("solver.dt", "must lie in (0, t_final]"));
        }
        if !(self.solver.delta >= 0.0 && self.solver.delta < self.solver.t_final) {
            return Err(config_error("solver.delta", "must lie in [0, t_final)"));
        }
        if !(self.delta0 > 0.0) {
            return Err(config_error("delta0", "must be > 0"));
        }
        if self.paths == 0 {
            return Err(config_error("paths", "must be >= 1"));
        }
        if self.noise.b_thetas.iter().any(|t| !(*t >= 0.0)) {
            return Err(config_error("noise.b_thetas", "must be nonnegative"));
        }
        match self.kind {
            ExperimentKind::Average if self.schedule.eps.len() < 2 => {
                return Err(config_error("schedule.eps", "averaging needs at least two values"));
            }
            ExperimentKind::Action if self.action.is_none() => return Err(config_error("action", "missing section")),
            ExperimentKind::Quasipotential if self.quasipotential.is_none() => {
                return Err(config_error("quasipotential", "missing section"));
            }
            ExperimentKind::Exit if self.exit.is_none() => return Err(config_error("exit", "missing section")),
            _ => {}
        }
        Ok(())
    }

    /// Fully materialized JSON; every default appears explicitly.
    pub fn resolved_json(&self) -> String {
        let mut r = self.clone();
        r.solver.dt = Some(self.solver.dt());
        if r.noise.b_law.is_none() {
            r.noise.b_law = Some(SpectrumLaw::List {
                values: self.noise.b_thetas.to_vec(),
            });
        }
        if let OperatorConfig::NeumannLaplacian1d { n_modes, points } = &mut r.operator {
            points.get_or_insert(crate::spectral::DEFAULT_POINTS_PER_MODE * (*n_modes).max(2));
        }
        serde_json::to_string_pretty(&r).expect("config serializes") + "\n"
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.resolved_json().as_bytes()))
    }

    pub fn build_system(&self) -> Result<System> {
        let op = self.operator.build()?;
        let c = &self.coefficients;
        let cs = CoefficientSet::new(c.f.clone(), c.g.clone(), c.sigma);
        let q = CovarianceSpectrumQ::from_law(self.noise.q.clone(), op.n_modes())?;
        let b = CovarianceSpectrumB::new(self.noise.b_thetas)?;
        System::new(op, cs, q, b, self.delta0)
    }

    pub fn levels(&self) -> Result<Vec<MultiscaleParams>> {
        let s = &self.schedule;
        s.eps
            .iter()
            .map(|e| MultiscaleParams::from_laws(*e, &s.alpha, &s.beta, s.rho_bar))
            .collect()
    }

    pub fn b_law(&self) -> SpectrumLaw {
        self.noise.b_law.clone().unwrap_or(SpectrumLaw::List {
            values: self.noise.b_thetas.to_vec(),
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RhoConsistency {
    pub declared: RhoBar,
    /// Limit of `β(ε)/α(ε)` implied by the power laws.
    pub implied: Option<RhoBar>,
    /// `(ε, β(ε)/α(ε))` at each listed ε.
    pub ratios: Vec<(f64, f64)>,
    pub passed: bool,
}

/// Compares the declared `ρ̄` with the limit of the declared laws.
pub fn check_rho_consistency(s: &ScheduleConfig) -> RhoConsistency {
    let implied = ScaleLaw::limit_ratio(&s.alpha, &s.beta);
    let passed = match (implied, s.rho_bar) {
        (None, _) => true,
        (Some(RhoBar::Infinite), RhoBar::Infinite) => true,
        (Some(RhoBar::Finite(a)), RhoBar::Finite(b)) => (a - b).abs() <= s.rho_tolerance * a.abs().max(1.0),
        _ => false,
    };
    let ratios = s
        .eps
        .iter()
        .map(|e| {
            let (a, b) = (s.alpha.value(*e), s.beta.value(*e));
            (*e, if a == 0.0 { f64::INFINITY } else { b / a })
        })
        .collect();
    RhoConsistency {
        declared: s.rho_bar,
        implied,
        ratios,
        passed,
    }
}
