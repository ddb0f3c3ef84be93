//! Experiment drivers. Each run writes into `cfg.out`: the resolved
//! config, its results, and a manifest with checksums of both.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::{AveragedModel, LipschitzReport, NondegeneracyReport};
use crate::error::{Error, Result};
use crate::exit::{build_domain, check_exit_hypotheses, exit_time_mc, extrapolate_to_zero, write_exit_csv, ExitHypothesisReport, ExitOptions, ExitProbeConfig, ExitStats};
use crate::harness::config::{check_rho_consistency, ExperimentConfig, ExperimentKind, PathSpec, RhoConsistency};
use crate::harness::manifest::{RunManifest, RESOLVED_CONFIG_FILE};
use crate::ldp::{action_i, minimizing_control, quasi_potential_explicit, quasi_potential_variational, v_bar, ScalarPath};
use crate::noise::{check_hyp_eigenvalues, EigenvalueReport, RngStream};
use crate::solver::{averaging_error, fmt_f64, solve_controlled_ode, solve_limit_ode, solve_spde, MultiscaleParams, System};
use crate::spectral::Field;

pub const CHECK_REPORT: &str = "check_report.json";
pub const AVERAGE_TABLE: &str = "average_table.csv";
pub const AVERAGE_SUMMARY: &str = "average_summary.json";
pub const EXIT_STATS: &str = "exit_stats.csv";
pub const EXIT_SUMMARY: &str = "exit_summary.json";
pub const EXIT_SCALING: &str = "exit_scaling.csv";
pub const AVERAGING_PLOT: &str = "averaging.csv";

const GAP_TIMES: [f64; 3] = [0.1, 0.5, 1.0];

#[derive(Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub manifest: RunManifest,
}

struct RunDir {
    dir: PathBuf,
    manifest: RunManifest,
    started: Instant,
}

impl RunDir {
    fn open(cfg: &ExperimentConfig, command: &str) -> Result<Self> {
        std::fs::create_dir_all(&cfg.out)?;
        std::fs::write(cfg.out.join(RESOLVED_CONFIG_FILE), cfg.resolved_json())?;
        let mut manifest = RunManifest::new(cfg.hash(), command);
        manifest.record(&cfg.out, RESOLVED_CONFIG_FILE)?;
        Ok(RunDir {
            dir: cfg.out.clone(),
            manifest,
            started: Instant::now(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        std::fs::write(self.dir.join(name), bytes)?;
        self.manifest.record(&self.dir, name)
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value)? + "\n";
        self.write(name, text.as_bytes())
    }

    fn finish(mut self) -> Result<RunOutcome> {
        self.manifest.wall_clock_seconds = self.started.elapsed().as_secs_f64();
        self.manifest.write(&self.dir)?;
        Ok(RunOutcome {
            dir: self.dir,
            manifest: self.manifest,
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GapSummary {
    pub samples: usize,
    pub gap: f64,
    pub worst_margin: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckReport {
    pub kind: ExperimentKind,
    pub spectral_gap: GapSummary,
    pub lipschitz: LipschitzReport,
    pub eigenvalues: EigenvalueReport,
    pub nondegeneracy: NondegeneracyReport,
    pub rho_consistency: RhoConsistency,
    pub exit: Option<ExitHypothesisReport>,
    /// Checks that are required for `kind` and failed.
    pub failures: Vec<String>,
    pub passed: bool,
}

/// Runs every applicable hypothesis probe.
pub fn check_report(cfg: &ExperimentConfig) -> Result<CheckReport> {
    let sys = cfg.build_system()?;
    let op = &sys.op;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut worst = f64::INFINITY;
    let mut gap_ok = true;
    for _ in 0..cfg.check.samples {
        let h = Field::from_coeffs((0..op.n_modes()).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect());
        let r = op.check_spectral_gap(&h, &GAP_TIMES)?;
        gap_ok &= r.passed;
        worst = r.entries.iter().map(|e| e.margin).fold(worst, f64::min);
    }
    let spectral_gap = GapSummary {
        samples: cfg.check.samples,
        gap: op.spectral_gap(),
        worst_margin: worst,
        passed: gap_ok,
    };

    let lipschitz = sys.coefficients.check_lipschitz(&mut rng, 10 * cfg.check.samples, cfg.check.u_range, cfg.solver.t_final);
    let eigenvalues = check_hyp_eigenvalues(cfg.noise.dimension, &cfg.noise.q, |k| op.sup_norm(k.min(op.n_modes() - 1)), &cfg.b_law());

    let model = sys.averaged(cfg.schedule.rho_bar)?;
    let n = cfg.check.u_points.max(2);
    let u_grid: Vec<f64> = (0..n)
        .map(|i| -cfg.check.u_range + 2.0 * cfg.check.u_range * i as f64 / (n - 1) as f64)
        .collect();
    let nondegeneracy = model.check_nondegeneracy(&[0.0, 0.5 * cfg.solver.t_final, cfg.solver.t_final], &u_grid, cfg.check.nondegeneracy_floor)?;
    let rho_consistency = check_rho_consistency(&cfg.schedule);

    let exit = match &cfg.exit {
        Some(e) => {
            let dom = build_domain(e.profile.clone(), e.r, op)?;
            Some(check_exit_hypotheses(&model, &dom, &ExitProbeConfig::default()))
        }
        None => None,
    };

    use ExperimentKind::*;
    let kind = cfg.kind;
    let mut failures = Vec::new();
    if !spectral_gap.passed {
        failures.push("spectral gap".to_string());
    }
    if !lipschitz.passed {
        failures.push("lipschitz".to_string());
    }
    if !eigenvalues.passed {
        failures.push(format!("eigenvalue summability: {}", eigenvalues.note));
    }
    if matches!(kind, Check | Average | Action | Quasipotential | Exit) && !rho_consistency.passed {
        failures.push(format!(
            "rho_bar {} inconsistent with the alpha/beta laws (limit {})",
            rho_consistency.declared,
            rho_consistency.implied.map_or("undetermined".to_string(), |r| r.to_string())
        ));
    }
    if matches!(kind, Check | Action | Quasipotential | Exit) && !nondegeneracy.passed {
        failures.push(format!(
            "nondegeneracy: H = {} at t = {}, u = {}",
            nondegeneracy.min_h, nondegeneracy.at_t, nondegeneracy.at_u
        ));
    }
    if let Some(e) = &exit {
        if matches!(kind, Check | Exit) && !e.passed {
            failures.push(format!("exit domain: {}", e.witnesses.join("; ")));
        }
    }
    Ok(CheckReport {
        kind,
        spectral_gap,
        lipschitz,
        eigenvalues,
        nondegeneracy,
        rho_consistency,
        exit,
        passed: failures.is_empty(),
        failures,
    })
}

/// Writes `check_report.json`; fails with `HypothesisFailed` when a
/// required check fails (the report is written either way).
pub fn run_check(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let report = check_report(cfg)?;
    let mut run = RunDir::open(cfg, "check")?;
    run.write_json(CHECK_REPORT, &report)?;
    let out = run.finish()?;
    if report.passed {
        Ok(out)
    } else {
        Err(Error::HypothesisFailed(report.failures.join("; ")))
    }
}

fn require_checks(cfg: &ExperimentConfig) -> Result<()> {
    let report = check_report(cfg)?;
    if report.passed {
        Ok(())
    } else {
        Err(Error::HypothesisFailed(report.failures.join("; ")))
    }
}

/// One path per ε plus the limit ODE.
pub fn run_simulate(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let sys = cfg.build_system()?;
    let x = cfg.initial.build(&sys.op)?;
    let levels = cfg.levels()?;
    let mut run = RunDir::open(cfg, "simulate")?;
    let (t, dt) = (cfg.solver.t_final, cfg.solver.dt());
    let model = sys.averaged(cfg.schedule.rho_bar)?;
    let limit = solve_limit_ode(&model, sys.op.invariant_average(&x), t, dt)?;
    let mut buf = Vec::new();
    limit.write_csv(&mut buf)?;
    run.write("limit.csv", &buf)?;
    for (i, p) in levels.iter().enumerate() {
        let mut rng = RngStream::new(cfg.seed, i as u64);
        let tr = solve_spde(&sys, p, &x, t, dt, &mut rng)?;
        let mut buf = Vec::new();
        tr.write_csv(&mut buf)?;
        run.write(&format!("trajectory_eps{i}.csv"), &buf)?;
        run.manifest.paths_simulated += 1;
    }
    run.finish()
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct AverageRow {
    pub eps: f64,
    pub n_paths: usize,
    pub mean_err: f64,
    /// 95% half-width.
    pub ci: f64,
}

/// Monte Carlo mean of the averaging error on `[δ, T]` at each level.
/// Path `p` of level `l` uses stream `l·n_paths + p`.
#[allow(clippy::too_many_arguments)]
pub fn averaging_table(
    sys: &System,
    model: &AveragedModel,
    levels: &[MultiscaleParams],
    x: &Field,
    t_final: f64,
    dt: f64,
    delta: f64,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<AverageRow>> {
    let reference = solve_limit_ode(model, sys.op.invariant_average(x), t_final, dt)?;
    let mut rows = Vec::with_capacity(levels.len());
    for (l, p) in levels.iter().enumerate() {
        let errs = (0..n_paths)
            .into_par_iter()
            .map(|i| {
                let mut rng = RngStream::new(seed, (l * n_paths + i) as u64);
                let tr = solve_spde(sys, p, x, t_final, dt, &mut rng)?;
                averaging_error(&sys.op, &tr, &reference, delta, t_final)
            })
            .collect::<Result<Vec<f64>>>();
        let errs = match errs {
            Ok(e) => e,
            Err(e) if rows.is_empty() => return Err(e),
            Err(_) => break,
        };
        let n = errs.len() as f64;
        let mean = errs.iter().sum::<f64>() / n;
        let var = if errs.len() > 1 {
            errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        rows.push(AverageRow {
            eps: p.eps,
            n_paths,
            mean_err: mean,
            ci: 1.96 * (var / n).sqrt(),
        });
    }
    Ok(rows)
}

/// `true` when each row's error does not exceed its predecessor's beyond
/// the combined confidence half-widths (rows ordered by decreasing ε).
pub fn monotone_within_ci(rows: &[AverageRow]) -> bool {
    rows.windows(2).all(|w| w[1].mean_err <= w[0].mean_err + w[0].ci + w[1].ci)
}

pub fn write_average_csv<W: std::io::Write>(rows: &[AverageRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["eps", "n_paths", "mean_err", "ci"])?;
    for r in rows {
        w.write_record([fmt_f64(r.eps), r.n_paths.to_string(), fmt_f64(r.mean_err), fmt_f64(r.ci)])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct AverageSummary<'a> {
    rows: &'a [AverageRow],
    monotone_within_ci: bool,
    /// δ = 0 with a non-constant initial state includes the initial layer.
    initial_layer_included: bool,
    complete: bool,
}

pub fn run_average(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    require_checks(cfg)?;
    let sys = cfg.build_system()?;
    let model = sys.averaged(cfg.schedule.rho_bar)?;
    let x = cfg.initial.build(&sys.op)?;
    let levels = cfg.levels()?;
    let mut run = RunDir::open(cfg, "average")?;
    let rows = averaging_table(&sys, &model, &levels, &x, cfg.solver.t_final, cfg.solver.dt(), cfg.solver.delta, cfg.paths, cfg.seed)?;
    run.manifest.paths_simulated += (rows.len() * cfg.paths) as u64;
    let mut buf = Vec::new();
    write_average_csv(&rows, &mut buf)?;
    run.write(AVERAGE_TABLE, &buf)?;
    run.write_json(
        AVERAGE_SUMMARY,
        &AverageSummary {
            rows: &rows,
            monotone_within_ci: monotone_within_ci(&rows),
            initial_layer_included: cfg.solver.delta == 0.0 && !cfg.initial.is_constant(),
            complete: rows.len() == levels.len(),
        },
    )?;
    let complete = rows.len() == levels.len();
    let out = run.finish()?;
    if complete {
        Ok(out)
    } else {
        // Rerun the first failing level to surface its error.
        let l = rows.len();
        let p = &levels[l];
        for i in 0..cfg.paths {
            let mut rng = RngStream::new(cfg.seed, (l * cfg.paths + i) as u64);
            solve_spde(&sys, p, &x, cfg.solver.t_final, cfg.solver.dt(), &mut rng)?;
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ActionSummary {
    pub action: f64,
    pub half_control_norm_sq: f64,
    pub round_trip_sup_error: f64,
}

pub fn action_path(cfg: &ExperimentConfig, model: &AveragedModel) -> Result<ScalarPath> {
    let a = cfg.action.as_ref().ok_or_else(|| Error::invalid("missing action section"))?;
    let t = cfg.solver.t_final;
    match &a.path {
        PathSpec::Linear { from, to } => ScalarPath::from_fn(0.0, t, a.nodes, |s| from + (to - from) * s / t),
        PathSpec::Values { values } => ScalarPath::new(0.0, t, values.clone()),
        PathSpec::Flow { from } => {
            if a.nodes < 2 {
                return Err(Error::invalid("need at least two path nodes"));
            }
            ScalarPath::from_trajectory(&solve_limit_ode(model, *from, t, t / (a.nodes - 1) as f64)?)
        }
    }
}

pub fn run_action(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    require_checks(cfg)?;
    let sys = cfg.build_system()?;
    let model = sys.averaged(cfg.schedule.rho_bar)?;
    let w = action_path(cfg, &model)?;
    let a = cfg.action.as_ref().expect("validated");
    let action = action_i(&model, &w)?.value();
    let control = minimizing_control(&model, &w)?;
    let rt = solve_controlled_ode(&model, w.values()[0], &control, w.end() - w.start(), a.round_trip_dt)?;
    let err = rt
        .times
        .iter()
        .zip(&rt.values)
        .map(|(t, v)| (v - w.eval(w.start() + t)).abs())
        .fold(0.0, f64::max);
    let mut run = RunDir::open(cfg, "action")?;
    let mut buf = Vec::new();
    w.write_csv(&mut buf)?;
    run.write("action_path.csv", &buf)?;
    let mut buf = Vec::new();
    control.nodes.write_csv(&mut buf)?;
    run.write("action_control.csv", &buf)?;
    run.write_json(
        "action_summary.json",
        &ActionSummary {
            action,
            half_control_norm_sq: 0.5 * control.nodes.l2_norm_sq(),
            round_trip_sup_error: err,
        },
    )?;
    run.finish()
}

#[derive(Serialize)]
struct QuasiSummary {
    v_bar: Option<f64>,
    horizons: Vec<f64>,
    nodes: usize,
}

pub fn run_quasipotential(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    require_checks(cfg)?;
    let sys = cfg.build_system()?;
    let model = sys.averaged(cfg.schedule.rho_bar)?;
    let q = cfg.quasipotential.as_ref().expect("validated");
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["y", "explicit", "variational"])?;
    for &y in &q.ys {
        let explicit = match quasi_potential_explicit(&model, y) {
            Ok(v) => fmt_f64(v),
            Err(Error::NotApplicable(_)) => String::new(),
            Err(e) => return Err(e),
        };
        let variational = quasi_potential_variational(&model, y, &q.horizons, q.nodes)?;
        w.write_record([fmt_f64(y), explicit, fmt_f64(variational)])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    let vb = match &cfg.exit {
        Some(e) => Some(v_bar(&model, &build_domain(e.profile.clone(), e.r, &sys.op)?)?),
        None => None,
    };
    let mut run = RunDir::open(cfg, "quasipotential")?;
    run.write("quasipotential.csv", &bytes)?;
    run.write_json(
        "quasipotential_summary.json",
        &QuasiSummary {
            v_bar: vb,
            horizons: q.horizons.clone(),
            nodes: q.nodes,
        },
    )?;
    run.finish()
}

#[derive(Clone, Debug, Serialize)]
pub struct ExitSummary {
    pub v_bar: f64,
    /// Linear extrapolation of `γ log 𝔼τ` to `γ = 0`; absent for a single level.
    pub extrapolated: Option<f64>,
    pub relative_gap: Option<f64>,
    pub increasing_toward_target: bool,
    pub lower_bound_only: bool,
    /// The exit-time statement is read with speed `γ = (α+β)²`; the
    /// `ε log 𝔼τ` column is reported alongside for comparison.
    pub speed_note: String,
    pub levels: Vec<ExitStats>,
}

pub fn summarize_exit(stats: Vec<ExitStats>, target: f64) -> ExitSummary {
    let extrapolated = extrapolate_to_zero(&stats);
    // Levels are listed with decreasing γ.
    let increasing = stats.windows(2).all(|w| w[1].gamma_log_mean > w[0].gamma_log_mean) && stats.iter().all(|s| s.gamma_log_mean < target);
    ExitSummary {
        v_bar: target,
        relative_gap: extrapolated.map(|e| (e - target).abs() / target),
        extrapolated,
        increasing_toward_target: increasing,
        lower_bound_only: stats.iter().any(|s| s.lower_bound_only),
        speed_note: "gamma_log_mean uses gamma = (alpha + beta)^2; eps_log_mean uses eps".into(),
        levels: stats,
    }
}

pub fn run_exit(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    require_checks(cfg)?;
    let sys = cfg.build_system()?;
    let model = sys.averaged(cfg.schedule.rho_bar)?;
    let e = cfg.exit.as_ref().expect("validated");
    let dom = build_domain(e.profile.clone(), e.r, &sys.op)?;
    let x = cfg.initial.build(&sys.op)?;
    let opts = ExitOptions {
        n_paths: cfg.paths,
        dt: e.dt,
        t_max: e.t_max,
        max_steps: e.max_steps,
        seed: cfg.seed,
        rho_ball: e.rho_ball,
    };
    let levels = cfg.levels()?;
    let stats = exit_time_mc(&sys, &model, &dom, &x, &levels, &opts)?;
    let target = stats.first().map_or(f64::NAN, |s| s.v_bar_target);
    let mut run = RunDir::open(cfg, "exit")?;
    run.manifest.paths_simulated += (levels.len() * cfg.paths) as u64;
    let mut buf = Vec::new();
    write_exit_csv(&stats, &mut buf)?;
    run.write(EXIT_STATS, &buf)?;
    run.write_json(EXIT_SUMMARY, &summarize_exit(stats, target))?;
    run.finish()
}

#[derive(Deserialize)]
struct ExitRow {
    gamma: f64,
    gamma_log_mean: f64,
    ci_halfwidth: f64,
    v_bar_target: f64,
}

/// Reshapes run outputs in `dir` into plot-ready tables.
pub fn emit_plot_data(dir: &Path) -> Result<Vec<PathBuf>> {
    let empty = match std::fs::read_dir(dir) {
        Ok(mut it) => it.next().is_none(),
        Err(_) => true,
    };
    if empty {
        return Err(Error::MissingArtifact(dir.to_path_buf()));
    }
    let mut written = Vec::new();
    let exit = dir.join(EXIT_STATS);
    if exit.exists() {
        let mut r = csv::Reader::from_path(&exit)?;
        let out = dir.join(EXIT_SCALING);
        let mut w = csv::Writer::from_path(&out)?;
        w.write_record(["gamma", "gamma_log_mean", "ci", "v_bar"])?;
        for row in r.deserialize() {
            let row: ExitRow = row?;
            w.write_record([fmt_f64(row.gamma), fmt_f64(row.gamma_log_mean), fmt_f64(row.ci_halfwidth), fmt_f64(row.v_bar_target)])?;
        }
        w.flush()?;
        written.push(out);
    }
    let avg = dir.join(AVERAGE_TABLE);
    if avg.exists() {
        let mut r = csv::Reader::from_path(&avg)?;
        let out = dir.join(AVERAGING_PLOT);
        let mut w = csv::Writer::from_path(&out)?;
        w.write_record(["eps", "mean_err", "ci"])?;
        for row in r.deserialize() {
            let row: AverageRow = row?;
            w.write_record([fmt_f64(row.eps), fmt_f64(row.mean_err), fmt_f64(row.ci)])?;
        }
        w.flush()?;
        written.push(out);
    }
    if written.is_empty() {
        return Err(Error::MissingArtifact(exit));
    }
    Ok(written)
}

/// Dispatches on `kind`; `Check` only runs the probes.
pub fn run(cfg: &ExperimentConfig, kind: ExperimentKind) -> Result<RunOutcome> {
    match kind {
        ExperimentKind::Check => run_check(cfg),
        ExperimentKind::Simulate => run_simulate(cfg),
        ExperimentKind::Average => run_average(cfg),
        ExperimentKind::Action => run_action(cfg),
        ExperimentKind::Quasipotential => run_quasipotential(cfg),
        ExperimentKind::Exit => run_exit(cfg),
    }
}
