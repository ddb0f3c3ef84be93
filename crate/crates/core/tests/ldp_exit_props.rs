mod common;

use fastexit::coefficients::{BoundaryGain, Coefficient, CoefficientSet, RhoBar};
use fastexit::exit::{build_domain, exit_time_mc, first_exit_time, ConvexProfile, ExitOptions};
use fastexit::ldp::{action_field_path, action_i, minimize_action, minimizing_control, prefix_action_j, ActionValue, ScalarPath};
use fastexit::noise::{CovarianceSpectrumB, CovarianceSpectrumQ, RngStream};
use fastexit::solver::{solve_controlled_ode, solve_spde, FieldTrajectory, MultiscaleParams, System};
use fastexit::spectral::SpectralOperator;
use proptest::prelude::*;

/// Multiplicative, state-dependent noise so that `H` varies along paths.
fn nonlinear_system() -> System {
    let op = SpectralOperator::neumann_laplacian_1d(8).unwrap();
    System::new(
        op,
        CoefficientSet::new(
            Coefficient::LinearPlusSource { slope: -1.5, amplitude: 0.4, wavenumber: 1.0 },
            Coefficient::Linear { slope: 0.3, offset: 1.0 },
            BoundaryGain { left: 1.0, right: 0.5 },
        ),
        CovarianceSpectrumQ::flat(8, 1.0),
        CovarianceSpectrumB::new([0.8, 1.2]).unwrap(),
        1.0,
    )
    .unwrap()
}

fn rho(i: usize) -> RhoBar {
    [RhoBar::Finite(0.0), RhoBar::Finite(0.5), RhoBar::Finite(3.0), RhoBar::Infinite][i]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn duality_and_skeleton(values in prop::collection::vec(-1.0..1.0f64, 3..7), ri in 0..4usize, tenths in 5..20u32) {
        let sys = nonlinear_system();
        let model = sys.averaged(rho(ri)).unwrap();
        let t1 = tenths as f64 / 10.0;
        let knots = ScalarPath::new(0.0, t1, values.clone()).unwrap();
        let w = ScalarPath::from_fn(0.0, t1, 20 * (values.len() - 1) + 1, |t| knots.eval(t)).unwrap();
        let i = action_i(&model, &w).unwrap().value();
        let ctrl = minimizing_control(&model, &w).unwrap();
        prop_assert!((0.5 * ctrl.nodes.l2_norm_sq() - i).abs() <= 1e-8 * i.max(1e-12));
        let rt = solve_controlled_ode(&model, w.values()[0], &ctrl, t1, 1e-4).unwrap();
        for (t, v) in rt.times.iter().zip(&rt.values) {
            prop_assert!((v - w.eval(*t)).abs() <= 1e-6);
        }
    }

    #[test]
    fn spatially_varying_paths_have_infinite_action(k in 1..8usize, amp in prop::sample::select(vec![-0.5, -1e-6, 1e-6, 0.3]), at in 0..5usize) {
        let sys = nonlinear_system();
        let model = sys.averaged(RhoBar::Finite(1.0)).unwrap();
        let times: Vec<f64> = (0..5).map(|i| i as f64 * 0.25).collect();
        let mut states: Vec<_> = times.iter().map(|t| sys.op.constant(0.2 * t)).collect();
        let constant = FieldTrajectory { times: times.clone(), states: states.clone(), seed: None, stream: None };
        prop_assert!(matches!(action_field_path(&model, &constant).unwrap(), ActionValue::Finite(_)));
        states[at][k] += amp;
        let varying = FieldTrajectory { times, states, seed: None, stream: None };
        prop_assert!(action_field_path(&model, &varying).unwrap().is_infinite());
    }
}

#[test]
fn two_stage_minimization_matches_one_stage() {
    let sys = nonlinear_system();
    for ri in 0..4 {
        let model = sys.averaged(rho(ri)).unwrap();
        let (x, y, delta, t) = (0.2, -0.3, 0.4, 1.5);
        let (full, path) = minimize_action(&model, 0.0, t, x, y, 61).unwrap();
        let z = path.eval(delta);
        let two = prefix_action_j(&model, x, z, delta, 17).unwrap() + minimize_action(&model, delta, t, z, y, 45).unwrap().0;
        assert!((full - two).abs() <= 1e-6 * (1.0 + full), "rho {ri}: {full} vs {two}");
    }
}

fn exit_setup() -> (System, fastexit::coefficients::AveragedModel, fastexit::exit::DomainSpec) {
    let sys = common::reference_system(8);
    let model = sys.averaged(RhoBar::Finite(1.0)).unwrap();
    let dom = build_domain(ConvexProfile::square(), 0.25, &sys.op).unwrap();
    (sys, model, dom)
}

fn level(g: f64) -> MultiscaleParams {
    MultiscaleParams::new(g * g, 0.5 * g.sqrt(), 0.5 * g.sqrt(), RhoBar::Finite(1.0)).unwrap()
}

#[test]
fn exit_times_nest_with_the_level() {
    let sys = common::reference_system(8);
    let p = level(0.25);
    for s in 0..50 {
        let tr = solve_spde(&sys, &p, &sys.op.constant(0.0), 4.0, 1e-3, &mut RngStream::new(13, s)).unwrap();
        let mut prev = 0.0;
        for r in [0.05, 0.1, 0.2, 0.25] {
            let dom = build_domain(ConvexProfile::square(), r, &sys.op).unwrap();
            let tau = first_exit_time(&sys.op, &tr, &dom).unwrap().tau.unwrap_or(f64::INFINITY);
            assert!(tau >= prev, "path {s}: {tau} < {prev}");
            prev = tau;
        }
    }
}

#[test]
fn raising_the_horizon_only_resolves_censored_paths() {
    let (sys, model, dom) = exit_setup();
    let x = sys.op.constant(0.0);
    let run = |t_max: f64| {
        let opts = ExitOptions { n_paths: 200, t_max: Some(t_max), seed: 17, ..ExitOptions::default() };
        exit_time_mc(&sys, &model, &dom, &x, &[level(0.125)], &opts).unwrap().remove(0)
    };
    let (short, long) = (run(2.0), run(50.0));
    assert!(short.censored > 0 && long.censored < short.censored);
    for (a, b) in short.samples.iter().zip(&long.samples) {
        if a.censored {
            assert!(b.tau >= a.tau);
        } else {
            assert_eq!(a, b);
        }
    }
}

#[test]
fn exit_statistics_do_not_depend_on_thread_count() {
    let (sys, model, dom) = exit_setup();
    let x = sys.op.constant(0.0);
    let opts = ExitOptions { n_paths: 64, seed: 3, ..ExitOptions::default() };
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| exit_time_mc(&sys, &model, &dom, &x, &[level(0.25), level(0.125)], &opts).unwrap())
    };
    let (a, b) = (run(1), run(3));
    for (s, t) in a.iter().zip(&b) {
        assert_eq!(s.samples, t.samples);
        assert_eq!(s.mean_tau.to_bits(), t.mean_tau.to_bits());
    }
}

#[test]
fn exit_location_concentrates_on_constant_states() {
    let (sys, model, dom) = exit_setup();
    let opts = ExitOptions { n_paths: 300, seed: 23, ..ExitOptions::default() };
    let stats = exit_time_mc(&sys, &model, &dom, &sys.op.constant(0.0), &[level(0.25), level(0.125), level(0.0625)], &opts).unwrap();
    for w in stats.windows(2) {
        let (p, q) = (w[0].concentrated_fraction, w[1].concentrated_fraction);
        let se = ((p * (1.0 - p) + q * (1.0 - q)) / 300.0).sqrt();
        assert!(q >= p - 3.0 * se - 1e-12, "{p} -> {q}");
    }
}
