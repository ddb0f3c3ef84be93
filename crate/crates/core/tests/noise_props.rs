mod common;

use fastexit::coefficients::{AveragedModel, BoundaryGain, Coefficient, CoefficientSet, RhoBar};
use fastexit::noise::{conv_b_step, conv_q_step, ou_variance, CovarianceSpectrumB, CovarianceSpectrumQ, Multiplier, RngStream};
use fastexit::solver::{solve_spde, MultiscaleParams};
use fastexit::spectral::{Field, SpectralOperator};
use proptest::prelude::*;

fn model(g: Coefficient, sigma: BoundaryGain, thetas: [f64; 2], delta0: f64) -> AveragedModel {
    let op = SpectralOperator::neumann_laplacian_1d(12).unwrap();
    AveragedModel::new(
        &op,
        CoefficientSet::new(Coefficient::Linear { slope: -1.0, offset: 0.0 }, g, sigma),
        CovarianceSpectrumQ::from_list((0..12).map(|k| 1.0 / (1 + k) as f64).collect()).unwrap(),
        CovarianceSpectrumB::new(thetas).unwrap(),
        delta0,
        RhoBar::Finite(1.0),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn g_bar_pairing_is_lipschitz(
        u1 in -3.0..3.0f64,
        u2 in -3.0..3.0f64,
        h in prop::collection::vec(-2.0..2.0f64, 12),
        rate in 0.1..3.0f64,
        weighted in any::<bool>(),
    ) {
        let g = if weighted {
            Coefficient::SpaceWeighted { slope: rate }
        } else {
            Coefficient::LogisticClipped { rate, capacity: 2.0 }
        };
        let m = model(g.clone(), BoundaryGain::uniform(1.0), [1.0, 1.0], 1.0);
        let h = Field::from_coeffs(h);
        let lam_max = m.q_spectrum().lambdas().iter().cloned().fold(0.0, f64::max);
        // |m|_H = 1 on the unit interval.
        let c = g.lipschitz() * lam_max;
        let lhs = (m.averaged_g_pairing(0.0, u1, &h) - m.averaged_g_pairing(0.0, u2, &h)).abs();
        prop_assert!(lhs <= c * h.norm() * (u1 - u2).abs() * (1.0 + 1e-12) + 1e-14);
    }

    #[test]
    fn sigma_row_is_delta0_free(left in 0.0..2.0f64, right in 0.0..2.0f64, t0 in 0.0..2.0f64, t1 in 0.0..2.0f64) {
        let sigma = BoundaryGain { left, right };
        let base = model(Coefficient::Constant { value: 1.0 }, sigma, [t0, t1], 1.0).averaged_sigma_row(0.0);
        for d0 in [2.0, 10.0] {
            let row = model(Coefficient::Constant { value: 1.0 }, sigma, [t0, t1], d0).averaged_sigma_row(0.0);
            prop_assert!((row.values[0] - base.values[0]).abs() <= 1e-10);
            prop_assert!((row.values[1] - base.values[1]).abs() <= 1e-10);
        }
        // δ₀ θ_p σ(p) (N*m)(p) with (N*m)(p) = 1/δ₀ for m = 1.
        prop_assert!((base.values[0] - t0 * left).abs() <= 1e-12);
        prop_assert!((base.values[1] - t1 * right).abs() <= 1e-12);
    }

    #[test]
    fn constant_g_row_is_state_free(v in 0.1..3.0f64, u1 in -5.0..5.0f64, u2 in -5.0..5.0f64) {
        let m = model(Coefficient::Constant { value: v }, BoundaryGain::uniform(1.0), [1.0, 1.0], 1.0);
        prop_assert_eq!(m.averaged_g_row(0.0, u1), m.averaged_g_row(0.0, u2));
    }
}

#[test]
fn one_step_ou_law_matches_moments() {
    let op = SpectralOperator::neumann_laplacian_1d(6).unwrap();
    let q = CovarianceSpectrumQ::from_list(vec![1.0, 0.9, 0.7, 0.5, 0.3, 0.1]).unwrap();
    let mult = Multiplier::frozen(&op, &Coefficient::Constant { value: 1.0 }, 0.0, &op.constant(0.0));
    let (eps, dt, n) = (0.05, 2e-3, 20_000usize);
    let z0 = Field::from_coeffs(vec![0.3, -0.2, 0.5, 0.1, -0.4, 0.25]);
    let mut s1 = [0.0; 6];
    let mut s2 = [0.0; 6];
    for i in 0..n {
        let mut rng = RngStream::new(21, i as u64);
        let z = conv_q_step(&op, &q, eps, dt, &mult, &z0, &mut rng).unwrap();
        for k in 0..6 {
            s1[k] += z[k];
            s2[k] += z[k] * z[k];
        }
    }
    for k in 0..6 {
        let alpha_k = (k as f64 * std::f64::consts::PI).powi(2);
        let mean = (-alpha_k * dt / eps).exp() * z0[k];
        let var = q.lambdas()[k].powi(2) * ou_variance(alpha_k, eps, dt);
        let m = s1[k] / n as f64;
        let v = s2[k] / n as f64 - m * m;
        assert!((m - mean).abs() <= 3.0 * (var / n as f64).sqrt(), "k = {k}: mean {m} vs {mean}");
        assert!((v - var).abs() <= 3.0 * var * (2.0 / n as f64).sqrt(), "k = {k}: var {v} vs {var}");
    }
}

#[test]
fn boundary_convolution_stays_bounded_as_eps_shrinks() {
    let op = SpectralOperator::neumann_laplacian_1d(16).unwrap();
    let b = CovarianceSpectrumB::new([1.0, 1.0]).unwrap();
    let sigma = BoundaryGain::uniform(1.0);
    let (dt, steps, paths) = (1e-3, 200, 400);
    let mut stats = Vec::new();
    for eps in [1.0, 0.1, 0.01] {
        let sups: Vec<f64> = (0..paths)
            .map(|p| {
                let mut rng = RngStream::new(4, p as u64);
                let mut z = Field::zeros(op.n_modes());
                for _ in 0..steps {
                    z = conv_b_step(&op, &b, &sigma, 1.0, eps, dt, 0.0, &z, &mut rng).unwrap();
                }
                op.to_grid(&z).iter().fold(0.0f64, |m, v| m.max(v.abs()))
            })
            .collect();
        let mean = sups.iter().sum::<f64>() / paths as f64;
        let sd = (sups.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (paths - 1) as f64).sqrt();
        stats.push((eps, mean, sd / (paths as f64).sqrt()));
    }
    for w in stats.windows(2) {
        assert!(w[1].1 <= w[0].1 + 3.0 * (w[0].2 + w[1].2), "{stats:?}");
    }
}

#[test]
fn trajectories_do_not_depend_on_thread_count() {
    let sys = common::reference_system(8);
    let params = MultiscaleParams::new(0.01, 0.3, 0.3, RhoBar::Finite(1.0)).unwrap();
    let x = sys.op.project(|xi| xi - 0.5);
    let batch = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            use rayon::prelude::*;
            (0..16u64)
                .into_par_iter()
                .map(|s| solve_spde(&sys, &params, &x, 0.1, 1e-3, &mut RngStream::new(99, s)).unwrap().states)
                .collect::<Vec<_>>()
        })
    };
    assert_eq!(batch(1), batch(4));
    let again = solve_spde(&sys, &params, &x, 0.1, 1e-3, &mut RngStream::new(99, 3)).unwrap();
    assert_eq!(again.states, batch(2)[3]);
}
