//! Mean exit time from a ball and its exponential scaling in γ.
//!
//! `cargo run --release --example exit_times -- [paths]`

use fastexit::coefficients::{BoundaryGain, Coefficient, CoefficientSet, RhoBar};
use fastexit::exit::{build_domain, exit_time_mc, extrapolate_to_zero, ConvexProfile, ExitOptions};
use fastexit::noise::{CovarianceSpectrumB, CovarianceSpectrumQ};
use fastexit::solver::{MultiscaleParams, System};
use fastexit::spectral::SpectralOperator;

fn main() -> fastexit::Result<()> {
    let paths: usize = std::env::args().nth(1).map_or(200, |s| s.parse().expect("paths"));
    let op = SpectralOperator::neumann_laplacian_1d(8)?;
    let cs = CoefficientSet::new(
        Coefficient::Linear { slope: -1.0, offset: 0.0 },
        Coefficient::Constant { value: 1.0 },
        BoundaryGain::uniform(1.0),
    );
    let q = CovarianceSpectrumQ::flat(op.n_modes(), std::f64::consts::SQRT_2);
    let sys = System::new(op, cs, q, CovarianceSpectrumB::new([1.0, 1.0])?, 1.0)?;
    let model = sys.averaged(RhoBar::Finite(1.0))?;
    let dom = build_domain(ConvexProfile::Quadratic { a: 1.0, b: 0.0, c: 0.0 }, 0.25, &sys.op)?;

    // ε = γ², α = β = √γ/2, so (α+β)² = γ and β/α = 1.
    let levels = [0.25f64, 0.125, 0.0625]
        .iter()
        .map(|&g| MultiscaleParams::new(g * g, 0.5 * g.sqrt(), 0.5 * g.sqrt(), RhoBar::Finite(1.0)))
        .collect::<fastexit::Result<Vec<_>>>()?;
    let opts = ExitOptions { n_paths: paths, seed: 5, ..ExitOptions::default() };
    let x = sys.op.constant(0.0);
    let stats = exit_time_mc(&sys, &model, &dom, &x, &levels, &opts)?;

    println!("target V_bar = {}", stats[0].v_bar_target);
    println!("{:>8} {:>12} {:>14} {:>10} {:>9}", "gamma", "mean tau", "gamma log E", "ci", "censored");
    for s in &stats {
        println!("{:>8.4} {:>12.4} {:>14.5} {:>10.5} {:>9}", s.gamma, s.mean_tau, s.gamma_log_mean, s.ci_halfwidth, s.censored);
    }
    if let Some(e) = extrapolate_to_zero(&stats) {
        println!("extrapolated to gamma = 0: {e:.4}");
    }
    Ok(())
}
