//! Averaging error as ε → 0 with noise vanishing like √ε.
//!
//! `cargo run --release --example averaging -- [paths]`

use fastexit::coefficients::{BoundaryGain, Coefficient, CoefficientSet, RhoBar};
use fastexit::harness::runs::{averaging_table, monotone_within_ci};
use fastexit::noise::{CovarianceSpectrumB, CovarianceSpectrumQ};
use fastexit::solver::{MultiscaleParams, System};
use fastexit::spectral::SpectralOperator;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

fn main() -> fastexit::Result<()> {
    let paths: usize = std::env::args().nth(1).map_or(100, |s| s.parse().expect("paths"));
    let op = SpectralOperator::neumann_laplacian_1d(16)?;
    let cs = CoefficientSet::new(
        Coefficient::LinearPlusSource { slope: -1.0, amplitude: 1.0, wavenumber: 1.0 },
        Coefficient::Constant { value: 1.0 },
        BoundaryGain::uniform(1.0),
    );
    let q = CovarianceSpectrumQ::flat(op.n_modes(), 1.0);
    let b = CovarianceSpectrumB::new([FRAC_1_SQRT_2, FRAC_1_SQRT_2])?;
    let sys = System::new(op, cs, q, b, 1.0)?;
    let model = sys.averaged(RhoBar::Finite(1.0))?;
    let x = sys.op.project(|xi| (PI * xi).cos() + 0.5);

    let levels = [1e-1, 1e-2, 1e-3]
        .iter()
        .map(|&e| MultiscaleParams::new(e, e.sqrt(), e.sqrt(), RhoBar::Finite(1.0)))
        .collect::<fastexit::Result<Vec<_>>>()?;
    let rows = averaging_table(&sys, &model, &levels, &x, 1.0, 1e-3, 0.5, paths, 11)?;
    println!("{:>8} {:>12} {:>12}", "eps", "mean err", "95% ci");
    for r in &rows {
        println!("{:>8.0e} {:>12.5} {:>12.5}", r.eps, r.mean_err, r.ci);
    }
    println!("monotone within CI: {}", monotone_within_ci(&rows));

    // From t = 0 the initial layer dominates.
    let rows0 = averaging_table(&sys, &model, &levels[2..], &x, 1.0, 1e-3, 0.0, paths.min(20), 11)?;
    println!("eps = 1e-3 on [0, 1]: {:.4}", rows0[0].mean_err);
    Ok(())
}
