//! One path of the fast-transport SPDE next to the limit ODE.
//!
//! `cargo run --release --example simulate_spde -- [eps] [out.csv]`

use fastexit::coefficients::{BoundaryGain, Coefficient, CoefficientSet, RhoBar};
use fastexit::noise::{CovarianceSpectrumB, CovarianceSpectrumQ, RngStream};
use fastexit::solver::{solve_limit_ode, solve_spde, MultiscaleParams, System};
use fastexit::spectral::SpectralOperator;

fn main() -> fastexit::Result<()> {
    let mut args = std::env::args().skip(1);
    let eps: f64 = args.next().map_or(0.01, |s| s.parse().expect("eps"));
    let out = args.next();

    let op = SpectralOperator::neumann_laplacian_1d(16)?;
    let cs = CoefficientSet::new(
        Coefficient::LogisticClipped { rate: 1.0, capacity: 2.0 },
        Coefficient::Constant { value: 1.0 },
        BoundaryGain { left: 0.5, right: 1.0 },
    );
    let q = CovarianceSpectrumQ::flat(op.n_modes(), 1.0);
    let b = CovarianceSpectrumB::new([1.0, 1.0])?;
    let sys = System::new(op, cs, q, b, 1.0)?;

    let a = 0.3 * eps.powf(0.25);
    let params = MultiscaleParams::new(eps, a, a, RhoBar::Finite(1.0))?;
    let x = sys.op.project(|xi| 1.0 + 0.5 * (2.0 * std::f64::consts::PI * xi).cos());

    let (t, dt) = (2.0, 1e-3);
    let mut rng = RngStream::new(3, 0);
    let path = solve_spde(&sys, &params, &x, t, dt, &mut rng)?;
    let model = sys.averaged(RhoBar::Finite(1.0))?;
    let limit = solve_limit_ode(&model, sys.op.invariant_average(&x), t, dt)?;

    let mean = path.mean_mode(&sys.op);
    println!("eps = {eps}, alpha = beta = {a:.4}");
    println!("{:>6} {:>10} {:>10} {:>12}", "t", "<u,mu>", "limit", "nonconst");
    for i in (0..path.len()).step_by(250) {
        println!(
            "{:>6.3} {:>10.5} {:>10.5} {:>12.3e}",
            path.times[i],
            mean.values[i],
            limit.values[i],
            path.states[i].max_nonconstant()
        );
    }
    if let Some(p) = out {
        path.save_csv(std::path::Path::new(&p))?;
        println!("wrote {p}");
    }
    Ok(())
}
