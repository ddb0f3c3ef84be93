//! Quasi-potential: explicit formula against the variational minimum.

use fastexit::coefficients::{BoundaryGain, Coefficient, CoefficientSet, RhoBar};
use fastexit::exit::{build_domain, ConvexProfile};
use fastexit::ldp::{quasi_potential_explicit, quasi_potential_variational, v_bar, DEFAULT_HORIZONS};
use fastexit::noise::{CovarianceSpectrumB, CovarianceSpectrumQ};
use fastexit::solver::System;
use fastexit::spectral::SpectralOperator;

fn main() -> fastexit::Result<()> {
    let op = SpectralOperator::neumann_laplacian_1d(8)?;
    let cs = CoefficientSet::new(
        Coefficient::Linear { slope: -1.0, offset: 0.0 },
        Coefficient::Constant { value: 1.0 },
        BoundaryGain::uniform(1.0),
    );
    let q = CovarianceSpectrumQ::flat(op.n_modes(), std::f64::consts::SQRT_2);
    let sys = System::new(op, cs, q, CovarianceSpectrumB::new([1.0, 1.0])?, 1.0)?;
    let model = sys.averaged(RhoBar::Finite(1.0))?;

    println!("{:>6} {:>12} {:>12}", "y", "explicit", "variational");
    for y in [0.25, 0.5, 1.0] {
        let e = quasi_potential_explicit(&model, y)?;
        let v = quasi_potential_variational(&model, y, &DEFAULT_HORIZONS, 200)?;
        println!("{y:>6} {e:>12.6} {v:>12.6}");
    }

    let dom = build_domain(ConvexProfile::Quadratic { a: 1.0, b: 0.0, c: 0.0 }, 0.25, &sys.op)?;
    println!("ball of radius 0.5: V_bar = {}", v_bar(&model, &dom)?);
    Ok(())
}
