#![allow(dead_code)]

use fastexit::coefficients::{BoundaryGain, Coefficient, CoefficientSet};
use fastexit::noise::{CovarianceSpectrumB, CovarianceSpectrumQ};
use fastexit::solver::System;
use fastexit::spectral::SpectralOperator;

/// `f = −r`, `g = 1`, `σ = 1`, flat `λ = √2`, `θ = (1, 1)`: `H = 1` at `ρ̄ = 1`.
pub fn reference_system(n_modes: usize) -> System {
    reference_system_with(n_modes, 1.0)
}

pub fn reference_system_with(n_modes: usize, delta0: f64) -> System {
    let op = SpectralOperator::neumann_laplacian_1d(n_modes).unwrap();
    let cs = CoefficientSet::new(
        Coefficient::Linear { slope: -1.0, offset: 0.0 },
        Coefficient::Constant { value: 1.0 },
        BoundaryGain::uniform(1.0),
    );
    let q = CovarianceSpectrumQ::flat(op.n_modes(), std::f64::consts::SQRT_2);
    let b = CovarianceSpectrumB::new([1.0, 1.0]).unwrap();
    System::new(op, cs, q, b, delta0).unwrap()
}

pub fn config_path(name: &str) -> String {
    format!("{}/configs/{name}.json", env!("CARGO_MANIFEST_DIR"))
}
