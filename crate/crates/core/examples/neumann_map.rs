//! Neumann map of boundary data and the boundary noise coupling.

use fastexit::coefficients::BoundaryGain;
use fastexit::noise::boundary_coupling;
use fastexit::spectral::{BoundaryData, SpectralOperator};

fn main() -> fastexit::Result<()> {
    let op = SpectralOperator::neumann_laplacian_1d(64)?;
    let h = BoundaryData::new(1.0, -0.5);

    // N_δ h solves (δ - A)u = 0 with flux h; compare with the closed form.
    let delta = 2.0;
    let nh = op.neumann_map(delta, &h)?;
    let s = delta.sqrt();
    let exact = |x: f64| (h.values[0] * (s * (1.0 - x)).cosh() + h.values[1] * (s * x).cosh()) / (s * s.sinh());
    for x in [0.0, 0.25, 0.5, 0.75, 1.0] {
        println!("xi = {x:<5} N h = {:>10.6}  closed form = {:>10.6}", op.eval(&nh, x), exact(x));
    }

    // The coupling (δ0 - A) N_δ0 σ is independent of δ0.
    let sigma = BoundaryGain { left: 1.0, right: 0.5 };
    let reference = boundary_coupling(&op, &sigma, 1.0, 0.0)?;
    for d0 in [2.0, 10.0] {
        let b = boundary_coupling(&op, &sigma, d0, 0.0)?;
        let diff = b
            .iter()
            .zip(&reference)
            .flat_map(|(x, y)| [(x[0] - y[0]).abs(), (x[1] - y[1]).abs()])
            .fold(0.0, f64::max);
        println!("delta0 = {d0:<4} max |b_kj - b_kj(1)| = {diff:.2e}");
    }
    println!("b_0j = {:?}, b_1j = {:?}", reference[0], reference[1]);
    Ok(())
}
