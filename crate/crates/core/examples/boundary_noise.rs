//! Stationary statistics of the interior and boundary stochastic
//! convolutions against their closed-form variances.

use fastexit::coefficients::{BoundaryGain, Coefficient};
use fastexit::noise::{boundary_coupling, conv_b_step, conv_q_step, ou_variance, CovarianceSpectrumB, CovarianceSpectrumQ, Multiplier, RngStream};
use fastexit::spectral::{Field, SpectralOperator};

fn main() -> fastexit::Result<()> {
    let op = SpectralOperator::neumann_laplacian_1d(6)?;
    let (eps, dt, steps, burn) = (0.05, 1e-3, 200_000, 2_000);
    let q = CovarianceSpectrumQ::flat(op.n_modes(), 1.0);
    let b = CovarianceSpectrumB::new([1.0, 0.5])?;
    let sigma = BoundaryGain::uniform(1.0);
    let mult = Multiplier::frozen(&op, &Coefficient::Constant { value: 1.0 }, 0.0, &op.constant(0.0));
    let coupling = boundary_coupling(&op, &sigma, 1.0, 0.0)?;

    let mut rng = RngStream::new(9, 0);
    let (mut zq, mut zb) = (Field::zeros(op.n_modes()), Field::zeros(op.n_modes()));
    let (mut sq, mut sb) = (vec![0.0; op.n_modes()], vec![0.0; op.n_modes()]);
    for i in 0..steps {
        zq = conv_q_step(&op, &q, eps, dt, &mult, &zq, &mut rng)?;
        zb = conv_b_step(&op, &b, &sigma, 1.0, eps, dt, 0.0, &zb, &mut rng)?;
        if i >= burn {
            for k in 0..op.n_modes() {
                sq[k] += zq[k] * zq[k];
                sb[k] += zb[k] * zb[k];
            }
        }
    }
    let n = (steps - burn) as f64;
    let th = b.thetas();
    println!("{:>3} {:>12} {:>12} {:>12} {:>12}", "k", "Q emp", "Q exact", "B emp", "B exact");
    for k in 1..op.n_modes() {
        let v = ou_variance(op.eigenvalue(k), eps, f64::INFINITY);
        let vb = v * (th[0].powi(2) * coupling[k][0].powi(2) + th[1].powi(2) * coupling[k][1].powi(2));
        println!("{k:>3} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e}", sq[k] / n, v, sb[k] / n, vb);
    }
    Ok(())
}
