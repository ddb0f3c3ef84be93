//! Contraction of the Neumann heat semigroup toward the invariant average.

use fastexit::spectral::{Field, SpectralOperator};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> fastexit::Result<()> {
    let op = SpectralOperator::neumann_laplacian_1d(32)?;
    println!("modes {}  gap {:.6}  (pi^2 = {:.6})", op.n_modes(), op.spectral_gap(), std::f64::consts::PI.powi(2));

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = f64::INFINITY;
    for _ in 0..100 {
        let h = Field::from_coeffs((0..op.n_modes()).map(|_| rng.sample(rand_distr::StandardNormal)).collect());
        let r = op.check_spectral_gap(&h, &[0.1, 0.5, 1.0])?;
        for e in &r.entries {
            worst = worst.min(e.margin);
        }
    }
    println!("worst margin over 100 samples: {worst:.3e}");

    // Variable diffusivity: the gap comes from the computed spectrum.
    let div = SpectralOperator::divergence_1d(12, 400, |x| 1.0 + x)?;
    println!("divergence form a = 1 + x: gap {:.6}, uniform density {}", div.spectral_gap(), div.density_is_uniform());
    let h = div.project(|x| (3.0 * x).sin());
    for t in [0.0, 0.1, 0.5] {
        let s = div.semigroup_apply(t, &h)?;
        let dev = &s - &div.constant(div.invariant_average(&s));
        println!("t = {t:<4} |S(t)h - <h,mu>| = {:.6e}", div.h_mu_norm(&dev));
    }
    Ok(())
}
