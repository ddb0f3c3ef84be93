//! Action of a path, its minimizing control, and the controlled ODE
//! reproducing the path.

use fastexit::coefficients::{BoundaryGain, Coefficient, CoefficientSet, RhoBar};
use fastexit::ldp::{action_i, minimize_action, minimizing_control, ScalarPath};
use fastexit::noise::{CovarianceSpectrumB, CovarianceSpectrumQ};
use fastexit::solver::{solve_controlled_ode, System};
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

    for rho in [RhoBar::Finite(0.0), RhoBar::Finite(1.0), RhoBar::Infinite] {
        let model = sys.averaged(rho)?;
        println!("rho_bar = {rho}: H(0, 0) = {:.4}", model.noise_intensity(0.0, 0.0));

        let w = ScalarPath::from_fn(0.0, 2.0, 101, |t| 0.5 * (t / 2.0).powi(2))?;
        let i = action_i(&model, &w)?.value();
        let ctrl = minimizing_control(&model, &w)?;
        let half = 0.5 * ctrl.nodes.l2_norm_sq();
        let rt = solve_controlled_ode(&model, 0.0, &ctrl, 2.0, 1e-4)?;
        let err = rt.times.iter().zip(&rt.values).map(|(t, v)| (v - w.eval(*t)).abs()).fold(0.0, f64::max);
        println!("  I(w) = {i:.6}  |phi|^2/2 = {half:.6}  round trip sup err = {err:.2e}");

        let (best, _) = minimize_action(&model, 0.0, 2.0, 0.0, 0.5, 101)?;
        println!("  min over paths 0 -> 0.5 on [0, 2]: {best:.6}");
    }
    Ok(())
}
