//! Hypothesis probes for the bundled configs.
//!
//! `cargo run --example hypothesis_checks -- [config.json ...]`

use fastexit::harness::config::ExperimentConfig;
use fastexit::harness::runs::check_report;

fn main() -> fastexit::Result<()> {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/configs");
    let mut files: Vec<String> = std::env::args().skip(1).collect();
    if files.is_empty() {
        files = ["check_reference", "check_d2_flat", "check_multiplicative", "check_rho_mismatch"]
            .iter()
            .map(|n| format!("{dir}/{n}.json"))
            .collect();
    }
    for f in files {
        let cfg = ExperimentConfig::load(f.as_ref())?;
        let r = check_report(&cfg)?;
        println!("{f}");
        println!("  gap {:.4} worst margin {:.2e}", r.spectral_gap.gap, r.spectral_gap.worst_margin);
        println!("  eigenvalues: {}", r.eigenvalues.note);
        println!("  min H on grid: {:.3e}", r.nondegeneracy.min_h);
        println!("  rho_bar consistent: {}", r.rho_consistency.passed);
        if r.passed {
            println!("  PASS");
        }
        for fail in &r.failures {
            println!("  FAIL {fail}");
        }
    }
    Ok(())
}
