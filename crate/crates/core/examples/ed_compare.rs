//! Variational dynamics against exact propagation in a truncated Fock basis
//! for a sinusoidally driven qubit starting in a Yurke-Stoler cat state.

use std::f64::consts::{FRAC_PI_2, PI};

use lzsm_core::spectrum::{cat_fock_vector, ed_evolve, EdConfig};
use lzsm_core::{init_cat, integrate, CatSpec, DriveProtocol, IntegratorConfig, JitterSpec, ModelParams};
use num_complex::Complex64;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let drive = DriveProtocol::Sinusoidal {
        eps0: 0.0,
        amplitude: 1.1,
        omega: PI / 200.0,
        phi0: FRAC_PI_2,
    };
    let params = ModelParams::single_mode(drive, 0.05);
    let (t0, t1) = (-200.0, 200.0);

    let init = init_cat(&CatSpec::real(1.0, FRAC_PI_2), 10, &JitterSpec::default(), 1)?;
    let d2 = integrate(&init, &params, &IntegratorConfig::new(t0, t1))?;
    let psi0 = cat_fock_vector(Complex64::new(1.0, 0.0), FRAC_PI_2, 30)?;
    let ed = ed_evolve(&params, &psi0, &EdConfig::new(t0, t1))?;

    let mut worst: f64 = 0.0;
    for (a, b) in d2.records.iter().zip(&ed.records) {
        worst = worst.max((a.p_lz - b.p_lz).abs());
    }
    for (a, b) in d2.records.iter().zip(&ed.records).step_by(200) {
        println!("t = {:>7.1}  multi-D2 {:.5}  exact {:.5}", a.t, a.p_lz, b.p_lz);
    }
    println!("max |ΔP_LZ| = {worst:.2e}, truncation leak {:.1e}", ed.max_leak);
    Ok(())
}
