//! Multiplicity convergence of the multi-D₂ ansatz for a Yurke-Stoler cat
//! initial state, with the exact propagator as reference.

use std::f64::consts::FRAC_PI_2;

use lzsm_core::spectrum::{cat_fock_vector, ed_evolve, EdConfig};
use lzsm_core::{init_cat, integrate, CatSpec, DriveProtocol, IntegratorConfig, JitterSpec, ModelParams};
use num_complex::Complex64;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let params = ModelParams::single_mode(DriveProtocol::Linear { v: 0.01 }, 0.05);
    let cfg = IntegratorConfig::new(-300.0, 300.0);
    let exact = ed_evolve(&params, &cat_fock_vector(Complex64::new(1.0, 0.0), FRAC_PI_2, 30)?, &EdConfig::new(-300.0, 300.0))?;
    for m in [2, 4, 6, 8] {
        let init = init_cat(&CatSpec::real(1.0, FRAC_PI_2), m, &JitterSpec::default(), 0)?;
        let tr = integrate(&init, &params, &cfg)?;
        let sup = tr.records.iter().zip(&exact.records).map(|(a, b)| (a.p_lz - b.p_lz).abs()).fold(0.0, f64::max);
        println!("M = {m:>2}: sup |P_LZ - exact| = {sup:.2e}, final P_LZ = {:.4}", tr.records.last().map_or(f64::NAN, |r| r.p_lz));
    }
    Ok(())
}
