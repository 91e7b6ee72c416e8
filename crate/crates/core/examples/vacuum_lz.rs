//! Single Landau-Zener sweep starting from the photon vacuum.
//!
//! The qubit starts up with no photons; the only accessible transition is
//! |0,↑⟩ → |1,↓⟩ at t = ω/v. Prints P_LZ(t) on a coarse grid and compares the
//! final plateau with the two-level asymptote 1 − exp(−πγ²/2v).

use lzsm_core::analytics::{lz_asymptote, plateau_average};
use lzsm_core::observables::series;
use lzsm_core::{init_vacuum, integrate, DriveProtocol, IntegratorConfig, JitterSpec, ModelParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (v, gamma) = (0.01, 0.12);
    let params = ModelParams::single_mode(DriveProtocol::Linear { v }, gamma);
    let init = init_vacuum(6, &JitterSpec::default(), 0)?;
    let tr = integrate(&init, &params, &IntegratorConfig::new(-300.0, 300.0))?;

    println!("{:>8} {:>10} {:>10} {:>10}", "t", "P_LZ", "P_1down", "norm2");
    for r in tr.records.iter().step_by(150) {
        println!("{:>8.1} {:>10.5} {:>10.5} {:>10.7}", r.t, r.p_lz, r.p_down[1], r.norm2);
    }
    let tail = plateau_average(&series(&tr.records, |r| r.p_lz), (150.0, 300.0))?;
    println!("plateau mean over [150, 300]: {:.4} (spread {:.4})", tail.mean, tail.spread);
    println!("two-level asymptote:          {:.4}", lz_asymptote(gamma, v)?);
    Ok(())
}
