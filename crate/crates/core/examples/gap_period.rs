//! Photon-resolved oscillation periods in the strongly driven regime and their
//! relation to the instantaneous level splittings.

use std::f64::consts::{FRAC_PI_2, PI};

use lzsm_core::interferometer::{gap_period_points, regress, PeriodProbe};
use lzsm_core::{init_cat, integrate, CatSpec, DriveProtocol, IntegratorConfig, JitterSpec, ModelParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let drive = DriveProtocol::Sinusoidal {
        eps0: 0.0,
        amplitude: 1.1,
        omega: PI / 200.0,
        phi0: FRAC_PI_2,
    };
    let params = ModelParams::single_mode(drive, 0.05);
    let init = init_cat(&CatSpec::real(1.0, FRAC_PI_2), 10, &JitterSpec::default(), 0)?;
    let tr = integrate(&init, &params, &IntegratorConfig::new(-200.0, 120.0))?;

    let pts = gap_period_points(&params, &tr.records, &[1, 2, 3, 4, 5, 6], &PeriodProbe::default())?;
    for p in &pts {
        println!("n = {}  ΔE = {:.5}  1/ΔE = {:>7.3}  period = {:.3}", p.n, p.gap, 1.0 / p.gap, p.period);
    }
    let reg = regress(&pts)?;
    println!("period ≈ {:.3}/ΔE + {:.3}   r² = {:.4}", reg.slope, reg.intercept, reg.r2);
    Ok(())
}
