//! Landau-Zener-Stückelberg interferometry with a weak sinusoidal drive
//! (A = 0.7 < ω, so the bias never reaches a photon resonance).
//! Reports the slow period of the smoothed transition probability, the fast
//! 2ω component and the maxima of the photon-resolved populations.

use std::f64::consts::{FRAC_PI_2, PI};

use lzsm_core::interferometer::smoothed_maxima;
use lzsm_core::observables::{moving_average, series};
use lzsm_core::signal::{amplitude_spectrum, dominant_period, spectral_peak};
use lzsm_core::{init_cat, integrate, CatSpec, DriveProtocol, IntegratorConfig, JitterSpec, ModelParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let drive = DriveProtocol::Sinusoidal {
        eps0: 0.0,
        amplitude: 0.7,
        omega: PI / 200.0,
        phi0: FRAC_PI_2,
    };
    let params = ModelParams::single_mode(drive, 0.05);
    let init = init_cat(&CatSpec::real(1.0, FRAC_PI_2), 10, &JitterSpec::default(), 0)?;
    let mut cfg = IntegratorConfig::new(-400.0, 400.0);
    cfg.record_stride = 5;
    let tr = integrate(&init, &params, &cfg)?;

    let p = series(&tr.records, |r| r.p_lz);
    let smooth = moving_average(&p, 200.0)?;
    println!("dominant period of smoothed P_LZ: {:.1}", dominant_period(&smooth, 100.0, 600.0)?);

    let values: Vec<f64> = p.iter().map(|x| x.1).collect();
    let spec = amplitude_spectrum(&values, p[1].0 - p[0].0)?;
    if let Some((w, a)) = spectral_peak(&spec, 1.5, 2.5) {
        println!("fast component: ω = {w:.4}, amplitude {a:.3e}");
    }
    for n in 0..4 {
        let s = series(&tr.records, |r| r.p_down[n]);
        let peaks = smoothed_maxima(&s, 50.0, -300.0, 300.0, 0.2)?;
        println!("P_{n},down maxima at {peaks:.0?}");
    }
    Ok(())
}
