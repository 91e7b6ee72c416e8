//! Photon statistics of Schrödinger-cat initial states and the RWA estimate
//! of the first transition plateau for each of them.

use std::f64::consts::{FRAC_PI_2, PI};

use lzsm_core::analytics::rwa_final_probability;
use lzsm_core::observables::{mandel_q, mean_photon_number};
use lzsm_core::{init_cat, CatSpec, JitterSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (gamma, v) = (0.05, 0.01);
    println!("{:>6} {:>8} {:>10} {:>10} {:>10}", "theta", "|alpha|", "<n>", "Mandel Q", "RWA P1");
    for (name, theta) in [("even", 0.0), ("YS", FRAC_PI_2), ("odd", PI)] {
        for alpha in [0.5, 1.0, 2.0] {
            let st = init_cat(&CatSpec::real(alpha, theta), 2, &JitterSpec::off(), 0)?;
            let q = mandel_q(&st).map_or("undef".to_string(), |q| format!("{q:.4}"));
            let p1 = rwa_final_probability(alpha, theta, gamma, v)?;
            println!("{name:>6} {alpha:>8.2} {:>10.4} {q:>10} {p1:>10.4}", mean_photon_number(&st));
        }
    }
    Ok(())
}
