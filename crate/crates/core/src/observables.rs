//! Physical observables of a multi-D₂ state.
//!
//! Every expectation value is divided by the state norm so small integrator
//! norm drift does not leak into the reported numbers.

use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::ansatz::{fock_amplitude, norm_squared_with, overlap_matrix, MultiD2State};
use crate::error::{Error, Result};
use crate::model::{ModelParams, Spin};
use crate::spectrum::fmt_f;

/// Mean photon numbers below this make the Mandel parameter undefined.
pub const MANDEL_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub t: f64,
    pub p_lz: f64,
    pub norm2: f64,
    pub energy: f64,
    /// P_{n,↑} for n = 0..=n_report (empty for multi-mode states).
    pub p_up: Vec<f64>,
    pub p_down: Vec<f64>,
    pub mean_n: f64,
    pub mandel_q: Option<f64>,
}

/// Σ_ij w(j, i) S_ji for a branch-pair weight.
fn pair_sum(state: &MultiD2State, s: &[Complex64], mut w: impl FnMut(usize, usize) -> Complex64) -> Complex64 {
    let m = state.multiplicity();
    let mut acc = Complex64::default();
    for j in 0..m {
        for i in 0..m {
            acc += w(j, i) * s[j * m + i];
        }
    }
    acc
}

/// Unnormalized ⟨σ_z⟩ = Σ_ij (A*_j A_i − B*_j B_i) S_ji.
fn sigma_z_raw(state: &MultiD2State, s: &[Complex64]) -> f64 {
    pair_sum(state, s, |j, i| state.a[j].conj() * state.a[i] - state.b[j].conj() * state.b[i]).re
}

pub fn sigma_z(state: &MultiD2State) -> f64 {
    let s = overlap_matrix(state);
    sigma_z_raw(state, &s) / norm_squared_with(state, &s)
}

/// Down-state population (1 − ⟨σ_z⟩)/2.
pub fn p_lz(state: &MultiD2State) -> f64 {
    0.5 * (1.0 - sigma_z(state))
}

/// P_{n,σ} = |⟨n,σ|ψ⟩|² / ⟨ψ|ψ⟩ (single mode only).
pub fn fock_population(state: &MultiD2State, n: usize, spin: Spin) -> Result<f64> {
    let s = overlap_matrix(state);
    Ok(fock_amplitude(state, n, spin)?.norm_sqr() / norm_squared_with(state, &s))
}

/// Σ_q f*_jq f_iq
fn cross(state: &MultiD2State, j: usize, i: usize) -> Complex64 {
    state
        .displacements(j)
        .iter()
        .zip(state.displacements(i))
        .map(|(fj, fi)| fj.conj() * fi)
        .sum()
}

fn photon_moments(state: &MultiD2State, s: &[Complex64]) -> (f64, f64) {
    let norm = norm_squared_with(state, s);
    let mut n1 = Complex64::default();
    let mut n2 = Complex64::default();
    let m = state.multiplicity();
    for j in 0..m {
        for i in 0..m {
            let w = (state.a[j].conj() * state.a[i] + state.b[j].conj() * state.b[i]) * s[j * m + i];
            let x = cross(state, j, i);
            n1 += w * x;
            n2 += w * (x * x + x);
        }
    }
    (n1.re / norm, n2.re / norm)
}

/// ⟨b†b⟩, summed over modes.
pub fn mean_photon_number(state: &MultiD2State) -> f64 {
    let s = overlap_matrix(state);
    photon_moments(state, &s).0
}

/// Q = (⟨n²⟩ − ⟨n⟩² − ⟨n⟩)/⟨n⟩, or `None` for (near-)vacuum states.
pub fn mandel_q(state: &MultiD2State) -> Option<f64> {
    let s = overlap_matrix(state);
    mandel_from_moments(photon_moments(state, &s))
}

fn mandel_from_moments((n1, n2): (f64, f64)) -> Option<f64> {
    if n1 < MANDEL_FLOOR {
        None
    } else {
        Some((n2 - n1 * n1 - n1) / n1)
    }
}

fn energy_with(state: &MultiD2State, params: &ModelParams, t: f64, s: &[Complex64]) -> f64 {
    let half_eps = 0.5 * params.bias(t);
    let half_delta = 0.5 * params.delta;
    let e = pair_sum(state, s, |j, i| {
        let (aj, bj, ai, bi) = (state.a[j], state.b[j], state.a[i], state.b[i]);
        let zz = aj.conj() * ai - bj.conj() * bi;
        let xx = aj.conj() * bi + bj.conj() * ai;
        let nn = aj.conj() * ai + bj.conj() * bi;
        let fj = state.displacements(j);
        let fi = state.displacements(i);
        let mut v = half_eps * zz + half_delta * xx;
        for (q, mode) in params.modes.iter().enumerate() {
            let d = fi[q] + fj[q].conj();
            v += nn * mode.omega * fj[q].conj() * fi[q];
            v += 0.5 * mode.gamma * (mode.theta.cos() * zz + mode.theta.sin() * xx) * d;
        }
        v
    });
    e.re / norm_squared_with(state, s)
}

/// ⟨H(t)⟩ in the units of ω.
pub fn expectation_energy(state: &MultiD2State, params: &ModelParams, t: f64) -> f64 {
    let s = overlap_matrix(state);
    energy_with(state, params, t, &s)
}

/// All observables of one time slice. Fock populations are reported for
/// n = 0..=n_report when the state has a single mode.
pub fn record(state: &MultiD2State, params: &ModelParams, t: f64, n_report: usize) -> Result<TrajectoryRecord> {
    let s = overlap_matrix(state);
    let norm2 = norm_squared_with(state, &s);
    if !(norm2.is_finite() && norm2 > 0.0) {
        return Err(Error::NonFinite {
            t,
            detail: format!("state norm is {norm2}"),
        });
    }
    let (mean_n, n2) = photon_moments(state, &s);
    let (mut p_up, mut p_down) = (Vec::new(), Vec::new());
    if state.n_modes() == 1 {
        for n in 0..=n_report {
            p_up.push(fock_amplitude(state, n, Spin::Up)?.norm_sqr() / norm2);
            p_down.push(fock_amplitude(state, n, Spin::Down)?.norm_sqr() / norm2);
        }
    }
    Ok(TrajectoryRecord {
        t,
        p_lz: 0.5 * (1.0 - sigma_z_raw(state, &s) / norm2),
        norm2,
        energy: energy_with(state, params, t, &s),
        p_up,
        p_down,
        mean_n,
        mandel_q: mandel_from_moments((mean_n, n2)),
    })
}

/// Centered sliding-window time average over `window`, with the window
/// clipped at the series ends. The mean inside each window is the
/// trapezoidal integral divided by the covered time span.
pub fn moving_average(series: &[(f64, f64)], window: f64) -> Result<Vec<(f64, f64)>> {
    if series.is_empty() {
        return Err(Error::EmptySeries);
    }
    if !(window > 0.0 && window.is_finite()) {
        return Err(Error::InvalidParameter(format!("window must be > 0, got {window}")));
    }
    if series.windows(2).any(|w| !(w[1].0 >= w[0].0)) {
        return Err(Error::InvalidParameter("series must be sorted by t".into()));
    }
    let n = series.len();
    let mut cum = vec![0.0; n];
    for k in 1..n {
        let (t0, y0) = series[k - 1];
        let (t1, y1) = series[k];
        cum[k] = cum[k - 1] + 0.5 * (y0 + y1) * (t1 - t0);
    }
    let half = 0.5 * window;
    let tol = 1e-9 * window;
    let (mut lo, mut hi) = (0usize, 0usize);
    let mut out = Vec::with_capacity(n);
    for &(t, y) in series {
        while series[lo].0 < t - half - tol {
            lo += 1;
        }
        while hi + 1 < n && series[hi + 1].0 <= t + half + tol {
            hi += 1;
        }
        let span = series[hi].0 - series[lo].0;
        let v = if hi > lo && span > 0.0 { (cum[hi] - cum[lo]) / span } else { y };
        out.push((t, v));
    }
    Ok(out)
}

/// Writes the standard trajectory table:
/// `t, p_lz, norm2, energy, mean_n, mandel_q, p_up_0..n, p_down_0..n`.
/// An undefined Mandel parameter is written as `NaN`.
pub fn write_trajectory_csv<W: Write>(records: &[TrajectoryRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let n = records.first().map_or(0, |r| r.p_up.len());
    let mut header: Vec<String> = ["t", "p_lz", "norm2", "energy", "mean_n", "mandel_q"].iter().map(|s| s.to_string()).collect();
    header.extend((0..n).map(|k| format!("p_up_{k}")));
    header.extend((0..n).map(|k| format!("p_down_{k}")));
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![
            fmt_f(r.t),
            fmt_f(r.p_lz),
            fmt_f(r.norm2),
            fmt_f(r.energy),
            fmt_f(r.mean_n),
            fmt_f(r.mandel_q.unwrap_or(f64::NAN)),
        ];
        row.extend(r.p_up.iter().chain(&r.p_down).map(|&x| fmt_f(x)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `(t, value)` pairs of one recorded quantity.
pub fn series(records: &[TrajectoryRecord], f: impl Fn(&TrajectoryRecord) -> f64) -> Vec<(f64, f64)> {
    records.iter().map(|r| (r.t, f(r))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ansatz::{init_cat, init_vacuum, CatSpec, JitterSpec};
    use crate::model::DriveProtocol;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn coherent(alpha: f64) -> MultiD2State {
        MultiD2State::from_parts(vec![c(1.0, 0.0)], vec![c(0.0, 0.0)], vec![c(alpha, 0.0)], 1).unwrap()
    }

    fn cat(alpha: f64, theta: f64) -> MultiD2State {
        init_cat(&CatSpec::real(alpha, theta), 2, &JitterSpec::off(), 0).unwrap()
    }

    #[test]
    fn vacuum_and_all_down() {
        let v = init_vacuum(4, &JitterSpec::off(), 0).unwrap();
        assert_eq!(p_lz(&v), 0.0);
        assert_eq!(mean_photon_number(&v), 0.0);
        assert_eq!(mandel_q(&v), None);
        let mut d = v.clone();
        d.b[0] = d.a[0];
        d.a[0] = c(0.0, 0.0);
        assert!((p_lz(&d) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cat_state_means() {
        for &a in &[0.1f64, 1.0, 2.0] {
            let a2 = a * a;
            let even = a2 * (1.0 - (-2.0 * a2).exp()) / (1.0 + (-2.0 * a2).exp());
            let odd = a2 * (1.0 + (-2.0 * a2).exp()) / (1.0 - (-2.0 * a2).exp());
            assert!((mean_photon_number(&cat(a, 0.0)) - even).abs() < 1e-10);
            assert!((mean_photon_number(&cat(a, PI)) - odd).abs() < 1e-10);
            assert!((mean_photon_number(&cat(a, FRAC_PI_2)) - a2).abs() < 1e-10);
        }
        assert!((mean_photon_number(&cat(1.0, 0.0)) - 0.7615941559557649).abs() < 1e-12);
        assert!((mean_photon_number(&cat(1.0, PI)) - 1.3130352854993312).abs() < 1e-12);
    }

    #[test]
    fn mandel_signs() {
        assert!(mandel_q(&cat(1.0, 0.0)).unwrap() > 0.1);
        assert!(mandel_q(&cat(1.0, FRAC_PI_2)).unwrap().abs() < 1e-10);
        assert!(mandel_q(&cat(1.0, PI)).unwrap() < -0.1);
        for &a in &[0.5, 1.0, 2.0] {
            assert!(mandel_q(&coherent(a)).unwrap().abs() < 1e-10);
        }
    }

    #[test]
    fn mandel_matches_fock_sum() {
        let st = cat(1.0, 0.0);
        let (mut m1, mut m2) = (0.0, 0.0);
        for n in 0..60 {
            let p = fock_population(&st, n, Spin::Up).unwrap();
            m1 += n as f64 * p;
            m2 += (n * n) as f64 * p;
        }
        let q = (m2 - m1 * m1 - m1) / m1;
        assert!((mandel_q(&st).unwrap() - q).abs() < 1e-10);
    }

    #[test]
    fn ys_populations_are_poissonian() {
        let st = cat(1.0, FRAC_PI_2);
        let mut fact = 1.0;
        for n in 0..8 {
            if n > 0 {
                fact *= n as f64;
            }
            let p = fock_population(&st, n, Spin::Up).unwrap();
            assert!((p - (-1.0f64).exp() / fact).abs() < 1e-12);
        }
        assert!(fock_population(&cat(1.0, 0.0), 1, Spin::Up).unwrap() < 1e-30);
    }

    #[test]
    fn energy_examples() {
        let p = ModelParams::single_mode(DriveProtocol::Linear { v: 0.01 }, 0.12);
        let v = init_vacuum(3, &JitterSpec::off(), 0).unwrap();
        assert_eq!(expectation_energy(&v, &p, 0.0), 0.0);
        let p0 = ModelParams::single_mode(DriveProtocol::Linear { v: 0.01 }, 0.0);
        assert!((expectation_energy(&cat(1.0, FRAC_PI_2), &p0, 0.0) - 1.0).abs() < 1e-12);
        // bias term only
        assert!((expectation_energy(&v, &p0, 40.0) - 0.2).abs() < 1e-14);
    }

    #[test]
    fn record_fields_consistent() {
        let p = ModelParams::single_mode(DriveProtocol::Linear { v: 0.01 }, 0.05);
        let st = init_cat(&CatSpec::real(1.0, 0.3), 6, &JitterSpec::default(), 11).unwrap();
        let r = record(&st, &p, -5.0, 8).unwrap();
        assert_eq!(r.p_up.len(), 9);
        assert!((r.p_lz - p_lz(&st)).abs() < 1e-14);
        assert!((r.mean_n - mean_photon_number(&st)).abs() < 1e-14);
        assert!((r.energy - expectation_energy(&st, &p, -5.0)).abs() < 1e-14);
        let total: f64 = r.p_up.iter().chain(&r.p_down).sum();
        assert!(total <= 1.0 + 1e-9);
    }

    #[test]
    fn moving_average_basics() {
        let flat: Vec<_> = (0..50).map(|k| (k as f64, 0.5)).collect();
        let out = moving_average(&flat, 7.0).unwrap();
        assert!(out.iter().all(|&(_, v)| (v - 0.5).abs() < 1e-15));

        let period = 20.0;
        let dt = 0.1;
        let sine: Vec<_> = (0..=4000).map(|k| {
            let t = k as f64 * dt;
            (t, (2.0 * PI * t / period).sin())
        }).collect();
        let out = moving_average(&sine, period).unwrap();
        let interior = out.iter().filter(|(t, _)| *t > period && *t < 400.0 - period);
        assert!(interior.map(|(_, v)| v.abs()).fold(0.0, f64::max) < 1e-2);

        assert!(moving_average(&[], 1.0).is_err());
        assert!(moving_average(&flat, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn p_lz_complements_sigma_z(
            re in prop::collection::vec(-1.0f64..1.0, 9),
            im in prop::collection::vec(-1.0f64..1.0, 9),
        ) {
            let z = |k: usize| c(re[k], im[k]);
            let st = MultiD2State::from_parts(
                vec![z(0), z(1), z(2)],
                vec![z(3), z(4), z(5)],
                vec![z(6), z(7), z(8)],
                1,
            ).unwrap();
            prop_assume!(crate::ansatz::norm_squared(&st) > 1e-3);
            let p = p_lz(&st);
            prop_assert!((p + 0.5 * (1.0 + sigma_z(&st)) - 1.0).abs() < 1e-12);
            prop_assert!(p > -1e-9 && p < 1.0 + 1e-9);
        }
    }
}
