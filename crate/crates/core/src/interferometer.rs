//! Analysis helpers for periodically driven (interferometer) runs: the
//! resonance segments of the bias, smoothed population maxima and the
//! photon-resolved gap/period table.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{bias_at, DriveProtocol, FockLabel, ModelParams, Spin};
use crate::observables::{moving_average, series, TrajectoryRecord};
use crate::signal::{median_peak_spacing, prominent_maxima};
use crate::spectrum::{gap_period_regression, pair_gap_at, Regression};

/// Times in [t0, t1] where |ε(t)| crosses `level`, located by bisection on a
/// fine grid. Sorted ascending.
pub fn resonance_times(drive: &DriveProtocol, level: f64, t0: f64, t1: f64) -> Result<Vec<f64>> {
    if !(t1 > t0) {
        return Err(Error::InvalidParameter(format!("need t1 > t0, got [{t0}, {t1}]")));
    }
    let g = |t: f64| bias_at(drive, t).abs() - level;
    let n = (((t1 - t0) / 0.05).ceil() as usize).max(16);
    let h = (t1 - t0) / n as f64;
    let mut out = Vec::new();
    let mut a = t0;
    let mut ga = g(a);
    for k in 1..=n {
        let b = t0 + k as f64 * h;
        let gb = g(b);
        if ga == 0.0 {
            out.push(a);
        } else if ga * gb < 0.0 {
            let (mut lo, mut hi) = (a, b);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if g(lo) * g(mid) <= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            out.push(0.5 * (lo + hi));
        }
        a = b;
        ga = gb;
    }
    Ok(out)
}

/// Closed intervals in [t0, t1] bounded on both sides by resonances inside
/// which |ε(t)| < `level`.
pub fn inner_segments(drive: &DriveProtocol, level: f64, t0: f64, t1: f64) -> Result<Vec<(f64, f64)>> {
    let times = resonance_times(drive, level, t0, t1)?;
    Ok(times
        .windows(2)
        .map(|w| (w[0], w[1]))
        .filter(|&(a, b)| bias_at(drive, 0.5 * (a + b)).abs() < level)
        .collect())
}

/// Closed intervals bounded by resonances inside which |ε(t)| > `level`.
pub fn outer_segments(drive: &DriveProtocol, level: f64, t0: f64, t1: f64) -> Result<Vec<(f64, f64)>> {
    let times = resonance_times(drive, level, t0, t1)?;
    Ok(times
        .windows(2)
        .map(|w| (w[0], w[1]))
        .filter(|&(a, b)| bias_at(drive, 0.5 * (a + b)).abs() > level)
        .collect())
}

/// Times of the maxima of `series` after a centered moving average over
/// `window`, restricted to [t_lo, t_hi] and kept only when their prominence
/// is at least `rel_prominence` times the range of the smoothed data there.
pub fn smoothed_maxima(series: &[(f64, f64)], window: f64, t_lo: f64, t_hi: f64, rel_prominence: f64) -> Result<Vec<f64>> {
    let smooth = moving_average(series, window)?;
    let sub: Vec<(f64, f64)> = smooth.into_iter().filter(|&(t, _)| t >= t_lo && t <= t_hi).collect();
    if sub.len() < 3 {
        return Err(Error::EmptySeries);
    }
    let values: Vec<f64> = sub.iter().map(|p| p.1).collect();
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    Ok(prominent_maxima(&values, rel_prominence * (hi - lo)).into_iter().map(|k| sub[k].0).collect())
}

/// How the oscillation periods of the P_{n,↓} traces are measured.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodProbe {
    /// Moving-average window applied before peak finding (removes the fast
    /// 2ω ripple when set to π/ω).
    pub smoothing: f64,
    pub t_lo: f64,
    pub t_hi: f64,
    /// Peak prominence relative to the smoothed range inside the window.
    pub rel_prominence: f64,
    /// Time at which the level gaps are evaluated.
    pub t_gap: f64,
    pub n_trunc: usize,
}

impl Default for PeriodProbe {
    fn default() -> Self {
        PeriodProbe {
            smoothing: std::f64::consts::PI,
            t_lo: -80.0,
            t_hi: 80.0,
            rel_prominence: 0.1,
            t_gap: -28.0,
            n_trunc: 40,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapPeriodPoint {
    pub n: usize,
    /// Splitting of the levels connected to |n−1,↑⟩ and |n,↓⟩.
    pub gap: f64,
    /// Median spacing of smoothed P_{n,↓} maxima.
    pub period: f64,
}

/// Gap/period pairs for each photon number in `ns` that shows at least two
/// maxima. Photon numbers without a measurable period are skipped.
pub fn gap_period_points(params: &ModelParams, records: &[TrajectoryRecord], ns: &[usize], probe: &PeriodProbe) -> Result<Vec<GapPeriodPoint>> {
    let mut out = Vec::new();
    for &n in ns {
        if n == 0 {
            return Err(Error::InvalidParameter("photon number must be >= 1".into()));
        }
        if records.first().is_none_or(|r| r.p_down.len() <= n) {
            return Err(Error::InvalidParameter(format!("records do not contain P_{{{n},down}}")));
        }
        let raw = series(records, |r| r.p_down[n]);
        let smooth = moving_average(&raw, probe.smoothing)?;
        let in_window: Vec<f64> = smooth.iter().filter(|p| p.0 >= probe.t_lo && p.0 <= probe.t_hi).map(|p| p.1).collect();
        let (lo, hi) = in_window.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let period = match median_peak_spacing(&smooth, probe.t_lo, probe.t_hi, probe.rel_prominence * (hi - lo)) {
            Ok(p) => p,
            Err(Error::Degenerate(_)) | Err(Error::EmptySeries) => continue,
            Err(e) => return Err(e),
        };
        let gap = pair_gap_at(params, probe.t_gap, probe.n_trunc, FockLabel::new(n - 1, Spin::Up), FockLabel::new(n, Spin::Down))?;
        out.push(GapPeriodPoint { n, gap, period });
    }
    Ok(out)
}

/// Linear regression of period against 1/gap.
pub fn regress(points: &[GapPeriodPoint]) -> Result<Regression> {
    let gaps: Vec<f64> = points.iter().map(|p| p.gap).collect();
    let periods: Vec<f64> = points.iter().map(|p| p.period).collect();
    gap_period_regression(&gaps, &periods)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI, TAU};

    fn drive(a: f64) -> DriveProtocol {
        DriveProtocol::Sinusoidal {
            eps0: 0.0,
            amplitude: a,
            omega: PI / 200.0,
            phi0: FRAC_PI_2,
        }
    }

    #[test]
    fn resonances_of_cosine_drive() {
        // 1.3 cos(πt/200) = ±1  →  t = ±(200/π) acos(1/1.3) + 200k
        let tc = 200.0 / PI * (1.0f64 / 1.3).acos();
        let times = resonance_times(&drive(1.3), 1.0, -400.0, 400.0).unwrap();
        let expect = [-400.0 + tc, -tc, tc, 400.0 - tc];
        let inner: Vec<f64> = times.iter().copied().filter(|t| t.abs() < 400.0 - tc + 1.0).collect();
        assert!(inner.len() >= 4);
        for e in expect {
            assert!(times.iter().any(|t| (t - e).abs() < 1e-8), "{e} not in {times:?}");
        }
        for (a, b) in inner_segments(&drive(1.3), 1.0, -400.0, 400.0).unwrap() {
            assert!(bias_at(&drive(1.3), 0.5 * (a + b)).abs() < 1.0);
        }
    }

    #[test]
    fn weak_drive_has_no_resonance() {
        assert!(resonance_times(&drive(0.7), 1.0, -400.0, 400.0).unwrap().is_empty());
    }

    #[test]
    fn smoothing_hides_fast_ripple() {
        let s: Vec<(f64, f64)> = (0..=8000)
            .map(|k| {
                let t = -400.0 + 0.1 * k as f64;
                (t, (TAU * t / 400.0).cos() + 0.3 * (2.0 * t).cos())
            })
            .collect();
        let peaks = smoothed_maxima(&s, PI, -300.0, 300.0, 0.2).unwrap();
        assert_eq!(peaks.len(), 1);
        assert!(peaks[0].abs() < 1.0);
    }
}
