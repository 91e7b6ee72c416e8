//! Small time-series helpers used to characterize oscillations in the
//! simulated probabilities.

use std::f64::consts::TAU;

use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};

/// Best-fitting sinusoid period over [p_min, p_max] (least-squares
/// periodogram), refined by golden-section search around the best scan point.
pub fn dominant_period(series: &[(f64, f64)], p_min: f64, p_max: f64) -> Result<f64> {
    if series.len() < 4 {
        return Err(Error::EmptySeries);
    }
    if !(p_min > 0.0 && p_max > p_min) {
        return Err(Error::InvalidParameter(format!("bad period range [{p_min}, {p_max}]")));
    }
    let n_scan = 400;
    let periods: Vec<f64> = (0..=n_scan).map(|k| p_min * (p_max / p_min).powf(k as f64 / n_scan as f64)).collect();
    let powers: Vec<f64> = periods.iter().map(|&p| sinusoid_power(series, p)).collect();
    let k = powers
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| k)
        .unwrap_or(0);
    let (mut a, mut b) = (periods[k.saturating_sub(1)], periods[(k + 1).min(n_scan)]);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..60 {
        let x1 = b - phi * (b - a);
        let x2 = a + phi * (b - a);
        if sinusoid_power(series, x1) >= sinusoid_power(series, x2) {
            b = x2;
        } else {
            a = x1;
        }
    }
    Ok(0.5 * (a + b))
}

/// Variance explained by the least-squares fit c + a·cos(2πt/P) + b·sin(2πt/P).
fn sinusoid_power(series: &[(f64, f64)], period: f64) -> f64 {
    let w = TAU / period;
    let n = series.len() as f64;
    let mean = series.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut cc, mut ss, mut cs, mut c1, mut s1, mut yc, mut ys) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for &(t, y) in series {
        let (s, c) = (w * t).sin_cos();
        let y = y - mean;
        cc += c * c;
        ss += s * s;
        cs += c * s;
        c1 += c;
        s1 += s;
        yc += y * c;
        ys += y * s;
    }
    // remove the projection on the constant so the basis is centered
    cc -= c1 * c1 / n;
    ss -= s1 * s1 / n;
    cs -= c1 * s1 / n;
    let det = cc * ss - cs * cs;
    if det.abs() < 1e-300 {
        return 0.0;
    }
    let a = (ss * yc - cs * ys) / det;
    let b = (cc * ys - cs * yc) / det;
    a * yc + b * ys
}

/// Amplitude spectrum of a uniformly sampled signal (mean removed, Hann
/// window, zero padded). Returns (angular frequency, amplitude) pairs.
pub fn amplitude_spectrum(values: &[f64], dt: f64) -> Result<Vec<(f64, f64)>> {
    if values.len() < 4 {
        return Err(Error::EmptySeries);
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter("sample spacing must be > 0".into()));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let len = (4 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = vec![Complex::new(0.0, 0.0); len];
    for (k, &v) in values.iter().enumerate() {
        let hann = 0.5 - 0.5 * (TAU * k as f64 / (n - 1) as f64).cos();
        buf[k] = Complex::new((v - mean) * hann, 0.0);
    }
    FftPlanner::new().plan_fft_forward(len).process(&mut buf);
    // Hann coherent gain is 1/2
    let scale = 4.0 / n as f64;
    Ok((0..len / 2).map(|k| (TAU * k as f64 / (len as f64 * dt), buf[k].norm() * scale)).collect())
}

/// Strongest spectral line inside [w_lo, w_hi], returned as (frequency, amplitude).
pub fn spectral_peak(spectrum: &[(f64, f64)], w_lo: f64, w_hi: f64) -> Option<(f64, f64)> {
    spectrum
        .iter()
        .copied()
        .filter(|&(w, _)| w >= w_lo && w <= w_hi)
        .max_by(|a, b| a.1.total_cmp(&b.1))
}

/// Indices of local maxima whose topographic prominence is at least `min_prominence`.
pub fn prominent_maxima(values: &[f64], min_prominence: f64) -> Vec<usize> {
    let n = values.len();
    let mut out = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if values[i] > values[i - 1] {
            // step over flat tops
            let mut j = i;
            while j + 1 < n && values[j + 1] == values[i] {
                j += 1;
            }
            if j + 1 < n && values[j + 1] < values[i] {
                let peak = (i + j) / 2;
                if prominence(values, peak) >= min_prominence {
                    out.push(peak);
                }
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    out
}

fn prominence(values: &[f64], peak: usize) -> f64 {
    let h = values[peak];
    let mut left_min = h;
    for &v in values[..peak].iter().rev() {
        if v > h {
            break;
        }
        left_min = left_min.min(v);
    }
    let mut right_min = h;
    for &v in &values[peak + 1..] {
        if v > h {
            break;
        }
        right_min = right_min.min(v);
    }
    h - left_min.max(right_min)
}

/// Median spacing between successive prominent maxima of `series` restricted to [t_lo, t_hi].
pub fn median_peak_spacing(series: &[(f64, f64)], t_lo: f64, t_hi: f64, min_prominence: f64) -> Result<f64> {
    let sub: Vec<(f64, f64)> = series.iter().copied().filter(|&(t, _)| t >= t_lo && t <= t_hi).collect();
    let values: Vec<f64> = sub.iter().map(|p| p.1).collect();
    let peaks = prominent_maxima(&values, min_prominence);
    if peaks.len() < 2 {
        return Err(Error::Degenerate(format!("found {} peaks in [{t_lo}, {t_hi}]", peaks.len())));
    }
    let mut gaps: Vec<f64> = peaks.windows(2).map(|w| sub[w[1]].0 - sub[w[0]].0).collect();
    gaps.sort_by(f64::total_cmp);
    let m = gaps.len();
    Ok(if m % 2 == 1 { gaps[m / 2] } else { 0.5 * (gaps[m / 2 - 1] + gaps[m / 2]) })
}
