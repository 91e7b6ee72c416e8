//! Closed-form Landau-Zener predictions, plateau statistics and the
//! two-parameter θ-dependence fit.

use std::f64::consts::PI;

use levenberg_marquardt::{LeastSquaresProblem, LevenbergMarquardt};
use nalgebra::{storage::Owned, DVector, Dyn, Matrix, OMatrix, Vector2, U2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest cat normalization accepted by the RWA formulas.
const NORM_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub f0: f64,
    pub f1: f64,
    /// Sum of squared residuals.
    pub residual: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauStats {
    pub window: (f64, f64),
    pub mean: f64,
    pub spread: f64,
}

fn check_speed(v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::InvalidParameter(format!("sweep speed must be > 0, got {v}")));
    }
    Ok(())
}

/// Probability exp(−πγ²/2v) of staying in |0,↑⟩ through a single crossing.
pub fn stay_probability(gamma: f64, v: f64) -> Result<f64> {
    check_speed(v)?;
    Ok((-PI * gamma * gamma / (2.0 * v)).exp())
}

/// Asymptotic transition probability 1 − exp(−πγ²/2v) from the photon vacuum.
pub fn lz_asymptote(gamma: f64, v: f64) -> Result<f64> {
    Ok(1.0 - stay_probability(gamma, v)?)
}

/// Rotating-wave long-time transition probability for a cat state of
/// amplitude `alpha` and phase `theta`:
///
/// 1 − P₀ (e^{|α|²P₀} + e^{−|α|²P₀} cos θ) / (e^{|α|²} + e^{−|α|²} cos θ),
///
/// with P₀ = [`stay_probability`].
pub fn rwa_final_probability(alpha: f64, theta: f64, gamma: f64, v: f64) -> Result<f64> {
    let p0 = stay_probability(gamma, v)?;
    let a = alpha * alpha;
    let c = theta.cos();
    let norm2 = 2.0 * (1.0 + (-2.0 * a).exp() * c);
    if !(norm2 > NORM_FLOOR) {
        return Err(Error::DegenerateNormalization(norm2));
    }
    let num = (a * p0).exp() + (-a * p0).exp() * c;
    let den = a.exp() + (-a).exp() * c;
    Ok(1.0 - p0 * num / den)
}

/// Even cat (θ = 0): 1 − P₀ cosh(|α|²P₀)/cosh|α|².
pub fn rwa_even(alpha: f64, gamma: f64, v: f64) -> Result<f64> {
    let p0 = stay_probability(gamma, v)?;
    let a = alpha * alpha;
    Ok(1.0 - p0 * (a * p0).cosh() / a.cosh())
}

/// Odd cat (θ = π): 1 − P₀ sinh(|α|²P₀)/sinh|α|², tending to 1 − P₀² as α → 0.
pub fn rwa_odd(alpha: f64, gamma: f64, v: f64) -> Result<f64> {
    let p0 = stay_probability(gamma, v)?;
    let a = alpha * alpha;
    if a == 0.0 {
        return Err(Error::DegenerateNormalization(0.0));
    }
    Ok(1.0 - p0 * (a * p0).sinh() / a.sinh())
}

/// Yurke-Stoler cat (θ = π/2): 1 − P₀ exp[−|α|²(1 − P₀)].
pub fn rwa_yurke_stoler(alpha: f64, gamma: f64, v: f64) -> Result<f64> {
    let p0 = stay_probability(gamma, v)?;
    Ok(1.0 - p0 * (-alpha * alpha * (1.0 - p0)).exp())
}

/// Time-weighted (trapezoidal) mean and standard deviation of the samples
/// inside `window`.
pub fn plateau_average(series: &[(f64, f64)], window: (f64, f64)) -> Result<PlateauStats> {
    let (lo, hi) = window;
    if !(lo < hi) {
        return Err(Error::InvalidParameter(format!("empty window [{lo}, {hi}]")));
    }
    let pts: Vec<(f64, f64)> = series.iter().copied().filter(|&(t, _)| t >= lo && t <= hi).collect();
    if pts.len() < 2 {
        return Err(Error::EmptySeries);
    }
    let span = pts[pts.len() - 1].0 - pts[0].0;
    let integrate = |f: &dyn Fn(f64) -> f64| -> f64 {
        pts.windows(2).map(|w| 0.5 * (f(w[0].1) + f(w[1].1)) * (w[1].0 - w[0].0)).sum::<f64>() / span
    };
    let mean = integrate(&|y| y);
    let var = integrate(&|y| (y - mean) * (y - mean));
    Ok(PlateauStats {
        window,
        mean,
        spread: var.max(0.0).sqrt(),
    })
}

/// Central 70 % of the interval between the two crossings at ±ω/v.
pub fn first_plateau_window(omega: f64, v: f64) -> (f64, f64) {
    let tc = omega / v;
    (-0.7 * tc, 0.7 * tc)
}

/// From 1.5·ω/v to the end of the run.
pub fn second_plateau_window(omega: f64, v: f64, t_end: f64) -> (f64, f64) {
    (1.5 * omega / v, t_end)
}

/// P(θ) = F₀ − e^{aF₁}(1 + e^{−2aF₁} cos θ)/(1 + e^{−2a} cos θ), a = |α|².
pub fn theta_curve(theta: f64, alpha2: f64, f0: f64, f1: f64) -> f64 {
    let c = theta.cos();
    f0 - (alpha2 * f1).exp() * (1.0 + (-2.0 * alpha2 * f1).exp() * c) / (1.0 + (-2.0 * alpha2).exp() * c)
}

struct ThetaFit<'a> {
    points: &'a [(f64, f64)],
    alpha2: f64,
    p: Vector2<f64>,
}

impl LeastSquaresProblem<f64, Dyn, U2> for ThetaFit<'_> {
    type ResidualStorage = Owned<f64, Dyn>;
    type JacobianStorage = Owned<f64, Dyn, U2>;
    type ParameterStorage = Owned<f64, U2>;

    fn set_params(&mut self, p: &Vector2<f64>) {
        self.p = *p;
    }

    fn params(&self) -> Vector2<f64> {
        self.p
    }

    fn residuals(&self) -> Option<DVector<f64>> {
        let (f0, f1) = (self.p[0], self.p[1]);
        let r = DVector::from_iterator(
            self.points.len(),
            self.points.iter().map(|&(th, y)| theta_curve(th, self.alpha2, f0, f1) - y),
        );
        r.iter().all(|x| x.is_finite()).then_some(r)
    }

    fn jacobian(&self) -> Option<Matrix<f64, Dyn, U2, Self::JacobianStorage>> {
        let a = self.alpha2;
        let f1 = self.p[1];
        let mut j = OMatrix::<f64, Dyn, U2>::zeros(self.points.len());
        for (k, &(th, _)) in self.points.iter().enumerate() {
            let c = th.cos();
            j[(k, 0)] = 1.0;
            j[(k, 1)] = -a * (a * f1).exp() * (1.0 - (-2.0 * a * f1).exp() * c) / (1.0 + (-2.0 * a).exp() * c);
        }
        Some(j)
    }
}

/// Least-squares fit of [`theta_curve`] over (F₀, F₁), started from an 8×8
/// grid over F₀ ∈ [0.5, 4], F₁ ∈ [0, 1]; the best converged start wins.
pub fn fit_theta_curve(points: &[(f64, f64)], alpha2: f64) -> Result<FitResult> {
    let mut distinct: Vec<f64> = points.iter().map(|p| p.0.rem_euclid(2.0 * PI)).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    if distinct.len() < 4 {
        return Err(Error::InvalidParameter(format!("need at least 4 distinct angles, got {}", distinct.len())));
    }
    if !(alpha2 > 0.0) {
        return Err(Error::InvalidParameter("alpha2 must be > 0".into()));
    }
    let mut best: Option<FitResult> = None;
    for i in 0..8 {
        for k in 0..8 {
            let start = Vector2::new(0.5 + 3.5 * i as f64 / 7.0, k as f64 / 7.0);
            let problem = ThetaFit { points, alpha2, p: start };
            let (solved, report) = LevenbergMarquardt::new().minimize(problem);
            if !report.termination.was_successful() {
                continue;
            }
            let (f0, f1) = (solved.p[0], solved.p[1]);
            let residual = match solved.residuals() {
                Some(r) => r.norm_squared(),
                None => continue,
            };
            if best.is_none_or(|b| residual < b.residual) {
                best = Some(FitResult { f0, f1, residual });
            }
        }
    }
    best.ok_or(Error::NotConverged)
}
