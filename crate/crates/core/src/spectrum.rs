//! Exact diagonalization in a truncated Fock basis: adiabatic level diagrams,
//! avoided-crossing extraction and brute-force time propagation.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{build_fock_hamiltonian, fock_index, fock_operator, FockLabel, ModelParams, Spin};
use crate::observables::TrajectoryRecord;

pub const DEFAULT_N_TRUNC: usize = 40;
/// Population of the two highest photon levels above which truncation is suspect.
pub const LEAK_THRESHOLD: f64 = 1e-6;
/// Minimum overlap of an adiabatic eigenvector with a basis state for a diabatic label.
pub const LABEL_OVERLAP: f64 = 0.9;

#[derive(Clone, Debug)]
pub struct SpectrumResult {
    pub params: ModelParams,
    pub t_grid: Vec<f64>,
    /// Sorted eigenvalues at each grid time.
    pub levels: Vec<Vec<f64>>,
    pub n_trunc: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossingInfo {
    pub t_star: f64,
    pub gap: f64,
    /// Indices of the two adjacent sorted levels.
    pub level_pair: (usize, usize),
    /// Diabatic character of the lower level before the crossing and of the
    /// upper level before the crossing; the two exchange roles afterwards.
    pub diabatic_labels: (FockLabel, FockLabel),
    /// Set when a label sits in one of the two highest retained photon levels.
    pub near_truncation: bool,
}

impl CrossingInfo {
    /// True when the two branches carry different photon numbers.
    pub fn changes_photon_number(&self) -> bool {
        self.diabatic_labels.0.n != self.diabatic_labels.1.n
    }

    pub fn involves(&self, a: FockLabel, b: FockLabel) -> bool {
        let (x, y) = self.diabatic_labels;
        (x == a && y == b) || (x == b && y == a)
    }
}

fn sorted_eigen(h: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vecs = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

fn sorted_levels(params: &ModelParams, t: f64, n_trunc: usize) -> Result<Vec<f64>> {
    Ok(sorted_eigen(build_fock_hamiltonian(params, t, n_trunc)?).0)
}

/// Instantaneous eigenvalues on a time grid.
pub fn adiabatic_levels(params: &ModelParams, t_grid: &[f64], n_trunc: usize) -> Result<SpectrumResult> {
    params.validate()?;
    if n_trunc == 0 {
        return Err(Error::InvalidParameter("n_trunc must be >= 1".into()));
    }
    let levels = t_grid
        .par_iter()
        .map(|&t| sorted_levels(params, t, n_trunc))
        .collect::<Result<Vec<_>>>()?;
    Ok(SpectrumResult {
        params: params.clone(),
        t_grid: t_grid.to_vec(),
        levels,
        n_trunc,
    })
}

/// Basis state with the largest weight in column `k`, with that weight.
fn dominant_label(vecs: &DMatrix<f64>, k: usize) -> (FockLabel, f64) {
    let col = vecs.column(k);
    let (idx, w) = col
        .iter()
        .enumerate()
        .map(|(i, x)| (i, x * x))
        .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
    (FockLabel::from_index(idx), w)
}

fn gap_at(params: &ModelParams, t: f64, n_trunc: usize, k: usize) -> Result<f64> {
    let lv = sorted_levels(params, t, n_trunc)?;
    Ok(lv[k + 1] - lv[k])
}

/// Golden-section minimization of the level-k gap on [a, b].
fn refine_minimum(params: &ModelParams, n_trunc: usize, k: usize, mut a: f64, mut b: f64) -> Result<(f64, f64)> {
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - phi * (b - a);
    let mut x2 = a + phi * (b - a);
    let mut g1 = gap_at(params, x1, n_trunc, k)?;
    let mut g2 = gap_at(params, x2, n_trunc, k)?;
    for _ in 0..80 {
        if (b - a).abs() < 1e-9 * (1.0 + a.abs()) {
            break;
        }
        if g1 <= g2 {
            b = x2;
            x2 = x1;
            g2 = g1;
            x1 = b - phi * (b - a);
            g1 = gap_at(params, x1, n_trunc, k)?;
        } else {
            a = x1;
            x1 = x2;
            g1 = g2;
            x2 = a + phi * (b - a);
            g2 = gap_at(params, x2, n_trunc, k)?;
        }
    }
    Ok(if g1 <= g2 { (x1, g1) } else { (x2, g2) })
}

/// Avoided (and exact) crossings between adjacent levels.
///
/// Candidates are local minima of each adjacent-level gap on the grid. Each is
/// refined by a parabola through the three grid points around it and then by
/// a bracketed one-dimensional minimization of the exact gap. A candidate is
/// kept only when the two levels swap diabatic character: the eigenvectors at
/// t* ± d, with d = 5·gap/|ε̇(t*)| clipped to the grid, must each overlap a
/// single basis state by at least [`LABEL_OVERLAP`], and the lower level's
/// label before the crossing must be the upper level's label after it.
pub fn find_avoided_crossings(spec: &SpectrumResult) -> Result<Vec<CrossingInfo>> {
    let nt = spec.t_grid.len();
    if nt < 3 {
        return Ok(Vec::new());
    }
    let n_levels = spec.levels[0].len();
    let mut candidates = Vec::new();
    for k in 0..n_levels - 1 {
        let gap = |i: usize| spec.levels[i][k + 1] - spec.levels[i][k];
        for i in 1..nt - 1 {
            let (gl, gc, gr) = (gap(i - 1), gap(i), gap(i + 1));
            if gc < gl && gc <= gr {
                candidates.push((k, i));
            }
        }
    }

    let t_lo = spec.t_grid[0];
    let t_hi = spec.t_grid[nt - 1];
    let results: Vec<Option<CrossingInfo>> = candidates
        .par_iter()
        .map(|&(k, i)| classify_candidate(spec, k, i, t_lo, t_hi))
        .collect::<Result<_>>()?;
    let mut out: Vec<CrossingInfo> = results.into_iter().flatten().collect();
    out.sort_by(|a, b| a.t_star.total_cmp(&b.t_star).then(a.level_pair.cmp(&b.level_pair)));
    Ok(out)
}

fn classify_candidate(spec: &SpectrumResult, k: usize, i: usize, t_lo: f64, t_hi: f64) -> Result<Option<CrossingInfo>> {
    let params = &spec.params;
    let ts = &spec.t_grid;
    let (ta, tb) = (ts[i - 1], ts[i + 1]);
    let (t_star, gap) = refine_minimum(params, spec.n_trunc, k, ta, tb)?;

    let spacing = (tb - ta) / 2.0;
    let slope = params.drive.rate_at(t_star).abs();
    let mut d = if slope > 0.0 { 5.0 * gap / slope } else { f64::INFINITY };
    d = d.max(2.0 * spacing).min(60.0);
    let before = (t_star - d).max(t_lo);
    let after = (t_star + d).min(t_hi);
    if !(before < t_star && after > t_star) {
        return Ok(None);
    }
    let (_, vb) = sorted_eigen(build_fock_hamiltonian(params, before, spec.n_trunc)?);
    let (_, va) = sorted_eigen(build_fock_hamiltonian(params, after, spec.n_trunc)?);
    let (lo_b, w1) = dominant_label(&vb, k);
    let (hi_b, w2) = dominant_label(&vb, k + 1);
    let (lo_a, w3) = dominant_label(&va, k);
    let (hi_a, w4) = dominant_label(&va, k + 1);
    if [w1, w2, w3, w4].iter().any(|&w| w < LABEL_OVERLAP) {
        return Ok(None);
    }
    if lo_b != hi_a || hi_b != lo_a || lo_b == hi_b {
        return Ok(None);
    }
    let near = [lo_b, hi_b].iter().any(|l| l.n + 1 >= spec.n_trunc);
    Ok(Some(CrossingInfo {
        t_star,
        gap,
        level_pair: (k, k + 1),
        diabatic_labels: (lo_b, hi_b),
        near_truncation: near,
    }))
}

/// Energy difference at time `t` between the adiabatic levels with the largest
/// overlap with the basis states `a` and `b`.
pub fn pair_gap_at(params: &ModelParams, t: f64, n_trunc: usize, a: FockLabel, b: FockLabel) -> Result<f64> {
    if a.n > n_trunc || b.n > n_trunc || a == b {
        return Err(Error::InvalidParameter(format!("invalid label pair {a}, {b}")));
    }
    let (vals, vecs) = sorted_eigen(build_fock_hamiltonian(params, t, n_trunc)?);
    let best = |lab: FockLabel, skip: Option<usize>| -> usize {
        let row = lab.index();
        (0..vals.len())
            .filter(|&c| Some(c) != skip)
            .max_by(|&x, &y| vecs[(row, x)].abs().total_cmp(&vecs[(row, y)].abs()))
            .unwrap_or(0)
    };
    let ka = best(a, None);
    let kb = best(b, Some(ka));
    Ok((vals[ka] - vals[kb]).abs())
}

/// Least-squares line `period = slope/ΔE + intercept`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Regression {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn gap_period_regression(gaps: &[f64], periods: &[f64]) -> Result<Regression> {
    if gaps.len() != periods.len() {
        return Err(Error::DimensionMismatch {
            expected: gaps.len(),
            found: periods.len(),
        });
    }
    if gaps.len() < 3 {
        return Err(Error::Degenerate(format!("need at least 3 points, got {}", gaps.len())));
    }
    if gaps.iter().any(|&g| !(g > 0.0)) {
        return Err(Error::InvalidParameter("gaps must be positive".into()));
    }
    let x: Vec<f64> = gaps.iter().map(|g| 1.0 / g).collect();
    linear_fit(&x, periods)
}

pub(crate) fn linear_fit(x: &[f64], y: &[f64]) -> Result<Regression> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if !(sxx > 1e-300) {
        return Err(Error::Degenerate("abscissae are all equal".into()));
    }
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Ok(Regression {
        slope,
        intercept: my - slope * mx,
        r2,
    })
}

/// Spin-up Schrödinger-cat state N⁻¹(|α⟩ + e^{iθ}|−α⟩)|↑⟩ in the Fock basis,
/// built from the coefficient recursion c_n = c_{n−1}·α/√n and normalized
/// over the truncated space.
pub fn cat_fock_vector(alpha: Complex64, theta: f64, n_trunc: usize) -> Result<Vec<Complex64>> {
    let phase = Complex64::from_polar(1.0, theta);
    let mut v = vec![Complex64::default(); 2 * (n_trunc + 1)];
    let mut coh = Complex64::new((-0.5 * alpha.norm_sqr()).exp(), 0.0);
    let mut sign = 1.0;
    for n in 0..=n_trunc {
        if n > 0 {
            coh *= alpha / (n as f64).sqrt();
            sign = -sign;
        }
        v[fock_index(n, Spin::Up)] = coh * (1.0 + phase * sign);
    }
    let norm: f64 = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if !(norm > 1e-12) {
        return Err(Error::DegenerateNormalization(norm * norm));
    }
    for z in &mut v {
        *z /= norm;
    }
    Ok(v)
}

/// Unit vector |n, σ⟩.
pub fn basis_vector(label: FockLabel, n_trunc: usize) -> Result<Vec<Complex64>> {
    if label.n > n_trunc {
        return Err(Error::InvalidParameter(format!("{label} outside truncation {n_trunc}")));
    }
    let mut v = vec![Complex64::default(); 2 * (n_trunc + 1)];
    v[label.index()] = Complex64::new(1.0, 0.0);
    Ok(v)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdConfig {
    pub t0: f64,
    pub t1: f64,
    pub dt: f64,
    pub record_stride: usize,
    pub n_report: usize,
}

impl EdConfig {
    pub fn new(t0: f64, t1: f64) -> Self {
        EdConfig {
            t0,
            t1,
            dt: 0.02,
            record_stride: 10,
            n_report: 8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EdTrajectory {
    pub records: Vec<TrajectoryRecord>,
    pub final_vector: Vec<Complex64>,
    /// Largest population found in the two highest photon levels.
    pub max_leak: f64,
}

impl EdTrajectory {
    pub fn truncation_suspect(&self) -> bool {
        self.max_leak > LEAK_THRESHOLD
    }
}

/// v ← exp(−iHτ)v by a Taylor series, substepping so that ‖H‖₁τ ≤ 1.
fn expm_apply(h: &crate::model::FockOperator, tau: f64, v: &mut [Complex64], scratch: &mut [Complex64], term: &mut [Complex64]) {
    let bound = h.norm1_bound();
    let n_sub = (bound * tau.abs()).ceil().max(1.0) as usize;
    let step = tau / n_sub as f64;
    let mi = Complex64::new(0.0, -step);
    for _ in 0..n_sub {
        term.copy_from_slice(v);
        for k in 1..40 {
            h.apply(term, scratch);
            let c = mi / k as f64;
            let mut tn = 0.0;
            for (t, s) in term.iter_mut().zip(scratch.iter()) {
                *t = s * c;
                tn += t.norm_sqr();
            }
            for (x, t) in v.iter_mut().zip(term.iter()) {
                *x += t;
            }
            if tn < 1e-34 {
                break;
            }
        }
    }
}

fn fock_record(params: &ModelParams, h: &crate::model::FockOperator, v: &[Complex64], t: f64, n_report: usize, scratch: &mut [Complex64]) -> TrajectoryRecord {
    let norm2: f64 = v.iter().map(|z| z.norm_sqr()).sum();
    let n_levels = v.len() / 2;
    let (mut m1, mut m2, mut down) = (0.0, 0.0, 0.0);
    let (mut p_up, mut p_down) = (Vec::new(), Vec::new());
    for n in 0..n_levels {
        let pu = v[fock_index(n, Spin::Up)].norm_sqr() / norm2;
        let pd = v[fock_index(n, Spin::Down)].norm_sqr() / norm2;
        let nf = n as f64;
        m1 += nf * (pu + pd);
        m2 += nf * nf * (pu + pd);
        down += pd;
        if n <= n_report {
            p_up.push(pu);
            p_down.push(pd);
        }
    }
    while p_up.len() <= n_report {
        p_up.push(0.0);
        p_down.push(0.0);
    }
    h.apply(v, scratch);
    let energy: f64 = v.iter().zip(scratch.iter()).map(|(a, b)| (a.conj() * b).re).sum::<f64>() / norm2;
    let _ = params;
    TrajectoryRecord {
        t,
        p_lz: down,
        norm2,
        energy,
        p_up,
        p_down,
        mean_n: m1,
        mandel_q: if m1 < crate::observables::MANDEL_FLOOR {
            None
        } else {
            Some((m2 - m1 * m1 - m1) / m1)
        },
    }
}

/// Propagates a Fock-basis vector with midpoint exponentials exp(−iH(t+dt/2)dt).
pub fn ed_evolve(params: &ModelParams, initial: &[Complex64], cfg: &EdConfig) -> Result<EdTrajectory> {
    params.validate()?;
    if initial.len() < 4 || initial.len() % 2 != 0 {
        return Err(Error::InvalidParameter(format!("Fock vector length {} is not 2(n_trunc+1)", initial.len())));
    }
    if !(cfg.t1 > cfg.t0 && cfg.dt > 0.0 && cfg.record_stride > 0) {
        return Err(Error::InvalidParameter("need t1 > t0, dt > 0, record_stride >= 1".into()));
    }
    let n_trunc = initial.len() / 2 - 1;
    let norm: f64 = initial.iter().map(|z| z.norm_sqr()).sum();
    if (norm - 1.0).abs() > 1e-8 {
        return Err(Error::InvalidParameter(format!("initial vector norm² is {norm}, expected 1")));
    }
    let n_steps = ((cfg.t1 - cfg.t0) / cfg.dt).round().max(1.0) as usize;
    let dt = (cfg.t1 - cfg.t0) / n_steps as f64;
    let dim = initial.len();
    let mut v = initial.to_vec();
    let mut scratch = vec![Complex64::default(); dim];
    let mut term = vec![Complex64::default(); dim];
    let top = [fock_index(n_trunc, Spin::Up), fock_index(n_trunc, Spin::Down), fock_index(n_trunc - 1, Spin::Up), fock_index(n_trunc - 1, Spin::Down)];
    let leak = |v: &[Complex64]| top.iter().map(|&i| v[i].norm_sqr()).sum::<f64>();

    let mut records = Vec::with_capacity(n_steps / cfg.record_stride + 2);
    let mut max_leak = leak(&v);
    let h0 = fock_operator(params, cfg.t0, n_trunc)?;
    records.push(fock_record(params, &h0, &v, cfg.t0, cfg.n_report, &mut scratch));
    for step in 1..=n_steps {
        let t_prev = cfg.t0 + (step - 1) as f64 * dt;
        let h = fock_operator(params, t_prev + 0.5 * dt, n_trunc)?;
        expm_apply(&h, dt, &mut v, &mut scratch, &mut term);
        max_leak = max_leak.max(leak(&v));
        if step % cfg.record_stride == 0 || step == n_steps {
            let t = if step == n_steps { cfg.t1 } else { cfg.t0 + step as f64 * dt };
            let ht = fock_operator(params, t, n_trunc)?;
            records.push(fock_record(params, &ht, &v, t, cfg.n_report, &mut scratch));
        }
    }
    if !v.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        return Err(Error::NonFinite {
            t: cfg.t1,
            detail: "exact propagation diverged".into(),
        });
    }
    if max_leak > LEAK_THRESHOLD {
        log::warn!("truncation at n = {n_trunc} leaks {max_leak:e} into the top photon levels");
    }
    Ok(EdTrajectory {
        records,
        final_vector: v,
        max_leak,
    })
}

/// Writes `t, E_0, …, E_k` rows.
pub fn write_levels_csv<W: Write>(spec: &SpectrumResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let n = spec.levels.first().map_or(0, |l| l.len());
    let mut header = vec!["t".to_string()];
    header.extend((0..n).map(|k| format!("E_{k}")));
    w.write_record(&header)?;
    for (t, lv) in spec.t_grid.iter().zip(&spec.levels) {
        let mut row = vec![fmt_f(*t)];
        row.extend(lv.iter().map(|e| fmt_f(*e)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_crossings_csv<W: Write>(crossings: &[CrossingInfo], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t_star", "gap", "lower_level", "upper_level", "label_a", "label_b", "near_truncation"])?;
    for c in crossings {
        w.write_record([
            fmt_f(c.t_star),
            fmt_f(c.gap),
            c.level_pair.0.to_string(),
            c.level_pair.1.to_string(),
            c.diabatic_labels.0.to_string(),
            c.diabatic_labels.1.to_string(),
            c.near_truncation.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Twelve significant digits in scientific notation.
pub fn fmt_f(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else {
        format!("{x:.11e}")
    }
}
