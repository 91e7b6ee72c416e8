//! Time-dependent variational dynamics of the multi-D₂ state.
//!
//! The unknowns are the real and imaginary parts of every Ȧᵢ, Ḃᵢ and ḟ_iq.
//! The state depends on f through the non-holomorphic factor e^{−|f|²/2}, so
//! the projected Schrödinger equation couples derivatives with their
//! conjugates; writing ψ̇ = Σ_a ẋ_a ∂_aψ over real coordinates x gives the
//! real symmetric system
//!
//! ```text
//! Σ_b Re⟨∂_aψ|∂_bψ⟩ ẋ_b = Im⟨∂_aψ|H|ψ⟩ .
//! ```
//!
//! Its solution satisfies the Euler-Lagrange equations of the variational
//! Lagrangian; [`eom_residual`] evaluates those equations term by term as an
//! independent check of the assembly.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::ansatz::{norm_squared, overlap_matrix, MultiD2State};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::observables::{record, TrajectoryRecord};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Default relative Tikhonov shift.
pub const DEFAULT_REG_EPSILON: f64 = 1e-10;
/// Default per-step norm-change threshold for step splitting.
pub const DEFAULT_NORM_GUARD: f64 = 1e-9;
/// Condition-number ceiling above which the Cholesky route is abandoned for SVD.
pub const DEFAULT_COND_CEILING: f64 = 1e14;

/// Linear system G·ẋ = r for the real-split parameter derivatives.
#[derive(Clone, Debug)]
pub struct TangentSystem {
    pub g: DMatrix<f64>,
    pub r: DVector<f64>,
    /// Ratio of the largest to smallest diagonal entry of G, a cheap lower
    /// bound on its condition number.
    pub condition_estimate: f64,
    pub t: f64,
    multiplicity: usize,
    n_modes: usize,
}

impl TangentSystem {
    pub fn dim(&self) -> usize {
        self.r.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    pub reg_epsilon: f64,
    pub cond_ceiling: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            reg_epsilon: DEFAULT_REG_EPSILON,
            cond_ceiling: DEFAULT_COND_CEILING,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub t0: f64,
    pub t1: f64,
    pub dt: f64,
    pub reg_epsilon: f64,
    /// Steps between recorded observables.
    pub record_stride: usize,
    /// Highest Fock index recorded in the population lists.
    pub n_report: usize,
    /// Per-step relative norm change that triggers splitting the step in two
    /// (0 disables the guard).
    pub norm_guard: f64,
    /// Maximum number of successive halvings of one step.
    pub max_bisections: u32,
}

impl IntegratorConfig {
    pub fn new(t0: f64, t1: f64) -> Self {
        IntegratorConfig {
            t0,
            t1,
            dt: 0.02,
            reg_epsilon: DEFAULT_REG_EPSILON,
            record_stride: 10,
            n_report: 8,
            norm_guard: DEFAULT_NORM_GUARD,
            max_bisections: 6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t0.is_finite() && self.t1.is_finite() && self.t1 > self.t0) {
            return Err(Error::InvalidParameter(format!("need t1 > t0, got [{}, {}]", self.t0, self.t1)));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidParameter(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.reg_epsilon >= 0.0) {
            return Err(Error::InvalidParameter("reg_epsilon must be >= 0".into()));
        }
        if !(self.norm_guard >= 0.0) {
            return Err(Error::InvalidParameter("norm_guard must be >= 0".into()));
        }
        if self.record_stride == 0 {
            return Err(Error::InvalidParameter("record_stride must be >= 1".into()));
        }
        Ok(())
    }

    /// Number of fixed steps; the step is shrunk slightly so the grid lands on t1.
    pub fn n_steps(&self) -> usize {
        ((self.t1 - self.t0) / self.dt).round().max(1.0) as usize
    }
}

/// Column of the real Jacobian ∂ψ/∂x_a expressed over the holomorphic
/// tangent vectors u_β: at most three (index, coefficient) terms.
#[derive(Clone, Copy)]
struct RealTangent {
    terms: [(usize, Complex64); 3],
    len: usize,
}

struct Layout {
    m: usize,
    n: usize,
}

impl Layout {
    fn a(&self, k: usize) -> usize {
        k
    }
    fn b(&self, k: usize) -> usize {
        self.m + k
    }
    fn f(&self, k: usize, q: usize) -> usize {
        2 * self.m + k * self.n + q
    }
    fn n_complex(&self) -> usize {
        self.m * (2 + self.n)
    }
}

/// Complex Gram matrix C_αβ = ⟨u_α|u_β⟩ of the tangent vectors
/// u_{A_k} = |↑, f_k⟩, u_{B_k} = |↓, f_k⟩, u_{f_kq} = b_q†(A_k|↑⟩ + B_k|↓⟩)|f_k⟩,
/// and the projections h_α = ⟨u_α|H|ψ⟩.
fn tangent_gram(state: &MultiD2State, params: &ModelParams, t: f64, s: &[Complex64]) -> (Vec<Complex64>, Vec<Complex64>) {
    let m = state.multiplicity();
    let nm = state.n_modes();
    let lay = Layout { m, n: nm };
    let nc = lay.n_complex();
    let zero = Complex64::default();
    let mut c = vec![zero; nc * nc];
    let mut h = vec![zero; nc];

    let half_eps = 0.5 * params.bias(t);
    let half_delta = 0.5 * params.delta;
    let modes = &params.modes;

    for j in 0..m {
        let (aj, bj) = (state.a[j], state.b[j]);
        let fj = state.displacements(j);
        for i in 0..m {
            let sji = s[j * m + i];
            let (ai, bi) = (state.a[i], state.b[i]);
            let fi = state.displacements(i);

            c[lay.a(j) * nc + lay.a(i)] = sji;
            c[lay.b(j) * nc + lay.b(i)] = sji;
            let nn = aj.conj() * ai + bj.conj() * bi;
            let zz = aj.conj() * ai - bj.conj() * bi;
            let xx = aj.conj() * bi + bj.conj() * ai;
            for q in 0..nm {
                c[lay.a(j) * nc + lay.f(i, q)] = ai * fj[q].conj() * sji;
                c[lay.b(j) * nc + lay.f(i, q)] = bi * fj[q].conj() * sji;
                c[lay.f(j, q) * nc + lay.a(i)] = aj.conj() * fi[q] * sji;
                c[lay.f(j, q) * nc + lay.b(i)] = bj.conj() * fi[q] * sji;
                for p in 0..nm {
                    let delta = if p == q { 1.0 } else { 0.0 };
                    c[lay.f(j, p) * nc + lay.f(i, q)] = nn * (fj[q].conj() * fi[p] + delta) * sji;
                }
            }

            // ⟨u_α|H|χ_i⟩ with α on branch j
            let mut osc = zero; // Σ_q ω_q f*_jq f_iq
            let mut cpl_c = zero; // Σ_q (γ_q/2) cos θ_q (f_iq + f*_jq)
            let mut cpl_s = zero;
            for (q, mode) in modes.iter().enumerate() {
                osc += mode.omega * fj[q].conj() * fi[q];
                let w = 0.5 * mode.gamma * (fi[q] + fj[q].conj());
                cpl_c += w * mode.theta.cos();
                cpl_s += w * mode.theta.sin();
            }
            h[lay.a(j)] += sji * (half_eps * ai + half_delta * bi + ai * osc + cpl_c * ai + cpl_s * bi);
            h[lay.b(j)] += sji * (-half_eps * bi + half_delta * ai + bi * osc - cpl_c * bi + cpl_s * ai);
            for p in 0..nm {
                let fip = fi[p];
                let mode_p = &modes[p];
                let mut v = half_eps * zz * fip + half_delta * xx * fip + nn * (mode_p.omega * fip + fip * osc);
                // (γ_q/2)(c zz + s xx)(δ_pq + f_ip (f_iq + f*_jq)), summed over q
                v += 0.5 * mode_p.gamma * (mode_p.theta.cos() * zz + mode_p.theta.sin() * xx);
                v += fip * (cpl_c * zz + cpl_s * xx);
                h[lay.f(j, p)] += sji * v;
            }
        }
    }
    (c, h)
}

fn real_tangents(state: &MultiD2State) -> Vec<RealTangent> {
    let m = state.multiplicity();
    let nm = state.n_modes();
    let lay = Layout { m, n: nm };
    let one = Complex64::new(1.0, 0.0);
    let zero = Complex64::default();
    let mut cols = Vec::with_capacity(2 * lay.n_complex());
    let simple = |idx: usize, coef: Complex64| RealTangent {
        terms: [(idx, coef), (0, zero), (0, zero)],
        len: 1,
    };
    for k in 0..m {
        cols.push(simple(lay.a(k), one));
        cols.push(simple(lay.a(k), I));
    }
    for k in 0..m {
        cols.push(simple(lay.b(k), one));
        cols.push(simple(lay.b(k), I));
    }
    for k in 0..m {
        let (ak, bk) = (state.a[k], state.b[k]);
        for q in 0..nm {
            let f = state.displacement(k, q);
            // ∂/∂Re f = (b† − Re f)|χ_k⟩, ∂/∂Im f = (i b† − Im f)|χ_k⟩
            cols.push(RealTangent {
                terms: [(lay.f(k, q), one), (lay.a(k), -f.re * ak), (lay.b(k), -f.re * bk)],
                len: 3,
            });
            cols.push(RealTangent {
                terms: [(lay.f(k, q), I), (lay.a(k), -f.im * ak), (lay.b(k), -f.im * bk)],
                len: 3,
            });
        }
    }
    cols
}

/// Builds the real-split variational system at time `t`.
pub fn assemble_tangent_system(state: &MultiD2State, params: &ModelParams, t: f64) -> Result<TangentSystem> {
    if state.n_modes() != params.n_modes() {
        return Err(Error::DimensionMismatch {
            expected: params.n_modes(),
            found: state.n_modes(),
        });
    }
    let s = overlap_matrix(state);
    let (c, h) = tangent_gram(state, params, t, &s);
    let nc = state.n_params();
    let cols = real_tangents(state);
    let dim = cols.len();

    let mut g = DMatrix::<f64>::zeros(dim, dim);
    let mut r = DVector::<f64>::zeros(dim);
    for (a, ta) in cols.iter().enumerate() {
        let mut acc_r = Complex64::default();
        for &(alpha, coef) in &ta.terms[..ta.len] {
            acc_r += coef.conj() * h[alpha];
        }
        r[a] = acc_r.im;
        for (b, tb) in cols.iter().enumerate().skip(a) {
            let mut acc = Complex64::default();
            for &(alpha, ca) in &ta.terms[..ta.len] {
                let row = &c[alpha * nc..(alpha + 1) * nc];
                let mut inner = Complex64::default();
                for &(beta, cb) in &tb.terms[..tb.len] {
                    inner += row[beta] * cb;
                }
                acc += ca.conj() * inner;
            }
            g[(a, b)] = acc.re;
            g[(b, a)] = acc.re;
        }
    }

    let diag = g.diagonal();
    let dmax = diag.max();
    let dmin = diag.min();
    let condition_estimate = if dmin > 0.0 { dmax / dmin } else { f64::INFINITY };
    Ok(TangentSystem {
        g,
        r,
        condition_estimate,
        t,
        multiplicity: state.multiplicity(),
        n_modes: state.n_modes(),
    })
}

/// Solves (G + λI)ẋ = r with λ = reg_epsilon·tr(G)/dim and repacks ẋ as a
/// derivative state (Ȧ, Ḃ, ḟ stored in the `a`, `b`, `f` fields).
pub fn solve_derivatives(sys: &TangentSystem, reg_epsilon: f64) -> Result<MultiD2State> {
    solve_derivatives_with(
        sys,
        &SolverOptions {
            reg_epsilon,
            ..SolverOptions::default()
        },
    )
}

pub fn solve_derivatives_with(sys: &TangentSystem, opts: &SolverOptions) -> Result<MultiD2State> {
    let dim = sys.dim();
    let lambda = opts.reg_epsilon * sys.g.trace() / dim as f64;
    let mut shifted = sys.g.clone();
    for k in 0..dim {
        shifted[(k, k)] += lambda;
    }

    let mut x = None;
    if sys.condition_estimate <= opts.cond_ceiling {
        if let Some(chol) = shifted.clone().cholesky() {
            let l = chol.l_dirty();
            let (mut lmax, mut lmin) = (0.0f64, f64::INFINITY);
            for k in 0..dim {
                let d = l[(k, k)].abs();
                lmax = lmax.max(d);
                lmin = lmin.min(d);
            }
            let cond = (lmax / lmin).powi(2);
            if cond.is_finite() && cond <= opts.cond_ceiling {
                x = Some(chol.solve(&sys.r));
            }
        }
    }
    let x = match x {
        Some(x) => x,
        None => svd_solve(shifted, &sys.r, lambda)?,
    };
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite {
            t: sys.t,
            detail: format!("derivative solve produced non-finite values (cond ≈ {:e})", sys.condition_estimate),
        });
    }
    Ok(unpack(&x, sys.multiplicity, sys.n_modes))
}

fn svd_solve(mat: DMatrix<f64>, r: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    let dim = r.len();
    let svd = mat.svd(true, true);
    let smax = svd.singular_values.max();
    let cutoff = lambda.max(smax * dim as f64 * f64::EPSILON);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => {
            return Err(Error::Degenerate("SVD did not converge".into()));
        }
    };
    let ut_r = u.transpose() * r;
    let mut y = DVector::<f64>::zeros(dim);
    for k in 0..dim {
        let sk = svd.singular_values[k];
        if sk > cutoff {
            y[k] = ut_r[k] / sk;
        }
    }
    Ok(vt.transpose() * y)
}

fn unpack(x: &DVector<f64>, m: usize, nm: usize) -> MultiD2State {
    let lay = Layout { m, n: nm };
    let z = |beta: usize| Complex64::new(x[2 * beta], x[2 * beta + 1]);
    let mut d = MultiD2State::zeros(m, nm);
    for k in 0..m {
        d.a[k] = z(lay.a(k));
        d.b[k] = z(lay.b(k));
        for q in 0..nm {
            d.f[k * nm + q] = z(lay.f(k, q));
        }
    }
    d
}

/// Parameter derivatives of `state` at time `t`.
pub fn derivatives(state: &MultiD2State, params: &ModelParams, t: f64, opts: &SolverOptions) -> Result<MultiD2State> {
    let sys = assemble_tangent_system(state, params, t)?;
    solve_derivatives_with(&sys, opts)
}

fn axpy(y: &MultiD2State, h: f64, d: &MultiD2State) -> MultiD2State {
    let mut out = y.clone();
    let add = |dst: &mut [Complex64], src: &[Complex64]| {
        for (a, b) in dst.iter_mut().zip(src) {
            *a += b * h;
        }
    };
    add(&mut out.a, &d.a);
    add(&mut out.b, &d.b);
    add(&mut out.f, &d.f);
    out
}

/// One classical fourth-order Runge-Kutta step. A negative `dt` steps backwards.
pub fn rk4_step(state: &MultiD2State, params: &ModelParams, t: f64, dt: f64) -> Result<MultiD2State> {
    rk4_step_with(state, params, t, dt, &SolverOptions::default())
}

pub fn rk4_step_with(state: &MultiD2State, params: &ModelParams, t: f64, dt: f64, opts: &SolverOptions) -> Result<MultiD2State> {
    if !(dt.is_finite() && dt != 0.0) {
        return Err(Error::InvalidParameter(format!("step must be finite and non-zero, got {dt}")));
    }
    let k1 = derivatives(state, params, t, opts)?;
    let k2 = derivatives(&axpy(state, 0.5 * dt, &k1), params, t + 0.5 * dt, opts)?;
    let k3 = derivatives(&axpy(state, 0.5 * dt, &k2), params, t + 0.5 * dt, opts)?;
    let k4 = derivatives(&axpy(state, dt, &k3), params, t + dt, opts)?;
    let mut next = state.clone();
    let w = dt / 6.0;
    let combine = |dst: &mut [Complex64], a: &[Complex64], b: &[Complex64], c: &[Complex64], d: &[Complex64]| {
        for (i, y) in dst.iter_mut().enumerate() {
            *y += (a[i] + 2.0 * b[i] + 2.0 * c[i] + d[i]) * w;
        }
    };
    combine(&mut next.a, &k1.a, &k2.a, &k3.a, &k4.a);
    combine(&mut next.b, &k1.b, &k2.b, &k3.b, &k4.b);
    combine(&mut next.f, &k1.f, &k2.f, &k3.f, &k4.f);
    if !next.is_finite() {
        return Err(Error::NonFinite {
            t: t + dt,
            detail: "state became non-finite".into(),
        });
    }
    Ok(next)
}

/// RK4 step that is split into two half steps (recursively, up to
/// `max_depth` times) whenever the relative norm change exceeds `guard`.
///
/// The exact variational flow conserves the norm, so its change over a step
/// is a free error indicator; it flags the short episodes in which weakly
/// populated branches move fast and the fixed step is too coarse.
pub fn guarded_step(
    state: &MultiD2State,
    params: &ModelParams,
    t: f64,
    dt: f64,
    opts: &SolverOptions,
    guard: f64,
    max_depth: u32,
) -> Result<(MultiD2State, u32)> {
    let next = rk4_step_with(state, params, t, dt, opts)?;
    if guard <= 0.0 || max_depth == 0 {
        return Ok((next, 0));
    }
    let n0 = norm_squared(state);
    let n1 = norm_squared(&next);
    if (n1 - n0).abs() <= guard * n0 {
        return Ok((next, 0));
    }
    let (mid, s1) = guarded_step(state, params, t, 0.5 * dt, opts, guard, max_depth - 1)?;
    let (end, s2) = guarded_step(&mid, params, t + 0.5 * dt, 0.5 * dt, opts, guard, max_depth - 1)?;
    Ok((end, 1 + s1 + s2))
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub records: Vec<TrajectoryRecord>,
    pub final_state: MultiD2State,
    pub final_t: f64,
    /// Number of step splits performed by the norm guard.
    pub splits: u64,
}

/// Partial trajectory returned when integration hits a non-finite derivative.
#[derive(Debug)]
pub struct Aborted {
    pub partial: Trajectory,
    pub error: Error,
}

impl std::fmt::Display for Aborted {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "integration aborted at t = {} after {} records: {}",
            self.partial.final_t,
            self.partial.records.len(),
            self.error
        )
    }
}

impl std::error::Error for Aborted {}

/// Marches from t0 to t1 with fixed RK4 steps, recording observables every
/// `record_stride` steps and always at t1.
pub fn integrate(initial: &MultiD2State, params: &ModelParams, cfg: &IntegratorConfig) -> std::result::Result<Trajectory, Aborted> {
    let bail = |error: Error, state: &MultiD2State, t: f64, records: Vec<TrajectoryRecord>| Aborted {
        partial: Trajectory {
            records,
            final_state: state.clone(),
            final_t: t,
            splits: 0,
        },
        error,
    };
    if let Err(e) = cfg.validate().and_then(|_| params.validate()) {
        return Err(bail(e, initial, cfg.t0, Vec::new()));
    }
    let n_steps = cfg.n_steps();
    let dt = (cfg.t1 - cfg.t0) / n_steps as f64;
    let opts = SolverOptions {
        reg_epsilon: cfg.reg_epsilon,
        ..SolverOptions::default()
    };
    let mut records = Vec::with_capacity(n_steps / cfg.record_stride + 2);
    let mut state = initial.clone();
    let mut t = cfg.t0;
    match record(&state, params, t, cfg.n_report) {
        Ok(r) => records.push(r),
        Err(e) => return Err(bail(e, &state, t, records)),
    }
    let mut splits = 0u64;
    for step in 1..=n_steps {
        match guarded_step(&state, params, t, dt, &opts, cfg.norm_guard, cfg.max_bisections) {
            Ok((next, n)) => {
                state = next;
                splits += n as u64;
            }
            Err(e) => {
                log::error!("trajectory aborted at t = {t}: {e}");
                return Err(bail(e, &state, t, records));
            }
        }
        t = if step == n_steps { cfg.t1 } else { cfg.t0 + step as f64 * dt };
        if step % cfg.record_stride == 0 || step == n_steps {
            match record(&state, params, t, cfg.n_report) {
                Ok(r) => records.push(r),
                Err(e) => return Err(bail(e, &state, t, records)),
            }
        }
    }
    if splits > 0 {
        log::debug!("norm guard split {splits} steps");
    }
    Ok(Trajectory {
        records,
        final_state: state,
        final_t: t,
        splits,
    })
}

/// Residuals LHS − RHS of the variational equations of motion, written out
/// family by family (A-equations for every k, then B, then f for every k, q),
/// evaluated at the candidate derivative `d`.
pub fn eom_residual(state: &MultiD2State, params: &ModelParams, t: f64, d: &MultiD2State) -> Vec<Complex64> {
    let m = state.multiplicity();
    let nm = state.n_modes();
    let s = overlap_matrix(state);
    let (a, b) = (&state.a, &state.b);
    let f = |i: usize, q: usize| state.displacement(i, q);
    let df = |i: usize, q: usize| d.displacement(i, q);
    let half_eps = 0.5 * params.bias(t);
    let half_delta = 0.5 * params.delta;
    let modes = &params.modes;
    let (cos, sin): (Vec<f64>, Vec<f64>) = modes.iter().map(|md| (md.theta.cos(), md.theta.sin())).unzip();

    // Σ_q [−(ḟ_iq f*_iq + f_iq ḟ*_iq) + 2 f*_kq ḟ_iq]
    let kinetic = |k: usize, i: usize| -> Complex64 {
        (0..nm)
            .map(|q| -(df(i, q) * f(i, q).conj() + f(i, q) * df(i, q).conj()) + 2.0 * f(k, q).conj() * df(i, q))
            .sum()
    };
    let osc = |k: usize, i: usize| -> Complex64 { (0..nm).map(|q| modes[q].omega * f(k, q).conj() * f(i, q)).sum() };
    let cpl = |k: usize, i: usize, trig: &[f64]| -> Complex64 {
        (0..nm).map(|q| modes[q].gamma * trig[q] * (f(i, q) + f(k, q).conj())).sum()
    };

    let mut out = Vec::with_capacity(state.n_params());
    for k in 0..m {
        let mut lhs = Complex64::default();
        let mut rhs = Complex64::default();
        for i in 0..m {
            let ski = s[k * m + i];
            lhs += -I * d.a[i] * ski - 0.5 * I * a[i] * kinetic(k, i) * ski;
            rhs += -half_eps * a[i] * ski - half_delta * b[i] * ski - a[i] * osc(k, i) * ski
                - 0.5 * a[i] * cpl(k, i, &cos) * ski
                - 0.5 * b[i] * cpl(k, i, &sin) * ski;
        }
        out.push(lhs - rhs);
    }
    for k in 0..m {
        let mut lhs = Complex64::default();
        let mut rhs = Complex64::default();
        for i in 0..m {
            let ski = s[k * m + i];
            lhs += -I * d.b[i] * ski - 0.5 * I * b[i] * kinetic(k, i) * ski;
            rhs += half_eps * b[i] * ski - half_delta * a[i] * ski - b[i] * osc(k, i) * ski
                + 0.5 * b[i] * cpl(k, i, &cos) * ski
                - 0.5 * a[i] * cpl(k, i, &sin) * ski;
        }
        out.push(lhs - rhs);
    }
    for k in 0..m {
        for q in 0..nm {
            let mut lhs = Complex64::default();
            let mut rhs = Complex64::default();
            for i in 0..m {
                let ski = s[k * m + i];
                let nn = a[k].conj() * a[i] + b[k].conj() * b[i];
                let zz = a[k].conj() * a[i] - b[k].conj() * b[i];
                let xx = a[k].conj() * b[i] + b[k].conj() * a[i];
                let dn = a[k].conj() * d.a[i] + b[k].conj() * d.b[i];
                let fiq = f(i, q);
                let kin: Complex64 = (0..nm)
                    .map(|p| 2.0 * f(k, p).conj() * df(i, p) - df(i, p) * f(i, p).conj() - f(i, p) * df(i, p).conj())
                    .sum();
                lhs += -I * (dn * fiq + nn * df(i, q)) * ski - 0.5 * I * nn * fiq * ski * kin;
                let (gq, cq, sq) = (modes[q].gamma, cos[q], sin[q]);
                rhs += -half_eps * zz * fiq * ski - half_delta * xx * fiq * ski
                    - nn * (modes[q].omega + osc(k, i)) * fiq * ski
                    - 0.5 * zz * gq * cq * ski
                    - 0.5 * zz * fiq * cpl(k, i, &cos) * ski
                    - 0.5 * xx * gq * sq * ski
                    - 0.5 * xx * fiq * cpl(k, i, &sin) * ski;
            }
            out.push(lhs - rhs);
        }
    }
    out
}
