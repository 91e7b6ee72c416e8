//! The multiple Davydov D₂ trial state
//!
//! |D₂ᴹ⟩ = Σᵢ (Aᵢ|↑⟩ + Bᵢ|↓⟩) ⊗ |fᵢ⟩,  |fᵢ⟩ = exp(Σ_q f_iq b_q† − h.c.)|0⟩,
//!
//! together with its coherent-state overlap algebra, the vacuum and
//! Schrödinger-cat initializations, and projections onto |n, σ⟩.

use std::fmt::Write as _;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Spin;

/// Smallest cat normalization N_θ² accepted by [`init_cat`].
pub const CAT_NORM_FLOOR: f64 = 1e-12;

/// Orders above which coherent-state Fock coefficients are evaluated in log space.
const LOG_SPACE_ORDER: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct MultiD2State {
    multiplicity: usize,
    n_modes: usize,
    /// Up-state amplitudes Aᵢ.
    pub a: Vec<Complex64>,
    /// Down-state amplitudes Bᵢ.
    pub b: Vec<Complex64>,
    /// Displacements, row-major: f[i * n_modes + q].
    pub f: Vec<Complex64>,
}

impl MultiD2State {
    pub fn zeros(multiplicity: usize, n_modes: usize) -> Self {
        let zero = Complex64::default();
        MultiD2State {
            multiplicity,
            n_modes,
            a: vec![zero; multiplicity],
            b: vec![zero; multiplicity],
            f: vec![zero; multiplicity * n_modes],
        }
    }

    /// Builds a state from explicit arrays; `f` is row-major (branch, mode).
    pub fn from_parts(a: Vec<Complex64>, b: Vec<Complex64>, f: Vec<Complex64>, n_modes: usize) -> Result<Self> {
        let m = a.len();
        if b.len() != m {
            return Err(Error::DimensionMismatch { expected: m, found: b.len() });
        }
        if n_modes == 0 || f.len() != m * n_modes {
            return Err(Error::DimensionMismatch {
                expected: m * n_modes,
                found: f.len(),
            });
        }
        Ok(MultiD2State {
            multiplicity: m,
            n_modes,
            a,
            b,
            f,
        })
    }

    pub fn multiplicity(&self) -> usize {
        self.multiplicity
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    /// Number of complex variational parameters, 2M + M·N.
    pub fn n_params(&self) -> usize {
        self.multiplicity * (2 + self.n_modes)
    }

    pub fn displacements(&self, i: usize) -> &[Complex64] {
        &self.f[i * self.n_modes..(i + 1) * self.n_modes]
    }

    pub fn displacement(&self, i: usize, q: usize) -> Complex64 {
        self.f[i * self.n_modes + q]
    }

    pub fn is_finite(&self) -> bool {
        self.a
            .iter()
            .chain(&self.b)
            .chain(&self.f)
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Multiplies every amplitude by `s`.
    pub fn scale_amplitudes(&mut self, s: f64) {
        for z in self.a.iter_mut().chain(self.b.iter_mut()) {
            *z *= s;
        }
    }

    /// Rescales the amplitudes so that ⟨D₂ᴹ|D₂ᴹ⟩ = 1.
    pub fn normalize(&mut self) -> Result<()> {
        let n2 = norm_squared(self);
        if !(n2.is_finite() && n2 > 0.0) {
            return Err(Error::Degenerate(format!("cannot normalize state with norm² = {n2}")));
        }
        self.scale_amplitudes(1.0 / n2.sqrt());
        Ok(())
    }

    /// Plain-text snapshot: a header `M=<m> N=<n> t=<t>` followed by one
    /// line per branch with Re/Im of Aᵢ, Bᵢ and then f_iq for every mode.
    pub fn to_snapshot(&self, t: f64) -> String {
        let mut s = format!("M={} N={} t={:e}\n", self.multiplicity, self.n_modes, t);
        for i in 0..self.multiplicity {
            let mut fields = vec![self.a[i].re, self.a[i].im, self.b[i].re, self.b[i].im];
            for z in self.displacements(i) {
                fields.push(z.re);
                fields.push(z.im);
            }
            let line: Vec<String> = fields.iter().map(|x| format!("{x:e}")).collect();
            let _ = writeln!(s, "{}", line.join(" "));
        }
        s
    }

    /// Inverse of [`MultiD2State::to_snapshot`]; returns the state and its time stamp.
    pub fn from_snapshot(text: &str) -> Result<(Self, f64)> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Snapshot("missing header".into()))?;
        let (mut m, mut n, mut t) = (None, None, None);
        for tok in header.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| Error::Snapshot(format!("bad header token {tok:?}")))?;
            let bad = |_| Error::Snapshot(format!("bad header value {tok:?}"));
            match k {
                "M" => m = Some(v.parse::<usize>().map_err(|e| bad(e.to_string()))?),
                "N" => n = Some(v.parse::<usize>().map_err(|e| bad(e.to_string()))?),
                "t" => t = Some(v.parse::<f64>().map_err(|e| bad(e.to_string()))?),
                _ => return Err(Error::Snapshot(format!("unknown header key {k:?}"))),
            }
        }
        let (m, n, t) = match (m, n, t) {
            (Some(m), Some(n), Some(t)) => (m, n, t),
            _ => return Err(Error::Snapshot("header must give M, N and t".into())),
        };
        let mut state = MultiD2State::zeros(m, n);
        for i in 0..m {
            let line = lines
                .next()
                .ok_or_else(|| Error::Snapshot(format!("missing branch line {i}")))?;
            let vals = line
                .split_whitespace()
                .map(|x| x.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Snapshot(e.to_string()))?;
            if vals.len() != 4 + 2 * n {
                return Err(Error::Snapshot(format!(
                    "branch {i}: expected {} values, found {}",
                    4 + 2 * n,
                    vals.len()
                )));
            }
            state.a[i] = Complex64::new(vals[0], vals[1]);
            state.b[i] = Complex64::new(vals[2], vals[3]);
            for q in 0..n {
                state.f[i * n + q] = Complex64::new(vals[4 + 2 * q], vals[5 + 2 * q]);
            }
        }
        if lines.next().is_some() {
            return Err(Error::Snapshot("trailing data after last branch".into()));
        }
        Ok((state, t))
    }
}

/// Schrödinger-cat photon state (|α⟩ + e^{iθ}|−α⟩)/N_θ.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatSpec {
    pub alpha: Complex64,
    pub theta: f64,
}

impl CatSpec {
    pub fn real(alpha: f64, theta: f64) -> Self {
        CatSpec {
            alpha: Complex64::new(alpha, 0.0),
            theta,
        }
    }

    /// N_θ² = 2(1 + e^{−2|α|²} cos θ)
    pub fn normalization_sq(&self) -> f64 {
        2.0 * (1.0 + (-2.0 * self.alpha.norm_sqr()).exp() * self.theta.cos())
    }
}

/// Random perturbation added to the auxiliary branches of an initial state.
///
/// Amplitudes receive uniform noise in [−amplitude, amplitude], displacements in
/// [−displacement, displacement]. With `complex` set, real and imaginary parts
/// are drawn independently; otherwise only the real part is perturbed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JitterSpec {
    pub amplitude: f64,
    pub displacement: f64,
    pub complex: bool,
}

impl Default for JitterSpec {
    fn default() -> Self {
        JitterSpec {
            amplitude: 1e-4,
            displacement: 1e-2,
            complex: true,
        }
    }
}

impl JitterSpec {
    pub fn off() -> Self {
        JitterSpec {
            amplitude: 0.0,
            displacement: 0.0,
            complex: true,
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng, scale: f64) -> Complex64 {
        if scale == 0.0 {
            return Complex64::default();
        }
        let re = rng.random_range(-scale..=scale);
        let im = if self.complex { rng.random_range(-scale..=scale) } else { 0.0 };
        Complex64::new(re, im)
    }
}

/// S_ji = exp Σ_q [ −(|f_jq|² + |f_iq|²)/2 + f*_jq f_iq ]
pub fn debye_waller(f_j: &[Complex64], f_i: &[Complex64]) -> Result<Complex64> {
    if f_j.len() != f_i.len() {
        return Err(Error::DimensionMismatch {
            expected: f_j.len(),
            found: f_i.len(),
        });
    }
    Ok(dw_unchecked(f_j, f_i))
}

#[inline]
pub(crate) fn dw_unchecked(f_j: &[Complex64], f_i: &[Complex64]) -> Complex64 {
    let mut e = Complex64::default();
    for (fj, fi) in f_j.iter().zip(f_i) {
        e += -0.5 * (fj.norm_sqr() + fi.norm_sqr()) + fj.conj() * fi;
    }
    e.exp()
}

/// All pairwise overlaps, row-major: `s[j * m + i] = S_ji`.
pub fn overlap_matrix(state: &MultiD2State) -> Vec<Complex64> {
    let m = state.multiplicity();
    let mut s = vec![Complex64::default(); m * m];
    for j in 0..m {
        s[j * m + j] = Complex64::new(1.0, 0.0);
        for i in (j + 1)..m {
            let v = dw_unchecked(state.displacements(j), state.displacements(i));
            s[j * m + i] = v;
            s[i * m + j] = v.conj();
        }
    }
    s
}

/// ⟨D₂ᴹ|D₂ᴹ⟩ = Σ_ij (A*_j A_i + B*_j B_i) S_ji
pub fn norm_squared(state: &MultiD2State) -> f64 {
    let s = overlap_matrix(state);
    norm_squared_with(state, &s)
}

pub(crate) fn norm_squared_with(state: &MultiD2State, s: &[Complex64]) -> f64 {
    let m = state.multiplicity();
    let mut acc = 0.0;
    for j in 0..m {
        for i in 0..m {
            let w = state.a[j].conj() * state.a[i] + state.b[j].conj() * state.b[i];
            acc += (w * s[j * m + i]).re;
        }
    }
    acc
}

/// Cat-state initialization.
///
/// Branch 1 carries amplitude 1 at +α, branch 2 carries e^{iθ} at −α; the
/// remaining branches alternate between ±α plus displacement jitter and hold
/// small random amplitudes. The result is normalized.
pub fn init_cat(spec: &CatSpec, multiplicity: usize, jitter: &JitterSpec, seed: u64) -> Result<MultiD2State> {
    if multiplicity < 2 || multiplicity % 2 != 0 {
        return Err(Error::InvalidParameter(format!(
            "cat initialization needs an even multiplicity >= 2, got {multiplicity}"
        )));
    }
    let n2 = spec.normalization_sq();
    if !(n2 > CAT_NORM_FLOOR) {
        return Err(Error::DegenerateNormalization(n2));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut st = MultiD2State::zeros(multiplicity, 1);
    st.a[0] = Complex64::new(1.0, 0.0);
    st.a[1] = Complex64::from_polar(1.0, spec.theta);
    for i in 0..multiplicity {
        st.f[i] = if i % 2 == 0 { spec.alpha } else { -spec.alpha };
    }
    for i in 2..multiplicity {
        st.a[i] = jitter.draw(&mut rng, jitter.amplitude);
        st.b[i] = jitter.draw(&mut rng, jitter.amplitude);
        st.f[i] += jitter.draw(&mut rng, jitter.displacement);
    }
    st.normalize()?;
    Ok(st)
}

/// Photon vacuum with the qubit up: A₁ = 1, f₁ = 0, all other branches jitter only.
pub fn init_vacuum(multiplicity: usize, jitter: &JitterSpec, seed: u64) -> Result<MultiD2State> {
    init_vacuum_modes(multiplicity, 1, jitter, seed)
}

/// [`init_vacuum`] for an N-mode bath.
pub fn init_vacuum_modes(multiplicity: usize, n_modes: usize, jitter: &JitterSpec, seed: u64) -> Result<MultiD2State> {
    if multiplicity == 0 || n_modes == 0 {
        return Err(Error::InvalidParameter("multiplicity and mode count must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut st = MultiD2State::zeros(multiplicity, n_modes);
    st.a[0] = Complex64::new(1.0, 0.0);
    for i in 1..multiplicity {
        st.a[i] = jitter.draw(&mut rng, jitter.amplitude);
        st.b[i] = jitter.draw(&mut rng, jitter.amplitude);
        for q in 0..n_modes {
            st.f[i * n_modes + q] = jitter.draw(&mut rng, jitter.displacement);
        }
    }
    st.normalize()?;
    Ok(st)
}

/// ⟨n|f⟩ = e^{−|f|²/2} fⁿ/√(n!)
pub fn coherent_coefficient(f: Complex64, n: usize) -> Complex64 {
    let r2 = f.norm_sqr();
    if n == 0 {
        return Complex64::new((-0.5 * r2).exp(), 0.0);
    }
    if r2 == 0.0 {
        return Complex64::default();
    }
    if n <= LOG_SPACE_ORDER {
        let fact: f64 = (1..=n).map(|k| k as f64).product();
        f.powu(n as u32) * ((-0.5 * r2).exp() / fact.sqrt())
    } else {
        let ln_fact: f64 = (1..=n).map(|k| (k as f64).ln()).sum();
        let ln_mag = -0.5 * r2 + n as f64 * f.norm().ln() - 0.5 * ln_fact;
        Complex64::from_polar(ln_mag.exp(), n as f64 * f.arg())
    }
}

fn require_single_mode(state: &MultiD2State) -> Result<()> {
    if state.n_modes() != 1 {
        return Err(Error::MultiMode(state.n_modes()));
    }
    Ok(())
}

/// ⟨n, σ|D₂ᴹ⟩ for a single-mode state.
pub fn fock_amplitude(state: &MultiD2State, n: usize, spin: Spin) -> Result<Complex64> {
    require_single_mode(state)?;
    let amps = match spin {
        Spin::Up => &state.a,
        Spin::Down => &state.b,
    };
    Ok(amps
        .iter()
        .zip(&state.f)
        .map(|(c, &f)| c * coherent_coefficient(f, n))
        .sum())
}

/// Projection onto the truncated Fock basis |0,↑⟩, |0,↓⟩, …, |n_trunc,↓⟩.
pub fn to_fock_vector(state: &MultiD2State, n_trunc: usize) -> Result<Vec<Complex64>> {
    require_single_mode(state)?;
    let mut v = Vec::with_capacity(2 * (n_trunc + 1));
    for n in 0..=n_trunc {
        v.push(fock_amplitude(state, n, Spin::Up)?);
        v.push(fock_amplitude(state, n, Spin::Down)?);
    }
    Ok(v)
}
