//! Physical model: the driven qubit, its bias protocol and the bosonic modes
//! it couples to, plus the truncated Fock-basis Hamiltonian used by the
//! exact-diagonalization oracle.
//!
//! Units follow ħ = 1 and (by convention) ω = 1 for the photon mode, so
//! energies are in ω, times in ω⁻¹ and sweep speeds in ω².

use std::f64::consts::FRAC_PI_2;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Time-dependent qubit bias ε(t).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum DriveProtocol {
    /// ε(t) = v·t
    Linear { v: f64 },
    /// ε(t) = ε₀ + A·sin(Ωt + φ₀)
    Sinusoidal {
        eps0: f64,
        amplitude: f64,
        omega: f64,
        phi0: f64,
    },
}

impl DriveProtocol {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DriveProtocol::Linear { v } => {
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::InvalidParameter(format!("sweep speed must be > 0, got {v}")));
                }
            }
            DriveProtocol::Sinusoidal {
                eps0,
                amplitude,
                omega,
                phi0,
            } => {
                if !(omega.is_finite() && omega > 0.0) {
                    return Err(Error::InvalidParameter(format!("drive frequency must be > 0, got {omega}")));
                }
                if !(amplitude.is_finite() && amplitude >= 0.0) {
                    return Err(Error::InvalidParameter(format!("drive amplitude must be >= 0, got {amplitude}")));
                }
                if !(eps0.is_finite() && phi0.is_finite()) {
                    return Err(Error::InvalidParameter("non-finite drive parameter".into()));
                }
            }
        }
        Ok(())
    }

    /// Time derivative dε/dt.
    pub fn rate_at(&self, t: f64) -> f64 {
        match *self {
            DriveProtocol::Linear { v } => v,
            DriveProtocol::Sinusoidal {
                amplitude,
                omega,
                phi0,
                ..
            } => amplitude * omega * (omega * t + phi0).cos(),
        }
    }

    /// Drive period 2π/Ω for sinusoidal protocols.
    pub fn period(&self) -> Option<f64> {
        match *self {
            DriveProtocol::Linear { .. } => None,
            DriveProtocol::Sinusoidal { omega, .. } => Some(std::f64::consts::TAU / omega),
        }
    }
}

pub fn bias_at(drive: &DriveProtocol, t: f64) -> f64 {
    match *drive {
        DriveProtocol::Linear { v } => v * t,
        DriveProtocol::Sinusoidal {
            eps0,
            amplitude,
            omega,
            phi0,
        } => eps0 + amplitude * (omega * t + phi0).sin(),
    }
}

/// One bosonic mode: frequency ω_q, coupling γ_q and interaction angle θ_q.
///
/// The coupling term is (γ_q/2)(cos θ_q σ_z + sin θ_q σ_x)(b_q† + b_q).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeSpec {
    pub omega: f64,
    pub gamma: f64,
    pub theta: f64,
}

impl ModeSpec {
    /// Purely off-diagonal (σ_x) coupling, θ = π/2.
    pub fn off_diagonal(omega: f64, gamma: f64) -> Self {
        ModeSpec {
            omega,
            gamma,
            theta: FRAC_PI_2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Tunneling strength Δ.
    pub delta: f64,
    pub drive: DriveProtocol,
    pub modes: Vec<ModeSpec>,
}

impl ModelParams {
    /// Single photon mode with ω = 1, θ_c = π/2 and Δ = 0.
    pub fn single_mode(drive: DriveProtocol, gamma: f64) -> Self {
        ModelParams {
            delta: 0.0,
            drive,
            modes: vec![ModeSpec::off_diagonal(1.0, gamma)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.drive.validate()?;
        if self.modes.is_empty() {
            return Err(Error::InvalidParameter("at least one bath mode is required".into()));
        }
        if !self.delta.is_finite() {
            return Err(Error::InvalidParameter("non-finite tunneling strength".into()));
        }
        for (q, m) in self.modes.iter().enumerate() {
            if !(m.omega.is_finite() && m.omega > 0.0) {
                return Err(Error::InvalidParameter(format!("mode {q}: frequency must be > 0")));
            }
            if !(m.gamma.is_finite() && m.gamma >= 0.0) {
                return Err(Error::InvalidParameter(format!("mode {q}: coupling must be >= 0")));
            }
            if !m.theta.is_finite() {
                return Err(Error::InvalidParameter(format!("mode {q}: non-finite angle")));
            }
        }
        Ok(())
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn bias(&self, t: f64) -> f64 {
        bias_at(&self.drive, t)
    }

    fn single(&self) -> Result<&ModeSpec> {
        match self.modes.as_slice() {
            [m] => Ok(m),
            _ => Err(Error::MultiMode(self.modes.len())),
        }
    }
}

/// Qubit diabatic state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Spin {
    Up,
    Down,
}

impl Spin {
    /// σ_z eigenvalue.
    pub fn sign(self) -> f64 {
        match self {
            Spin::Up => 1.0,
            Spin::Down => -1.0,
        }
    }

    pub fn flip(self) -> Spin {
        match self {
            Spin::Up => Spin::Down,
            Spin::Down => Spin::Up,
        }
    }
}

/// Product basis state |n, σ⟩.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FockLabel {
    pub n: usize,
    pub spin: Spin,
}

impl FockLabel {
    pub fn new(n: usize, spin: Spin) -> Self {
        FockLabel { n, spin }
    }

    pub fn index(self) -> usize {
        fock_index(self.n, self.spin)
    }

    pub fn from_index(i: usize) -> Self {
        let spin = if i % 2 == 0 { Spin::Up } else { Spin::Down };
        FockLabel { n: i / 2, spin }
    }
}

impl std::fmt::Display for FockLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let arrow = match self.spin {
            Spin::Up => "up",
            Spin::Down => "down",
        };
        write!(f, "|{},{}>", self.n, arrow)
    }
}

/// Position of |n, σ⟩ in the interleaved basis |0,↑⟩, |0,↓⟩, |1,↑⟩, …
pub fn fock_index(n: usize, spin: Spin) -> usize {
    2 * n
        + match spin {
            Spin::Up => 0,
            Spin::Down => 1,
        }
}

/// Sparse real-symmetric Hamiltonian in the truncated single-mode Fock basis.
///
/// Only the upper triangle of the off-diagonal part is stored.
#[derive(Clone, Debug)]
pub struct FockOperator {
    pub diag: Vec<f64>,
    pub off: Vec<(usize, usize, f64)>,
}

impl FockOperator {
    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    /// out = H·v
    pub fn apply(&self, v: &[Complex64], out: &mut [Complex64]) {
        for ((o, &d), &x) in out.iter_mut().zip(&self.diag).zip(v) {
            *o = x * d;
        }
        for &(i, j, h) in &self.off {
            out[i] += v[j] * h;
            out[j] += v[i] * h;
        }
    }

    /// Upper bound on the operator 1-norm (max absolute row sum).
    pub fn norm1_bound(&self) -> f64 {
        let mut rows: Vec<f64> = self.diag.iter().map(|d| d.abs()).collect();
        for &(i, j, h) in &self.off {
            rows[i] += h.abs();
            rows[j] += h.abs();
        }
        rows.into_iter().fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&self.diag));
        for &(i, j, h) in &self.off {
            m[(i, j)] += h;
            m[(j, i)] += h;
        }
        debug_assert_eq!(m.nrows(), n);
        m
    }
}

/// Sparse form of [`build_fock_hamiltonian`].
pub fn fock_operator(params: &ModelParams, t: f64, n_trunc: usize) -> Result<FockOperator> {
    let mode = params.single()?;
    let eps = params.bias(t);
    let dim = 2 * (n_trunc + 1);
    let (c, s) = (mode.theta.cos(), mode.theta.sin());
    let half_g = 0.5 * mode.gamma;

    let mut diag = vec![0.0; dim];
    let mut off = Vec::with_capacity(4 * (n_trunc + 1));
    for n in 0..=n_trunc {
        let up = fock_index(n, Spin::Up);
        let dn = fock_index(n, Spin::Down);
        diag[up] = n as f64 * mode.omega + 0.5 * eps;
        diag[dn] = n as f64 * mode.omega - 0.5 * eps;
        if params.delta != 0.0 {
            off.push((up, dn, 0.5 * params.delta));
        }
        if n < n_trunc {
            let root = ((n + 1) as f64).sqrt();
            let up1 = fock_index(n + 1, Spin::Up);
            let dn1 = fock_index(n + 1, Spin::Down);
            // σ_z (b† + b)
            if half_g * c != 0.0 {
                off.push((up, up1, half_g * c * root));
                off.push((dn, dn1, -half_g * c * root));
            }
            // σ_x (b† + b)
            if half_g * s != 0.0 {
                off.push((up, dn1, half_g * s * root));
                off.push((dn, up1, half_g * s * root));
            }
        }
    }
    Ok(FockOperator { diag, off })
}

/// Dense Hamiltonian of a single-mode model in the basis
/// |0,↑⟩, |0,↓⟩, …, |n_trunc,↑⟩, |n_trunc,↓⟩.
///
/// With real parameters the matrix is real symmetric.
pub fn build_fock_hamiltonian(params: &ModelParams, t: f64, n_trunc: usize) -> Result<DMatrix<f64>> {
    Ok(fock_operator(params, t, n_trunc)?.to_dense())
}
