//! Variational and exact simulation of Landau-Zener-Stückelberg-Majorana
//! transitions of a qubit coupled to a quantized photon mode.
//!
//! The variational side propagates a multiple Davydov D₂ state; the exact
//! side diagonalizes the Hamiltonian in a truncated Fock basis.

pub mod analytics;
pub mod ansatz;
pub mod dynamics;
pub mod error;
pub mod interferometer;
pub mod model;
pub mod observables;
pub mod scenario;
pub mod signal;
pub mod spectrum;

pub use ansatz::{init_cat, init_vacuum, CatSpec, JitterSpec, MultiD2State};
pub use dynamics::{integrate, IntegratorConfig, Trajectory};
pub use error::{Error, Result};
pub use model::{DriveProtocol, ModeSpec, ModelParams, Spin};
pub use observables::TrajectoryRecord;
