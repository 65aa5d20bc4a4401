//! Spectral diagnostics for neural-network weights.
//!
//! - [`tensor_store`]: F32 tensor containers and checkpoint manifests
//! - [`spectrum`]: per-kernel DFT, power spectra and exact radial profiles
//! - [`metrics`]: band energies, Spectral Suppression Ratio, trajectories
//! - [`freq_lab`]: the synthetic sinusoid-fitting experiment
//! - [`perturb`]: noise and resolution-loss operators
//! - [`cli`]: the `speclens` command surface

pub mod cli;
pub mod error;
pub mod freq_lab;
pub mod metrics;
pub mod perturb;
pub mod spectrum;
pub mod tensor_store;

pub use error::{Error, Result};
