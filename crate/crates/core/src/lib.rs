//! Simulation and optimization toolkit for doubly-dispersive channels whose
//! path gains are tuned by stacked intelligent metasurfaces (SIMs) at the
//! transmitter and receiver.
//!
//! The crate is organised bottom-up:
//!
//! - [`config`]: scenario files, unit conversion and seeded RNG streams
//! - [`waveform`]: OFDM / OTFS / AFDM effective path matrices and a
//!   time-domain reference simulator
//! - [`metasurface`]: diffraction operators, transfer functions, correlation
//!   matrices and steering vectors of a SIM stack
//! - [`channel`]: metasurface-parametrized path gains and the end-to-end
//!   channel matrix
//! - [`optimizer`]: greedy min-max phase optimization by normalized
//!   steepest ascent
//! - [`pda`]: delay-Doppler dictionary and the Bernoulli-Gaussian PDA
//!   sparse estimator
//! - [`detector`]: QPSK mapping and a linear MMSE equalizer

pub mod channel;
pub mod config;
pub mod detector;
pub mod error;
pub mod linalg;
pub mod metasurface;
pub mod optimizer;
pub mod pda;
pub mod waveform;

pub use error::{Error, Result};
pub use num_complex::Complex64;

/// Exact SI speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
