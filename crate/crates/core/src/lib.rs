//! Super-resolution joint delay-Doppler estimation for OFDM passive radar.
//!
//! The received per-subcarrier samples are modelled as a sparse sum of 2-D
//! complex sinusoids (one per scatterer) multiplied by the demodulated data
//! symbols, plus Gaussian noise and a sparse demodulation-error term. The
//! estimator solves an atomic-norm plus l1 regularized least-squares
//! problem with ADMM, then reads the delays and Doppler shifts off the dual
//! polynomial.
//!
//! Modules:
//! - [`scene`]: configuration, scenes and measurement simulation
//! - [`atomic`]: block-Toeplitz lift, PSD projection, soft threshold
//! - [`admm`]: the ADMM solver and its optimality diagnostics
//! - [`extract`]: dual-polynomial peak search and amplitude recovery
//! - [`baselines`]: 2D-MUSIC and grid-based l1 receivers
//! - [`bench`]: scenario presets, identification gating, RMSE sweeps
//! - [`io`]: JSON and CSV documents

pub mod admm;
pub mod atomic;
pub mod baselines;
pub mod bench;
pub mod error;
pub mod extract;
pub mod io;
pub mod scene;

pub use error::{Error, Result};

/// Complex double used throughout.
pub type C64 = num_complex::Complex64;
