//! Comparison receivers: 2D-MUSIC with spatial smoothing and grid-based l1.
//!
//! Both return the same [`Estimate`](crate::extract::Estimate) as the
//! atomic-norm receiver so they run through one benchmark harness.

pub mod csl1;
pub mod music;

pub use csl1::{csl1_certificate, csl1_estimate, csl1_solve, CsL1Certificate, CsL1Config, CsL1Solution};
pub use music::{music_estimate, music_spectrum, spatial_smooth, MusicConfig, SignalDim};
