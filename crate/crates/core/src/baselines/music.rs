//! 2D-MUSIC with spatial smoothing.
//!
//! The symbol-normalized samples `R[m, n] = r[m, n] / s_hat[m, n]` are cut
//! into overlapping `M' x N'` subarrays; their vectorizations form the
//! snapshots. The left singular vectors of the snapshot matrix split into a
//! signal and a noise subspace, and the pseudo-spectrum
//! `1 / ||E_n^H a'(phi, psi)||^2` peaks at the path frequencies.

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extract::{dual_polynomial_grid, is_strict_local_max, ls_amplitudes, Estimate, EstimatedPath};
use crate::scene::Measurement;
use crate::C64;

/// Signal-subspace dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalDim {
    Known(usize),
    /// Largest ratio of consecutive singular values.
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MusicConfig {
    /// Subarray size along the symbol axis, `M'`.
    pub m_sub: usize,
    /// Subarray size along the subcarrier axis, `N'`.
    pub n_sub: usize,
    pub k_signal: SignalDim,
    pub grid_phi: usize,
    pub grid_psi: usize,
}

impl MusicConfig {
    /// Half-size subarrays and a 16x oversampled spectrum grid.
    pub fn standard(m: usize, n: usize, k_signal: SignalDim) -> Self {
        Self {
            m_sub: (m / 2).max(1),
            n_sub: (n / 2).max(1),
            k_signal,
            grid_phi: 16 * m,
            grid_psi: 16 * n,
        }
    }

    pub fn validate(&self, m: usize, n: usize) -> Result<()> {
        self.validate_subarray(m, n)?;
        if let SignalDim::Known(k) = self.k_signal {
            if k == 0 || k >= self.m_sub * self.n_sub {
                return Err(Error::config(format!(
                    "signal dimension {k} must lie in 1..{}",
                    self.m_sub * self.n_sub
                )));
            }
        }
        Ok(())
    }

    fn validate_subarray(&self, m: usize, n: usize) -> Result<()> {
        if !(1 <= self.m_sub && self.m_sub < m) {
            return Err(Error::config(format!("M' = {} must satisfy 1 <= M' < M = {m}", self.m_sub)));
        }
        if !(1 <= self.n_sub && self.n_sub < n) {
            return Err(Error::config(format!("N' = {} must satisfy 1 <= N' < N = {n}", self.n_sub)));
        }
        if self.grid_phi == 0 || self.grid_psi == 0 {
            return Err(Error::config("spectrum grid must be nonempty"));
        }
        Ok(())
    }

    fn snapshots(&self, m: usize, n: usize) -> usize {
        (m - self.m_sub + 1) * (n - self.n_sub + 1)
    }
}

/// Smoothed observation matrix, `M'N' x (M - M' + 1)(N - N' + 1)`.
///
/// Column `m0 (N - N' + 1) + n0` is the column-major vectorization of the
/// subarray anchored at `(m0, n0)`.
pub fn spatial_smooth(meas: &Measurement, config: &MusicConfig) -> Result<Mat<C64>> {
    let (m, n) = (meas.m, meas.n);
    config.validate_subarray(m, n)?;
    if let Some(j) = meas.s_hat.iter().position(|s| s.norm() == 0.0) {
        return Err(Error::domain(format!("symbol {j} is zero")));
    }
    let (ms, ns) = (config.m_sub, config.n_sub);
    let n_anchor = n - ns + 1;
    let normalized: Vec<C64> = meas.r_bar.iter().zip(&meas.s_hat).map(|(r, s)| r / s).collect();
    Ok(Mat::from_fn(ms * ns, config.snapshots(m, n), |row, col| {
        let (m0, n0) = (col / n_anchor, col % n_anchor);
        let (mm, nn) = (row % ms, row / ms);
        normalized[(n0 + nn) * m + m0 + mm]
    }))
}

/// Spectrum plus the signal dimension actually used.
fn spectrum_and_dim(observation: &Mat<C64>, config: &MusicConfig) -> Result<(Mat<f64>, usize)> {
    let dim = config.m_sub * config.n_sub;
    if observation.nrows() != dim {
        return Err(Error::domain(format!(
            "observation has {} rows, expected M'N' = {dim}",
            observation.nrows()
        )));
    }
    let svd = observation
        .thin_svd()
        .map_err(|e| Error::numeric(format!("svd of observation matrix failed ({e:?})"), None))?;
    let sv: Vec<f64> = svd.S().column_vector().iter().map(|s| s.re).collect();
    let k = match config.k_signal {
        SignalDim::Known(k) => k,
        SignalDim::Auto => eigen_gap_dimension(&sv, dim),
    };
    if k == 0 || k >= dim {
        return Err(Error::config(format!("signal dimension {k} must lie in 1..{dim}")));
    }
    if k > sv.len() {
        return Err(Error::config(format!(
            "signal dimension {k} exceeds the {} available snapshots",
            sv.len()
        )));
    }
    // ||E_n^H a||^2 = ||a||^2 - ||E_s^H a||^2, and each |u_k^H a| is a dual
    // polynomial magnitude of the singular vector
    let u = svd.U();
    let mut signal_power = Mat::<f64>::zeros(config.grid_phi, config.grid_psi);
    for idx in 0..k {
        let col: Vec<C64> = (0..dim).map(|i| u[(i, idx)]).collect();
        let g = dual_polynomial_grid(&col, config.m_sub, config.n_sub, config.grid_phi, config.grid_psi);
        for q in 0..config.grid_psi {
            for p in 0..config.grid_phi {
                signal_power[(p, q)] += g[(p, q)] * g[(p, q)];
            }
        }
    }
    let full = dim as f64;
    let floor = 1e-12 * full;
    let spectrum = Mat::from_fn(config.grid_phi, config.grid_psi, |p, q| {
        1.0 / (full - signal_power[(p, q)]).max(floor)
    });
    Ok((spectrum, k))
}

fn eigen_gap_dimension(sv: &[f64], dim: usize) -> usize {
    let last = (dim / 2).min(sv.len().saturating_sub(1));
    let mut best = (1, f64::NEG_INFINITY);
    for i in 1..=last {
        let ratio = if sv[i] > 0.0 { sv[i - 1] / sv[i] } else { f64::INFINITY };
        if ratio > best.1 {
            best = (i, ratio);
        }
    }
    best.0
}

/// Pseudo-spectrum on the grid `phi = p/grid_phi`, `psi = q/grid_psi`; entry `(p, q)`.
pub fn music_spectrum(observation: &Mat<C64>, config: &MusicConfig) -> Result<Mat<f64>> {
    spectrum_and_dim(observation, config).map(|(s, _)| s)
}

/// Grid maxima of the spectrum followed by a least-squares amplitude fit.
pub fn music_estimate(meas: &Measurement, config: &MusicConfig) -> Result<Estimate> {
    config.validate(meas.m, meas.n)?;
    let obs = spatial_smooth(meas, config)?;
    let (spectrum, k) = spectrum_and_dim(&obs, config)?;
    let (gp, gq) = (config.grid_phi, config.grid_psi);
    let mut maxima = Vec::new();
    for q in 0..gq {
        for p in 0..gp {
            if is_strict_local_max(&spectrum, p, q) {
                maxima.push((spectrum[(p, q)], p, q));
            }
        }
    }
    maxima.sort_by(|a, b| b.0.total_cmp(&a.0));
    maxima.truncate(k);
    let freqs: Vec<(f64, f64)> = maxima
        .iter()
        .map(|&(_, p, q)| (p as f64 / gp as f64, q as f64 / gq as f64))
        .collect();
    let zeros = vec![C64::default(); meas.len()];
    let alphas = ls_amplitudes(&meas.r_bar, &meas.s_hat, &zeros, &freqs, meas.m, meas.n)?;
    let paths = freqs
        .iter()
        .zip(alphas)
        .map(|(&(phi, psi), alpha)| EstimatedPath {
            phi,
            psi,
            alpha,
            dual_peak: None,
        })
        .collect();
    Ok(Estimate::from_paths(paths))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extract::circular_distance;
    use crate::scene::{simulate, Constellation, Path, RadarConfig, Scene};

    fn meas_of(paths: &[(f64, f64, f64)], m: usize, n: usize) -> Measurement {
        let config = RadarConfig::standard(m, n, f64::NEG_INFINITY);
        let scene = Scene {
            targets: paths
                .iter()
                .map(|&(a, phi, psi)| Path::new(C64::new(a, 0.0), phi, psi).unwrap())
                .collect(),
            clutter: vec![],
        };
        simulate(&scene, &config, &Constellation::qpsk(), 0.0, 11).unwrap().0
    }

    fn cfg(m_sub: usize, n_sub: usize, k: usize) -> MusicConfig {
        MusicConfig {
            m_sub,
            n_sub,
            k_signal: SignalDim::Known(k),
            grid_phi: 64,
            grid_psi: 64,
        }
    }

    #[test]
    fn trivial_smoothing_lists_samples() {
        let meas = meas_of(&[(1.0, 0.1, 0.2)], 2, 2);
        let obs = spatial_smooth(&meas, &cfg(1, 1, 1)).unwrap();
        assert_eq!((obs.nrows(), obs.ncols()), (1, 4));
        // anchors in order (0,0), (0,1), (1,0), (1,1)
        let expect = [(0, 0), (0, 1), (1, 0), (1, 1)];
        for (col, &(m0, n0)) in expect.iter().enumerate() {
            let idx = n0 * 2 + m0;
            assert!((obs[(0, col)] - meas.r_bar[idx] / meas.s_hat[idx]).norm() < 1e-15);
        }
    }

    #[test]
    fn smoothing_matches_index_enumeration() {
        let (m, n) = (4, 3);
        let meas = meas_of(&[(1.0, 0.1, 0.2), (0.5, 0.6, 0.7)], m, n);
        let c = cfg(m - 1, n - 1, 1);
        let obs = spatial_smooth(&meas, &c).unwrap();
        assert_eq!(obs.ncols(), 4);
        let mut col = 0;
        for m0 in 0..2 {
            for n0 in 0..2 {
                for nn in 0..n - 1 {
                    for mm in 0..m - 1 {
                        let idx = (n0 + nn) * m + m0 + mm;
                        let want = meas.r_bar[idx] / meas.s_hat[idx];
                        assert_eq!(obs[(nn * (m - 1) + mm, col)], want);
                    }
                }
                col += 1;
            }
        }
    }

    #[test]
    fn single_path_has_rank_one() {
        let meas = meas_of(&[(1.0, 0.37, 0.81)], 6, 5);
        for (ms, ns) in [(1, 1), (3, 2), (5, 4), (2, 3)] {
            let obs = spatial_smooth(&meas, &cfg(ms, ns, 1)).unwrap();
            let sv: Vec<f64> = obs.singular_values().unwrap();
            assert!(sv.iter().skip(1).all(|s| *s < 1e-10 * sv[0]), "{ms}x{ns}: {sv:?}");
        }
    }

    #[test]
    fn zero_symbol_rejected() {
        let mut meas = meas_of(&[(1.0, 0.1, 0.2)], 4, 4);
        meas.s_hat[3] = C64::default();
        assert!(matches!(spatial_smooth(&meas, &cfg(2, 2, 1)), Err(Error::Domain(_))));
    }

    #[test]
    fn zero_signal_dimension_rejected() {
        let meas = meas_of(&[(1.0, 0.1, 0.2)], 4, 4);
        assert!(matches!(music_estimate(&meas, &cfg(2, 2, 0)), Err(Error::Config(_))));
        assert!(matches!(music_estimate(&meas, &cfg(4, 2, 1)), Err(Error::Config(_))));
    }

    #[test]
    fn single_path_peak_within_one_cell() {
        let (phi, psi) = (0.3, 0.55);
        let meas = meas_of(&[(1.0, phi, psi)], 8, 8);
        let c = cfg(4, 4, 1);
        let est = music_estimate(&meas, &c).unwrap();
        assert_eq!(est.paths.len(), 1);
        let p = est.paths[0];
        assert!(circular_distance(p.phi, phi) <= 1.0 / c.grid_phi as f64);
        assert!(circular_distance(p.psi, psi) <= 1.0 / c.grid_psi as f64);
    }

    #[test]
    fn two_paths_give_two_maxima() {
        let truth = [(1.0, 0.2, 0.3), (0.7, 0.65, 0.8)];
        let meas = meas_of(&truth, 8, 8);
        let c = cfg(4, 4, 2);
        let est = music_estimate(&meas, &c).unwrap();
        assert_eq!(est.paths.len(), 2);
        for &(_, phi, psi) in &truth {
            assert!(est.paths.iter().any(|p| circular_distance(p.phi, phi) <= 1.0 / 64.0
                && circular_distance(p.psi, psi) <= 1.0 / 64.0));
        }
        // amplitudes from the LS fit land near the planted ones
        let mut amps: Vec<f64> = est.paths.iter().map(|p| p.alpha.norm()).collect();
        amps.sort_by(f64::total_cmp);
        assert!((amps[1] - 1.0).abs() < 0.1 && (amps[0] - 0.7).abs() < 0.1, "{amps:?}");
    }

    #[test]
    fn auto_dimension_finds_two_paths() {
        let meas = meas_of(&[(1.0, 0.2, 0.3), (0.7, 0.65, 0.8)], 8, 8);
        let mut c = cfg(4, 4, 1);
        c.k_signal = SignalDim::Auto;
        assert_eq!(music_estimate(&meas, &c).unwrap().paths.len(), 2);
    }

    #[test]
    fn argmax_is_scale_invariant() {
        let meas = meas_of(&[(1.0, 0.2, 0.3), (0.7, 0.65, 0.8)], 8, 8);
        let c = cfg(4, 4, 2);
        let obs = spatial_smooth(&meas, &c).unwrap();
        let scaled = Mat::from_fn(obs.nrows(), obs.ncols(), |i, j| obs[(i, j)] * C64::new(-3.0, 2.0));
        let argmax = |s: &Mat<f64>| {
            let mut best = (f64::NEG_INFINITY, 0, 0);
            for q in 0..s.ncols() {
                for p in 0..s.nrows() {
                    if s[(p, q)] > best.0 {
                        best = (s[(p, q)], p, q);
                    }
                }
            }
            (best.1, best.2)
        };
        let a = music_spectrum(&obs, &c).unwrap();
        let b = music_spectrum(&scaled, &c).unwrap();
        assert_eq!(argmax(&a), argmax(&b));
    }
}
