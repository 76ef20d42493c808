//! Grid-based l1 receiver.
//!
//! ```text
//! min  1/2 ||r - S C alpha||^2 + gamma ||alpha||_1
//! ```
//!
//! `C` holds the atoms on the uniform grid `{p / M_grid} x {q / N_grid}`,
//! column `q M_grid + p`. The dictionary is never formed: `C alpha` is
//! `B A G^T` with `A` the `M_grid x N_grid` reshaping of `alpha` and `B`,
//! `G` the one-axis steering matrices. Solved by FISTA with function-value
//! restart.

use std::f64::consts::PI;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::atomic::soft_threshold_scalar;
use crate::error::{Error, Result};
use crate::extract::{Estimate, EstimatedPath};
use crate::scene::Measurement;
use crate::C64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CsL1Config {
    pub m_grid: usize,
    pub n_grid: usize,
    pub gamma: f64,
    pub max_iters: usize,
    /// Stop once the relative objective change drops below this.
    pub tol: f64,
}

impl CsL1Config {
    pub const DEFAULT_MAX_ITERS: usize = 10_000;
    pub const DEFAULT_TOL: f64 = 1e-9;
    /// Relative support threshold for reported paths.
    pub const SUPPORT_THRESHOLD: f64 = 1e-3;

    /// Fourfold grid, `gamma = 2 sigma sqrt(2 ln L)` with `L` grid points.
    pub fn standard(m: usize, n: usize, sigma: f64) -> Self {
        let (m_grid, n_grid) = (4 * m, 4 * n);
        Self {
            m_grid,
            n_grid,
            gamma: 2.0 * sigma * (2.0 * ((m_grid * n_grid) as f64).ln()).sqrt(),
            max_iters: Self::DEFAULT_MAX_ITERS,
            tol: Self::DEFAULT_TOL,
        }
    }

    pub fn validate(&self, m: usize, n: usize) -> Result<()> {
        if self.m_grid < m || self.n_grid < n {
            return Err(Error::config(format!(
                "grid {}x{} must be at least {m}x{n}",
                self.m_grid, self.n_grid
            )));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::config(format!("gamma must be nonnegative, got {}", self.gamma)));
        }
        if self.max_iters == 0 || !(self.tol > 0.0) {
            return Err(Error::config("max_iters and tol must be positive"));
        }
        Ok(())
    }

    pub fn grid_len(&self) -> usize {
        self.m_grid * self.n_grid
    }

    /// `(phi, psi)` of grid column `j`.
    pub fn grid_point(&self, j: usize) -> (f64, f64) {
        (
            (j % self.m_grid) as f64 / self.m_grid as f64,
            (j / self.m_grid) as f64 / self.n_grid as f64,
        )
    }
}

/// `x -> S C x` and its adjoint.
struct Operator<'a> {
    s_hat: &'a [C64],
    m: usize,
    n: usize,
    mg: usize,
    ng: usize,
    /// `M x M_grid`, `exp(i 2 pi m p / M_grid)`.
    b: Mat<C64>,
    /// `N_grid x N`, `exp(-i 2 pi n q / N_grid)`.
    gt: Mat<C64>,
}

impl<'a> Operator<'a> {
    fn new(meas: &'a Measurement, config: &CsL1Config) -> Self {
        let (m, n, mg, ng) = (meas.m, meas.n, config.m_grid, config.n_grid);
        Self {
            s_hat: &meas.s_hat,
            m,
            n,
            mg,
            ng,
            b: Mat::from_fn(m, mg, |mm, p| {
                C64::from_polar(1.0, 2.0 * PI * ((mm * p) % mg) as f64 / mg as f64)
            }),
            gt: Mat::from_fn(ng, n, |q, nn| {
                C64::from_polar(1.0, -2.0 * PI * ((nn * q) % ng) as f64 / ng as f64)
            }),
        }
    }

    fn forward(&self, x: &[C64]) -> Vec<C64> {
        let a = Mat::from_fn(self.mg, self.ng, |p, q| x[q * self.mg + p]);
        let z = &self.b * (&a * &self.gt);
        (0..self.m * self.n)
            .map(|i| self.s_hat[i] * z[(i % self.m, i / self.m)])
            .collect()
    }

    fn adjoint(&self, y: &[C64]) -> Vec<C64> {
        let w = Mat::from_fn(self.m, self.n, |mm, nn| {
            let i = nn * self.m + mm;
            self.s_hat[i].conj() * y[i]
        });
        let x = self.b.adjoint() * (&w * self.gt.adjoint());
        (0..self.mg * self.ng).map(|j| x[(j % self.mg, j / self.mg)]).collect()
    }
}

fn norm2(v: &[C64]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// Largest eigenvalue of `(SC)^H (SC)` by power iteration.
fn lipschitz(op: &Operator<'_>) -> f64 {
    let len = op.mg * op.ng;
    let mut x = vec![C64::new(1.0 / (len as f64).sqrt(), 0.0); len];
    let mut est = 0.0;
    for _ in 0..100 {
        let y = op.adjoint(&op.forward(&x));
        let nrm = norm2(&y);
        if nrm == 0.0 {
            return 0.0;
        }
        est = nrm;
        x = y.iter().map(|v| v / nrm).collect();
    }
    est
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsL1Solution {
    /// Grid amplitudes, index `q M_grid + p`.
    pub alpha: Vec<C64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn objective(op: &Operator<'_>, r: &[C64], x: &[C64], gamma: f64) -> f64 {
    let ax = op.forward(x);
    let fit: f64 = r.iter().zip(&ax).map(|(a, b)| (a - b).norm_sqr()).sum();
    0.5 * fit + gamma * x.iter().map(|v| v.norm()).sum::<f64>()
}

/// FISTA from zero.
pub fn csl1_solve(meas: &Measurement, config: &CsL1Config) -> Result<CsL1Solution> {
    meas.validate()?;
    config.validate(meas.m, meas.n)?;
    let op = Operator::new(meas, config);
    let len = config.grid_len();
    // a little headroom over the power-iteration estimate keeps 1/L a valid step
    let l_hat = 1.01 * lipschitz(&op);
    if !(l_hat > 0.0 && l_hat.is_finite()) {
        return Err(Error::numeric("step-size estimate is not positive", None));
    }
    let step = 1.0 / l_hat;
    let thresh = config.gamma * step;
    let r = &meas.r_bar;

    let mut x = vec![C64::default(); len];
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut f_prev = objective(&op, r, &x, config.gamma);
    let mut increases = 0usize;
    let mut converged = false;
    let mut iterations = 0;

    for it in 0..config.max_iters {
        iterations = it + 1;
        let ay = op.forward(&y);
        let resid: Vec<C64> = ay.iter().zip(r).map(|(a, b)| a - b).collect();
        let grad = op.adjoint(&resid);
        let x_new: Vec<C64> = (0..len).map(|j| soft_threshold_scalar(y[j] - grad[j] * step, thresh)).collect();
        let f = objective(&op, r, &x_new, config.gamma);
        if !f.is_finite() {
            return Err(Error::numeric("non-finite objective", Some(it)));
        }
        if f > f_prev {
            increases += 1;
            if increases >= 10 {
                return Err(Error::numeric("objective increased over 10 consecutive steps", Some(it)));
            }
            // restart the momentum from the last iterate
            t = 1.0;
            y = x_new.clone();
        } else {
            increases = 0;
            let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let beta = (t - 1.0) / t_new;
            y = (0..len).map(|j| x_new[j] + (x_new[j] - x[j]) * beta).collect();
            t = t_new;
        }
        let change = (f - f_prev).abs();
        x = x_new;
        let done = change <= config.tol * f.abs().max(f64::MIN_POSITIVE);
        f_prev = f;
        if done {
            converged = true;
            break;
        }
    }
    Ok(CsL1Solution {
        alpha: x,
        objective: f_prev,
        iterations,
        converged,
    })
}

/// Subgradient optimality check at `alpha`, both entries relative to `gamma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsL1Certificate {
    /// `||(SC)^H (r - SC alpha)||_inf / gamma - 1`, nonpositive when satisfied.
    pub inf_excess: f64,
    /// Largest `|g_j - gamma alpha_j/|alpha_j|| / gamma` over the support.
    pub support_deviation: f64,
}

impl CsL1Certificate {
    pub fn holds(&self, tol: f64) -> bool {
        self.inf_excess <= tol && self.support_deviation <= tol
    }
}

/// Certificate for `alpha`, with the support taken as entries above the
/// reporting threshold.
pub fn csl1_certificate(meas: &Measurement, config: &CsL1Config, alpha: &[C64]) -> Result<CsL1Certificate> {
    config.validate(meas.m, meas.n)?;
    if alpha.len() != config.grid_len() || !(config.gamma > 0.0) {
        return Err(Error::domain("certificate needs a full grid vector and gamma > 0"));
    }
    let op = Operator::new(meas, config);
    let ax = op.forward(alpha);
    let resid: Vec<C64> = meas.r_bar.iter().zip(&ax).map(|(a, b)| a - b).collect();
    let g = op.adjoint(&resid);
    let gamma = config.gamma;
    let inf = g.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let amax = alpha.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let support_deviation = alpha
        .iter()
        .zip(&g)
        .filter(|(a, _)| a.norm() > CsL1Config::SUPPORT_THRESHOLD * amax)
        .map(|(a, gj)| (gj - a / a.norm() * gamma).norm() / gamma)
        .fold(0.0, f64::max);
    Ok(CsL1Certificate {
        inf_excess: inf / gamma - 1.0,
        support_deviation,
    })
}

/// Grid points whose amplitude exceeds `1e-3` of the largest become paths.
pub fn csl1_estimate(meas: &Measurement, config: &CsL1Config) -> Result<Estimate> {
    let sol = csl1_solve(meas, config)?;
    Ok(estimate_from_grid(&sol.alpha, config))
}

pub(crate) fn estimate_from_grid(alpha: &[C64], config: &CsL1Config) -> Estimate {
    let amax = alpha.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if amax == 0.0 {
        return Estimate::default();
    }
    let paths = alpha
        .iter()
        .enumerate()
        .filter(|(_, a)| a.norm() > CsL1Config::SUPPORT_THRESHOLD * amax)
        .map(|(j, &a)| {
            let (phi, psi) = config.grid_point(j);
            EstimatedPath {
                phi,
                psi,
                alpha: a,
                dual_peak: None,
            }
        })
        .collect();
    Estimate::from_paths(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extract::circular_distance;
    use crate::scene::{atom, simulate, Constellation, Path, RadarConfig, Scene};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn meas_of(paths: &[(C64, f64, f64)], m: usize, n: usize) -> Measurement {
        let config = RadarConfig::standard(m, n, f64::NEG_INFINITY);
        let scene = Scene {
            targets: paths.iter().map(|&(a, phi, psi)| Path::new(a, phi, psi).unwrap()).collect(),
            clutter: vec![],
        };
        simulate(&scene, &config, &Constellation::qpsk(), 0.0, 5).unwrap().0
    }

    fn cfg(m: usize, n: usize, gamma: f64) -> CsL1Config {
        CsL1Config {
            m_grid: 4 * m,
            n_grid: 4 * n,
            gamma,
            max_iters: 20_000,
            tol: 1e-12,
        }
    }

    #[test]
    fn operator_matches_explicit_dictionary() {
        let meas = meas_of(&[(C64::new(1.0, 0.0), 0.1, 0.2)], 3, 4);
        let c = CsL1Config { m_grid: 5, n_grid: 6, ..cfg(3, 4, 0.1) };
        let op = Operator::new(&meas, &c);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<C64> = (0..30).map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect();
        let y: Vec<C64> = (0..12).map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect();
        let mut direct = vec![C64::default(); 12];
        let mut direct_adj = vec![C64::default(); 30];
        for (j, xj) in x.iter().enumerate() {
            let (phi, psi) = c.grid_point(j);
            let a = atom(phi, psi, 3, 4).unwrap();
            for i in 0..12 {
                let col = meas.s_hat[i] * a[i];
                direct[i] += col * xj;
                direct_adj[j] += col.conj() * y[i];
            }
        }
        let fast = op.forward(&x);
        let fast_adj = op.adjoint(&y);
        assert!(direct.iter().zip(&fast).all(|(a, b)| (a - b).norm() < 1e-12));
        assert!(direct_adj.iter().zip(&fast_adj).all(|(a, b)| (a - b).norm() < 1e-12));
    }

    #[test]
    fn large_gamma_gives_zero() {
        let meas = meas_of(&[(C64::new(1.0, 0.5), 0.13, 0.4)], 4, 4);
        let c0 = cfg(4, 4, 1.0);
        let op = Operator::new(&meas, &c0);
        let g = op.adjoint(&meas.r_bar).iter().map(|v| v.norm()).fold(0.0, f64::max);
        let sol = csl1_solve(&meas, &cfg(4, 4, g * 1.0001)).unwrap();
        assert!(sol.alpha.iter().all(|v| v.norm() == 0.0));
        assert!(csl1_estimate(&meas, &cfg(4, 4, g * 1.0001)).unwrap().paths.is_empty());
    }

    #[test]
    fn on_grid_path_has_exact_support() {
        let (m, n) = (4, 4);
        let (phi, psi) = (5.0 / 16.0, 9.0 / 16.0);
        let alpha = C64::new(0.8, -0.6);
        let meas = meas_of(&[(alpha, phi, psi)], m, n);
        let c = cfg(m, n, 0.01 * norm2(&meas.r_bar));
        let sol = csl1_solve(&meas, &c).unwrap();
        let est = estimate_from_grid(&sol.alpha, &c);
        assert_eq!(est.paths.len(), 1, "{:?}", est.paths);
        let p = est.paths[0];
        assert!(circular_distance(p.phi, phi) < 1e-12 && circular_distance(p.psi, psi) < 1e-12);
        assert!((p.alpha - alpha).norm() < 0.1 * alpha.norm());
        let cert = csl1_certificate(&meas, &c, &sol.alpha).unwrap();
        assert!(cert.holds(1e-3), "{cert:?}");
    }

    #[test]
    fn off_grid_path_splits() {
        let (m, n) = (4, 4);
        let (phi, psi) = (5.5 / 16.0, 9.5 / 16.0);
        let meas = meas_of(&[(C64::new(1.0, 0.0), phi, psi)], m, n);
        let c = cfg(m, n, 0.01 * norm2(&meas.r_bar));
        let est = csl1_estimate(&meas, &c).unwrap();
        let near = est
            .paths
            .iter()
            .filter(|p| circular_distance(p.phi, phi) <= 1.0 / 16.0 && circular_distance(p.psi, psi) <= 1.0 / 16.0)
            .count();
        assert!(near >= 2, "{:?}", est.paths);
    }

    #[test]
    fn grid_must_cover_measurement() {
        let meas = meas_of(&[(C64::new(1.0, 0.0), 0.1, 0.1)], 4, 4);
        let c = CsL1Config { m_grid: 3, ..cfg(4, 4, 0.1) };
        assert!(matches!(csl1_solve(&meas, &c), Err(Error::Config(_))));
    }

    #[test]
    fn default_gamma() {
        let c = CsL1Config::standard(16, 16, 0.01);
        assert_eq!((c.m_grid, c.n_grid), (64, 64));
        assert!((c.gamma - 0.02 * (2.0 * 4096f64.ln()).sqrt()).abs() < 1e-15);
    }
}
