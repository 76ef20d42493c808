//! Frequency extraction from the dual solution.
//!
//! The dual polynomial `Q(phi, psi) = <nu, a(phi, psi)>` reaches modulus
//! `lambda` exactly at the recovered frequencies, with phase equal to the
//! phase of the corresponding amplitude. Peaks are found on an oversampled
//! grid and polished with Newton ascent on `|Q|^2`; amplitudes then follow
//! from a least-squares fit against the demodulated symbols.

use std::f64::consts::PI;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::admm::{Solution, SolverConfig};
use crate::error::{Error, Result};
use crate::scene::{atom_unchecked, normalized_to_physical, wrap_unit, Measurement, RadarConfig};
use crate::C64;

/// One recovered path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatedPath {
    pub phi: f64,
    pub psi: f64,
    pub alpha: C64,
    /// `|Q|` at the peak; `None` for receivers without a dual certificate.
    pub dual_peak: Option<f64>,
}

/// Output shared by every receiver.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    /// Sorted by `|alpha|`, largest first.
    pub paths: Vec<EstimatedPath>,
    pub error_support: Vec<usize>,
    pub nu_hat: Option<Vec<C64>>,
}

impl Estimate {
    pub fn from_paths(mut paths: Vec<EstimatedPath>) -> Self {
        sort_by_amplitude(&mut paths);
        Self {
            paths,
            error_support: Vec::new(),
            nu_hat: None,
        }
    }

    pub fn dual_peak_values(&self) -> Vec<f64> {
        self.paths.iter().filter_map(|p| p.dual_peak).collect()
    }
}

pub(crate) fn sort_by_amplitude(paths: &mut [EstimatedPath]) {
    paths.sort_by(|a, b| b.alpha.norm().total_cmp(&a.alpha.norm()));
}

/// `Q(phi, psi) = sum_j nu_j conj(a_j(phi, psi))`.
pub fn dual_polynomial(nu: &[C64], phi: f64, psi: f64, m: usize, n: usize) -> C64 {
    let a = atom_unchecked(phi, psi, m, n);
    nu.iter().zip(&a).map(|(v, x)| v * x.conj()).sum()
}

/// `Q` and its first and second partial derivatives.
#[derive(Debug, Clone, Copy)]
struct PolyDerivs {
    q: C64,
    d_phi: C64,
    d_psi: C64,
    d_phiphi: C64,
    d_psipsi: C64,
    d_phipsi: C64,
}

fn poly_derivs(nu: &[C64], phi: f64, psi: f64, m: usize, n: usize) -> PolyDerivs {
    let two_pi = 2.0 * PI;
    let mut out = PolyDerivs {
        q: C64::default(),
        d_phi: C64::default(),
        d_psi: C64::default(),
        d_phiphi: C64::default(),
        d_psipsi: C64::default(),
        d_phipsi: C64::default(),
    };
    let i = C64::new(0.0, 1.0);
    for nn in 0..n {
        for mm in 0..m {
            let (mf, nf) = (mm as f64, nn as f64);
            // term = nu * exp(-i 2 pi (m phi - n psi))
            let term = nu[nn * m + mm] * C64::from_polar(1.0, -two_pi * (mf * phi - nf * psi));
            out.q += term;
            out.d_phi += term * (-i * two_pi * mf);
            out.d_psi += term * (i * two_pi * nf);
            out.d_phiphi += term * (-(two_pi * mf).powi(2));
            out.d_psipsi += term * (-(two_pi * nf).powi(2));
            out.d_phipsi += term * (two_pi * two_pi * mf * nf);
        }
    }
    out
}

/// `|Q|` on the uniform grid `phi = p/grid_phi`, `psi = q/grid_psi`;
/// entry `(p, q)`.
pub fn dual_polynomial_grid(nu: &[C64], m: usize, n: usize, grid_phi: usize, grid_psi: usize) -> Mat<f64> {
    let q = dual_polynomial_grid_complex(nu, m, n, grid_phi, grid_psi);
    Mat::from_fn(grid_phi, grid_psi, |i, j| q[(i, j)].norm())
}

fn dual_polynomial_grid_complex(nu: &[C64], m: usize, n: usize, grid_phi: usize, grid_psi: usize) -> Mat<C64> {
    // separable: first sum over m for each phi, then over n for each psi
    let partial = Mat::from_fn(grid_phi, n, |p, nn| {
        let phi = p as f64 / grid_phi as f64;
        (0..m)
            .map(|mm| nu[nn * m + mm] * C64::from_polar(1.0, -2.0 * PI * mm as f64 * phi))
            .sum::<C64>()
    });
    let twiddle = Mat::from_fn(n, grid_psi, |nn, q| {
        C64::from_polar(1.0, 2.0 * PI * nn as f64 * q as f64 / grid_psi as f64)
    });
    &partial * &twiddle
}

/// Grid-plus-refinement estimate of the dual atomic norm `sup |<nu, a>|`.
///
/// Maximizes over a `16M x 16N` grid, then runs one local Newton ascent from
/// the best grid point.
pub fn dual_atomic_norm(nu: &[C64], m: usize, n: usize) -> f64 {
    let (gp, gq) = (16 * m, 16 * n);
    let grid = dual_polynomial_grid(nu, m, n, gp, gq);
    let mut best = (0.0, 0, 0);
    for q in 0..gq {
        for p in 0..gp {
            if grid[(p, q)] > best.0 {
                best = (grid[(p, q)], p, q);
            }
        }
    }
    if best.0 == 0.0 {
        return 0.0;
    }
    let start = (best.1 as f64 / gp as f64, best.2 as f64 / gq as f64);
    let refined = newton_refine(nu, start, m, n, 50);
    let value = dual_polynomial(nu, refined.phi, refined.psi, m, n).norm();
    value.max(best.0)
}

/// Peak search settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakOptions {
    /// Grid oversampling factor relative to `M` and `N`.
    pub oversample: usize,
    /// Peaks must reach `(1 - epsilon) * lambda`.
    pub epsilon: f64,
    pub max_newton_steps: usize,
    pub grad_tol: f64,
}

impl Default for PeakOptions {
    fn default() -> Self {
        Self {
            oversample: 16,
            epsilon: 0.02,
            max_newton_steps: 50,
            grad_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub phi: f64,
    pub psi: f64,
    pub magnitude: f64,
}

#[derive(Debug, Clone, Copy)]
struct Refined {
    phi: f64,
    psi: f64,
    converged: bool,
}

/// Newton ascent on `|Q|^2` with backtracking; gradient steps where the
/// Hessian is not negative definite.
fn newton_refine(nu: &[C64], start: (f64, f64), m: usize, n: usize, max_steps: usize) -> Refined {
    newton_refine_tol(nu, start, m, n, max_steps, 1e-8)
}

fn newton_refine_tol(nu: &[C64], start: (f64, f64), m: usize, n: usize, max_steps: usize, grad_tol: f64) -> Refined {
    let (mut phi, mut psi) = start;
    let value = |d: &PolyDerivs| d.q.norm_sqr();
    let mut d = poly_derivs(nu, phi, psi, m, n);
    for _ in 0..max_steps {
        let f = value(&d);
        let g = [
            2.0 * (d.q.conj() * d.d_phi).re,
            2.0 * (d.q.conj() * d.d_psi).re,
        ];
        // gradient of |Q|^2 relative to |Q|^2 keeps the test scale free
        let gnorm = (g[0] * g[0] + g[1] * g[1]).sqrt();
        if gnorm <= grad_tol * f.max(f64::MIN_POSITIVE) {
            return Refined { phi, psi, converged: true };
        }
        let h00 = 2.0 * (d.d_phi.norm_sqr() + (d.q.conj() * d.d_phiphi).re);
        let h11 = 2.0 * (d.d_psi.norm_sqr() + (d.q.conj() * d.d_psipsi).re);
        let h01 = 2.0 * ((d.d_phi.conj() * d.d_psi).re + (d.q.conj() * d.d_phipsi).re);
        let det = h00 * h11 - h01 * h01;
        let mut step = if h00 < 0.0 && det > 0.0 {
            // solve H s = -g
            [(-g[0] * h11 + g[1] * h01) / det, (g[0] * h01 - g[1] * h00) / det]
        } else {
            let scale = 1.0 / (2.0 * PI * (m.max(n) as f64)).powi(2) / f.max(f64::MIN_POSITIVE);
            [g[0] * scale, g[1] * scale]
        };
        // cap a single move at a quarter of the resolution cell
        let cap = 0.25 / m.max(n) as f64;
        let len = (step[0] * step[0] + step[1] * step[1]).sqrt();
        if len > cap {
            step = [step[0] * cap / len, step[1] * cap / len];
        }
        let mut accepted = false;
        let mut t = 1.0;
        for _ in 0..40 {
            let (np, nq) = (phi + t * step[0], psi + t * step[1]);
            let nd = poly_derivs(nu, np, nq, m, n);
            if value(&nd) >= f {
                phi = np;
                psi = nq;
                d = nd;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted || t * len < 1e-15 {
            // no further ascent possible at double precision
            let g_rel = gnorm / f.max(f64::MIN_POSITIVE);
            return Refined {
                phi,
                psi,
                converged: g_rel < 1e-5,
            };
        }
    }
    let f = value(&d);
    let g = [2.0 * (d.q.conj() * d.d_phi).re, 2.0 * (d.q.conj() * d.d_psi).re];
    let gnorm = (g[0] * g[0] + g[1] * g[1]).sqrt();
    Refined {
        phi,
        psi,
        converged: gnorm <= grad_tol * f.max(f64::MIN_POSITIVE),
    }
}

/// Frequencies where `|Q|` reaches the certificate level `lambda`.
///
/// Strict local maxima of `|Q|` on the oversampled grid that reach
/// `(1 - epsilon) lambda` are refined, then peaks closer than half a
/// resolution cell in both coordinates are merged (the larger wins).
pub fn locate_peaks(nu: &[C64], lambda: f64, m: usize, n: usize, options: &PeakOptions) -> Result<Vec<Peak>> {
    if !(lambda > 0.0) {
        return Err(Error::domain("lambda must be positive"));
    }
    if nu.len() != m * n {
        return Err(Error::domain(format!("dual vector has length {}, expected {}", nu.len(), m * n)));
    }
    let (gp, gq) = (options.oversample * m, options.oversample * n);
    let grid = dual_polynomial_grid(nu, m, n, gp, gq);
    let threshold = (1.0 - options.epsilon) * lambda;
    let mut candidates = Vec::new();
    for q in 0..gq {
        for p in 0..gp {
            let v = grid[(p, q)];
            if v < threshold || !is_strict_local_max(&grid, p, q) {
                continue;
            }
            let start = (p as f64 / gp as f64, q as f64 / gq as f64);
            let r = newton_refine_tol(nu, start, m, n, options.max_newton_steps, options.grad_tol);
            let (phi, psi) = if r.converged {
                (wrap_unit(r.phi), wrap_unit(r.psi))
            } else {
                start
            };
            let magnitude = dual_polynomial(nu, phi, psi, m, n).norm();
            candidates.push(Peak { phi, psi, magnitude });
        }
    }
    candidates.sort_by(|a, b| b.magnitude.total_cmp(&a.magnitude));
    let (min_phi, min_psi) = (0.5 / m as f64, 0.5 / n as f64);
    let mut peaks: Vec<Peak> = Vec::new();
    for c in candidates {
        let clash = peaks
            .iter()
            .any(|p| circular_distance(p.phi, c.phi) < min_phi && circular_distance(p.psi, c.psi) < min_psi);
        if !clash {
            peaks.push(c);
        }
    }
    Ok(peaks)
}

pub fn is_strict_local_max(grid: &Mat<f64>, p: usize, q: usize) -> bool {
    let (gp, gq) = (grid.nrows(), grid.ncols());
    let v = grid[(p, q)];
    let here = q * gp + p;
    for dq in [gq - 1, 0, 1] {
        for dp in [gp - 1, 0, 1] {
            if dp == 0 && dq == 0 {
                continue;
            }
            let (pp, qq) = ((p + dp) % gp, (q + dq) % gq);
            let w = grid[(pp, qq)];
            // ties go to the lower linear index so plateaus yield one maximum
            if w > v || (w == v && qq * gp + pp < here) {
                return false;
            }
        }
    }
    true
}

/// Distance on the unit circle `[0, 1)`.
pub fn circular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    d.min(1.0 - d)
}

/// Settings for demodulation-error detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorSupportOptions {
    /// `|e_j|` above this counts as a detected error.
    pub threshold_e: f64,
    /// Relative tolerance on the dual magnitude `mu`.
    pub dual_rel_tol: f64,
}

impl ErrorSupportOptions {
    /// Threshold `1e-6 * ||r||_inf`.
    pub fn for_measurement(meas: &Measurement) -> Self {
        let rmax = meas.r_bar.iter().map(|x| x.norm()).fold(0.0, f64::max);
        Self {
            threshold_e: 1e-6 * rmax,
            dual_rel_tol: 0.05,
        }
    }
}

/// Detected demodulation errors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ErrorSupport {
    /// Indices with `|e_j|` above threshold.
    pub indices: Vec<usize>,
    /// Indices where `|nu_j / conj(s_j)|` equals `mu` within tolerance.
    pub dual_confirmed: Vec<usize>,
    /// `|nu_j / conj(s_j)|` for every index, for reporting.
    pub dual_magnitudes: Vec<f64>,
}

/// Demodulation-error support from the primal error estimate, cross-checked
/// against the dual certificate. `mu = 0` is not applicable and yields `None`.
pub fn detect_error_support(
    nu: &[C64],
    e_hat: &[C64],
    s_hat: &[C64],
    mu: f64,
    options: &ErrorSupportOptions,
) -> Option<ErrorSupport> {
    if mu <= 0.0 {
        return None;
    }
    let indices = e_hat
        .iter()
        .enumerate()
        .filter(|(_, e)| e.norm() > options.threshold_e)
        .map(|(j, _)| j)
        .collect();
    let dual_magnitudes: Vec<f64> = nu.iter().zip(s_hat).map(|(v, s)| v.norm() / s.norm()).collect();
    let dual_confirmed = dual_magnitudes
        .iter()
        .enumerate()
        .filter(|(_, d)| (**d - mu).abs() <= options.dual_rel_tol * mu)
        .map(|(j, _)| j)
        .collect();
    Some(ErrorSupport {
        indices,
        dual_confirmed,
        dual_magnitudes,
    })
}

/// Condition number above which the amplitude fit is rejected.
pub const MAX_CONDITION: f64 = 1e10;

/// Least-squares amplitudes `argmin ||r - S C alpha - e||`, where the
/// columns of `C` are the atoms at `freqs` (`(phi, psi)` pairs).
pub fn ls_amplitudes(
    r_bar: &[C64],
    s_hat: &[C64],
    e_hat: &[C64],
    freqs: &[(f64, f64)],
    m: usize,
    n: usize,
) -> Result<Vec<C64>> {
    let len = m * n;
    if freqs.is_empty() {
        return Err(Error::domain("no frequencies to fit"));
    }
    if freqs.len() > len {
        return Err(Error::domain("more frequencies than samples"));
    }
    if r_bar.len() != len || s_hat.len() != len || e_hat.len() != len {
        return Err(Error::domain("vector lengths do not match M*N"));
    }
    let k = freqs.len();
    let atoms: Vec<Vec<C64>> = freqs.iter().map(|&(p, q)| atom_unchecked(p, q, m, n)).collect();
    let dict = Mat::from_fn(len, k, |i, j| s_hat[i] * atoms[j][i]);
    let svd = dict
        .thin_svd()
        .map_err(|e| Error::numeric(format!("svd of amplitude dictionary failed ({e:?})"), None))?;
    let sv: Vec<f64> = svd.S().column_vector().iter().map(|s| s.re).collect();
    let (smax, smin) = (sv[0], sv[k - 1]);
    if !(smin > 0.0) || smax / smin > MAX_CONDITION {
        let v = svd.V();
        let pairs = (0..k).filter(|&j| v[(j, k - 1)].norm() > 0.1).map(|j| freqs[j]).collect();
        return Err(Error::Degenerate {
            message: format!("amplitude dictionary condition number {:e}", smax / smin),
            pairs,
        });
    }
    let u = svd.U();
    let v = svd.V();
    let mut alpha = vec![C64::default(); k];
    for idx in 0..k {
        let proj: C64 = (0..len).map(|i| u[(i, idx)].conj() * (r_bar[i] - e_hat[i])).sum::<C64>() / sv[idx];
        for (j, a) in alpha.iter_mut().enumerate() {
            *a += v[(j, idx)] * proj;
        }
    }
    Ok(alpha)
}

/// Full extraction: peaks of the dual polynomial, amplitudes, error support.
pub fn estimate_from_solution(
    solution: &Solution,
    meas: &Measurement,
    config: &SolverConfig,
    options: &PeakOptions,
) -> Result<Estimate> {
    let (m, n) = (meas.m, meas.n);
    let peaks = locate_peaks(&solution.nu_hat, config.lambda, m, n, options)?;
    let mut paths = Vec::with_capacity(peaks.len());
    if !peaks.is_empty() {
        let freqs: Vec<(f64, f64)> = peaks.iter().map(|p| (p.phi, p.psi)).collect();
        let alphas = ls_amplitudes(&meas.r_bar, &meas.s_hat, &solution.e_hat, &freqs, m, n)?;
        for (p, a) in peaks.iter().zip(alphas) {
            paths.push(EstimatedPath {
                phi: p.phi,
                psi: p.psi,
                alpha: a,
                dual_peak: Some(p.magnitude),
            });
        }
    }
    let mut est = Estimate::from_paths(paths);
    if let Some(sup) = detect_error_support(
        &solution.nu_hat,
        &solution.e_hat,
        &meas.s_hat,
        config.mu,
        &ErrorSupportOptions::for_measurement(meas),
    ) {
        est.error_support = sup.indices;
    }
    est.nu_hat = Some(solution.nu_hat.clone());
    Ok(est)
}

/// A path in physical units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalPath {
    pub range_m: f64,
    pub velocity_mps: f64,
    pub amplitude: C64,
}

pub fn to_physical(estimate: &Estimate, config: &RadarConfig) -> Vec<PhysicalPath> {
    estimate
        .paths
        .iter()
        .map(|p| {
            let (range_m, velocity_mps) = normalized_to_physical(p.phi, p.psi, config);
            PhysicalPath {
                range_m,
                velocity_mps,
                amplitude: p.alpha,
            }
        })
        .collect()
}
