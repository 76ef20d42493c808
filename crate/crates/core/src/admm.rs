//! ADMM for the atomic-norm plus l1 semidefinite program
//!
//! ```text
//! min  1/2 ||r - e - S z||^2 + lambda/(2MN) tr T(U) + lambda/2 t + mu ||e||_1
//! s.t. [T(U) z; z^H t] >= 0
//! ```
//!
//! The PSD constraint is split off onto an auxiliary matrix `Theta` with
//! multiplier `Upsilon`. Every update is closed form: an elementwise divide
//! for `z`, a scalar for `t`, the normalized Toeplitz adjoint for `U`, a
//! soft threshold for `e`, and an eigenvalue clamp for `Theta`.
//!
//! With `mu = 0` the error block is pinned to zero and the iteration is the
//! atomic-norm-only receiver.

use std::time::Instant;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::atomic::{
    adjoint_normalized, assemble, block_toeplitz, frobenius_distance, hermitian_eigenvalues,
    psd_project, soft_threshold, SdpBlock, ToeplitzParam,
};
use crate::error::{Error, Result};
use crate::extract::dual_atomic_norm;
use crate::scene::Measurement;
use crate::C64;

/// Solver weights and stopping rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Atomic-norm weight.
    pub lambda: f64,
    /// l1 weight on the demodulation error; `0` disables the error block.
    pub mu: f64,
    /// Augmented-Lagrangian penalty.
    pub rho: f64,
    pub max_iters: usize,
    pub tol_primal: f64,
    pub tol_dual: f64,
}

impl SolverConfig {
    pub const DEFAULT_RHO: f64 = 0.05;
    pub const DEFAULT_MAX_ITERS: usize = 2000;
    pub const DEFAULT_TOL: f64 = 1e-4;

    pub fn new(lambda: f64, mu: f64) -> Self {
        Self {
            lambda,
            mu,
            rho: Self::DEFAULT_RHO,
            max_iters: Self::DEFAULT_MAX_ITERS,
            tol_primal: Self::DEFAULT_TOL,
            tol_dual: Self::DEFAULT_TOL,
        }
    }

    /// `lambda = sigma sqrt(MN log MN)`, `mu = lambda / sqrt(MN)`.
    pub fn from_noise(sigma: f64, m: usize, n: usize) -> Self {
        let (lambda, mu) = default_weights(sigma, m, n);
        Self::new(lambda, mu)
    }

    /// Atomic-norm-only variant of [`SolverConfig::from_noise`].
    pub fn atomic_only(sigma: f64, m: usize, n: usize) -> Self {
        let (lambda, _) = default_weights(sigma, m, n);
        Self::new(lambda, 0.0)
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }

    pub fn with_max_iters(mut self, iters: usize) -> Self {
        self.max_iters = iters;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol_primal = tol;
        self.tol_dual = tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::config(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.mu.is_finite() && self.mu >= 0.0) {
            return Err(Error::config(format!("mu must be nonnegative, got {}", self.mu)));
        }
        if !(self.rho.is_finite() && self.rho > 0.0) {
            return Err(Error::config(format!("rho must be positive, got {}", self.rho)));
        }
        if !(self.tol_primal > 0.0 && self.tol_dual > 0.0) {
            return Err(Error::config("tolerances must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::config("max_iters must be at least 1"));
        }
        Ok(())
    }
}

/// `(lambda, mu)` from the noise standard deviation.
pub fn default_weights(sigma: f64, m: usize, n: usize) -> (f64, f64) {
    let mn = (m * n) as f64;
    let lambda = sigma * (mn * mn.ln()).sqrt();
    (lambda, lambda / mn.sqrt())
}

/// Noise standard deviation from the data alone.
///
/// The symbol-normalized samples are Hann windowed and transformed with a
/// 2-D DFT; with a sparse scene most bins hold only noise, whose DFT
/// magnitude is Rayleigh with median `sigma sqrt(sum(w^2) ln 2)`. The window
/// keeps off-grid paths from leaking into every bin.
pub fn estimate_noise_sigma(meas: &Measurement) -> f64 {
    let (m, n) = (meas.m, meas.n);
    let hann = |len: usize| -> Vec<f64> {
        (0..len)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / len as f64).cos())
            .map(|w| if len == 1 { 1.0 } else { w })
            .collect()
    };
    let (wm, wn) = (hann(m), hann(n));
    let x: Vec<C64> = (0..m * n)
        .map(|i| meas.r_bar[i] / meas.s_hat[i] * (wm[i % m] * wn[i / m]))
        .collect();
    let energy: f64 = wm.iter().map(|w| w * w).sum::<f64>() * wn.iter().map(|w| w * w).sum::<f64>();
    let grid = crate::extract::dual_polynomial_grid(&x, m, n, m, n);
    let mut mags: Vec<f64> = (0..n).flat_map(|q| (0..m).map(move |p| (p, q))).map(|(p, q)| grid[(p, q)]).collect();
    mags.sort_by(f64::total_cmp);
    let median = if mags.len() % 2 == 1 {
        mags[mags.len() / 2]
    } else {
        0.5 * (mags[mags.len() / 2 - 1] + mags[mags.len() / 2])
    };
    median / (energy * std::f64::consts::LN_2).sqrt()
}

/// ADMM iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub z_bar: Vec<C64>,
    pub e_bar: Vec<C64>,
    pub u: ToeplitzParam,
    pub t: f64,
    pub theta: SdpBlock,
    pub upsilon: SdpBlock,
    pub iter: usize,
}

impl SolverState {
    /// All-zero start.
    pub fn zeros(m: usize, n: usize) -> Self {
        let d = m * n;
        Self {
            z_bar: vec![C64::default(); d],
            e_bar: vec![C64::default(); d],
            u: ToeplitzParam::zeros(m, n),
            t: 0.0,
            theta: SdpBlock::zeros(d),
            upsilon: SdpBlock::zeros(d),
            iter: 0,
        }
    }

    /// `[T(U) z; z^H t]`.
    pub fn lifted(&self) -> Result<Mat<C64>> {
        let t_u = block_toeplitz(&self.u, self.u.m(), self.u.n())?;
        Ok(assemble(&t_u, &self.z_bar, self.t))
    }
}

/// Per-iteration history and summary.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub primal_residuals: Vec<f64>,
    pub dual_residuals: Vec<f64>,
    pub objectives: Vec<f64>,
    pub final_objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub seconds_total: f64,
    pub seconds_projection: f64,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub z_hat: Vec<C64>,
    pub e_hat: Vec<C64>,
    /// Dual vector, `-2 upsilon_1`, which equals `S^H (r - S z - e)` at the optimum.
    pub nu_hat: Vec<C64>,
    pub state: SolverState,
    pub diagnostics: Diagnostics,
}

/// Runs ADMM from the zero state.
pub fn solve(meas: &Measurement, config: &SolverConfig) -> Result<Solution> {
    meas.validate()?;
    config.validate()?;
    let state = SolverState::zeros(meas.m, meas.n);
    solve_from(meas, config, state)
}

/// Runs ADMM from a given state.
pub fn solve_from(meas: &Measurement, config: &SolverConfig, mut state: SolverState) -> Result<Solution> {
    meas.validate()?;
    config.validate()?;
    let (m, n) = (meas.m, meas.n);
    let d = m * n;
    let rho = config.rho;
    let lambda = config.lambda;
    let error_block = config.mu > 0.0;
    let started = Instant::now();
    let mut proj_secs = 0.0;

    // S^H S + 2 rho I is diagonal
    let denom: Vec<f64> = meas.s_hat.iter().map(|s| s.norm_sqr() + 2.0 * rho).collect();
    let sh_r = meas.apply_s_adjoint(&meas.r_bar);
    let stop_scale = (d + 1) as f64;

    let mut diag = Diagnostics::default();
    let mut prev_theta = state.theta.assemble();
    let mut upsilon = state.upsilon.assemble();

    for it in 0..config.max_iters {
        let th = &state.theta;
        let up = &state.upsilon;

        // z: (S^H S + 2 rho I)^-1 (S^H r - S^H e + 2 rho theta1 + 2 upsilon1)
        for i in 0..d {
            let rhs = sh_r[i] - meas.s_hat[i].conj() * state.e_bar[i] + th.theta1[i] * (2.0 * rho) + up.theta1[i] * 2.0;
            state.z_bar[i] = rhs / denom[i];
        }

        // t: Theta_bar + (Upsilon_bar - lambda/2) / rho
        state.t = th.theta_bar + (up.theta_bar - lambda / 2.0) / rho;

        // U: normalized adjoint of Theta0 + Upsilon0/rho, shifted at u_0(0)
        let mut p = th.theta0.clone();
        for j in 0..d {
            for i in 0..d {
                p[(i, j)] += up.theta0[(i, j)] / rho;
            }
        }
        let mut u = adjoint_normalized(&p, m, n)?;
        let u00 = u.get(0, 0) - C64::new(lambda / (2.0 * d as f64 * rho), 0.0);
        u.set(0, 0, u00);
        u.symmetrize();
        state.u = u;

        // e: soft threshold of the residual, using the fresh z
        if error_block {
            let resid: Vec<C64> = (0..d).map(|i| meas.r_bar[i] - meas.s_hat[i] * state.z_bar[i]).collect();
            state.e_bar = soft_threshold(&resid, config.mu);
        }

        // Theta: PSD projection of the lifted matrix minus Upsilon/rho
        let lifted = state.lifted()?;
        let mut target = lifted.clone();
        for j in 0..=d {
            for i in 0..=d {
                target[(i, j)] -= upsilon[(i, j)] / rho;
            }
        }
        let tp = Instant::now();
        let theta = psd_project(&target).map_err(|e| match e {
            Error::Numeric { message, .. } => Error::numeric(message, Some(it)),
            other => other,
        })?;
        proj_secs += tp.elapsed().as_secs_f64();

        // Upsilon: dual ascent on Theta - lifted
        let mut primal_sq = 0.0;
        for j in 0..=d {
            for i in 0..=d {
                let gap = theta[(i, j)] - lifted[(i, j)];
                primal_sq += gap.norm_sqr();
                upsilon[(i, j)] += gap * rho;
            }
        }
        let primal = primal_sq.sqrt();
        let dual = rho * frobenius_distance(&theta, &prev_theta);
        if !(primal.is_finite() && dual.is_finite()) {
            return Err(Error::numeric("non-finite residual", Some(it)));
        }

        state.theta = SdpBlock::from_matrix(&theta);
        state.upsilon = SdpBlock::from_matrix(&upsilon);
        state.iter = it + 1;
        prev_theta = theta;

        let obj = objective_primal(&state, meas, config);
        diag.primal_residuals.push(primal);
        diag.dual_residuals.push(dual);
        diag.objectives.push(obj);

        if primal < config.tol_primal * stop_scale && dual < config.tol_dual * stop_scale {
            diag.converged = true;
            break;
        }
    }

    diag.iterations = state.iter;
    diag.final_objective = objective_primal(&state, meas, config);
    diag.seconds_total = started.elapsed().as_secs_f64();
    diag.seconds_projection = proj_secs;
    let nu_hat = state.upsilon.theta1.iter().map(|v| v * -2.0).collect();
    Ok(Solution {
        z_hat: state.z_bar.clone(),
        e_hat: state.e_bar.clone(),
        nu_hat,
        state,
        diagnostics: diag,
    })
}

/// Data-fit residual `r - e - S z`.
pub fn residual(meas: &Measurement, z: &[C64], e: &[C64]) -> Vec<C64> {
    (0..meas.len()).map(|i| meas.r_bar[i] - e[i] - meas.s_hat[i] * z[i]).collect()
}

fn norm2_sq(v: &[C64]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum()
}

fn norm1(v: &[C64]) -> f64 {
    v.iter().map(|x| x.norm()).sum()
}

fn norm_inf(v: &[C64]) -> f64 {
    v.iter().map(|x| x.norm()).fold(0.0, f64::max)
}

/// `Re(y^H x)`.
fn inner_re(x: &[C64], y: &[C64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (b.conj() * a).re).sum()
}

/// SDP objective at an iterate.
pub fn objective_primal(state: &SolverState, meas: &Measurement, config: &SolverConfig) -> f64 {
    let d = meas.len() as f64;
    let w = residual(meas, &state.z_bar, &state.e_bar);
    // tr T(U) = MN u_0(0)
    let trace = d * state.u.get(0, 0).re;
    0.5 * norm2_sq(&w) + config.lambda / (2.0 * d) * trace + config.lambda / 2.0 * state.t + config.mu * norm1(&state.e_bar)
}

/// Dual objective `<S^-H nu, r> - 1/2 ||S^-H nu||^2`.
pub fn objective_dual(nu: &[C64], meas: &Measurement) -> Result<f64> {
    if let Some(j) = meas.s_hat.iter().position(|s| s.norm() == 0.0) {
        return Err(Error::domain(format!("S_tilde diagonal entry {j} is zero")));
    }
    let y: Vec<C64> = nu.iter().zip(&meas.s_hat).map(|(v, s)| v / s.conj()).collect();
    Ok(inner_re(&y, &meas.r_bar) - 0.5 * norm2_sq(&y))
}

/// Dual feasibility: `(||nu||_A^* - lambda, ||S^-H nu||_inf - mu)`; both are
/// nonpositive for a feasible point. The second entry is `None` when `mu = 0`.
pub fn dual_feasibility(nu: &[C64], meas: &Measurement, config: &SolverConfig) -> (f64, Option<f64>) {
    let atomic = dual_atomic_norm(nu, meas.m, meas.n) - config.lambda;
    let inf = (config.mu > 0.0).then(|| {
        let y: Vec<C64> = nu.iter().zip(&meas.s_hat).map(|(v, s)| v / s.conj()).collect();
        norm_inf(&y) - config.mu
    });
    (atomic, inf)
}

/// Residuals of the four optimality conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimalityReport {
    /// `|lambda ||z||_A - <w, S z>|`, with `||z||_A` from the SDP surrogate.
    pub atomic_complementarity: f64,
    /// `|mu ||e||_1 - <w, e>|`; `None` when `mu = 0`.
    pub l1_complementarity: Option<f64>,
    /// `||S^H w||_A^* - lambda`, positive when violated.
    pub dual_atomic_excess: f64,
    /// `||w||_inf - mu`, positive when violated; `None` when `mu = 0`.
    pub dual_inf_excess: Option<f64>,
}

impl OptimalityReport {
    /// All applicable conditions hold within `tol`.
    pub fn is_optimal(&self, tol: f64) -> bool {
        self.atomic_complementarity < tol
            && self.l1_complementarity.is_none_or(|v| v < tol)
            && self.dual_atomic_excess < tol
            && self.dual_inf_excess.is_none_or(|v| v < tol)
    }

    /// Largest applicable residual (excesses counted only when positive).
    pub fn worst(&self) -> f64 {
        [
            Some(self.atomic_complementarity),
            self.l1_complementarity,
            Some(self.dual_atomic_excess.max(0.0)),
            self.dual_inf_excess.map(|v| v.max(0.0)),
        ]
        .into_iter()
        .flatten()
        .fold(0.0, f64::max)
    }
}

/// Optimality residuals at `(z_hat, e_hat)`, with `w = r - e_hat - S z_hat`.
pub fn optimality_residuals(solution: &Solution, meas: &Measurement, config: &SolverConfig) -> OptimalityReport {
    let atomic_norm = 0.5 * solution.state.u.get(0, 0).re + 0.5 * solution.state.t;
    optimality_report(&solution.z_hat, &solution.e_hat, atomic_norm, meas, config)
}

/// Optimality residuals for an arbitrary candidate whose atomic norm is known.
pub fn optimality_report(
    z: &[C64],
    e: &[C64],
    atomic_norm: f64,
    meas: &Measurement,
    config: &SolverConfig,
) -> OptimalityReport {
    let w = residual(meas, z, e);
    let sz = meas.apply_s(z);
    let atomic_complementarity = (config.lambda * atomic_norm - inner_re(&w, &sz)).abs();
    let dual_atomic_excess = dual_atomic_norm(&meas.apply_s_adjoint(&w), meas.m, meas.n) - config.lambda;
    let (l1_complementarity, dual_inf_excess) = if config.mu > 0.0 {
        (
            Some((config.mu * norm1(e) - inner_re(&w, e)).abs()),
            Some(norm_inf(&w) - config.mu),
        )
    } else {
        (None, None)
    };
    OptimalityReport {
        atomic_complementarity,
        l1_complementarity,
        dual_atomic_excess,
        dual_inf_excess,
    }
}

/// Smallest eigenvalue of the final `Theta`.
pub fn theta_min_eigenvalue(solution: &Solution) -> Result<f64> {
    Ok(hermitian_eigenvalues(&solution.state.theta.assemble())?[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{simulate, Constellation, Path, RadarConfig, Scene};

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn one_path(m: usize, n: usize, noise_db: f64, seed: u64) -> Measurement {
        let config = RadarConfig::standard(m, n, noise_db);
        let scene = Scene {
            targets: vec![Path::new(c(1.0, 0.3), 0.23, 0.61).unwrap()],
            clutter: vec![],
        };
        simulate(&scene, &config, &Constellation::qpsk(), 0.0, seed).unwrap().0
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let mut meas = one_path(3, 3, -40.0, 1);
        meas.r_bar = vec![C64::default(); 9];
        let cfg = SolverConfig::new(0.5, 0.1).with_max_iters(200);
        let sol = solve(&meas, &cfg).unwrap();
        assert!(norm_inf(&sol.z_hat) < 1e-9);
        assert!(norm_inf(&sol.e_hat) < 1e-9);
    }

    #[test]
    fn objective_examples() {
        let mut meas = one_path(2, 2, -40.0, 1);
        let cfg = SolverConfig::new(1.0, 0.1);
        let state = SolverState::zeros(2, 2);
        meas.r_bar = vec![C64::default(); 4];
        assert_eq!(objective_primal(&state, &meas, &cfg), 0.0);
        meas.r_bar = vec![c(1.0, 0.0); 4];
        assert!((objective_primal(&state, &meas, &cfg) - 2.0).abs() < 1e-15);
        assert_eq!(objective_dual(&[C64::default(); 4], &meas).unwrap(), 0.0);
    }

    #[test]
    fn dual_objective_closed_form_in_scale() {
        let meas = one_path(3, 3, -20.0, 4);
        let nu0 = meas.apply_s_adjoint(&meas.r_bar);
        let rr = norm2_sq(&meas.r_bar);
        for s in [0.1, 0.25, 0.5] {
            let nu: Vec<C64> = nu0.iter().map(|v| v * s).collect();
            let expect = rr * s - 0.5 * s * s * rr;
            assert!((objective_dual(&nu, &meas).unwrap() - expect).abs() < 1e-12 * rr.max(1.0));
        }
        let mut bad = meas.clone();
        bad.s_hat[0] = C64::default();
        assert!(objective_dual(&nu0, &bad).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::new(0.0, 0.1).validate().is_err());
        assert!(SolverConfig::new(1.0, -0.1).validate().is_err());
        assert!(SolverConfig::new(1.0, 0.1).with_rho(0.0).validate().is_err());
        assert!(SolverConfig::new(1.0, 0.0).validate().is_ok());
    }

    #[test]
    fn zero_symbol_is_domain_error() {
        let mut meas = one_path(3, 3, -40.0, 1);
        meas.s_hat[4] = C64::default();
        assert!(matches!(solve(&meas, &SolverConfig::new(1.0, 0.1)), Err(Error::Domain(_))));
    }

    #[test]
    fn trivial_solution_violates_certificate() {
        let meas = one_path(4, 4, -40.0, 2);
        let cfg = SolverConfig::new(0.1, 0.05);
        let zeros = vec![C64::default(); 16];
        let rep = optimality_report(&zeros, &zeros, 0.0, &meas, &cfg);
        assert!(rep.dual_atomic_excess > 0.0);
        assert!(rep.dual_inf_excess.unwrap() > 0.0);
        assert!(!rep.is_optimal(1e-3));
    }

    #[test]
    fn atomic_only_mode_skips_l1_checks() {
        let meas = one_path(3, 3, -40.0, 2);
        let cfg = SolverConfig::new(0.1, 0.0);
        let zeros = vec![C64::default(); 9];
        let rep = optimality_report(&zeros, &zeros, 0.0, &meas, &cfg);
        assert!(rep.l1_complementarity.is_none() && rep.dual_inf_excess.is_none());
    }

    #[test]
    fn small_lambda_fits_clean_data() {
        let meas = one_path(4, 4, f64::NEG_INFINITY, 3);
        let rmax = norm_inf(&meas.r_bar);
        let lambda = 0.01 * norm2_sq(&meas.r_bar).sqrt();
        let cfg = SolverConfig::new(lambda, 0.0).with_rho(1.0).with_max_iters(3000).with_tol(1e-7);
        let sol = solve(&meas, &cfg).unwrap();
        let z = meas.z_bar_true.as_ref().unwrap();
        let err: Vec<C64> = sol.z_hat.iter().zip(z).map(|(a, b)| a - b).collect();
        let rel = norm2_sq(&err).sqrt() / norm2_sq(z).sqrt();
        assert!(rel < 1e-2, "relative error {rel}, rmax {rmax}");
    }

    #[test]
    fn deterministic_iterates() {
        let meas = one_path(3, 3, -20.0, 5);
        let cfg = SolverConfig::from_noise(0.1, 3, 3).with_max_iters(50);
        let a = solve(&meas, &cfg).unwrap();
        let b = solve(&meas, &cfg).unwrap();
        assert_eq!(a.z_hat, b.z_hat);
        assert_eq!(a.nu_hat, b.nu_hat);
        assert_eq!(a.diagnostics.primal_residuals, b.diagnostics.primal_residuals);
    }

    #[test]
    fn default_weight_formulas() {
        let (lambda, mu) = default_weights(0.1, 4, 4);
        assert!((lambda - 0.1 * (16.0 * 16f64.ln()).sqrt()).abs() < 1e-15);
        assert!((mu - lambda / 4.0).abs() < 1e-15);
    }

    #[test]
    fn noise_sigma_estimate_is_close() {
        let meas = one_path(16, 16, -20.0, 9);
        let sigma = estimate_noise_sigma(&meas);
        assert!((sigma - 0.1).abs() < 0.03, "sigma {sigma}");
    }
}
