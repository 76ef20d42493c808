//! Structured linear algebra behind the atomic-norm semidefinite program.
//!
//! The two-level block-Toeplitz lift `T(U)` maps a `(2M-1) x (2N-1)` parameter
//! matrix onto an `MN x MN` Hermitian matrix whose `(n1, n2)` block is the
//! `M x M` Toeplitz matrix built from column `n1 - n2` of `U`. Its normalized
//! adjoint averages each pair of (block, in-block) diagonals and is a left
//! inverse of the lift.

use faer::{Mat, Side};

use crate::error::{Error, Result};
use crate::C64;

/// Parameter of the two-level Toeplitz lift.
///
/// Entry `u_l(k)` with `l` in `-(N-1)..=N-1` (block offset) and `k` in
/// `-(M-1)..=M-1` (in-block offset) is stored at row `k + M - 1`,
/// column `l + N - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToeplitzParam {
    m: usize,
    n: usize,
    data: Mat<C64>,
}

impl ToeplitzParam {
    pub fn zeros(m: usize, n: usize) -> Self {
        Self {
            m,
            n,
            data: Mat::zeros(2 * m - 1, 2 * n - 1),
        }
    }

    /// Wraps a raw `(2M-1) x (2N-1)` matrix.
    pub fn from_matrix(m: usize, n: usize, data: Mat<C64>) -> Result<Self> {
        if data.nrows() != 2 * m - 1 || data.ncols() != 2 * n - 1 {
            return Err(Error::domain(format!(
                "toeplitz parameter must be {}x{}, got {}x{}",
                2 * m - 1,
                2 * n - 1,
                data.nrows(),
                data.ncols()
            )));
        }
        Ok(Self { m, n, data })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn as_matrix(&self) -> &Mat<C64> {
        &self.data
    }

    /// `u_l(k)`.
    pub fn get(&self, l: isize, k: isize) -> C64 {
        self.data[self.index(l, k)]
    }

    pub fn set(&mut self, l: isize, k: isize, value: C64) {
        let idx = self.index(l, k);
        self.data[idx] = value;
    }

    fn index(&self, l: isize, k: isize) -> (usize, usize) {
        let (m, n) = (self.m as isize, self.n as isize);
        debug_assert!(l.abs() < n && k.abs() < m);
        ((k + m - 1) as usize, (l + n - 1) as usize)
    }

    /// Replaces each entry by the average of itself and `conj(u_{-l}(-k))`.
    pub fn symmetrize(&mut self) {
        let (m, n) = (self.m as isize, self.n as isize);
        for l in -(n - 1)..n {
            for k in -(m - 1)..m {
                // visit each (entry, mirror) pair once
                if (l, k) < (-l, -k) {
                    continue;
                }
                let a = self.get(l, k);
                let b = self.get(-l, -k).conj();
                let avg = (a + b) * 0.5;
                self.set(l, k, avg);
                self.set(-l, -k, avg.conj());
            }
        }
    }

    /// Largest deviation from `u_{-l}(-k) = conj(u_l(k))`.
    pub fn hermitian_defect(&self) -> f64 {
        let (m, n) = (self.m as isize, self.n as isize);
        let mut worst = 0.0f64;
        for l in -(n - 1)..n {
            for k in -(m - 1)..m {
                worst = worst.max((self.get(l, k) - self.get(-l, -k).conj()).norm());
            }
        }
        worst
    }
}

/// The `(MN+1) x (MN+1)` Hermitian block `[theta0, theta1; theta1^H, theta_bar]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SdpBlock {
    pub theta0: Mat<C64>,
    pub theta1: Vec<C64>,
    pub theta_bar: f64,
}

impl SdpBlock {
    pub fn zeros(dim: usize) -> Self {
        Self {
            theta0: Mat::zeros(dim, dim),
            theta1: vec![C64::new(0.0, 0.0); dim],
            theta_bar: 0.0,
        }
    }

    /// Splits a full `(d+1) x (d+1)` matrix. The corner is taken as its real part.
    pub fn from_matrix(full: &Mat<C64>) -> Self {
        let d = full.nrows() - 1;
        Self {
            theta0: Mat::from_fn(d, d, |i, j| full[(i, j)]),
            theta1: (0..d).map(|i| full[(i, d)]).collect(),
            theta_bar: full[(d, d)].re,
        }
    }

    pub fn dim(&self) -> usize {
        self.theta1.len()
    }

    pub fn assemble(&self) -> Mat<C64> {
        assemble(&self.theta0, &self.theta1, self.theta_bar)
    }
}

/// Builds `[top_left, col; col^H, corner]`.
pub fn assemble(top_left: &Mat<C64>, col: &[C64], corner: f64) -> Mat<C64> {
    let d = col.len();
    Mat::from_fn(d + 1, d + 1, |i, j| match (i < d, j < d) {
        (true, true) => top_left[(i, j)],
        (true, false) => col[i],
        (false, true) => col[j].conj(),
        (false, false) => C64::new(corner, 0.0),
    })
}

/// The two-level block-Toeplitz matrix `T(U)`.
///
/// Entry `(n1*M + m1, n2*M + m2)` equals `u_{n1-n2}(m1-m2)`.
pub fn block_toeplitz(u: &ToeplitzParam, m: usize, n: usize) -> Result<Mat<C64>> {
    if u.m() != m || u.n() != n {
        return Err(Error::domain(format!(
            "toeplitz parameter built for (M, N) = ({}, {}), requested ({m}, {n})",
            u.m(),
            u.n()
        )));
    }
    Ok(Mat::from_fn(m * n, m * n, |row, col| {
        let (n1, m1) = ((row / m) as isize, (row % m) as isize);
        let (n2, m2) = ((col / m) as isize, (col % m) as isize);
        u.get(n1 - n2, m1 - m2)
    }))
}

/// Normalized adjoint of [`block_toeplitz`].
///
/// Each `u_j(k)` is the mean of the `(N-|j|)(M-|k|)` entries of `p` lying on
/// block diagonal `j` and in-block diagonal `k`.
pub fn adjoint_normalized(p: &Mat<C64>, m: usize, n: usize) -> Result<ToeplitzParam> {
    let dim = m * n;
    if p.nrows() != dim || p.ncols() != dim {
        return Err(Error::domain(format!(
            "expected a {dim}x{dim} matrix, got {}x{}",
            p.nrows(),
            p.ncols()
        )));
    }
    let mut sums: Mat<C64> = Mat::zeros(2 * m - 1, 2 * n - 1);
    for col in 0..dim {
        let (n2, m2) = (col / m, col % m);
        for row in 0..dim {
            let (n1, m1) = (row / m, row % m);
            // row offset k = m1 - m2, column offset l = n1 - n2
            sums[(m1 + m - 1 - m2, n1 + n - 1 - n2)] += p[(row, col)];
        }
    }
    let (mi, ni) = (m as isize, n as isize);
    let mut out = ToeplitzParam::zeros(m, n);
    for l in -(ni - 1)..ni {
        for k in -(mi - 1)..mi {
            let count = ((ni - l.abs()) * (mi - k.abs())) as f64;
            let s = sums[((k + mi - 1) as usize, (l + ni - 1) as usize)];
            out.set(l, k, s / count);
        }
    }
    Ok(out)
}

/// Frobenius-nearest positive semidefinite matrix.
///
/// The input is symmetrized as `(A + A^H)/2` before the eigendecomposition;
/// negative eigenvalues are clamped to zero.
pub fn psd_project(a: &Mat<C64>) -> Result<Mat<C64>> {
    Ok(psd_project_with_spectrum(a)?.0)
}

/// [`psd_project`] that also returns the eigenvalues of the symmetrized input
/// in nondecreasing order.
pub fn psd_project_with_spectrum(a: &Mat<C64>) -> Result<(Mat<C64>, Vec<f64>)> {
    let d = a.nrows();
    if a.ncols() != d {
        return Err(Error::domain("psd_project needs a square matrix"));
    }
    let sym = hermitian_part(a);
    let evd = sym.self_adjoint_eigen(Side::Lower).map_err(|e| {
        Error::numeric(
            format!(
                "eigendecomposition of {d}x{d} matrix failed ({e:?}); max |entry| = {:e}",
                max_abs(&sym)
            ),
            None,
        )
    })?;
    let values: Vec<f64> = evd.S().column_vector().iter().map(|v| v.re).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("non-finite eigenvalue in psd_project", None));
    }
    let keep: Vec<usize> = (0..d).filter(|&i| values[i] > 0.0).collect();
    let u = evd.U();
    let w = Mat::from_fn(d, keep.len(), |i, j| u[(i, keep[j])] * values[keep[j]].sqrt());
    let mut out = &w * w.adjoint();
    // force exact Hermitian symmetry
    for i in 0..d {
        out[(i, i)].im = 0.0;
        for j in 0..i {
            let v = (out[(i, j)] + out[(j, i)].conj()) * 0.5;
            out[(i, j)] = v;
            out[(j, i)] = v.conj();
        }
    }
    Ok((out, values))
}

/// Eigenvalues of the Hermitian part of `a`, nondecreasing.
pub fn hermitian_eigenvalues(a: &Mat<C64>) -> Result<Vec<f64>> {
    let sym = hermitian_part(a);
    let vals = sym
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::numeric(format!("eigenvalue computation failed ({e:?})"), None))?;
    Ok(vals)
}

fn hermitian_part(a: &Mat<C64>) -> Mat<C64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| (a[(i, j)] + a[(j, i)].conj()) * 0.5)
}

fn max_abs(a: &Mat<C64>) -> f64 {
    let mut m = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            m = m.max(a[(i, j)].norm());
        }
    }
    m
}

/// Complex soft threshold, the proximal operator of `mu * |.|_1`.
pub fn soft_threshold(v: &[C64], mu: f64) -> Vec<C64> {
    v.iter().map(|&x| soft_threshold_scalar(x, mu)).collect()
}

#[inline]
pub fn soft_threshold_scalar(x: C64, mu: f64) -> C64 {
    let mag = x.norm();
    if mag <= mu {
        C64::new(0.0, 0.0)
    } else {
        x * ((mag - mu) / mag)
    }
}

/// Frobenius norm of `a - b`.
pub fn frobenius_distance(a: &Mat<C64>, b: &Mat<C64>) -> f64 {
    let mut acc = 0.0;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            acc += (a[(i, j)] - b[(i, j)]).norm_sqr();
        }
    }
    acc.sqrt()
}
