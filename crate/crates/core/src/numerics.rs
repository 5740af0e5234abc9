//! Complex linear-algebra helpers shared by the inference pipeline.
//!
//! Every covariance that leaves this module is exactly Hermitian: products
//! and solves are followed by an explicit symmetrization so that round-off
//! never accumulates an anti-Hermitian part across recursions.

use std::f64::consts::{E, PI};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

/// Diagonal loading used by the explicitly regularized inversions.
pub const DEFAULT_JITTER: f64 = 1e-7;

/// Smallest eigenvalue tolerated, relative to the trace, for a matrix to
/// count as positive semidefinite.
pub const PSD_TOLERANCE: f64 = 1e-9;

/// Relative loads tried, in order, when a Cholesky factorization fails.
const FALLBACK_LOADS: [f64; 5] = [1e-14, 1e-12, 1e-10, 1e-8, 1e-6];

/// A Hermitian matrix intended to hold a covariance or a precision.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianPsd(CMat);

impl HermitianPsd {
    pub fn identity(dim: usize) -> Self {
        Self(CMat::identity(dim, dim))
    }

    pub fn scaled_identity(dim: usize, scale: f64) -> Self {
        Self(CMat::from_diagonal_element(dim, dim, Complex64::new(scale, 0.0)))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(CMat::zeros(dim, dim))
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = CMat::zeros(n, n);
        for (i, d) in diag.iter().enumerate() {
            m[(i, i)] = Complex64::new(*d, 0.0);
        }
        Self(m)
    }

    /// Symmetrizes `m`; panics on a non-square input.
    pub(crate) fn symmetrized(m: CMat) -> Self {
        hermitianize(&m).expect("square matrix")
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMat {
        &self.0
    }

    pub fn into_matrix(self) -> CMat {
        self.0
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.0[(i, i)].re).sum()
    }

    pub fn add(&self, other: &HermitianPsd) -> HermitianPsd {
        // Entrywise sums of Hermitian matrices stay exactly Hermitian.
        HermitianPsd(&self.0 + &other.0)
    }

    pub fn scale(&self, factor: f64) -> HermitianPsd {
        HermitianPsd(self.0.map(|z| z * factor))
    }

    pub fn mul_vec(&self, v: &CVec) -> CVec {
        &self.0 * v
    }

    /// Adds `value` to every diagonal entry.
    pub fn add_diagonal(&self, value: f64) -> HermitianPsd {
        let mut m = self.0.clone();
        for i in 0..m.nrows() {
            m[(i, i)].re += value;
        }
        HermitianPsd(m)
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let eig = SymmetricEigen::new(self.0.clone());
        eig.eigenvalues.iter().copied().collect()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()
            .into_iter()
            .fold(f64::INFINITY, f64::min)
    }

    /// Smallest-eigenvalue check with tolerance `PSD_TOLERANCE · trace`.
    pub fn is_psd(&self) -> bool {
        if self.dim() == 0 {
            return true;
        }
        let scale = self.trace().abs().max(f64::MIN_POSITIVE);
        self.min_eigenvalue() >= -PSD_TOLERANCE * scale
    }

    /// Inverse of a positive-definite matrix.
    ///
    /// Uses an unloaded Cholesky factorization when it succeeds; otherwise a
    /// growing diagonal load (relative to the mean diagonal) is tried before
    /// giving up with a conditioning error.
    pub fn inverse(&self) -> Result<HermitianPsd> {
        let chol = self.factor("inverse")?;
        Ok(HermitianPsd::symmetrized(chol.inverse()))
    }

    /// Solves `self · y = rhs` for a positive-definite `self`.
    pub fn solve(&self, rhs: &CVec) -> Result<CVec> {
        let chol = self.factor("solve")?;
        Ok(chol.solve(rhs))
    }

    /// Inverse together with `log|self|`.
    pub fn inverse_and_logdet(&self) -> Result<(HermitianPsd, f64)> {
        let chol = self.factor("inverse")?;
        let logdet = cholesky_logdet(&chol);
        Ok((HermitianPsd::symmetrized(chol.inverse()), logdet))
    }

    /// `log|self|` for a positive-definite matrix.
    pub fn log_det(&self) -> Result<f64> {
        let chol = self.factor("log-determinant")?;
        Ok(cholesky_logdet(&chol))
    }

    fn factor(&self, context: &str) -> Result<Cholesky<Complex64, Dyn>> {
        if let Some(chol) = checked_cholesky(self.0.clone()) {
            return Ok(chol);
        }
        let n = self.dim().max(1) as f64;
        let base = (self.trace().abs() / n).max(f64::MIN_POSITIVE);
        for load in FALLBACK_LOADS {
            if let Some(chol) = checked_cholesky(self.add_diagonal(load * base).0) {
                log::debug!("{context}: Cholesky needed a relative diagonal load of {load:e}");
                return Ok(chol);
            }
        }
        Err(Error::Conditioning {
            context: context.to_string(),
            condition: self.condition_estimate(),
        })
    }

    /// Ratio of extreme eigenvalue magnitudes.
    pub fn condition_estimate(&self) -> f64 {
        let eig = self.eigenvalues();
        let max = eig.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let min = eig.iter().fold(f64::INFINITY, |a, b| a.min(b.abs()));
        if min == 0.0 {
            f64::INFINITY
        } else {
            max / min
        }
    }
}

/// Cholesky factorization that fails on non-positive pivots. The complex
/// factorization otherwise takes complex square roots of negative pivots.
fn checked_cholesky(m: CMat) -> Option<Cholesky<Complex64, Dyn>> {
    let chol = m.cholesky()?;
    let l = chol.l_dirty();
    let ok = (0..l.nrows()).all(|i| {
        let d = l[(i, i)];
        d.re > 0.0 && d.re.is_finite() && d.im.abs() <= 1e-12 * d.re
    });
    ok.then_some(chol)
}

fn cholesky_logdet(chol: &Cholesky<Complex64, Dyn>) -> f64 {
    let l = chol.l_dirty();
    2.0 * (0..l.nrows()).map(|i| l[(i, i)].re.ln()).sum::<f64>()
}

/// Returns `(M + Mᴴ) / 2`, with the diagonal made exactly real.
pub fn hermitianize(m: &CMat) -> Result<HermitianPsd> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::Dimension(format!(
            "hermitianize needs a square matrix, got {}x{}",
            n,
            m.ncols()
        )));
    }
    let mut out = CMat::zeros(n, n);
    for i in 0..n {
        out[(i, i)] = Complex64::new(m[(i, i)].re, 0.0);
        for j in (i + 1)..n {
            let z = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
            out[(i, j)] = z;
            out[(j, i)] = z.conj();
        }
    }
    Ok(HermitianPsd(out))
}

/// `(M + jitter·I)⁻¹`, hermitianized.
pub fn regularized_inverse(m: &HermitianPsd, jitter: f64) -> Result<HermitianPsd> {
    if !(jitter > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "jitter must be positive, got {jitter}"
        )));
    }
    let loaded = m.add_diagonal(jitter);
    match checked_cholesky(loaded.0.clone()) {
        Some(chol) => Ok(HermitianPsd::symmetrized(chol.inverse())),
        None => Err(Error::Conditioning {
            context: "regularized inverse".to_string(),
            condition: loaded.condition_estimate(),
        }),
    }
}

/// Log-density of the proper complex Gaussian `N_c(x; μ, Σ)`:
/// `−log|πΣ| − (x−μ)ᴴ Σ⁻¹ (x−μ)`.
pub fn complex_gaussian_logpdf(x: &CVec, mean: &CVec, cov: &HermitianPsd) -> Result<f64> {
    let n = cov.dim();
    if x.len() != n || mean.len() != n {
        return Err(Error::Dimension(format!(
            "logpdf: x has {}, mean has {}, covariance is {n}x{n}",
            x.len(),
            mean.len()
        )));
    }
    let chol = checked_cholesky(cov.0.clone()).ok_or_else(|| Error::Conditioning {
        context: "complex Gaussian log-density".to_string(),
        condition: cov.condition_estimate(),
    })?;
    let diff = x - mean;
    let solved = chol.solve(&diff);
    let quad = diff.dotc(&solved).re;
    Ok(-(n as f64) * PI.ln() - cholesky_logdet(&chol) - quad)
}

/// Differential entropy of an `n`-dimensional proper complex Gaussian with
/// the given `log|Σ|`.
pub fn complex_gaussian_entropy(dim: usize, logdet: f64) -> f64 {
    dim as f64 * (PI * E).ln() + logdet
}

/// Kronecker product `M ⊗ I_n`.
pub fn kron_identity(m: &CMat, n: usize) -> CMat {
    let (r, c) = m.shape();
    let mut out = CMat::zeros(r * n, c * n);
    for i in 0..r {
        for j in 0..c {
            let z = m[(i, j)];
            if z != Complex64::new(0.0, 0.0) {
                for d in 0..n {
                    out[(i * n + d, j * n + d)] = z;
                }
            }
        }
    }
    out
}

/// Column-wise vectorization.
pub fn vec_columns(m: &CMat) -> CVec {
    CVec::from_column_slice(m.as_slice())
}

/// Inverse of [`vec_columns`].
pub fn unvec_columns(v: &CVec, rows: usize, cols: usize) -> Result<CMat> {
    if v.len() != rows * cols {
        return Err(Error::Dimension(format!(
            "cannot reshape a length-{} vector to {rows}x{cols}",
            v.len()
        )));
    }
    Ok(CMat::from_column_slice(rows, cols, v.as_slice()))
}

/// Outer product `u vᴴ`.
pub fn outer(u: &CVec, v: &CVec) -> CMat {
    u * v.adjoint()
}

pub fn is_finite_vec(v: &CVec) -> bool {
    v.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

pub fn is_finite_mat(m: &CMat) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}
