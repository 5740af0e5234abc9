//! Source and component posteriors (E-S and E-C steps).
//!
//! Given the current posterior of the mixing matrix at one time-frequency
//! point, the sources follow a multichannel Wiener filter. Component
//! statistics are obtained from the source posterior through the Woodbury
//! identity, so no `K × K` matrix is ever formed.

use nalgebra::DVector;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::nmf::{NmfModel, FACTOR_FLOOR};
use crate::numerics::{unvec_columns, CMat, CVec, HermitianPsd};

/// First and second moments of the mixing matrix at one TF point.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelMoment {
    /// `U = E[Aᴴ A]`, with `U_{jr} = tr(Q^{ηa}_{rj})`.
    pub u: HermitianPsd,
    /// `Â`, the `I × J` posterior mean.
    pub a_hat: CMat,
}

impl ChannelMoment {
    pub fn channels(&self) -> usize {
        self.a_hat.nrows()
    }

    pub fn sources(&self) -> usize {
        self.a_hat.ncols()
    }
}

/// Builds `Â` and `U` from the mean and covariance of `vec(A)`.
pub fn channel_moment(a_hat: &CVec, cov: &HermitianPsd, channels: usize) -> Result<ChannelMoment> {
    let dim = a_hat.len();
    if channels == 0 || dim % channels != 0 || cov.dim() != dim {
        return Err(Error::Dimension(format!(
            "mixing vector of length {dim} with {} covariance does not split into {channels} channels",
            cov.dim()
        )));
    }
    let j_n = dim / channels;
    let a = unvec_columns(a_hat, channels, j_n)?;
    let mut u = a.adjoint() * &a;
    let c = cov.matrix();
    for j in 0..j_n {
        for r in 0..j_n {
            // (r, j) sub-block of Σ^{ηa}.
            let mut tr = Complex64::new(0.0, 0.0);
            for i in 0..channels {
                tr += c[(r * channels + i, j * channels + i)];
            }
            u[(j, r)] += tr;
        }
    }
    Ok(ChannelMoment { u: HermitianPsd::symmetrized(u), a_hat: a })
}

/// Posterior of the source vector at one TF point.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceFrame {
    /// `ŝ`.
    pub mean: CVec,
    /// `Σ^{ηs}`.
    pub cov: HermitianPsd,
    /// `Q^{ηs} = Σ^{ηs} + ŝ ŝᴴ`.
    pub moment: HermitianPsd,
    /// `log|Σ^{ηs}|`.
    pub cov_logdet: f64,
    /// `Âᴴ x / v − U ŝ / v`, shared by all components of a source.
    pub residual_gain: CVec,
    /// `diag(U Σ^{ηs})`, real up to rounding.
    pub u_cov_diag: DVector<f64>,
}

/// Wiener filter: `Σ^{ηs} = (diag(1/p) + U/v)⁻¹`, `ŝ = Σ^{ηs} Âᴴ x / v`.
pub fn source_posterior(
    cm: &ChannelMoment,
    prior_var: &DVector<f64>,
    x: &CVec,
    noise_var: f64,
) -> Result<SourceFrame> {
    let j_n = cm.sources();
    if prior_var.len() != j_n || x.len() != cm.channels() {
        return Err(Error::Dimension(format!(
            "source posterior: {} prior variances and {} observations for a {}x{j_n} mixing matrix",
            prior_var.len(),
            x.len(),
            cm.channels()
        )));
    }
    if !(noise_var > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "noise variance must be positive, got {noise_var}"
        )));
    }
    let inv_v = 1.0 / noise_var;
    let mut precision = cm.u.matrix() * Complex64::new(inv_v, 0.0);
    for j in 0..j_n {
        precision[(j, j)] += 1.0 / prior_var[j].max(FACTOR_FLOOR);
    }
    let precision = HermitianPsd::symmetrized(precision);
    let (cov, precision_logdet) = precision.inverse_and_logdet()?;
    let ax = cm.a_hat.adjoint() * x * Complex64::new(inv_v, 0.0);
    let mean = cov.mul_vec(&ax);
    let moment = HermitianPsd::symmetrized(cov.matrix() + &mean * mean.adjoint());
    let residual_gain = &ax - cm.u.mul_vec(&mean) * Complex64::new(inv_v, 0.0);
    let uc = cm.u.matrix() * cov.matrix();
    let u_cov_diag = DVector::from_iterator(j_n, (0..j_n).map(|j| uc[(j, j)].re));
    Ok(SourceFrame { mean, cov, moment, cov_logdet: -precision_logdet, residual_gain, u_cov_diag })
}

/// Diagonal component statistics at one TF point.
#[derive(Clone, Debug, PartialEq)]
pub struct ComponentFrame {
    /// `ĉ_k`.
    pub means: Vec<Complex64>,
    /// `Σ^{ηc}_{kk}`.
    pub vars: Vec<f64>,
    /// `Q^{ηc}_{kk} = Σ^{ηc}_{kk} + |ĉ_k|²`.
    pub moments: Vec<f64>,
    /// `log|Σ^{ηc}|` of the full component covariance.
    pub cov_logdet: f64,
}

/// `Σ^{ηc}_{kk} = d_k (1 − d_k [U Σ^{ηs}]_{jj} / (v p_j))` and
/// `ĉ_k = d_k [Âᴴ x / v − U ŝ / v]_j`, where `d_k = w_{fk} h_{kℓ}`,
/// `j` is the source of `k` and `p_j = Σ_{ρ ∈ 𝒦_j} d_ρ`.
pub fn component_posterior_diag(
    model: &NmfModel,
    f: usize,
    l: usize,
    src: &SourceFrame,
    noise_var: f64,
) -> Result<ComponentFrame> {
    let k_n = model.components();
    if src.mean.len() != model.sources() {
        return Err(Error::Dimension(format!(
            "source posterior has {} sources, model has {}",
            src.mean.len(),
            model.sources()
        )));
    }
    let p = model.prior_source_variance(f, l).map(|p| p.max(FACTOR_FLOOR));
    let mut out = ComponentFrame {
        means: Vec::with_capacity(k_n),
        vars: Vec::with_capacity(k_n),
        moments: Vec::with_capacity(k_n),
        cov_logdet: src.cov_logdet - p.iter().map(|p| p.ln()).sum::<f64>(),
    };
    for k in 0..k_n {
        let j = model.source_of(k);
        let d = model.component_variance(k, f, l);
        let var = (d * (1.0 - d * src.u_cov_diag[j] / (noise_var * p[j]))).clamp(0.0, d);
        let mean = src.residual_gain[j] * d;
        out.means.push(mean);
        out.vars.push(var);
        out.moments.push(var + mean.norm_sqr());
        out.cov_logdet += d.ln();
    }
    Ok(out)
}
