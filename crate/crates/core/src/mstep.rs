//! Parameter updates for the channel model and the noise, and the
//! objective functions used to monitor the iterations.
//!
//! Everything here works on one frequency bin. The NMF factors, which couple
//! bins, are updated in [`crate::nmf`].

use std::f64::consts::{E, PI};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::estep_sources::{ChannelMoment, ComponentFrame, SourceFrame};
use crate::numerics::{hermitianize, CMat, CVec, HermitianPsd};
use crate::smoother::MixingPosterior;

/// Additive regularizer of the noise variance, also its lower bound.
pub const NOISE_FLOOR: f64 = 1e-7;

/// Prior of the mixing-vector chain at one frequency, plus the noise level.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelPrior {
    /// `μ^a`, the mean of the first mixing vector.
    pub mean: CVec,
    /// `Σ^a`, covariance of the first state and of every transition.
    pub evolution_cov: HermitianPsd,
    /// `v`, the sensor noise variance.
    pub noise_var: f64,
}

impl ChannelPrior {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.evolution_cov.dim() != self.mean.len() {
            return Err(Error::Dimension(format!(
                "prior mean has length {}, evolution covariance is {1}x{1}",
                self.mean.len(),
                self.evolution_cov.dim()
            )));
        }
        if !(self.noise_var > 0.0) || !self.noise_var.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "noise variance must be positive, got {}",
                self.noise_var
            )));
        }
        Ok(())
    }
}

/// `xᴴx − 2 Re(xᴴ Â ŝ) + tr(U Q^{ηs})`: expected squared residual of one
/// frame.
pub fn expected_residual(x: &CVec, cm: &ChannelMoment, src: &SourceFrame) -> f64 {
    let fit = &cm.a_hat * &src.mean;
    let cross = x.dotc(&fit).re;
    let tr = (cm.u.matrix() * src.moment.matrix()).trace().re;
    x.norm_squared() - 2.0 * cross + tr
}

/// `v = (1/LI) Σ_ℓ E‖x_ℓ − A_ℓ s_ℓ‖² + 10⁻⁷`.
pub fn update_noise_variance(
    x: &[CVec],
    channel: &[ChannelMoment],
    sources: &[SourceFrame],
) -> Result<f64> {
    if x.is_empty() || x.len() != channel.len() || x.len() != sources.len() {
        return Err(Error::Dimension(format!(
            "noise update: {} frames, {} channel moments, {} source frames",
            x.len(),
            channel.len(),
            sources.len()
        )));
    }
    let count = (x.len() * x[0].len()) as f64;
    let total: f64 = x
        .iter()
        .zip(channel)
        .zip(sources)
        .map(|((x, cm), s)| expected_residual(x, cm, s))
        .sum();
    let v = total / count;
    if v < 0.0 {
        log::warn!("negative expected residual {v:e}; clamping noise variance");
    }
    Ok(v.max(0.0) + NOISE_FLOOR)
}

/// `μ^a = â_1`.
pub fn update_prior_mean(post: &MixingPosterior) -> CVec {
    post.means[0].clone()
}

/// `E[(a_{ℓ+1} − a_ℓ)(a_{ℓ+1} − a_ℓ)ᴴ]` summed over pairs:
/// `Q_{11} − Q_{12} − Q_{21} + Q_{22}` of the pairwise moment.
pub fn transition_moment(pair_moment: &HermitianPsd) -> CMat {
    let d = pair_moment.dim() / 2;
    let q = pair_moment.matrix();
    q.view((0, 0), (d, d)) - q.view((0, d), (d, d)) - q.view((d, 0), (d, d))
        + q.view((d, d), (d, d))
}

/// `Σ^a = (1/L)(Q_{11} − Q_{12} − Q_{21} + Q_{22} + Σ^{ηa}_1)`, made Hermitian
/// and, if rounding left it indefinite, loaded back onto the PSD cone.
pub fn update_evolution_cov(post: &MixingPosterior) -> Result<HermitianPsd> {
    let frames = post.frames();
    if frames == 0 {
        return Err(Error::InvalidParameter("empty mixing posterior".into()));
    }
    let mut s = post.covs[0].matrix().clone();
    if frames > 1 {
        s += transition_moment(&post.pair_moment);
    }
    let sigma = hermitianize(&(s / Complex64::new(frames as f64, 0.0)))?;
    let min_eig = sigma.min_eigenvalue();
    if min_eig < 0.0 {
        let load = -min_eig + NOISE_FLOOR * sigma.trace().abs().max(1.0) / sigma.dim() as f64;
        log::warn!("evolution covariance indefinite (min eigenvalue {min_eig:e}); loading by {load:e}");
        return Ok(sigma.add_diagonal(load));
    }
    Ok(sigma)
}

/// Observation term `Σ_ℓ [−I log(πv) − E‖x_ℓ − A_ℓ s_ℓ‖²/v]` from the total
/// expected residual over `count = L·I` coefficients.
pub fn observation_term(residual: f64, count: usize, noise_var: f64) -> f64 {
    -(count as f64) * (PI * noise_var).ln() - residual / noise_var
}

/// Component prior term `Σ [−log(π d_k) − Q^{ηc}_{kk} / d_k]`.
pub fn component_prior_term(prior_var: &[f64], moments: &[f64]) -> f64 {
    prior_var
        .iter()
        .zip(moments)
        .map(|(d, q)| -(PI * d).ln() - q / d)
        .sum()
}

/// Initial-state and transition terms of the channel chain:
/// `−L log|πΣ^a| − tr((Σ^a)⁻¹ (Σ^{ηa}_1 + (â_1 − μ^a)(â_1 − μ^a)ᴴ + Q_{11} − Q_{12} − Q_{21} + Q_{22}))`.
pub fn channel_prior_term(post: &MixingPosterior, prior: &ChannelPrior) -> Result<f64> {
    let frames = post.frames();
    let d = prior.dim();
    let (inv, logdet) = prior.evolution_cov.inverse_and_logdet()?;
    let diff = &post.means[0] - &prior.mean;
    let mut s = post.covs[0].matrix() + &diff * diff.adjoint();
    if frames > 1 {
        s += transition_moment(&post.pair_moment);
    }
    let tr = (inv.matrix() * s).trace().re;
    Ok(-(frames as f64) * (d as f64 * PI.ln() + logdet) - tr)
}

/// Everything the objective needs at one frequency bin.
#[derive(Clone, Copy, Debug)]
pub struct BinView<'a> {
    pub x: &'a [CVec],
    pub channel: &'a [ChannelMoment],
    pub sources: &'a [SourceFrame],
    pub components: &'a [ComponentFrame],
    /// Component prior variances `d_{kℓ}`, frame-major (`ℓ·K + k`).
    pub prior_var: &'a [f64],
    pub mixing: &'a MixingPosterior,
}

impl BinView<'_> {
    fn residual(&self) -> f64 {
        self.x
            .iter()
            .zip(self.channel)
            .zip(self.sources)
            .map(|((x, cm), s)| expected_residual(x, cm, s))
            .sum()
    }

    fn component_moments(&self) -> Vec<f64> {
        self.components.iter().flat_map(|c| c.moments.iter().copied()).collect()
    }
}

/// Expected complete-data log-likelihood of one bin: observation,
/// component prior, transition and initial-state terms.
pub fn expected_complete_loglik(bin: &BinView<'_>, prior: &ChannelPrior) -> Result<f64> {
    let count = bin.x.len() * bin.x.first().map_or(0, |x| x.len());
    let obs = observation_term(bin.residual(), count, prior.noise_var);
    let comp = component_prior_term(bin.prior_var, &bin.component_moments());
    let chan = channel_prior_term(bin.mixing, prior)?;
    Ok(obs + comp + chan)
}

/// Entropy of the factorized component posterior over all frames of a bin.
pub fn component_entropy(components: &[ComponentFrame]) -> f64 {
    components
        .iter()
        .map(|c| c.means.len() as f64 * (PI * E).ln() + c.cov_logdet)
        .sum()
}

/// Variational free energy of one bin: expected complete-data
/// log-likelihood plus the entropies of `q(a)` and `q(c)`.
pub fn free_energy(bin: &BinView<'_>, prior: &ChannelPrior) -> Result<f64> {
    Ok(expected_complete_loglik(bin, prior)?
        + bin.mixing.entropy
        + component_entropy(bin.components))
}
