//! Complex Kalman smoother over the per-frequency sequence of mixing vectors.
//!
//! The state `a_ℓ = vec(A_ℓ)` follows a random walk `a_{ℓ+1} ~ N_c(a_ℓ, Σ^a)`
//! with `a_1 ~ N_c(μ^a, Σ^a)`. Each frame contributes a pseudo-measurement in
//! information form (precision `Λ_ℓ`, information vector `b_ℓ`), produced by
//! the source E-step. All covariance recursions use additions and inversions
//! of Hermitian matrices only.
//!
//! Frames are 0-based here: frame `ℓ` of a chain of length `L` runs over
//! `0..L`. The backward message into the last frame is uninformative.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::mstep::ChannelPrior;
use crate::numerics::{
    complex_gaussian_entropy, hermitianize, kron_identity, vec_columns, CMat, CVec, HermitianPsd,
};

/// Per-frame pseudo-measurement in precision form.
#[derive(Clone, Debug, PartialEq)]
pub struct InstantStats {
    /// `Λ = (Q^{ηs})ᵀ ⊗ I_I / v`.
    pub precision: HermitianPsd,
    /// `b = vec(x ŝᴴ) / v`.
    pub info: CVec,
}

impl InstantStats {
    /// A frame that carries no information about the mixing vector.
    pub fn uninformative(dim: usize) -> Self {
        Self { precision: HermitianPsd::zeros(dim), info: CVec::zeros(dim) }
    }
}

/// Builds the pseudo-measurement of frame `ℓ` from the source posterior,
/// without ever forming its covariance or mean.
pub fn instantaneous_stats(
    x: &CVec,
    s_hat: &CVec,
    source_moment: &HermitianPsd,
    noise_var: f64,
) -> Result<InstantStats> {
    if !(noise_var > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "noise variance must be positive, got {noise_var}"
        )));
    }
    let (i_n, j_n) = (x.len(), s_hat.len());
    if source_moment.dim() != j_n {
        return Err(Error::Dimension(format!(
            "source moment is {0}x{0} for {j_n} sources",
            source_moment.dim()
        )));
    }
    let inv_v = Complex64::new(1.0 / noise_var, 0.0);
    let q_t = source_moment.matrix().transpose();
    let precision = HermitianPsd::symmetrized(kron_identity(&q_t, i_n) * inv_v);
    let info = vec_columns(&(x * s_hat.adjoint())) * inv_v;
    Ok(InstantStats { precision, info })
}

/// Filtered (causal) Gaussians `N(μ^φ_ℓ, Σ^φ_ℓ)`.
#[derive(Clone, Debug)]
pub struct ForwardStats {
    pub means: Vec<CVec>,
    pub covs: Vec<HermitianPsd>,
    /// `(Σ^φ_ℓ)⁻¹`, kept from the recursion.
    pub precisions: Vec<HermitianPsd>,
    /// `log|(Σ^φ_ℓ)⁻¹|`.
    precision_logdets: Vec<f64>,
}

/// Backward messages about frame `ℓ` from the measurements of frames
/// `ℓ+1..L`. `None` marks an uninformative message (always the case for the
/// last frame).
#[derive(Clone, Debug)]
pub struct BackwardStats {
    /// `Σ^ζ_ℓ`: frames `ℓ+1..L` summarized at frame `ℓ+1`.
    pub zeta_covs: Vec<Option<HermitianPsd>>,
    /// `Σ^β_ℓ = Σ^a + Σ^ζ_ℓ`.
    pub beta_covs: Vec<Option<HermitianPsd>>,
    /// `μ^β_ℓ = Σ^ζ_ℓ (b_{ℓ+1} + (Σ^β_{ℓ+1})⁻¹ μ^β_{ℓ+1})`.
    pub beta_means: Vec<Option<CVec>>,
    /// `(Σ^ζ_ℓ)⁻¹ = Λ_{ℓ+1} + (Σ^β_{ℓ+1})⁻¹`, before inversion.
    zeta_precisions: Vec<HermitianPsd>,
    /// `(Σ^ζ_ℓ)⁻¹ μ^β_ℓ`.
    zeta_infos: Vec<CVec>,
    beta_precisions: Vec<Option<HermitianPsd>>,
}

/// Smoothed marginals of every frame.
#[derive(Clone, Debug)]
pub struct Marginals {
    pub means: Vec<CVec>,
    pub covs: Vec<HermitianPsd>,
    /// `log|Σ^{ηa}_ℓ|`.
    pub logdets: Vec<f64>,
}

/// Joint posteriors of successive pairs and their accumulated moment.
#[derive(Clone, Debug)]
pub struct PairwiseStats {
    /// `(μ^ξ_ℓ, Σ^ξ_ℓ)` of `[a_{ℓ+1}; a_ℓ]` for `ℓ = 0..L−1`.
    pub joints: Vec<(CVec, HermitianPsd)>,
    /// `Σ_ℓ (Σ^ξ_ℓ + jitter·I + μ^ξ_ℓ μ^ξᴴ_ℓ)`, a `2IJ × 2IJ` matrix.
    pub moment: HermitianPsd,
    /// `Σ_ℓ log|Σ^ξ_ℓ|` (unregularized).
    pub logdet_sum: f64,
}

/// Per-frequency posterior of the mixing-vector chain.
#[derive(Clone, Debug)]
pub struct MixingPosterior {
    pub means: Vec<CVec>,
    pub covs: Vec<HermitianPsd>,
    /// Accumulated pairwise second moment `Q^{ξa}` (regularized).
    pub pair_moment: HermitianPsd,
    /// Differential entropy of the whole chain.
    pub entropy: f64,
}

impl MixingPosterior {
    pub fn frames(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, |m| m.len())
    }

    /// Second moment `Q^{ηa}_ℓ = Σ^{ηa}_ℓ + â_ℓ â_ℓᴴ`.
    pub fn second_moment(&self, l: usize) -> HermitianPsd {
        let m = &self.means[l];
        HermitianPsd::symmetrized(self.covs[l].matrix() + m * m.adjoint())
    }

    /// A chain with the same mean and covariance at every frame (used to
    /// start the iterations).
    pub fn constant(
        means: Vec<CVec>,
        cov: HermitianPsd,
    ) -> MixingPosterior {
        let frames = means.len();
        let dim = cov.dim();
        MixingPosterior {
            means,
            covs: vec![cov; frames],
            pair_moment: HermitianPsd::zeros(2 * dim),
            entropy: 0.0,
        }
    }
}

fn check_chain(prior: &ChannelPrior, stats: &[InstantStats]) -> Result<usize> {
    if stats.is_empty() {
        return Err(Error::InvalidParameter("chain needs at least one frame".into()));
    }
    let d = prior.dim();
    if let Some(bad) = stats.iter().position(|s| s.precision.dim() != d || s.info.len() != d) {
        return Err(Error::Dimension(format!(
            "frame {bad} statistics do not match the {d}-dimensional state"
        )));
    }
    Ok(d)
}

/// Forward recursion:
/// `Σ^φ_ℓ = (Λ_ℓ + (Σ^φ_{ℓ−1} + Σ^a)⁻¹)⁻¹`,
/// `μ^φ_ℓ = Σ^φ_ℓ (b_ℓ + (Σ^φ_{ℓ−1} + Σ^a)⁻¹ μ^φ_{ℓ−1})`,
/// started from the prior `N(μ^a, Σ^a)` at the first frame.
pub fn forward_pass(prior: &ChannelPrior, stats: &[InstantStats]) -> Result<ForwardStats> {
    check_chain(prior, stats)?;
    let frames = stats.len();
    let mut out = ForwardStats {
        means: Vec::with_capacity(frames),
        covs: Vec::with_capacity(frames),
        precisions: Vec::with_capacity(frames),
        precision_logdets: Vec::with_capacity(frames),
    };
    let prior_precision = prior.evolution_cov.inverse()?;
    let mut pred_precision = prior_precision;
    let mut pred_info = pred_precision.mul_vec(&prior.mean);
    for (l, s) in stats.iter().enumerate() {
        let precision = s.precision.add(&pred_precision);
        let (cov, neg_logdet) = precision.inverse_and_logdet()?;
        let mean = cov.mul_vec(&(&s.info + &pred_info));
        out.means.push(mean);
        out.covs.push(cov);
        out.precisions.push(precision);
        out.precision_logdets.push(neg_logdet);
        if l + 1 < frames {
            let predicted = out.covs[l].add(&prior.evolution_cov);
            pred_precision = predicted.inverse()?;
            pred_info = pred_precision.mul_vec(&out.means[l]);
        }
    }
    Ok(out)
}

/// Backward recursion:
/// `Σ^ζ_ℓ = (Λ_{ℓ+1} + (Σ^β_{ℓ+1})⁻¹)⁻¹`, `Σ^β_ℓ = Σ^a + Σ^ζ_ℓ`,
/// `μ^β_ℓ = Σ^ζ_ℓ (b_{ℓ+1} + (Σ^β_{ℓ+1})⁻¹ μ^β_{ℓ+1})`.
///
/// The message into the last frame is uninformative, so the first step
/// reduces to `Σ^ζ_{L−1} = Λ_L⁻¹`.
pub fn backward_pass(
    prior: &ChannelPrior,
    stats: &[InstantStats],
    fwd: &ForwardStats,
) -> Result<BackwardStats> {
    let d = check_chain(prior, stats)?;
    let frames = stats.len();
    if fwd.means.len() != frames {
        return Err(Error::Dimension("forward statistics cover a different chain".into()));
    }
    let mut out = BackwardStats {
        zeta_covs: vec![None; frames],
        beta_covs: vec![None; frames],
        beta_means: vec![None; frames],
        zeta_precisions: vec![HermitianPsd::zeros(d); frames],
        zeta_infos: vec![CVec::zeros(d); frames],
        beta_precisions: vec![None; frames],
    };
    for l in (0..frames.saturating_sub(1)).rev() {
        let next = &stats[l + 1];
        let (zeta_precision, zeta_info) = match (&out.beta_precisions[l + 1], &out.beta_means[l + 1]) {
            (Some(bp), Some(bm)) => (next.precision.add(bp), &next.info + bp.mul_vec(bm)),
            _ => (next.precision.clone(), next.info.clone()),
        };
        if is_zero(&zeta_precision) {
            // Nothing observed from ℓ+1 onwards.
            out.zeta_precisions[l] = zeta_precision;
            out.zeta_infos[l] = zeta_info;
            continue;
        }
        let zeta_cov = zeta_precision.inverse()?;
        let beta_mean = zeta_cov.mul_vec(&zeta_info);
        let beta_cov = prior.evolution_cov.add(&zeta_cov);
        out.beta_precisions[l] = Some(beta_cov.inverse()?);
        out.beta_means[l] = Some(beta_mean);
        out.beta_covs[l] = Some(beta_cov);
        out.zeta_covs[l] = Some(zeta_cov);
        out.zeta_precisions[l] = zeta_precision;
        out.zeta_infos[l] = zeta_info;
    }
    Ok(out)
}

fn is_zero(m: &HermitianPsd) -> bool {
    m.matrix().iter().all(|z| z.re == 0.0 && z.im == 0.0)
}

/// Fuses forward and backward Gaussians frame by frame:
/// `Σ^{ηa} = ((Σ^φ)⁻¹ + (Σ^β)⁻¹)⁻¹`, `â = Σ^{ηa}((Σ^φ)⁻¹μ^φ + (Σ^β)⁻¹μ^β)`.
/// Where the backward message is uninformative (always at the last frame)
/// the forward Gaussian is the marginal.
pub fn marginal_posterior(fwd: &ForwardStats, bwd: &BackwardStats) -> Result<Marginals> {
    let frames = fwd.means.len();
    let mut out = Marginals {
        means: Vec::with_capacity(frames),
        covs: Vec::with_capacity(frames),
        logdets: Vec::with_capacity(frames),
    };
    for l in 0..frames {
        match (&bwd.beta_precisions[l], &bwd.beta_means[l]) {
            (Some(bp), Some(bm)) => {
                let precision = fwd.precisions[l].add(bp);
                let (cov, logdet_precision) = precision.inverse_and_logdet()?;
                let info = fwd.precisions[l].mul_vec(&fwd.means[l]) + bp.mul_vec(bm);
                out.means.push(cov.mul_vec(&info));
                out.covs.push(cov);
                out.logdets.push(-logdet_precision);
            }
            _ => {
                out.means.push(fwd.means[l].clone());
                out.covs.push(fwd.covs[l].clone());
                out.logdets.push(-fwd.precision_logdets[l]);
            }
        }
    }
    Ok(out)
}

/// Joint Gaussian of `[a_{ℓ+1}; a_ℓ]` with precision
/// `[[(Σ^ζ_ℓ)⁻¹ + (Σ^a)⁻¹, −(Σ^a)⁻¹], [−(Σ^a)⁻¹, (Σ^φ_ℓ)⁻¹ + (Σ^a)⁻¹]]`
/// and information `[(Σ^ζ_ℓ)⁻¹ μ^β_ℓ; (Σ^φ_ℓ)⁻¹ μ^φ_ℓ]`, accumulated into
/// `Q^{ξa} = Σ_ℓ (Σ^ξ_ℓ + jitter·I + μ^ξ_ℓ μ^ξᴴ_ℓ)`.
pub fn pairwise_and_accumulate(
    prior: &ChannelPrior,
    fwd: &ForwardStats,
    bwd: &BackwardStats,
    jitter: f64,
) -> Result<PairwiseStats> {
    let frames = fwd.means.len();
    let d = prior.dim();
    let mut moment = CMat::zeros(2 * d, 2 * d);
    let mut joints = Vec::with_capacity(frames.saturating_sub(1));
    let mut logdet_sum = 0.0;
    if frames < 2 {
        log::warn!("pairwise statistics need at least two frames; returning zero moment");
        return Ok(PairwiseStats { joints, moment: HermitianPsd::zeros(2 * d), logdet_sum });
    }
    let trans_precision = prior.evolution_cov.inverse()?;
    let tp = trans_precision.matrix();
    let neg_tp = -tp;
    for l in 0..frames - 1 {
        let mut precision = DMatrix::zeros(2 * d, 2 * d);
        precision
            .view_mut((0, 0), (d, d))
            .copy_from(&(bwd.zeta_precisions[l].matrix() + tp));
        precision.view_mut((0, d), (d, d)).copy_from(&neg_tp);
        precision.view_mut((d, 0), (d, d)).copy_from(&neg_tp);
        precision
            .view_mut((d, d), (d, d))
            .copy_from(&(fwd.precisions[l].matrix() + tp));
        let precision = hermitianize(&precision)?;
        let mut info = CVec::zeros(2 * d);
        info.rows_mut(0, d).copy_from(&bwd.zeta_infos[l]);
        info.rows_mut(d, d).copy_from(&fwd.precisions[l].mul_vec(&fwd.means[l]));

        let (cov, logdet_precision) = precision.inverse_and_logdet()?;
        let mean = cov.mul_vec(&info);
        moment += cov.matrix() + &mean * mean.adjoint();
        logdet_sum -= logdet_precision;
        joints.push((mean, cov));
    }
    let moment = hermitianize(&moment)?.add_diagonal(jitter * (frames - 1) as f64);
    Ok(PairwiseStats { joints, moment, logdet_sum })
}

/// Runs the complete E-step for one frequency bin.
pub fn smooth(
    prior: &ChannelPrior,
    stats: &[InstantStats],
    jitter: f64,
) -> Result<MixingPosterior> {
    let fwd = forward_pass(prior, stats)?;
    let bwd = backward_pass(prior, stats, &fwd)?;
    let marg = marginal_posterior(&fwd, &bwd)?;
    let pairs = pairwise_and_accumulate(prior, &fwd, &bwd, jitter)?;
    let d = prior.dim();
    let frames = stats.len();
    // Markov chain: H = Σ_pairs H(a_{ℓ+1}, a_ℓ) − Σ_{interior ℓ} H(a_ℓ).
    let entropy = if frames == 1 {
        complex_gaussian_entropy(d, marg.logdets[0])
    } else {
        let pair_part = (frames - 1) as f64 * complex_gaussian_entropy(2 * d, 0.0) + pairs.logdet_sum;
        let interior: f64 = marg.logdets[1..frames - 1]
            .iter()
            .map(|ld| complex_gaussian_entropy(d, *ld))
            .sum();
        pair_part - interior
    };
    Ok(MixingPosterior {
        means: marg.means,
        covs: marg.covs,
        pair_moment: pairs.moment,
        entropy,
    })
}
