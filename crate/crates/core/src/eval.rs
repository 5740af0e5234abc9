//! Separation quality: SDR, SIR and SAR of multichannel source-image
//! estimates from an orthogonal-projection decomposition.
//!
//! For each channel, the estimate is projected by least squares onto
//! delayed copies (`0..taps`) of the references in that channel. The part
//! explained by the true source's delays is the target, the extra part
//! explained by the other sources is interference, and the remainder is
//! artifacts. Energies are summed over channels.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Scores are clamped to `±SCORE_CAP` dB so exact estimates stay finite.
pub const SCORE_CAP: f64 = 200.0;

pub const DEFAULT_PROJ_TAPS: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BssScores {
    pub sdr_db: f64,
    pub sir_db: f64,
    pub sar_db: f64,
}

/// `estimate = target + interference + artifacts`, per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct Decomposition {
    pub target: Vec<Vec<f64>>,
    pub interference: Vec<Vec<f64>>,
    pub artifacts: Vec<Vec<f64>>,
}

fn energy(x: &[Vec<f64>]) -> f64 {
    x.iter().flatten().map(|v| v * v).sum()
}

fn ratio_db(num: f64, den: f64) -> f64 {
    if den <= 0.0 {
        return if num > 0.0 { SCORE_CAP } else { 0.0 };
    }
    if num <= 0.0 {
        return -SCORE_CAP;
    }
    (10.0 * (num / den).log10()).clamp(-SCORE_CAP, SCORE_CAP)
}

fn delayed_basis(signals: &[&[f64]], taps: usize, len: usize) -> DMatrix<f64> {
    let mut b = DMatrix::zeros(len, signals.len() * taps);
    for (n, s) in signals.iter().enumerate() {
        for d in 0..taps {
            let col = n * taps + d;
            for t in d..len {
                b[(t, col)] = s[t - d];
            }
        }
    }
    b
}

/// Least-squares projection of `y` onto the columns of `b`, through the
/// Gram matrix; rank-deficient bases fall back to a diagonal load.
fn project(b: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let gram = b.transpose() * b;
    let rhs = b.transpose() * y;
    let n = gram.nrows();
    if let Some(chol) = gram.clone().cholesky() {
        let coef = chol.solve(&rhs);
        if coef.iter().all(|c| c.is_finite()) {
            return b * coef;
        }
    }
    let scale = (gram.trace() / n.max(1) as f64).max(f64::MIN_POSITIVE);
    for load in [1e-12, 1e-10, 1e-8, 1e-6] {
        let loaded = &gram + DMatrix::identity(n, n) * (load * scale);
        if let Some(chol) = loaded.cholesky() {
            log::warn!("rank-deficient projection basis; regularized with relative load {load:e}");
            return b * chol.solve(&rhs);
        }
    }
    log::warn!("projection basis is degenerate; treating the estimate as unexplained");
    DVector::zeros(y.len())
}

fn check_shapes(estimate: &[Vec<f64>], references: &[Vec<Vec<f64>>]) -> Result<(usize, usize)> {
    let channels = estimate.len();
    let len = estimate.first().map_or(0, |c| c.len());
    if channels == 0 || len == 0 {
        return Err(Error::InvalidParameter("empty estimate".into()));
    }
    let aligned = estimate.iter().all(|c| c.len() == len)
        && references
            .iter()
            .all(|r| r.len() == channels && r.iter().all(|c| c.len() == len));
    if references.is_empty() || !aligned {
        return Err(Error::Dimension(
            "estimates and references must share channel count and length".into(),
        ));
    }
    Ok((channels, len))
}

/// Splits `estimate` against `references[source]` and the other references.
pub fn decompose(
    estimate: &[Vec<f64>],
    references: &[Vec<Vec<f64>>],
    source: usize,
    taps: usize,
) -> Result<Decomposition> {
    let (channels, len) = check_shapes(estimate, references)?;
    if source >= references.len() {
        return Err(Error::InvalidParameter(format!("no reference for source {source}")));
    }
    if taps == 0 || taps > len {
        return Err(Error::InvalidParameter(format!("projection taps must be in 1..={len}, got {taps}")));
    }
    let mut out = Decomposition {
        target: Vec::with_capacity(channels),
        interference: Vec::with_capacity(channels),
        artifacts: Vec::with_capacity(channels),
    };
    for i in 0..channels {
        let y = DVector::from_column_slice(&estimate[i]);
        let own = [references[source][i].as_slice()];
        let all: Vec<&[f64]> = references.iter().map(|r| r[i].as_slice()).collect();
        let p_target = project(&delayed_basis(&own, taps, len), &y);
        let p_all = project(&delayed_basis(&all, taps, len), &y);
        out.interference.push((&p_all - &p_target).as_slice().to_vec());
        out.artifacts.push((&y - &p_all).as_slice().to_vec());
        out.target.push(p_target.as_slice().to_vec());
    }
    Ok(out)
}

impl Decomposition {
    pub fn scores(&self) -> BssScores {
        let e_t = energy(&self.target);
        let e_i = energy(&self.interference);
        let e_a = energy(&self.artifacts);
        let sum = |a: &[Vec<f64>], b: &[Vec<f64>]| -> f64 {
            a.iter()
                .zip(b)
                .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p + q) * (p + q)))
                .sum()
        };
        BssScores {
            sdr_db: ratio_db(e_t, sum(&self.interference, &self.artifacts)),
            sir_db: ratio_db(e_t, e_i),
            sar_db: ratio_db(sum(&self.target, &self.interference), e_a),
        }
    }
}

/// Scores every estimate against its index-aligned reference.
pub fn bss_metrics(
    estimates: &[Vec<Vec<f64>>],
    references: &[Vec<Vec<f64>>],
    taps: usize,
) -> Result<Vec<BssScores>> {
    if estimates.len() != references.len() {
        return Err(Error::Dimension(format!(
            "{} estimates for {} references",
            estimates.len(),
            references.len()
        )));
    }
    estimates
        .iter()
        .enumerate()
        .map(|(j, est)| Ok(decompose(est, references, j, taps)?.scores()))
        .collect()
}

/// Input scores: the mixture taken as the estimate of every source.
pub fn input_scores(mixture: &[Vec<f64>], references: &[Vec<Vec<f64>>], taps: usize) -> Result<Vec<BssScores>> {
    let estimates = vec![mixture.to_vec(); references.len()];
    bss_metrics(&estimates, references, taps)
}

pub fn mean_sdr(scores: &[BssScores]) -> f64 {
    scores.iter().map(|s| s.sdr_db).sum::<f64>() / scores.len().max(1) as f64
}
