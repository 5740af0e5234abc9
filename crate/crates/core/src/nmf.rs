//! NMF source-variance model.
//!
//! Component `k` has prior variance `w_{fk} h_{kℓ}` at bin `(f, ℓ)` and
//! belongs to exactly one source; a source's prior variance is the sum over
//! its components.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Lower bound applied to every NMF factor entry.
pub const FACTOR_FLOOR: f64 = 1e-12;

/// Default number of KL multiplicative-update iterations for initialization.
pub const DEFAULT_KL_ITERATIONS: usize = 200;

#[derive(Clone, Debug, PartialEq)]
pub struct NmfModel {
    /// Spectral patterns, `F × K`.
    pub w: DMatrix<f64>,
    /// Activations, `K × L`.
    pub h: DMatrix<f64>,
    partition: Vec<usize>,
    sources: usize,
}

impl NmfModel {
    /// `partition[k]` is the source of component `k`. Every source must own
    /// at least one component.
    pub fn new(
        w: DMatrix<f64>,
        h: DMatrix<f64>,
        partition: Vec<usize>,
        sources: usize,
    ) -> Result<Self> {
        let k = w.ncols();
        if h.nrows() != k || partition.len() != k {
            return Err(Error::Dimension(format!(
                "W has {k} columns, H has {} rows, partition has {} entries",
                h.nrows(),
                partition.len()
            )));
        }
        if sources == 0 {
            return Err(Error::InvalidParameter("at least one source is required".into()));
        }
        if let Some(bad) = partition.iter().find(|&&j| j >= sources) {
            return Err(Error::InvalidParameter(format!(
                "component assigned to source {bad}, but only {sources} sources exist"
            )));
        }
        for j in 0..sources {
            if !partition.contains(&j) {
                return Err(Error::InvalidParameter(format!("source {j} owns no component")));
            }
        }
        if w.iter().chain(h.iter()).any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidParameter("NMF factors must be finite and nonnegative".into()));
        }
        let mut model = Self { w, h, partition, sources };
        model.apply_floor();
        Ok(model)
    }

    /// Stacks per-source factor pairs; components of source `j` occupy a
    /// contiguous block.
    pub fn from_blocks(blocks: &[(DMatrix<f64>, DMatrix<f64>)]) -> Result<Self> {
        let first = blocks
            .first()
            .ok_or_else(|| Error::InvalidParameter("no source blocks given".into()))?;
        let (f, l) = (first.0.nrows(), first.1.ncols());
        let k: usize = blocks.iter().map(|(w, _)| w.ncols()).sum();
        let mut w = DMatrix::zeros(f, k);
        let mut h = DMatrix::zeros(k, l);
        let mut partition = Vec::with_capacity(k);
        let mut offset = 0;
        for (j, (wj, hj)) in blocks.iter().enumerate() {
            if wj.nrows() != f || hj.ncols() != l || hj.nrows() != wj.ncols() {
                return Err(Error::Dimension(format!("source block {j} has inconsistent shape")));
            }
            let kj = wj.ncols();
            w.columns_mut(offset, kj).copy_from(wj);
            h.rows_mut(offset, kj).copy_from(hj);
            partition.extend(std::iter::repeat_n(j, kj));
            offset += kj;
        }
        Self::new(w, h, partition, blocks.len())
    }

    pub fn bins(&self) -> usize {
        self.w.nrows()
    }

    pub fn frames(&self) -> usize {
        self.h.ncols()
    }

    pub fn components(&self) -> usize {
        self.w.ncols()
    }

    pub fn sources(&self) -> usize {
        self.sources
    }

    pub fn partition(&self) -> &[usize] {
        &self.partition
    }

    pub fn source_of(&self, k: usize) -> usize {
        self.partition[k]
    }

    /// Binary `J × K` selection matrix `G`.
    pub fn selection_matrix(&self) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.sources, self.components());
        for (k, &j) in self.partition.iter().enumerate() {
            g[(j, k)] = 1.0;
        }
        g
    }

    /// `w_{fk} h_{kℓ}`.
    #[inline]
    pub fn component_variance(&self, k: usize, f: usize, l: usize) -> f64 {
        self.w[(f, k)] * self.h[(k, l)]
    }

    /// Entry `j` is `Σ_{k ∈ K_j} w_{fk} h_{kℓ}`.
    pub fn prior_source_variance(&self, f: usize, l: usize) -> DVector<f64> {
        let mut out = DVector::zeros(self.sources);
        for (k, &j) in self.partition.iter().enumerate() {
            out[j] += self.component_variance(k, f, l);
        }
        out
    }

    fn apply_floor(&mut self) {
        self.w.apply(|v| *v = v.max(FACTOR_FLOOR));
        self.h.apply(|v| *v = v.max(FACTOR_FLOOR));
    }

    /// One pass of the M-step updates from posterior component powers:
    /// first `w_{fk} ← (1/L) Σ_ℓ Q_{k,fℓ} / h_{kℓ}`, then
    /// `h_{kℓ} ← (1/F) Σ_f Q_{k,fℓ} / w_{fk}` with the new `W`.
    pub fn mstep_update(&self, qcc: &ComponentPowers) -> Result<NmfModel> {
        let mut next = self.clone();
        next.update_w(qcc)?;
        next.update_h(qcc)?;
        Ok(next)
    }

    pub fn update_w(&mut self, qcc: &ComponentPowers) -> Result<()> {
        self.check_powers(qcc)?;
        let (f_n, l_n, k_n) = (self.bins(), self.frames(), self.components());
        for f in 0..f_n {
            for k in 0..k_n {
                let mut acc = 0.0;
                for l in 0..l_n {
                    acc += qcc.get(k, f, l) / self.h[(k, l)];
                }
                self.w[(f, k)] = (acc / l_n as f64).max(FACTOR_FLOOR);
            }
        }
        Ok(())
    }

    pub fn update_h(&mut self, qcc: &ComponentPowers) -> Result<()> {
        self.check_powers(qcc)?;
        let (f_n, l_n, k_n) = (self.bins(), self.frames(), self.components());
        for k in 0..k_n {
            for l in 0..l_n {
                let mut acc = 0.0;
                for f in 0..f_n {
                    acc += qcc.get(k, f, l) / self.w[(f, k)];
                }
                self.h[(k, l)] = (acc / f_n as f64).max(FACTOR_FLOOR);
            }
        }
        Ok(())
    }

    fn check_powers(&self, qcc: &ComponentPowers) -> Result<()> {
        if qcc.components != self.components() || qcc.bins != self.bins() || qcc.frames != self.frames()
        {
            return Err(Error::Dimension(format!(
                "component powers are {}x{}x{}, model is {}x{}x{}",
                qcc.components,
                qcc.bins,
                qcc.frames,
                self.components(),
                self.bins(),
                self.frames()
            )));
        }
        Ok(())
    }

    /// Normalizes every column of `W` to unit L1 norm and moves the scale
    /// into the matching row of `H`; `W·H` is unchanged.
    pub fn rescale(&self) -> NmfModel {
        let mut next = self.clone();
        for k in 0..next.components() {
            let norm: f64 = next.w.column(k).sum();
            if norm > 0.0 && norm.is_finite() {
                next.w.column_mut(k).apply(|v| *v /= norm);
                next.h.row_mut(k).apply(|v| *v *= norm);
            }
        }
        next
    }
}

/// Posterior component powers `Q_{kk,fℓ} = Σ^{ηc}_{kk,fℓ} + |ĉ_{k,fℓ}|²`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComponentPowers {
    components: usize,
    bins: usize,
    frames: usize,
    /// Layout `[(f · frames + ℓ) · components + k]`.
    data: Vec<f64>,
}

impl ComponentPowers {
    pub fn zeros(components: usize, bins: usize, frames: usize) -> Self {
        Self { components, bins, frames, data: vec![0.0; components * bins * frames] }
    }

    #[inline]
    pub fn get(&self, k: usize, f: usize, l: usize) -> f64 {
        self.data[(f * self.frames + l) * self.components + k]
    }

    #[inline]
    pub fn set(&mut self, k: usize, f: usize, l: usize, value: f64) {
        self.data[(f * self.frames + l) * self.components + k] = value;
    }

    /// The `K` powers of bin `(f, ℓ)`.
    pub fn bin_slice_mut(&mut self, f: usize, l: usize) -> &mut [f64] {
        let start = (f * self.frames + l) * self.components;
        &mut self.data[start..start + self.components]
    }

    /// All frames of bin `f`, frame-major.
    pub fn frequency_slice(&self, f: usize) -> &[f64] {
        let len = self.frames * self.components;
        &self.data[f * len..(f + 1) * len]
    }

    pub fn frequency_slice_mut(&mut self, f: usize) -> &mut [f64] {
        let len = self.frames * self.components;
        &mut self.data[f * len..(f + 1) * len]
    }

    /// `Q = w·h` everywhere, i.e. posterior equal to prior.
    pub fn from_prior(model: &NmfModel) -> Self {
        let mut out = Self::zeros(model.components(), model.bins(), model.frames());
        for f in 0..model.bins() {
            for l in 0..model.frames() {
                for k in 0..model.components() {
                    out.set(k, f, l, model.component_variance(k, f, l));
                }
            }
        }
        out
    }
}

/// Result of a KL-NMF fit.
#[derive(Clone, Debug)]
pub struct KlNmfFit {
    pub w: DMatrix<f64>,
    pub h: DMatrix<f64>,
    /// Generalized KL divergence after each iteration.
    pub objective: Vec<f64>,
}

/// Generalized Kullback-Leibler divergence `Σ v log(v/λ) − v + λ`.
pub fn kl_divergence(v: &DMatrix<f64>, approx: &DMatrix<f64>) -> f64 {
    v.iter()
        .zip(approx.iter())
        .map(|(&v, &a)| {
            let a = a.max(FACTOR_FLOOR);
            if v > 0.0 {
                v * (v / a).ln() - v + a
            } else {
                a
            }
        })
        .sum()
}

/// Fits `V ≈ W·H` with `components` columns by the standard multiplicative
/// updates for the KL divergence, from a seeded random start.
pub fn kl_nmf_fit(
    power: &DMatrix<f64>,
    components: usize,
    iterations: usize,
    seed: u64,
) -> Result<KlNmfFit> {
    if components == 0 || iterations == 0 {
        return Err(Error::InvalidParameter(
            "KL-NMF needs at least one component and one iteration".into(),
        ));
    }
    if power.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidParameter("spectrogram must be finite and nonnegative".into()));
    }
    let total: f64 = power.sum();
    if total <= 0.0 {
        return Err(Error::Degenerate("spectrogram is identically zero".into()));
    }
    let (f_n, l_n) = power.shape();
    let scale = (total / (f_n * l_n * components) as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = DMatrix::from_fn(f_n, components, |_, _| scale * rng.random_range(0.5..1.5));
    let mut h = DMatrix::from_fn(components, l_n, |_, _| scale * rng.random_range(0.5..1.5));

    let mut objective = Vec::with_capacity(iterations);
    let mut ratio = DMatrix::zeros(f_n, l_n);
    for _ in 0..iterations {
        // H ← H ⊙ (Wᵀ (V ⊘ WH)) ⊘ (Wᵀ 1)
        let wh = &w * &h;
        ratio.zip_zip_apply(power, &wh, |r, v, a| *r = v / a.max(FACTOR_FLOOR));
        let numer = w.transpose() * &ratio;
        let col_sums: Vec<f64> = (0..components).map(|k| w.column(k).sum()).collect();
        for k in 0..components {
            for l in 0..l_n {
                h[(k, l)] = (h[(k, l)] * numer[(k, l)] / col_sums[k]).max(FACTOR_FLOOR);
            }
        }
        // W ← W ⊙ ((V ⊘ WH) Hᵀ) ⊘ (1 Hᵀ)
        let wh = &w * &h;
        ratio.zip_zip_apply(power, &wh, |r, v, a| *r = v / a.max(FACTOR_FLOOR));
        let numer = &ratio * h.transpose();
        let row_sums: Vec<f64> = (0..components).map(|k| h.row(k).sum()).collect();
        for f in 0..f_n {
            for k in 0..components {
                w[(f, k)] = (w[(f, k)] * numer[(f, k)] / row_sums[k]).max(FACTOR_FLOOR);
            }
        }
        objective.push(kl_divergence(power, &(&w * &h)));
    }
    Ok(KlNmfFit { w, h, objective })
}
