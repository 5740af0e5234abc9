//! The variational EM loop: initialization, step ordering, monitoring and
//! source-image reconstruction.
//!
//! One iteration runs, in order: source and component posteriors (using the
//! channel moments of the previous mixing posterior), the mixing-vector
//! smoother, then the noise, channel-prior and NMF updates. Every stage is
//! also exposed on [`VemState`] so the objective can be checked step by step.

use std::io::Write;
use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estep_sources::{
    channel_moment, component_posterior_diag, source_posterior, ChannelMoment, ComponentFrame,
    SourceFrame,
};
use crate::mixsim::StftParams;
use crate::mstep::{
    expected_complete_loglik, free_energy, update_evolution_cov, update_noise_variance,
    update_prior_mean, BinView, ChannelPrior, NOISE_FLOOR,
};
use crate::nmf::{ComponentPowers, NmfModel};
use crate::numerics::{is_finite_mat, is_finite_vec, CVec, HermitianPsd};
use crate::smoother::{instantaneous_stats, smooth, MixingPosterior};
use crate::stft::{analyze, synthesize, TfTensor};

/// How the evolution covariance `Σ^a` is handled.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EvolutionCovMode {
    /// Re-estimated at every iteration.
    Learned,
    /// Fixed to `value · I`; a tiny value freezes the mixing over time.
    Pinned(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct VemConfig {
    pub iterations: usize,
    pub components_per_source: usize,
    pub jitter: f64,
    /// `v_f` starts at this multiple of the mean mixture power in bin `f`.
    pub init_noise_scale: f64,
    /// Initial `Σ^{ηa} = scale · I`.
    pub init_posterior_cov_scale: f64,
    /// Initial `Σ^a = scale · I` (learned mode).
    pub init_evolution_cov_scale: f64,
    pub evolution_cov_mode: EvolutionCovMode,
    pub seed: u64,
}

impl Default for VemConfig {
    fn default() -> Self {
        Self {
            iterations: 100,
            components_per_source: 25,
            jitter: 1e-7,
            init_noise_scale: 1000.0,
            init_posterior_cov_scale: 1e3,
            init_evolution_cov_scale: 1.0,
            evolution_cov_mode: EvolutionCovMode::Learned,
            seed: 0,
        }
    }
}

impl VemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidParameter("iterations must be at least 1".into()));
        }
        if self.components_per_source == 0 {
            return Err(Error::InvalidParameter("components_per_source must be at least 1".into()));
        }
        let scales = [
            ("jitter", self.jitter),
            ("init_noise_scale", self.init_noise_scale),
            ("init_posterior_cov_scale", self.init_posterior_cov_scale),
            ("init_evolution_cov_scale", self.init_evolution_cov_scale),
        ];
        for (name, value) in scales {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {value}")));
            }
        }
        if let EvolutionCovMode::Pinned(v) = self.evolution_cov_mode {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "pinned evolution covariance must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    fn initial_evolution_scale(&self) -> f64 {
        match self.evolution_cov_mode {
            EvolutionCovMode::Learned => self.init_evolution_cov_scale,
            EvolutionCovMode::Pinned(v) => v,
        }
    }
}

/// Initial mixing-vector means.
#[derive(Clone, Debug, PartialEq)]
pub enum AInit {
    /// Every entry of every mixing matrix set to one.
    Ones,
    /// Explicit means, indexed `[f][ℓ]`, each of length `I·J`.
    Provided(Vec<Vec<CVec>>),
}

/// Everything needed to start the iterations.
#[derive(Clone, Debug)]
pub struct InitBundle {
    pub model: NmfModel,
    /// `â_{:,fℓ}`, indexed `[f][ℓ]`.
    pub a_means: Vec<Vec<CVec>>,
    /// `Σ^{ηa}`, the same at every `(f, ℓ)`.
    pub a_cov: HermitianPsd,
    pub priors: Vec<ChannelPrior>,
}

/// Builds the starting point: `μ^a = â_{:,f1}`, `Σ^a = scale · I`,
/// `Σ^{ηa} = scale · I` and `v_f` proportional to the mean mixture power.
pub fn make_init(x: &TfTensor, model: NmfModel, a_init: AInit, cfg: &VemConfig) -> Result<InitBundle> {
    cfg.validate()?;
    let (i_n, f_n, l_n) = (x.channels(), x.bins(), x.frames());
    if model.bins() != f_n || model.frames() != l_n {
        return Err(Error::Dimension(format!(
            "NMF model is {}x{}, mixture has {f_n} bins and {l_n} frames",
            model.bins(),
            model.frames()
        )));
    }
    let dim = i_n * model.sources();
    let a_means = match a_init {
        AInit::Ones => vec![vec![CVec::from_element(dim, Complex64::new(1.0, 0.0)); l_n]; f_n],
        AInit::Provided(seq) => {
            let ok = seq.len() == f_n
                && seq.iter().all(|bin| bin.len() == l_n && bin.iter().all(|a| a.len() == dim));
            if !ok {
                return Err(Error::Dimension(format!(
                    "provided mixing sequence must be {f_n} bins x {l_n} frames of length {dim}"
                )));
            }
            seq
        }
    };
    let evolution = HermitianPsd::scaled_identity(dim, cfg.initial_evolution_scale());
    let priors = (0..f_n)
        .map(|f| ChannelPrior {
            mean: a_means[f][0].clone(),
            evolution_cov: evolution.clone(),
            noise_var: (cfg.init_noise_scale * x.mean_power(f)).max(NOISE_FLOOR),
        })
        .collect();
    Ok(InitBundle {
        model,
        a_means,
        a_cov: HermitianPsd::scaled_identity(dim, cfg.init_posterior_cov_scale),
        priors,
    })
}

/// Posterior state of one frequency bin.
#[derive(Clone, Debug)]
pub struct BinState {
    pub mixing: MixingPosterior,
    /// Moments of `A_{fℓ}` under the current mixing posterior.
    pub channel: Vec<ChannelMoment>,
    pub sources: Vec<SourceFrame>,
    pub components: Vec<ComponentFrame>,
}

/// One line of the diagnostics trace.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRecord {
    pub iteration: usize,
    pub free_energy: f64,
    pub seconds: f64,
}

pub fn write_trace<W: Write>(mut out: W, trace: &[TraceRecord]) -> std::io::Result<()> {
    writeln!(out, "# iteration free_energy wall_seconds")?;
    for r in trace {
        writeln!(out, "{} {:.12e} {:.6}", r.iteration, r.free_energy, r.seconds)?;
    }
    Ok(())
}

/// Iteration state. The stepwise methods must be called in the documented
/// order for the objective to be meaningful; [`VemState::iterate`] does so.
#[derive(Clone, Debug)]
pub struct VemState {
    pub cfg: VemConfig,
    pub x: TfTensor,
    pub model: NmfModel,
    pub priors: Vec<ChannelPrior>,
    pub bins: Vec<BinState>,
    pub iteration: usize,
    observations: Vec<Vec<CVec>>,
    mixing_inferred: bool,
}

fn non_finite(stage: &'static str, iteration: usize, bin: usize) -> Error {
    Error::NonFinite { stage, iteration, bin }
}

impl VemState {
    pub fn new(x: TfTensor, init: InitBundle, cfg: VemConfig) -> Result<Self> {
        cfg.validate()?;
        let (i_n, f_n, l_n) = (x.channels(), x.bins(), x.frames());
        if !x.is_finite() {
            return Err(Error::InvalidParameter("mixture contains non-finite values".into()));
        }
        if init.model.bins() != f_n || init.model.frames() != l_n || init.priors.len() != f_n {
            return Err(Error::Dimension("initialization does not match the mixture".into()));
        }
        let dim = i_n * init.model.sources();
        for p in &init.priors {
            p.validate()?;
            if p.dim() != dim {
                return Err(Error::Dimension(format!("prior of length {} for state size {dim}", p.dim())));
            }
        }
        let observations: Vec<Vec<CVec>> =
            (0..f_n).map(|f| (0..l_n).map(|l| x.bin_vector(f, l)).collect()).collect();
        let bins = init
            .a_means
            .into_iter()
            .map(|means| {
                let channel = means
                    .iter()
                    .map(|a| channel_moment(a, &init.a_cov, i_n))
                    .collect::<Result<Vec<_>>>()?;
                Ok(BinState {
                    mixing: MixingPosterior::constant(means, init.a_cov.clone()),
                    channel,
                    sources: Vec::new(),
                    components: Vec::new(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cfg,
            x,
            model: init.model,
            priors: init.priors,
            bins,
            iteration: 0,
            observations,
            mixing_inferred: false,
        })
    }

    pub fn channels(&self) -> usize {
        self.x.channels()
    }

    /// E-S and E-C steps for every time-frequency point.
    pub fn step_sources(&mut self) -> Result<()> {
        let model = &self.model;
        let iteration = self.iteration;
        self.bins
            .par_iter_mut()
            .zip(self.priors.par_iter())
            .zip(self.observations.par_iter())
            .enumerate()
            .try_for_each(|(f, ((bin, prior), xs))| {
                let v = prior.noise_var;
                let mut sources = Vec::with_capacity(xs.len());
                let mut components = Vec::with_capacity(xs.len());
                for (l, (x, cm)) in xs.iter().zip(&bin.channel).enumerate() {
                    let sp = source_posterior(cm, &model.prior_source_variance(f, l), x, v)?;
                    if !is_finite_vec(&sp.mean) || !is_finite_mat(sp.cov.matrix()) {
                        return Err(non_finite("source posterior", iteration, f));
                    }
                    components.push(component_posterior_diag(model, f, l, &sp, v)?);
                    sources.push(sp);
                }
                bin.sources = sources;
                bin.components = components;
                Ok(())
            })
    }

    /// E-A step: smoother over each bin, then fresh channel moments.
    pub fn step_mixing(&mut self) -> Result<()> {
        let jitter = self.cfg.jitter;
        let iteration = self.iteration;
        let i_n = self.channels();
        self.bins
            .par_iter_mut()
            .zip(self.priors.par_iter())
            .zip(self.observations.par_iter())
            .enumerate()
            .try_for_each(|(f, ((bin, prior), xs))| {
                if bin.sources.len() != xs.len() {
                    return Err(Error::InvalidParameter(
                        "source posteriors must be computed before the mixing step".into(),
                    ));
                }
                let stats = xs
                    .iter()
                    .zip(&bin.sources)
                    .map(|(x, s)| instantaneous_stats(x, &s.mean, &s.moment, prior.noise_var))
                    .collect::<Result<Vec<_>>>()?;
                let post = smooth(prior, &stats, jitter)?;
                if !post.entropy.is_finite() || post.means.iter().any(|m| !is_finite_vec(m)) {
                    return Err(non_finite("mixing smoother", iteration, f));
                }
                bin.channel = post
                    .means
                    .iter()
                    .zip(&post.covs)
                    .map(|(a, c)| channel_moment(a, c, i_n))
                    .collect::<Result<Vec<_>>>()?;
                bin.mixing = post;
                Ok(())
            })?;
        self.mixing_inferred = true;
        Ok(())
    }

    /// M-v step.
    pub fn step_noise(&mut self) -> Result<()> {
        let iteration = self.iteration;
        self.priors
            .par_iter_mut()
            .zip(self.bins.par_iter())
            .zip(self.observations.par_iter())
            .enumerate()
            .try_for_each(|(f, ((prior, bin), xs))| {
                let v = update_noise_variance(xs, &bin.channel, &bin.sources)?;
                if !v.is_finite() {
                    return Err(non_finite("noise update", iteration, f));
                }
                prior.noise_var = v;
                Ok(())
            })
    }

    /// M-A step: `μ^a`, then `Σ^a` unless pinned.
    pub fn step_channel_prior(&mut self) -> Result<()> {
        let learned = self.cfg.evolution_cov_mode == EvolutionCovMode::Learned;
        let iteration = self.iteration;
        self.priors
            .par_iter_mut()
            .zip(self.bins.par_iter())
            .enumerate()
            .try_for_each(|(f, (prior, bin))| {
                prior.mean = update_prior_mean(&bin.mixing);
                if learned {
                    let sigma = update_evolution_cov(&bin.mixing)?;
                    if !is_finite_mat(sigma.matrix()) {
                        return Err(non_finite("evolution covariance update", iteration, f));
                    }
                    prior.evolution_cov = sigma;
                }
                Ok(())
            })
    }

    /// Posterior component powers `Q^{ηc}_{kk,fℓ}` gathered over all bins.
    pub fn component_powers(&self) -> ComponentPowers {
        let k_n = self.model.components();
        let l_n = self.x.frames();
        let mut q = ComponentPowers::zeros(k_n, self.x.bins(), l_n);
        for (f, bin) in self.bins.iter().enumerate() {
            let slice = q.frequency_slice_mut(f);
            for (l, c) in bin.components.iter().enumerate() {
                slice[l * k_n..(l + 1) * k_n].copy_from_slice(&c.moments);
            }
        }
        q
    }

    /// M-C step: `W`, then `H` with the new `W`.
    pub fn step_components(&mut self) -> Result<()> {
        let q = self.component_powers();
        self.model.update_w(&q)?;
        self.model.update_h(&q)?;
        let finite = self.model.w.iter().chain(self.model.h.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(non_finite("NMF update", self.iteration, 0));
        }
        Ok(())
    }

    /// Moves the scale of each component from `W` to `H`.
    pub fn step_rescale(&mut self) {
        self.model = self.model.rescale();
    }

    /// One full iteration; returns the free energy at its end.
    pub fn iterate(&mut self) -> Result<f64> {
        self.iteration += 1;
        self.step_sources()?;
        self.step_mixing()?;
        self.step_noise()?;
        self.step_channel_prior()?;
        self.step_components()?;
        self.step_rescale();
        let fe = self.free_energy()?;
        if !fe.is_finite() {
            return Err(non_finite("free energy", self.iteration, 0));
        }
        Ok(fe)
    }

    fn prior_variances(&self, model: &NmfModel, f: usize) -> Vec<f64> {
        let (k_n, l_n) = (model.components(), model.frames());
        let mut d = Vec::with_capacity(k_n * l_n);
        for l in 0..l_n {
            for k in 0..k_n {
                d.push(model.component_variance(k, f, l));
            }
        }
        d
    }

    fn objective(
        &self,
        model: &NmfModel,
        priors: &[ChannelPrior],
        with_entropy: bool,
    ) -> Result<f64> {
        if !self.mixing_inferred || self.bins.iter().any(|b| b.sources.is_empty()) {
            return Err(Error::InvalidParameter(
                "the objective needs both source and mixing posteriors".into(),
            ));
        }
        let per_bin = self
            .bins
            .par_iter()
            .zip(priors.par_iter())
            .zip(self.observations.par_iter())
            .enumerate()
            .map(|(f, ((bin, prior), xs))| {
                let d = self.prior_variances(model, f);
                let view = BinView {
                    x: xs,
                    channel: &bin.channel,
                    sources: &bin.sources,
                    components: &bin.components,
                    prior_var: &d,
                    mixing: &bin.mixing,
                };
                if with_entropy {
                    free_energy(&view, prior)
                } else {
                    expected_complete_loglik(&view, prior)
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        // Sequential sum keeps the result independent of scheduling.
        Ok(per_bin.iter().sum())
    }

    /// Variational free energy of the current state.
    pub fn free_energy(&self) -> Result<f64> {
        self.objective(&self.model, &self.priors, true)
    }

    /// Expected complete-data log-likelihood under the current posteriors.
    pub fn expected_complete_loglik(&self) -> Result<f64> {
        self.objective(&self.model, &self.priors, false)
    }

    /// Same, with the parameters replaced (posteriors held fixed).
    pub fn expected_complete_loglik_with(
        &self,
        model: &NmfModel,
        priors: &[ChannelPrior],
    ) -> Result<f64> {
        self.objective(model, priors, false)
    }

    /// Image coefficients `â_{j,fℓ} ŝ_{j,fℓ}` of every source.
    pub fn image_coefficients(&self) -> Vec<TfTensor> {
        let (i_n, f_n, l_n) = (self.x.channels(), self.x.bins(), self.x.frames());
        let j_n = self.model.sources();
        let mut out = vec![TfTensor::zeros(i_n, f_n, l_n).with_layout_of(&self.x); j_n];
        for (f, bin) in self.bins.iter().enumerate() {
            for l in 0..l_n {
                let mean = &bin.mixing.means[l];
                let s = &bin.sources[l].mean;
                for (j, img) in out.iter_mut().enumerate() {
                    let col = mean.rows(j * i_n, i_n) * s[j];
                    img.set_bin_vector(f, l, &col.into_owned());
                }
            }
        }
        out
    }
}

/// Final state of a run.
#[derive(Clone, Debug)]
pub struct SeparationResult {
    /// Source images, indexed `[j][i][t]`.
    pub images: Vec<Vec<Vec<f64>>>,
    pub model: NmfModel,
    pub priors: Vec<ChannelPrior>,
    /// Smoothed mixing means, indexed `[f][ℓ]`.
    pub mixing_means: Vec<Vec<CVec>>,
    pub trace: Vec<TraceRecord>,
}

/// Inverse STFT of each source's image coefficients.
pub fn reconstruct_images(coefficients: &[TfTensor]) -> Result<Vec<Vec<Vec<f64>>>> {
    coefficients.iter().map(synthesize).collect()
}

/// Runs the configured number of iterations from `init`.
pub fn run_vem(x: &TfTensor, init: InitBundle, cfg: &VemConfig) -> Result<SeparationResult> {
    let mut state = VemState::new(x.clone(), init, cfg.clone())?;
    let mut trace = Vec::with_capacity(cfg.iterations);
    let start = Instant::now();
    for _ in 0..cfg.iterations {
        let fe = state.iterate()?;
        log::debug!("iteration {}: free energy {fe:.6e}", state.iteration);
        trace.push(TraceRecord {
            iteration: state.iteration,
            free_energy: fe,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    let mut images = reconstruct_images(&state.image_coefficients())?;
    for img in &mut images {
        for ch in img.iter_mut() {
            ch.truncate(x.signal_len);
        }
    }
    let mixing_means = state.bins.iter().map(|b| b.mixing.means.clone()).collect();
    Ok(SeparationResult {
        images,
        model: state.model,
        priors: state.priors,
        mixing_means,
        trace,
    })
}

/// Time-domain convenience: STFT of the mixture, NMF model from one
/// `(W_j, H_j)` block per source, initialization and iterations. The images
/// are trimmed to the mixture length.
pub fn separate_signals(
    mixture: &[Vec<f64>],
    stft: StftParams,
    nmf_blocks: &[(DMatrix<f64>, DMatrix<f64>)],
    a_init: AInit,
    cfg: &VemConfig,
) -> Result<SeparationResult> {
    let x = analyze(mixture, stft.sample_rate, stft.window_size, stft.hop)?;
    let model = NmfModel::from_blocks(nmf_blocks)?;
    let init = make_init(&x, model, a_init, cfg)?;
    run_vem(&x, init, cfg)
}
