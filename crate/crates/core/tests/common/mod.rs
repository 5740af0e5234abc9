#![allow(dead_code)]

use std::f64::consts::{E, FRAC_1_SQRT_2, PI};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use tvmix::eval::{bss_metrics, input_scores, mean_sdr, DEFAULT_PROJ_TAPS};
use tvmix::mixsim::{
    generate_stft_mixture, random_evolution_cov, random_nmf_truth, semi_blind_nmf_init,
    simulate_moving_scenario, MovingScenario, StftParams,
};
use tvmix::mstep::ChannelPrior;
use tvmix::nmf::{kl_nmf_fit, NmfModel};
use tvmix::numerics::{hermitianize, CMat, CVec, HermitianPsd};
use tvmix::seeding::{child_seed, rng_for};
use tvmix::smoother::InstantStats;
use tvmix::stft::{synthesize, TfTensor};
use tvmix::vem::{make_init, run_vem, separate_signals, AInit, EvolutionCovMode, VemConfig};

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn random_cvec(rng: &mut ChaCha8Rng, n: usize) -> CVec {
    CVec::from_fn(n, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        c(re, im) * FRAC_1_SQRT_2
    })
}

pub fn random_cmat(rng: &mut ChaCha8Rng, r: usize, cols: usize) -> CMat {
    CMat::from_fn(r, cols, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        c(re, im) * FRAC_1_SQRT_2
    })
}

/// `B Bᴴ / n + floor · I`.
pub fn random_hpd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> HermitianPsd {
    let b = random_cmat(rng, n, n);
    let m = &b * b.adjoint() / c(n as f64, 0.0) + CMat::identity(n, n) * c(floor, 0.0);
    hermitianize(&m).unwrap()
}

pub fn rel_frob(a: &CMat, b: &CMat) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

pub fn rel_vec(a: &CVec, b: &CVec) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

/// Direct conditioning of the whole chain: the joint precision is
/// block-tridiagonal, assembled from the initial-state prior, the random-walk
/// transitions and the per-frame pseudo-measurements.
pub struct DenseChain {
    pub dim: usize,
    pub frames: usize,
    pub mean: CVec,
    pub cov: CMat,
}

impl DenseChain {
    pub fn condition(prior: &ChannelPrior, stats: &[InstantStats]) -> Self {
        let d = prior.dim();
        let l_n = stats.len();
        let n = d * l_n;
        let t = prior.evolution_cov.matrix().clone().try_inverse().unwrap();
        let mut j = CMat::zeros(n, n);
        let mut h = CVec::zeros(n);
        let block = |m: &mut CMat, r: usize, col: usize, v: &CMat| {
            let mut view = m.view_mut((r * d, col * d), (d, d));
            view += v;
        };
        block(&mut j, 0, 0, &t);
        h.rows_mut(0, d).copy_from(&(&t * &prior.mean));
        for l in 0..l_n.saturating_sub(1) {
            block(&mut j, l, l, &t);
            block(&mut j, l + 1, l + 1, &t);
            block(&mut j, l, l + 1, &(-&t));
            block(&mut j, l + 1, l, &(-&t));
        }
        for (l, s) in stats.iter().enumerate() {
            block(&mut j, l, l, s.precision.matrix());
            let mut hv = h.rows_mut(l * d, d);
            hv += &s.info;
        }
        let cov = j.try_inverse().unwrap();
        let mean = &cov * &h;
        Self { dim: d, frames: l_n, mean, cov }
    }

    pub fn marginal_mean(&self, l: usize) -> CVec {
        self.mean.rows(l * self.dim, self.dim).into_owned()
    }

    pub fn marginal_cov(&self, l: usize) -> CMat {
        self.cov.view((l * self.dim, l * self.dim), (self.dim, self.dim)).into_owned()
    }

    /// Joint of `[a_{ℓ+1}; a_ℓ]`.
    pub fn pair(&self, l: usize) -> (CVec, CMat) {
        let d = self.dim;
        let mut mean = CVec::zeros(2 * d);
        mean.rows_mut(0, d).copy_from(&self.marginal_mean(l + 1));
        mean.rows_mut(d, d).copy_from(&self.marginal_mean(l));
        let mut cov = CMat::zeros(2 * d, 2 * d);
        let idx = [l + 1, l];
        for (a, &la) in idx.iter().enumerate() {
            for (b, &lb) in idx.iter().enumerate() {
                cov.view_mut((a * d, b * d), (d, d))
                    .copy_from(&self.cov.view((la * d, lb * d), (d, d)));
            }
        }
        (mean, cov)
    }

    pub fn entropy(&self) -> f64 {
        let n = self.dim * self.frames;
        let logdet = self.cov.clone().cholesky().unwrap().l().diagonal().iter().map(|z| 2.0 * z.re.ln()).sum::<f64>();
        n as f64 * (PI * E).ln() + logdet
    }
}

/// Random chain: prior, and per-frame measurement statistics built from a
/// random source moment and noise variance with Kronecker structure.
pub fn random_chain(rng: &mut ChaCha8Rng, channels: usize, sources: usize, frames: usize) -> (ChannelPrior, Vec<InstantStats>) {
    let d = channels * sources;
    let prior = ChannelPrior {
        mean: random_cvec(rng, d),
        evolution_cov: random_hpd(rng, d, 0.05),
        noise_var: rng.random_range(0.2..2.0),
    };
    let stats = (0..frames)
        .map(|_| {
            let x = random_cvec(rng, channels);
            let s = random_cvec(rng, sources);
            let cov = random_hpd(rng, sources, 0.05);
            let q = hermitianize(&(cov.matrix() + &s * s.adjoint())).unwrap();
            tvmix::smoother::instantaneous_stats(&x, &s, &q, prior.noise_var).unwrap()
        })
        .collect();
    (prior, stats)
}

/// Dense component posterior `(D⁻¹ + Gᵀ U G / v)⁻¹` and its mean.
pub fn dense_component_posterior(
    d: &[f64],
    partition: &[usize],
    sources: usize,
    u: &CMat,
    a_hat: &CMat,
    x: &CVec,
    v: f64,
) -> (CVec, CMat) {
    let k_n = d.len();
    let g = CMat::from_fn(sources, k_n, |j, k| c(if partition[k] == j { 1.0 } else { 0.0 }, 0.0));
    let d_inv = CMat::from_diagonal(&CVec::from_fn(k_n, |k, _| c(1.0 / d[k], 0.0)));
    let precision = d_inv + g.transpose() * u * &g / c(v, 0.0);
    let cov = precision.try_inverse().unwrap();
    let mean = &cov * g.transpose() * a_hat.adjoint() * x / c(v, 0.0);
    (mean, cov)
}

/// Model-matched STFT-domain problem.
pub struct ModelMatched {
    pub truth: NmfModel,
    pub priors: Vec<ChannelPrior>,
    pub x: TfTensor,
    pub image_tf: Vec<TfTensor>,
    pub a_sequence: Vec<Vec<CVec>>,
}

/// Random NMF truth, random mixing means with an evolution covariance of
/// `evolution_scale` and sensor noise `snr_db` below the mean source power.
pub fn model_matched(
    seed: u64,
    bins: usize,
    frames: usize,
    per_source: usize,
    evolution_scale: f64,
    snr_db: f64,
) -> ModelMatched {
    let (i_n, j_n) = (2, 2);
    let mut rng = rng_for(seed, "truth");
    let truth = random_nmf_truth(&mut rng, bins, frames, j_n, per_source).unwrap();
    let priors: Vec<ChannelPrior> = (0..bins)
        .map(|f| {
            let power = (0..frames)
                .map(|l| truth.prior_source_variance(f, l).sum())
                .sum::<f64>()
                / frames as f64;
            ChannelPrior {
                mean: random_cvec(&mut rng, i_n * j_n),
                evolution_cov: if evolution_scale > 0.0 {
                    random_evolution_cov(&mut rng, i_n * j_n, evolution_scale)
                } else {
                    HermitianPsd::zeros(i_n * j_n)
                },
                noise_var: power * 10f64.powf(-snr_db / 10.0) / j_n as f64,
            }
        })
        .collect();
    let mix = generate_stft_mixture(i_n, &truth, &priors, child_seed(seed, "mixture")).unwrap();
    ModelMatched { truth, priors, x: mix.x, image_tf: mix.images, a_sequence: mix.a_sequence }
}

/// KL-NMF per source on the channel-averaged power of its image corrupted
/// by the other images at `r_db` (target-to-interference power ratio).
pub fn tf_semi_blind_blocks(
    images: &[TfTensor],
    r_db: f64,
    per_source: usize,
    seed: u64,
) -> Vec<(DMatrix<f64>, DMatrix<f64>)> {
    let (i_n, f_n, l_n) = (images[0].channels(), images[0].bins(), images[0].frames());
    let power = |t: &[Complex64]| t.iter().map(|z| z.norm_sqr()).sum::<f64>();
    (0..images.len())
        .map(|j| {
            let target = images[j].as_slice();
            let mut interf = vec![c(0.0, 0.0); target.len()];
            for (o, img) in images.iter().enumerate() {
                if o != j {
                    for (a, b) in interf.iter_mut().zip(img.as_slice()) {
                        *a += b;
                    }
                }
            }
            let g = (power(target) / power(&interf) / 10f64.powf(r_db / 10.0)).sqrt();
            let spec = DMatrix::from_fn(f_n, l_n, |f, l| {
                (0..i_n)
                    .map(|i| {
                        let idx = (f * l_n + l) * i_n + i;
                        (target[idx] + interf[idx] * g).norm_sqr()
                    })
                    .sum::<f64>()
                    / i_n as f64
            });
            let fit = kl_nmf_fit(&spec, per_source, 200, child_seed(seed, &format!("nmf{j}"))).unwrap();
            (fit.w, fit.h)
        })
        .collect()
}

pub struct ExperimentScores {
    pub input_sdr: f64,
    pub output_sdr: f64,
    pub seconds: f64,
}

/// One model-matched separation run, scored in the time domain.
pub fn run_model_matched(
    seed: u64,
    problem: &ModelMatched,
    blocks: &[(DMatrix<f64>, DMatrix<f64>)],
    mode: EvolutionCovMode,
    iterations: usize,
) -> ExperimentScores {
    let cfg = VemConfig {
        iterations,
        components_per_source: blocks[0].0.ncols(),
        evolution_cov_mode: mode,
        seed,
        ..VemConfig::default()
    };
    let model = NmfModel::from_blocks(blocks).unwrap();
    let first: Vec<Vec<CVec>> = problem
        .a_sequence
        .iter()
        .map(|bin| vec![bin[0].clone(); bin.len()])
        .collect();
    let init = make_init(&problem.x, model, AInit::Provided(first), &cfg).unwrap();
    let start = std::time::Instant::now();
    let res = run_vem(&problem.x, init, &cfg).unwrap();
    let seconds = start.elapsed().as_secs_f64();
    let refs: Vec<Vec<Vec<f64>>> = problem.image_tf.iter().map(|t| synthesize(t).unwrap()).collect();
    let mixture = synthesize(&problem.x).unwrap();
    let input = input_scores(&mixture, &refs, DEFAULT_PROJ_TAPS).unwrap();
    let output = bss_metrics(&res.images, &refs, DEFAULT_PROJ_TAPS).unwrap();
    ExperimentScores { input_sdr: mean_sdr(&input), output_sdr: mean_sdr(&output), seconds }
}

pub const MOVING_STFT: StftParams = StftParams { sample_rate: 16_000, window_size: 512, hop: 256 };

/// One moving-FIR separation run: semi-blind NMF init at `r_db`, Ones-A.
pub fn run_moving(seed: u64, r_db: f64, per_source: usize, iterations: usize) -> ExperimentScores {
    let scene = simulate_moving_scenario(&MovingScenario::default(), seed).unwrap();
    let blocks: Vec<(DMatrix<f64>, DMatrix<f64>)> = (0..scene.images.len())
        .map(|j| {
            let others: Vec<Vec<Vec<f64>>> =
                (0..scene.images.len()).filter(|&o| o != j).map(|o| scene.images[o].clone()).collect();
            let fit = semi_blind_nmf_init(
                &scene.images[j],
                &others,
                r_db,
                per_source,
                MOVING_STFT,
                200,
                child_seed(seed, &format!("nmf{j}")),
            )
            .unwrap();
            (fit.w, fit.h)
        })
        .collect();
    let cfg = VemConfig { iterations, components_per_source: per_source, seed, ..VemConfig::default() };
    let start = std::time::Instant::now();
    let res = separate_signals(&scene.mixture, MOVING_STFT, &blocks, AInit::Ones, &cfg).unwrap();
    let seconds = start.elapsed().as_secs_f64();
    let input = input_scores(&scene.mixture, &scene.images, DEFAULT_PROJ_TAPS).unwrap();
    let output = bss_metrics(&res.images, &scene.images, DEFAULT_PROJ_TAPS).unwrap();
    ExperimentScores { input_sdr: mean_sdr(&input), output_sdr: mean_sdr(&output), seconds }
}
