//! Synthetic ground truth: mixtures drawn from the generative model in the
//! STFT domain, time-domain mixtures through slowly changing FIR filters,
//! white-noise corruption and the corrupted spectrograms used to initialize
//! the NMF factors.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::mstep::ChannelPrior;
use crate::nmf::{kl_nmf_fit, KlNmfFit, NmfModel};
use crate::numerics::{CMat, CVec, HermitianPsd};
use crate::seeding::rng_for;
use crate::stft::{analyze, TfTensor};

/// Draws from `N_c(mean, cov)`; `cov` may be singular.
pub fn sample_complex_gaussian<R: Rng>(rng: &mut R, mean: &CVec, cov: &HermitianPsd) -> CVec {
    let n = mean.len();
    let eig = SymmetricEigen::new(cov.matrix().clone());
    let z = CVec::from_fn(n, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re, im) * FRAC_1_SQRT_2
    });
    let scaled = CVec::from_fn(n, |k, _| z[k] * eig.eigenvalues[k].max(0.0).sqrt());
    mean + &eig.eigenvectors * scaled
}

fn standard_complex<R: Rng>(rng: &mut R, var: f64) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * (0.5 * var).sqrt()
}

/// A mixture drawn from the model, with its hidden variables.
#[derive(Clone, Debug)]
pub struct StftMixture {
    pub x: TfTensor,
    /// Per-source image coefficients `a_{j,fℓ} s_{j,fℓ}`.
    pub images: Vec<TfTensor>,
    /// `a_{:,fℓ}`, indexed `[f][ℓ]`.
    pub a_sequence: Vec<Vec<CVec>>,
    /// `s_{fℓ}`, indexed `[f][ℓ]`.
    pub sources: Vec<Vec<CVec>>,
}

/// Samples components, the mixing random walk and the sensor noise, then
/// mixes: `x = A s + b`.
pub fn generate_stft_mixture(
    channels: usize,
    model: &NmfModel,
    priors: &[ChannelPrior],
    seed: u64,
) -> Result<StftMixture> {
    let (f_n, l_n, j_n, k_n) = (model.bins(), model.frames(), model.sources(), model.components());
    let dim = channels * j_n;
    if priors.len() != f_n {
        return Err(Error::Dimension(format!("{} priors for {f_n} bins", priors.len())));
    }
    for p in priors {
        if p.dim() != dim || p.evolution_cov.dim() != dim {
            return Err(Error::Dimension(format!("prior of length {} for state size {dim}", p.dim())));
        }
        if !(p.noise_var >= 0.0) {
            return Err(Error::InvalidParameter("noise variance must be nonnegative".into()));
        }
    }
    let mut rng_c = rng_for(seed, "components");
    let mut rng_a = rng_for(seed, "mixing");
    let mut rng_b = rng_for(seed, "noise");
    let mut x = TfTensor::zeros(channels, f_n, l_n);
    let mut images = vec![TfTensor::zeros(channels, f_n, l_n); j_n];
    let mut a_sequence = Vec::with_capacity(f_n);
    let mut sources = Vec::with_capacity(f_n);
    for (f, prior) in priors.iter().enumerate() {
        let mut a = sample_complex_gaussian(&mut rng_a, &prior.mean, &prior.evolution_cov);
        let mut a_bin = Vec::with_capacity(l_n);
        let mut s_bin = Vec::with_capacity(l_n);
        for l in 0..l_n {
            if l > 0 {
                a = sample_complex_gaussian(&mut rng_a, &a, &prior.evolution_cov);
            }
            let mut s = CVec::zeros(j_n);
            for k in 0..k_n {
                s[model.source_of(k)] += standard_complex(&mut rng_c, model.component_variance(k, f, l));
            }
            let mut xv = CVec::zeros(channels);
            for (j, img) in images.iter_mut().enumerate() {
                let col = a.rows(j * channels, channels) * s[j];
                xv += &col;
                img.set_bin_vector(f, l, &col.into_owned());
            }
            for i in 0..channels {
                xv[i] += standard_complex(&mut rng_b, prior.noise_var);
            }
            x.set_bin_vector(f, l, &xv);
            a_bin.push(a.clone());
            s_bin.push(s);
        }
        a_sequence.push(a_bin);
        sources.push(s_bin);
    }
    Ok(StftMixture { x, images, a_sequence, sources })
}

/// Per-tap linear interpolation between two filters; the endpoints are
/// reproduced exactly.
pub fn interpolate_filters(start: &[f64], end: &[f64], positions: usize) -> Result<Vec<Vec<f64>>> {
    if start.len() != end.len() {
        return Err(Error::Dimension(format!(
            "filter lengths differ: {} and {}",
            start.len(),
            end.len()
        )));
    }
    if positions < 2 {
        return Err(Error::InvalidParameter("at least two positions are needed".into()));
    }
    Ok((0..positions)
        .map(|p| {
            if p == positions - 1 {
                return end.to_vec();
            }
            let alpha = p as f64 / (positions - 1) as f64;
            start.iter().zip(end).map(|(a, b)| (1.0 - alpha) * a + alpha * b).collect()
        })
        .collect())
}

/// Motion of one source: filters (one per microphone) at the start and at
/// the end of the signal, covered at constant speed.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySpec {
    pub start: Vec<Vec<f64>>,
    pub end: Vec<Vec<f64>>,
}

impl TrajectorySpec {
    pub fn fixed(filters: Vec<Vec<f64>>) -> Self {
        Self { start: filters.clone(), end: filters }
    }

    pub fn channels(&self) -> usize {
        self.start.len()
    }

    fn validate(&self) -> Result<()> {
        if self.start.is_empty() || self.start.len() != self.end.len() {
            return Err(Error::Dimension("trajectory needs matching start and end filters per channel".into()));
        }
        let taps = self.start[0].len();
        if taps == 0 || self.start.iter().chain(&self.end).any(|h| h.len() != taps) {
            return Err(Error::Dimension("all filters of a trajectory must have the same length".into()));
        }
        Ok(())
    }
}

fn convolve_truncated(h: &[f64], s: &[f64]) -> Vec<f64> {
    (0..s.len())
        .map(|t| {
            h.iter()
                .enumerate()
                .take(t + 1)
                .map(|(tau, g)| g * s[t - tau])
                .sum()
        })
        .collect()
}

/// Time-varying convolution: output sample `t` uses the filter interpolated
/// at position `α_t = t/(T−1)`, i.e.
/// `y[t] = Σ_τ ((1−α_t) h_start[τ] + α_t h_end[τ]) s[t−τ]`.
/// Returns the image of one source, truncated to the source length.
pub fn render_image(source: &[f64], trajectory: &TrajectorySpec) -> Result<Vec<Vec<f64>>> {
    trajectory.validate()?;
    let len = source.len();
    let denom = len.saturating_sub(1).max(1) as f64;
    Ok(trajectory
        .start
        .iter()
        .zip(&trajectory.end)
        .map(|(h0, h1)| {
            let y0 = convolve_truncated(h0, source);
            if h0 == h1 {
                return y0;
            }
            let y1 = convolve_truncated(h1, source);
            y0.iter()
                .zip(&y1)
                .enumerate()
                .map(|(t, (a, b))| {
                    let alpha = t as f64 / denom;
                    (1.0 - alpha) * a + alpha * b
                })
                .collect()
        })
        .collect())
}

/// A mixture and its ground-truth images, `[j][i][t]`.
#[derive(Clone, Debug)]
pub struct RenderedMixture {
    pub mixture: Vec<Vec<f64>>,
    pub images: Vec<Vec<Vec<f64>>>,
}

pub fn render_moving_mixture(sources: &[Vec<f64>], trajectories: &[TrajectorySpec]) -> Result<RenderedMixture> {
    if sources.is_empty() || sources.len() != trajectories.len() {
        return Err(Error::Dimension(format!(
            "{} sources and {} trajectories",
            sources.len(),
            trajectories.len()
        )));
    }
    let len = sources[0].len();
    let channels = trajectories[0].channels();
    if sources.iter().any(|s| s.len() != len) || trajectories.iter().any(|t| t.channels() != channels) {
        return Err(Error::Dimension("sources must share length and trajectories channel count".into()));
    }
    let images = sources
        .iter()
        .zip(trajectories)
        .map(|(s, t)| render_image(s, t))
        .collect::<Result<Vec<_>>>()?;
    let mut mixture = vec![vec![0.0; len]; channels];
    for img in &images {
        for (m, ch) in mixture.iter_mut().zip(img) {
            for (a, b) in m.iter_mut().zip(ch) {
                *a += b;
            }
        }
    }
    Ok(RenderedMixture { mixture, images })
}

fn power(signal: &[Vec<f64>]) -> f64 {
    let n: usize = signal.iter().map(|c| c.len()).sum();
    signal.iter().flatten().map(|v| v * v).sum::<f64>() / n.max(1) as f64
}

/// Adds white Gaussian noise whose realized power gives exactly the requested
/// SNR (over all channels). An infinite SNR returns the signal unchanged.
pub fn add_noise(signal: &[Vec<f64>], snr_db: f64, seed: u64) -> Result<Vec<Vec<f64>>> {
    if snr_db == f64::INFINITY {
        return Ok(signal.to_vec());
    }
    if !snr_db.is_finite() {
        return Err(Error::InvalidParameter(format!("invalid SNR {snr_db}")));
    }
    let p_signal = power(signal);
    if !(p_signal > 0.0) || !p_signal.is_finite() {
        return Err(Error::Degenerate("cannot set an SNR on a silent signal".into()));
    }
    let mut rng = rng_for(seed, "awgn");
    let noise: Vec<Vec<f64>> = signal
        .iter()
        .map(|c| (0..c.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let gain = (p_signal / 10f64.powf(snr_db / 10.0) / power(&noise)).sqrt();
    Ok(signal
        .iter()
        .zip(&noise)
        .map(|(s, n)| s.iter().zip(n).map(|(a, b)| a + gain * b).collect())
        .collect())
}

/// STFT settings shared by the initializer and the separation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StftParams {
    pub sample_rate: u32,
    pub window_size: usize,
    pub hop: usize,
}

/// Channel-averaged power spectrogram (`F × L`).
pub fn mean_power_spectrogram(tf: &TfTensor) -> DMatrix<f64> {
    DMatrix::from_fn(tf.bins(), tf.frames(), |f, l| {
        (0..tf.channels()).map(|i| tf.get(i, f, l).norm_sqr()).sum::<f64>() / tf.channels() as f64
    })
}

/// Target corrupted by the summed interferers at `r_db` (infinite means
/// clean), then KL-NMF on its channel-averaged power spectrogram.
pub fn semi_blind_nmf_init(
    target: &[Vec<f64>],
    interferers: &[Vec<Vec<f64>>],
    r_db: f64,
    components: usize,
    stft: StftParams,
    iterations: usize,
    seed: u64,
) -> Result<KlNmfFit> {
    let corrupted = corrupt(target, interferers, r_db)?;
    let tf = analyze(&corrupted, stft.sample_rate, stft.window_size, stft.hop)?;
    kl_nmf_fit(&mean_power_spectrogram(&tf), components, iterations, seed)
}

/// `target + g · Σ interferers` with `g` chosen so the target-to-interference
/// power ratio is `r_db`.
pub fn corrupt(target: &[Vec<f64>], interferers: &[Vec<Vec<f64>>], r_db: f64) -> Result<Vec<Vec<f64>>> {
    if r_db == f64::INFINITY || interferers.is_empty() {
        return Ok(target.to_vec());
    }
    let shape_ok = interferers.iter().all(|s| {
        s.len() == target.len() && s.iter().zip(target).all(|(a, b)| a.len() == b.len())
    });
    if !shape_ok {
        return Err(Error::Dimension("interferers must be aligned with the target".into()));
    }
    let mut sum: Vec<Vec<f64>> = target.iter().map(|c| vec![0.0; c.len()]).collect();
    for s in interferers {
        for (acc, ch) in sum.iter_mut().zip(s) {
            for (a, b) in acc.iter_mut().zip(ch) {
                *a += b;
            }
        }
    }
    let (p_t, p_i) = (power(target), power(&sum));
    if !(p_i > 0.0) {
        return Ok(target.to_vec());
    }
    let g = (p_t / p_i / 10f64.powf(r_db / 10.0)).sqrt();
    Ok(target
        .iter()
        .zip(&sum)
        .map(|(t, s)| t.iter().zip(s).map(|(a, b)| a + g * b).collect())
        .collect())
}

/// Random FIR filter with an exponentially decaying envelope and a unit
/// direct path at tap 0 scaled by `gain`.
pub fn random_fir<R: Rng>(rng: &mut R, taps: usize, decay: f64, gain: f64) -> Vec<f64> {
    (0..taps)
        .map(|t| {
            let g: f64 = rng.sample(StandardNormal);
            if t == 0 {
                gain
            } else {
                0.5 * gain * g * (-(t as f64) / decay).exp()
            }
        })
        .collect()
}

/// Harmonic notes with random pitches in `[f_lo, f_hi]` Hz, 1/h partial
/// amplitudes and decaying envelopes, with occasional rests and a little
/// noise; a low-rank-friendly stand-in for speech or music.
pub fn synthetic_source<R: Rng>(
    rng: &mut R,
    len: usize,
    sample_rate: u32,
    f_lo: f64,
    f_hi: f64,
) -> Vec<f64> {
    let fs = sample_rate as f64;
    let note = (0.25 * fs) as usize;
    let mut out = vec![0.0; len];
    let mut start = 0;
    while start < len {
        let end = (start + note).min(len);
        if rng.random_range(0.0..1.0) > 0.15 {
            let f0 = rng.random_range(f_lo..f_hi);
            let harmonics = ((0.45 * fs / f0) as usize).clamp(1, 10);
            let phases: Vec<f64> = (0..harmonics).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
            for (n, o) in out[start..end].iter_mut().enumerate() {
                let t = n as f64 / fs;
                let env = (-t * 6.0).exp() * (1.0 - (-t * 400.0).exp());
                let tone: f64 = (0..harmonics)
                    .map(|h| ((h + 1) as f64 * 2.0 * PI * f0 * t + phases[h]).sin() / (h + 1) as f64)
                    .sum();
                *o = env * tone;
            }
        }
        start = end;
    }
    for o in &mut out {
        let g: f64 = rng.sample(StandardNormal);
        *o += 1e-3 * g;
    }
    out
}

/// Evolution covariance `scale · (B Bᴴ + I)/2` with a random `B`, for
/// random-walk mixing with correlated entries.
pub fn random_evolution_cov<R: Rng>(rng: &mut R, dim: usize, scale: f64) -> HermitianPsd {
    let b = CMat::from_fn(dim, dim, |_, _| standard_complex(rng, 1.0 / dim as f64));
    let m = (&b * b.adjoint() + CMat::identity(dim, dim)) * Complex64::new(0.5 * scale, 0.0);
    crate::numerics::hermitianize(&m).expect("square by construction")
}

/// Random NMF ground truth with `per_source` components per source; the
/// activations are sparse-ish so sources have distinct TF occupancy.
pub fn random_nmf_truth<R: Rng>(
    rng: &mut R,
    bins: usize,
    frames: usize,
    sources: usize,
    per_source: usize,
) -> Result<NmfModel> {
    let k_n = sources * per_source;
    let w = DMatrix::from_fn(bins, k_n, |_, _| {
        let g: f64 = rng.sample(StandardNormal);
        (1.5 * g).exp()
    });
    let h = DMatrix::from_fn(k_n, frames, |_, _| {
        let g: f64 = rng.sample(StandardNormal);
        if rng.random_range(0.0..1.0) < 0.4 { 1e-3 } else { (1.5 * g).exp() }
    });
    let partition = (0..k_n).map(|k| k / per_source).collect();
    NmfModel::new(w, h, partition, sources)
}

/// Desk-scale moving-source scene: harmonic sources in separate pitch
/// octaves, each heard through random decaying FIRs that drift halfway
/// towards a second random FIR over the signal.
#[derive(Clone, Debug, PartialEq)]
pub struct MovingScenario {
    pub channels: usize,
    pub sources: usize,
    pub duration_s: f64,
    pub sample_rate: u32,
    pub taps: usize,
    /// Sensor-noise SNR of the mixture; infinite for none.
    pub snr_db: f64,
}

impl Default for MovingScenario {
    fn default() -> Self {
        Self { channels: 2, sources: 2, duration_s: 2.0, sample_rate: 16_000, taps: 32, snr_db: f64::INFINITY }
    }
}

#[derive(Clone, Debug)]
pub struct SimulatedScene {
    pub sources: Vec<Vec<f64>>,
    pub trajectories: Vec<TrajectorySpec>,
    /// Mixture including sensor noise.
    pub mixture: Vec<Vec<f64>>,
    /// Clean images, `[j][i][t]`.
    pub images: Vec<Vec<Vec<f64>>>,
}

pub fn simulate_moving_scenario(spec: &MovingScenario, seed: u64) -> Result<SimulatedScene> {
    if spec.channels == 0 || spec.sources == 0 || spec.taps == 0 || !(spec.duration_s > 0.0) {
        return Err(Error::InvalidParameter(format!("invalid scenario {spec:?}")));
    }
    let len = (spec.duration_s * spec.sample_rate as f64).round() as usize;
    let mut rng_s = rng_for(seed, "sources");
    let mut rng_h = rng_for(seed, "filters");
    let sources: Vec<Vec<f64>> = (0..spec.sources)
        .map(|j| {
            let lo = 100.0 * 2f64.powi(j as i32);
            synthetic_source(&mut rng_s, len, spec.sample_rate, lo, 2.0 * lo)
        })
        .collect();
    let decay = spec.taps as f64 / 4.0;
    let trajectories: Vec<TrajectorySpec> = (0..spec.sources)
        .map(|_| {
            let start: Vec<Vec<f64>> = (0..spec.channels)
                .map(|_| random_fir(&mut rng_h, spec.taps, decay, 1.0))
                .collect();
            let end = start
                .iter()
                .map(|h| {
                    let other = random_fir(&mut rng_h, spec.taps, decay, 1.0);
                    h.iter().zip(&other).map(|(a, b)| 0.5 * (a + b)).collect()
                })
                .collect();
            TrajectorySpec { start, end }
        })
        .collect();
    let rendered = render_moving_mixture(&sources, &trajectories)?;
    let mixture = add_noise(&rendered.mixture, spec.snr_db, seed)?;
    Ok(SimulatedScene { sources, trajectories, mixture, images: rendered.images })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::testing::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn noiseless_single_source_is_exactly_mixed() {
        let w = DMatrix::from_element(2, 1, 1.0);
        let h = DMatrix::from_element(1, 3, 2.0);
        let model = NmfModel::new(w, h, vec![0], 1).unwrap();
        let a = CVec::from_vec(vec![c(0.5), Complex64::new(0.1, -0.3)]);
        let prior = ChannelPrior { mean: a.clone(), evolution_cov: HermitianPsd::zeros(2), noise_var: 0.0 };
        let m = generate_stft_mixture(2, &model, &[prior.clone(), prior], 9).unwrap();
        for f in 0..2 {
            for l in 0..3 {
                assert_eq!(m.a_sequence[f][l], a);
                let want = &a * m.sources[f][l][0];
                assert!((m.x.bin_vector(f, l) - want).camax() < 1e-15);
            }
        }
    }

    #[test]
    fn component_and_walk_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let l_n = 10_000;
        let w = DMatrix::from_element(1, 1, 1.5);
        let h = DMatrix::from_element(1, l_n, 2.0);
        let model = NmfModel::new(w, h, vec![0], 1).unwrap();
        let sigma = random_hpd(&mut rng, 2, 0.1);
        let prior = ChannelPrior { mean: CVec::zeros(2), evolution_cov: sigma.clone(), noise_var: 0.0 };
        let m = generate_stft_mixture(2, &model, &[prior], 11).unwrap();
        let var = m.sources[0].iter().map(|s| s[0].norm_sqr()).sum::<f64>() / l_n as f64;
        assert!((var - 3.0).abs() < 0.05 * 3.0, "component variance {var}");
        let mut acc = CMat::zeros(2, 2);
        for l in 1..l_n {
            let d = &m.a_sequence[0][l] - &m.a_sequence[0][l - 1];
            acc += &d * d.adjoint();
        }
        acc /= c((l_n - 1) as f64);
        let rel = (&acc - sigma.matrix()).norm() / sigma.matrix().norm();
        assert!(rel < 0.1, "increment covariance error {rel}");
    }

    #[test]
    fn interpolation_examples() {
        let f = interpolate_filters(&[1.0, 0.0], &[0.0, 1.0], 3).unwrap();
        assert_eq!(f[0], vec![1.0, 0.0]);
        assert_eq!(f[1], vec![0.5, 0.5]);
        assert_eq!(f[2], vec![0.0, 1.0]);
        let f = interpolate_filters(&[0.3, 0.7], &[0.9, -0.1], 2).unwrap();
        assert_eq!(f, vec![vec![0.3, 0.7], vec![0.9, -0.1]]);
        assert!(interpolate_filters(&[1.0], &[1.0, 2.0], 4).is_err());
    }

    #[test]
    fn interpolation_is_monotone_per_tap() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let a = random_fir(&mut rng, 8, 3.0, 1.0);
            let b = random_fir(&mut rng, 8, 3.0, 1.0);
            let seq = interpolate_filters(&a, &b, 17).unwrap();
            for t in 0..8 {
                let up = b[t] >= a[t];
                for p in 1..seq.len() {
                    let step = seq[p][t] - seq[p - 1][t];
                    assert!(if up { step >= -1e-15 } else { step <= 1e-15 });
                }
            }
        }
    }

    #[test]
    fn static_render_equals_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let s: Vec<f64> = (0..500).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h = random_fir(&mut rng, 32, 6.0, 1.0);
        let img = render_image(&s, &TrajectorySpec::fixed(vec![h.clone()])).unwrap();
        for t in 0..s.len() {
            let direct: f64 = (0..h.len().min(t + 1)).map(|tau| h[tau] * s[t - tau]).sum();
            assert!((img[0][t] - direct).abs() < 1e-10);
        }
    }

    #[test]
    fn gain_crossfade_ramps_linearly() {
        let s = vec![1.0; 101];
        let traj = TrajectorySpec { start: vec![vec![1.0]], end: vec![vec![0.0]] };
        let img = render_image(&s, &traj).unwrap();
        for (t, y) in img[0].iter().enumerate() {
            assert!((y - (1.0 - t as f64 / 100.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn moving_render_matches_per_sample_filter() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let s: Vec<f64> = (0..300).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h0 = random_fir(&mut rng, 16, 4.0, 1.0);
        let h1 = random_fir(&mut rng, 16, 4.0, 0.5);
        let traj = TrajectorySpec { start: vec![h0.clone()], end: vec![h1.clone()] };
        let img = render_image(&s, &traj).unwrap();
        let filters = interpolate_filters(&h0, &h1, s.len()).unwrap();
        for t in 0..s.len() {
            let h = &filters[t];
            let direct: f64 = (0..h.len().min(t + 1)).map(|tau| h[tau] * s[t - tau]).sum();
            assert!((img[0][t] - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn mixture_is_sum_of_images() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let sources: Vec<Vec<f64>> = (0..2).map(|_| (0..400).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let trajs: Vec<TrajectorySpec> = (0..2)
            .map(|_| TrajectorySpec {
                start: (0..2).map(|_| random_fir(&mut rng, 8, 3.0, 1.0)).collect(),
                end: (0..2).map(|_| random_fir(&mut rng, 8, 3.0, 1.0)).collect(),
            })
            .collect();
        let r = render_moving_mixture(&sources, &trajs).unwrap();
        for i in 0..2 {
            for t in 0..400 {
                assert_eq!(r.mixture[i][t], r.images[0][i][t] + r.images[1][i][t]);
            }
        }
    }

    #[test]
    fn noise_hits_requested_snr() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let s: Vec<Vec<f64>> = (0..2).map(|_| synthetic_source(&mut rng, 8000, 16_000, 100.0, 300.0)).collect();
        let y = add_noise(&s, 4.0, 3).unwrap();
        let noise: Vec<Vec<f64>> = y.iter().zip(&s).map(|(a, b)| a.iter().zip(b).map(|(p, q)| p - q).collect()).collect();
        let snr = 10.0 * (power(&s) / power(&noise)).log10();
        assert!((snr - 4.0).abs() < 0.1, "snr {snr}");
        assert_eq!(add_noise(&s, f64::INFINITY, 3).unwrap(), s);
        assert!(add_noise(&[vec![0.0; 10]], 4.0, 3).is_err());
    }

    #[test]
    fn zero_db_corruption_doubles_power() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let t: Vec<Vec<f64>> = vec![(0..16_000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()];
        let i: Vec<Vec<f64>> = vec![(0..16_000).map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal)).collect()];
        let y = corrupt(&t, &[i], 0.0).unwrap();
        let ratio = power(&y) / power(&t);
        assert!((ratio - 2.0).abs() < 0.2, "ratio {ratio}");
        assert_eq!(corrupt(&t, &[], 0.0).unwrap(), t);
    }

    #[test]
    fn semi_blind_init_runs() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let t = vec![synthetic_source(&mut rng, 4096, 16_000, 100.0, 200.0)];
        let i = vec![synthetic_source(&mut rng, 4096, 16_000, 300.0, 500.0)];
        let params = StftParams { sample_rate: 16_000, window_size: 256, hop: 128 };
        let fit = semi_blind_nmf_init(&t, &[i], 20.0, 4, params, 50, 1).unwrap();
        assert_eq!(fit.w.shape(), (129, 4));
        assert_eq!(fit.h.shape(), (4, 32));
    }
}
