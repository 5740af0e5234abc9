mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use common::*;
use tvmix::eval::{bss_metrics, decompose, input_scores, mean_sdr};
use tvmix::mixsim::{
    add_noise, corrupt, generate_stft_mixture, random_fir, render_image, render_moving_mixture,
    sample_complex_gaussian, simulate_moving_scenario, MovingScenario, TrajectorySpec,
};
use tvmix::mstep::ChannelPrior;
use tvmix::numerics::{CMat, CVec, HermitianPsd};

fn noise(rng: &mut ChaCha8Rng, channels: usize, len: usize) -> Vec<Vec<f64>> {
    (0..channels).map(|_| (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).collect()
}

fn power(x: &[Vec<f64>]) -> f64 {
    let n: usize = x.iter().map(|c| c.len()).sum();
    x.iter().flatten().map(|v| v * v).sum::<f64>() / n as f64
}

fn direct_convolution(h: &[f64], s: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; s.len()];
    for (t, out) in y.iter_mut().enumerate() {
        for (tau, g) in h.iter().enumerate() {
            if tau <= t {
                *out += g * s[t - tau];
            }
        }
    }
    y
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mixture_is_the_sum_of_images(seed in 0u64..10_000, len in 50usize..400, taps in 1usize..16) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sources: Vec<Vec<f64>> = (0..2).map(|_| noise(&mut rng, 1, len).remove(0)).collect();
        let trajectories: Vec<TrajectorySpec> = (0..2)
            .map(|_| TrajectorySpec {
                start: (0..3).map(|_| random_fir(&mut rng, taps, 4.0, 1.0)).collect(),
                end: (0..3).map(|_| random_fir(&mut rng, taps, 4.0, 1.0)).collect(),
            })
            .collect();
        let r = render_moving_mixture(&sources, &trajectories).unwrap();
        for i in 0..3 {
            for t in 0..len {
                let sum: f64 = r.images.iter().map(|img| img[i][t]).sum();
                prop_assert!((sum - r.mixture[i][t]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn moving_image_interpolates_the_endpoint_renders(seed in 0u64..10_000, len in 20usize..200) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = noise(&mut rng, 1, len).remove(0);
        let (h0, h1) = (random_fir(&mut rng, 8, 3.0, 1.0), random_fir(&mut rng, 8, 3.0, 1.0));
        let img = render_image(&s, &TrajectorySpec { start: vec![h0.clone()], end: vec![h1.clone()] }).unwrap();
        let (y0, y1) = (direct_convolution(&h0, &s), direct_convolution(&h1, &s));
        prop_assert!((img[0][0] - y0[0]).abs() < 1e-12);
        prop_assert!((img[0][len - 1] - y1[len - 1]).abs() < 1e-12);
        let fixed = render_image(&s, &TrajectorySpec::fixed(vec![h0])).unwrap();
        for t in 0..len {
            prop_assert!((fixed[0][t] - y0[t]).abs() < 1e-12);
        }
    }

    #[test]
    fn added_noise_has_the_requested_snr(seed in 0u64..10_000, snr in -10.0f64..40.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = noise(&mut rng, 2, 500);
        let y = add_noise(&x, snr, seed).unwrap();
        let n: Vec<Vec<f64>> = x.iter().zip(&y).map(|(a, b)| a.iter().zip(b).map(|(p, q)| q - p).collect()).collect();
        let realized = 10.0 * (power(&x) / power(&n)).log10();
        prop_assert!((realized - snr).abs() < 1e-9);
    }

    #[test]
    fn corruption_sets_the_target_to_interference_ratio(seed in 0u64..10_000, r_db in -10.0f64..30.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = noise(&mut rng, 2, 300);
        let i = vec![noise(&mut rng, 2, 300), noise(&mut rng, 2, 300)];
        let y = corrupt(&t, &i, r_db).unwrap();
        let e: Vec<Vec<f64>> = t.iter().zip(&y).map(|(a, b)| a.iter().zip(b).map(|(p, q)| q - p).collect()).collect();
        prop_assert!((10.0 * (power(&t) / power(&e)).log10() - r_db).abs() < 1e-9);
    }

    #[test]
    fn scores_are_invariant_to_estimate_scale(seed in 0u64..10_000, scale in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let refs = vec![noise(&mut rng, 2, 600), noise(&mut rng, 2, 600)];
        let extra = noise(&mut rng, 2, 600);
        let est: Vec<Vec<f64>> = (0..2).map(|i| (0..600).map(|t| refs[0][i][t] + 0.5 * refs[1][i][t] + 0.3 * extra[i][t]).collect()).collect();
        let scaled: Vec<Vec<f64>> = est.iter().map(|c| c.iter().map(|v| v * scale).collect()).collect();
        let a = decompose(&est, &refs, 0, 8).unwrap().scores();
        let b = decompose(&scaled, &refs, 0, 8).unwrap().scores();
        prop_assert!((a.sdr_db - b.sdr_db).abs() < 1e-8);
        prop_assert!((a.sir_db - b.sir_db).abs() < 1e-8);
        prop_assert!((a.sar_db - b.sar_db).abs() < 1e-8);
    }
}

#[test]
fn gaussian_sampler_reproduces_the_covariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mean = random_cvec(&mut rng, 3);
    let cov = random_hpd(&mut rng, 3, 0.2);
    let n = 40_000;
    let mut acc = CMat::zeros(3, 3);
    let mut m = CVec::zeros(3);
    for _ in 0..n {
        let z = sample_complex_gaussian(&mut rng, &mean, &cov);
        m += &z;
        let d = &z - &mean;
        acc += &d * d.adjoint();
    }
    m /= c(n as f64, 0.0);
    acc /= c(n as f64, 0.0);
    assert!(rel_vec(&m, &mean) < 0.02);
    assert!(rel_frob(&acc, cov.matrix()) < 0.03);
}

#[test]
fn stft_mixture_noise_has_the_prior_variance() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let truth = tvmix::mixsim::random_nmf_truth(&mut rng, 4, 400, 2, 2).unwrap();
    let priors: Vec<ChannelPrior> = (0..4)
        .map(|_| ChannelPrior { mean: random_cvec(&mut rng, 4), evolution_cov: HermitianPsd::scaled_identity(4, 1e-3), noise_var: 0.5 })
        .collect();
    let mix = generate_stft_mixture(2, &truth, &priors, 3).unwrap();
    let mut acc = 0.0;
    for f in 0..4 {
        for l in 0..400 {
            let mut r = mix.x.bin_vector(f, l);
            for img in &mix.images {
                r -= img.bin_vector(f, l);
            }
            acc += r.norm_squared();
        }
    }
    let var = acc / (4.0 * 400.0 * 2.0);
    assert!((var - 0.5).abs() < 0.05 * 0.5, "noise variance {var}");
}

#[test]
fn moving_scenario_is_deterministic_and_sized() {
    let spec = MovingScenario { duration_s: 0.25, ..MovingScenario::default() };
    let a = simulate_moving_scenario(&spec, 4).unwrap();
    let b = simulate_moving_scenario(&spec, 4).unwrap();
    assert_eq!(a.mixture, b.mixture);
    assert_eq!(a.mixture.len(), 2);
    assert_eq!(a.mixture[0].len(), 4000);
    assert_eq!(a.images.len(), 2);
    let c = simulate_moving_scenario(&spec, 5).unwrap();
    assert_ne!(a.mixture, c.mixture);
}

#[test]
fn input_scores_match_mixture_estimates() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let refs = vec![noise(&mut rng, 2, 800), noise(&mut rng, 2, 800)];
    let mixture: Vec<Vec<f64>> = (0..2).map(|i| (0..800).map(|t| refs[0][i][t] + refs[1][i][t]).collect()).collect();
    let a = input_scores(&mixture, &refs, 8).unwrap();
    let b = bss_metrics(&[mixture.clone(), mixture], &refs, 8).unwrap();
    assert_eq!(a, b);
    assert!(mean_sdr(&a).abs() < 0.5);
}
