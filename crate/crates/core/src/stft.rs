//! Sine-window STFT with 50% overlap.
//!
//! Frame `ℓ` is centred on sample `ℓ·hop` and spans `[ℓ·hop − hop, ℓ·hop + hop)`
//! (zeros outside the signal). Only the `window/2 + 1` non-negative bins are
//! stored. Analysis computes `X[k] = Σ_n w[n] x[n] e^{−2πikn/N}` with no
//! scaling and synthesis applies `(1/N)·IDFT`, the same window, and
//! overlap-add. Because `w[n]² + w[n + N/2]² = 1`, the round trip is the
//! identity wherever two frames overlap, i.e. everywhere except the last
//! `hop` samples.
//!
//! Energy convention (Parseval): for a signal whose support is fully
//! overlapped, `Σ_t x[t]² = (1/N) Σ_ℓ Σ_k c_k |X[k, ℓ]|²` with `c_0 = c_{N/2} = 1`
//! and `c_k = 2` otherwise. See [`TfTensor::weighted_energy`].

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::numerics::CVec;

/// Complex time-frequency coefficients indexed by (channel, bin, frame).
#[derive(Clone, Debug, PartialEq)]
pub struct TfTensor {
    channels: usize,
    bins: usize,
    frames: usize,
    /// Layout `[(f · frames + ℓ) · channels + i]`, so that one (f, ℓ) bin is
    /// a contiguous channel vector.
    data: Vec<Complex64>,
    pub sample_rate: u32,
    pub window_size: usize,
    pub hop: usize,
    /// Length of the analysed signal in samples.
    pub signal_len: usize,
}

impl TfTensor {
    pub fn zeros(channels: usize, bins: usize, frames: usize) -> Self {
        let window_size = 2 * bins.saturating_sub(1);
        Self {
            channels,
            bins,
            frames,
            data: vec![Complex64::new(0.0, 0.0); channels * bins * frames],
            sample_rate: 16_000,
            window_size,
            hop: window_size / 2,
            signal_len: frames * window_size / 2,
        }
    }

    /// Copies STFT metadata from `other`.
    pub fn with_layout_of(mut self, other: &TfTensor) -> Self {
        self.sample_rate = other.sample_rate;
        self.window_size = other.window_size;
        self.hop = other.hop;
        self.signal_len = other.signal_len;
        self
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    #[inline]
    fn index(&self, i: usize, f: usize, l: usize) -> usize {
        debug_assert!(i < self.channels && f < self.bins && l < self.frames);
        (f * self.frames + l) * self.channels + i
    }

    #[inline]
    pub fn get(&self, i: usize, f: usize, l: usize) -> Complex64 {
        self.data[self.index(i, f, l)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, f: usize, l: usize, value: Complex64) {
        let idx = self.index(i, f, l);
        self.data[idx] = value;
    }

    /// The channel vector `x_{fℓ}`.
    pub fn bin_vector(&self, f: usize, l: usize) -> CVec {
        let start = self.index(0, f, l);
        CVec::from_column_slice(&self.data[start..start + self.channels])
    }

    pub fn set_bin_vector(&mut self, f: usize, l: usize, v: &CVec) {
        let start = self.index(0, f, l);
        self.data[start..start + self.channels].copy_from_slice(v.as_slice());
    }

    /// Mean of `|x_{i,fℓ}|²` over channels and frames for bin `f`.
    pub fn mean_power(&self, f: usize) -> f64 {
        let start = f * self.frames * self.channels;
        let end = start + self.frames * self.channels;
        let n = (end - start).max(1) as f64;
        self.data[start..end].iter().map(|z| z.norm_sqr()).sum::<f64>() / n
    }

    /// `(1/N) Σ_{i,ℓ,k} c_k |X|²` with the half-spectrum weights `c_k`.
    pub fn weighted_energy(&self) -> f64 {
        let n = self.window_size as f64;
        let mut total = 0.0;
        for f in 0..self.bins {
            let weight = if f == 0 || f + 1 == self.bins { 1.0 } else { 2.0 };
            for l in 0..self.frames {
                for i in 0..self.channels {
                    total += weight * self.get(i, f, l).norm_sqr();
                }
            }
        }
        total / n
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }
}

/// `sin(π(n + ½)/N)`.
pub fn sine_window(size: usize) -> Vec<f64> {
    (0..size)
        .map(|n| (PI * (n as f64 + 0.5) / size as f64).sin())
        .collect()
}

/// Number of frames produced for a signal of `len` samples.
pub fn frame_count(len: usize, hop: usize) -> usize {
    len.div_ceil(hop)
}

struct Plans {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

fn plans(size: usize) -> Plans {
    let mut planner = FftPlanner::new();
    Plans {
        forward: planner.plan_fft_forward(size),
        inverse: planner.plan_fft_inverse(size),
    }
}

fn check_geometry(window_size: usize, hop: usize) -> Result<()> {
    if window_size == 0 || window_size % 2 != 0 {
        return Err(Error::InvalidParameter(format!(
            "window size must be even and positive, got {window_size}"
        )));
    }
    if hop * 2 != window_size {
        return Err(Error::InvalidParameter(format!(
            "hop must be half the window ({}), got {hop}",
            window_size / 2
        )));
    }
    Ok(())
}

/// Forward STFT of a multichannel signal (`signal[channel][sample]`).
///
/// A signal whose length is not a multiple of `hop` is zero-padded to the
/// next multiple; the frame count is `ceil(len / hop)`.
pub fn analyze(
    signal: &[Vec<f64>],
    sample_rate: u32,
    window_size: usize,
    hop: usize,
) -> Result<TfTensor> {
    check_geometry(window_size, hop)?;
    let channels = signal.len();
    let len = signal.first().map_or(0, Vec::len);
    if channels == 0 || len == 0 {
        return Err(Error::Degenerate("cannot analyze an empty signal".into()));
    }
    if signal.iter().any(|c| c.len() != len) {
        return Err(Error::Dimension("channels differ in length".into()));
    }

    let bins = window_size / 2 + 1;
    let frames = frame_count(len, hop);
    let window = sine_window(window_size);
    let fft = plans(window_size).forward;
    let mut out = TfTensor::zeros(channels, bins, frames);
    out.sample_rate = sample_rate;
    out.window_size = window_size;
    out.hop = hop;
    out.signal_len = len;

    let mut buf = vec![Complex64::new(0.0, 0.0); window_size];
    for (i, chan) in signal.iter().enumerate() {
        for l in 0..frames {
            let start = (l * hop) as isize - hop as isize;
            for (n, slot) in buf.iter_mut().enumerate() {
                let t = start + n as isize;
                let sample = if t >= 0 && (t as usize) < len {
                    chan[t as usize]
                } else {
                    0.0
                };
                *slot = Complex64::new(sample * window[n], 0.0);
            }
            fft.process(&mut buf);
            for (f, z) in buf.iter().take(bins).enumerate() {
                out.set(i, f, l, *z);
            }
        }
    }
    Ok(out)
}

/// Inverse STFT by windowed overlap-add; returns `signal_len` samples per
/// channel.
pub fn synthesize(tf: &TfTensor) -> Result<Vec<Vec<f64>>> {
    check_geometry(tf.window_size, tf.hop)?;
    let n = tf.window_size;
    if tf.bins() != n / 2 + 1 {
        return Err(Error::Dimension(format!(
            "tensor has {} bins but window {} implies {}",
            tf.bins(),
            n,
            n / 2 + 1
        )));
    }
    if tf.frames() < frame_count(tf.signal_len, tf.hop) {
        return Err(Error::Dimension(format!(
            "{} frames cannot cover {} samples",
            tf.frames(),
            tf.signal_len
        )));
    }

    let window = sine_window(n);
    let ifft = plans(n).inverse;
    let hop = tf.hop;
    let len = tf.signal_len;
    let scale = 1.0 / n as f64;
    let mut out = vec![vec![0.0; len]; tf.channels()];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];

    for (i, chan) in out.iter_mut().enumerate() {
        for l in 0..tf.frames() {
            for f in 0..tf.bins() {
                buf[f] = tf.get(i, f, l);
            }
            // Hermitian completion of the negative-frequency half.
            for f in 1..(n / 2) {
                buf[n - f] = buf[f].conj();
            }
            buf[0].im = 0.0;
            buf[n / 2].im = 0.0;
            ifft.process(&mut buf);
            let start = (l * hop) as isize - hop as isize;
            for (k, z) in buf.iter().enumerate() {
                let t = start + k as isize;
                if t >= 0 && (t as usize) < len {
                    chan[t as usize] += z.re * scale * window[k];
                }
            }
        }
    }
    Ok(out)
}
