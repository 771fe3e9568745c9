//! Short-window two-sided STFT packed as a two-channel real image.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_param, Result};
use crate::signal::ComplexTimeSeries;

/// STFT framing parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StftConfig {
    pub window: usize,
    pub hop: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self { window: 16, hop: 8 }
    }
}

impl StftConfig {
    pub fn frame_count(&self, signal_len: usize) -> Result<usize> {
        ensure_param!(self.window >= 1, "window must be positive");
        ensure_param!(
            self.hop >= 1 && self.hop <= self.window,
            "hop must satisfy 0 < hop <= window, got hop={} window={}",
            self.hop,
            self.window
        );
        ensure_param!(
            self.window <= signal_len,
            "window {} longer than signal of {} samples",
            self.window,
            signal_len
        );
        Ok(1 + (signal_len - self.window) / self.hop)
    }
}

/// `[2][n_bins][n_frames]` image: channel 0 is Re(STFT), channel 1 is Im(STFT).
///
/// Bins are centre-shifted: bin 0 is `-fs/2`, bin `n_bins/2` is DC.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub data: Vec<f64>,
    pub n_bins: usize,
    pub n_frames: usize,
    pub sample_rate: f64,
    pub hop: usize,
}

impl Spectrogram {
    pub fn shape(&self) -> [usize; 3] {
        [2, self.n_bins, self.n_frames]
    }

    #[inline]
    pub fn index(&self, channel: usize, bin: usize, frame: usize) -> usize {
        (channel * self.n_bins + bin) * self.n_frames + frame
    }

    pub fn get(&self, channel: usize, bin: usize, frame: usize) -> f64 {
        self.data[self.index(channel, bin, frame)]
    }

    /// Complex STFT value at `(bin, frame)`.
    pub fn value(&self, bin: usize, frame: usize) -> Complex64 {
        Complex64::new(self.get(0, bin, frame), self.get(1, bin, frame))
    }

    /// Σ over bins of |STFT|² for each frame.
    pub fn frame_energy(&self) -> Vec<f64> {
        (0..self.n_frames)
            .map(|m| (0..self.n_bins).map(|b| self.value(b, m).norm_sqr()).sum())
            .collect()
    }
}

/// Symmetric Hamming window, `0.54 − 0.46 cos(2πn / (len − 1))`.
pub fn hamming(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    let denom = (len - 1) as f64;
    (0..len).map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / denom).cos()).collect()
}

/// Computes the Hamming-windowed, unnormalized, centre-shifted STFT.
pub fn stft(ts: &ComplexTimeSeries, config: StftConfig) -> Result<Spectrogram> {
    let n_frames = config.frame_count(ts.len())?;
    ensure_param!(ts.samples.iter().all(|z| z.is_finite()), "input series has non-finite samples");
    let window = config.window;
    let taper = hamming(window);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(window);
    let half = window / 2;

    let frames: Vec<Vec<Complex64>> = (0..n_frames)
        .into_par_iter()
        .map(|m| {
            let start = m * config.hop;
            let mut buf: Vec<Complex64> =
                ts.samples[start..start + window].iter().zip(&taper).map(|(x, w)| x * w).collect();
            fft.process(&mut buf);
            buf.rotate_left(window - half);
            buf
        })
        .collect();

    let mut data = vec![0.0; 2 * window * n_frames];
    for (m, frame) in frames.iter().enumerate() {
        for (bin, z) in frame.iter().enumerate() {
            data[bin * n_frames + m] = z.re;
            data[(window + bin) * n_frames + m] = z.im;
        }
    }
    Ok(Spectrogram { data, n_bins: window, n_frames, sample_rate: ts.sample_rate, hop: config.hop })
}

/// Centre frequency of each output bin, `-fs/2 .. fs/2 - fs/window`.
pub fn bin_frequencies(window: usize, sample_rate: f64) -> Result<Vec<f64>> {
    ensure_param!(window >= 2 && window % 2 == 0, "window must be even and >= 2, got {window}");
    let step = sample_rate / window as f64;
    let half = (window / 2) as f64;
    Ok((0..window).map(|b| (b as f64 - half) * step).collect())
}

const MIN_PERIOD_CORRELATION: f64 = 0.3;

/// Normalized autocorrelation of a mean-removed sequence, lags `0..len`.
pub fn autocorrelation(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let d: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let r0: f64 = d.iter().map(|v| v * v).sum();
    (0..n)
        .map(|k| if r0 == 0.0 { 0.0 } else { d[..n - k].iter().zip(&d[k..]).map(|(a, b)| a * b).sum::<f64>() / r0 })
        .collect()
}

/// Period, in frames, of repeating structure in `energy`: the first local
/// autocorrelation maximum after the first negative lag that reaches half
/// of the largest value beyond that lag (and at least 0.3). Lags past half
/// the length are ignored as too poorly averaged.
pub fn dominant_period(energy: &[f64]) -> Option<usize> {
    let r = autocorrelation(energy);
    let limit = r.len() / 2;
    let k0 = (1..limit).find(|&k| r[k] < 0.0)?;
    let peak = r[k0..limit].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if peak < MIN_PERIOD_CORRELATION {
        return None;
    }
    (k0 + 1..limit - 1).find(|&k| r[k] >= r[k - 1] && r[k] >= r[k + 1] && r[k] >= 0.5 * peak)
}
