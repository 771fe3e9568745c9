//! Martin–Mulgrew returns from rotating-blade targets and calibrated
//! complex Gaussian noise.
//!
//! The synthesized return at slow time `t` is
//!
//! ```text
//! Ψ(t) = A_r · exp(j(2π f_c t − 4π/λ (R + V_rad t)))
//!        · Σ_n (α + β cos Ω_n) · exp(−j (L1+L2)/2 · γ_n) · sinc((L2−L1)/2 · γ_n)
//!
//! α   = sin(|θ| + Φp) + sin(|θ| − Φp)
//! β   = sign(θ) (sin(|θ| + Φp) − sin(|θ| − Φp))
//! Ω_n = 2π (f_rot t + n/N) + φ0
//! γ_n = 4π/λ · cos θ · sin Ω_n
//! ```
//!
//! The carrier factor `exp(j 2π f_c t)` is dropped unless
//! [`Carrier::Included`] is requested: a slow-time series sampled at the PRF
//! cannot represent a 10 GHz carrier.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_param, Result};

/// Rotor parameters of one drone type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroneProfile {
    pub name: String,
    pub n_blades: u32,
    /// Blade root distance from the rotation centre, meters.
    pub l1: f64,
    /// Blade tip distance from the rotation centre, meters.
    pub l2: f64,
    /// Rotation frequency, Hz.
    pub f_rot: f64,
}

impl DroneProfile {
    pub fn new(name: impl Into<String>, n_blades: u32, l1: f64, l2: f64, f_rot: f64) -> Result<Self> {
        let profile = Self { name: name.into(), n_blades, l1, l2, f_rot };
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_param!(self.n_blades >= 1, "profile {}: n_blades must be >= 1", self.name);
        ensure_param!(
            self.l1.is_finite() && self.l2.is_finite() && 0.0 <= self.l1 && self.l1 < self.l2,
            "profile {}: need 0 <= l1 < l2, got l1={} l2={}",
            self.name,
            self.l1,
            self.l2
        );
        ensure_param!(
            self.f_rot.is_finite() && self.f_rot > 0.0,
            "profile {}: f_rot must be positive, got {}",
            self.name,
            self.f_rot
        );
        Ok(())
    }

    /// Time between successive blade flashes, `1 / (N f_rot)`.
    pub fn flash_period(&self) -> f64 {
        1.0 / (f64::from(self.n_blades) * self.f_rot)
    }
}

/// Radar parameters. The PRF doubles as the slow-time sample rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadarConfig {
    /// Wavelength, meters.
    pub wavelength: f64,
    /// Carrier frequency, Hz.
    pub carrier_hz: f64,
    /// Pulse repetition frequency, Hz.
    pub prf_hz: f64,
    /// Observation length, seconds.
    pub duration_s: f64,
}

impl Default for RadarConfig {
    /// X-band: 3 cm, 10 GHz, 10 kHz PRF, 0.2 s.
    fn default() -> Self {
        Self { wavelength: 0.03, carrier_hz: 10e9, prf_hz: 10e3, duration_s: 0.2 }
    }
}

impl RadarConfig {
    pub fn validate(&self) -> Result<()> {
        ensure_param!(
            self.wavelength.is_finite() && self.wavelength > 0.0,
            "wavelength must be positive, got {}",
            self.wavelength
        );
        ensure_param!(self.carrier_hz.is_finite(), "carrier frequency must be finite");
        ensure_param!(self.prf_hz.is_finite() && self.prf_hz > 0.0, "prf must be positive, got {}", self.prf_hz);
        ensure_param!(
            self.duration_s.is_finite() && self.duration_s > 0.0,
            "duration must be positive, got {}",
            self.duration_s
        );
        ensure_param!(self.sample_count() >= 1, "prf * duration rounds to zero samples");
        Ok(())
    }

    pub fn sample_count(&self) -> usize {
        (self.prf_hz * self.duration_s).round() as usize
    }
}

/// Target pose relative to the radar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetGeometry {
    /// Angle between the rotation plane and the line of sight, radians.
    pub theta: f64,
    /// Blade pitch, radians.
    pub phi_p: f64,
    pub range_m: f64,
    /// Radial velocity of the rotation centre, m/s.
    pub v_rad: f64,
    /// Initial blade phase, radians.
    pub rotor_phase: f64,
    pub amplitude: f64,
}

impl TargetGeometry {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("theta", self.theta),
            ("phi_p", self.phi_p),
            ("range_m", self.range_m),
            ("v_rad", self.v_rad),
            ("rotor_phase", self.rotor_phase),
            ("amplitude", self.amplitude),
        ] {
            ensure_param!(v.is_finite(), "geometry {name} must be finite, got {v}");
        }
        ensure_param!(self.amplitude > 0.0, "amplitude must be positive, got {}", self.amplitude);
        ensure_param!(
            self.theta.abs() < PI / 2.0,
            "theta must lie in (-pi/2, pi/2), got {}",
            self.theta
        );
        Ok(())
    }

    /// The `(α, β)` blade-aspect coefficients.
    pub fn aspect_coefficients(&self) -> (f64, f64) {
        let th = self.theta.abs();
        let plus = (th + self.phi_p).sin();
        let minus = (th - self.phi_p).sin();
        (plus + minus, sign(self.theta) * (plus - minus))
    }
}

/// Whether the carrier phase term is part of the synthesized return.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Carrier {
    #[default]
    Baseband,
    Included,
}

/// Uniformly sampled complex slow-time series.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexTimeSeries {
    pub samples: Vec<Complex64>,
    pub sample_rate: f64,
}

impl ComplexTimeSeries {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sample instants `k / sample_rate`.
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.samples.len()).map(move |k| k as f64 / self.sample_rate)
    }

    /// Mean of `|x|²` over all samples.
    pub fn mean_power(&self) -> f64 {
        self.samples.iter().map(|z| z.norm_sqr()).sum::<f64>() / self.samples.len().max(1) as f64
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Unnormalized sinc, `sin(x)/x`, with `sinc(0) = 1`.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-6 {
        let x2 = x * x;
        1.0 - x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sin() / x
    }
}

/// Evaluates the rotor return at one instant.
pub fn mm_sample(
    profile: &DroneProfile,
    radar: &RadarConfig,
    geom: &TargetGeometry,
    carrier: Carrier,
    t: f64,
) -> Complex64 {
    let (alpha, beta) = geom.aspect_coefficients();
    let k = 4.0 * PI / radar.wavelength;
    let n_blades = f64::from(profile.n_blades);
    let centre = 0.5 * (profile.l1 + profile.l2);
    let half_span = 0.5 * (profile.l2 - profile.l1);
    let cos_theta = geom.theta.cos();

    let mut blades = Complex64::new(0.0, 0.0);
    for n in 0..profile.n_blades {
        let omega = 2.0 * PI * (profile.f_rot * t + f64::from(n) / n_blades) + geom.rotor_phase;
        let gamma = k * cos_theta * omega.sin();
        let weight = (alpha + beta * omega.cos()) * sinc(half_span * gamma);
        blades += Complex64::from_polar(weight, -centre * gamma);
    }

    let mut phase = -k * (geom.range_m + geom.v_rad * t);
    if carrier == Carrier::Included {
        phase += 2.0 * PI * radar.carrier_hz * t;
    }
    Complex64::from_polar(geom.amplitude, phase) * blades
}

/// Synthesizes `round(prf · duration)` samples at `t_k = k / prf`.
pub fn synthesize_mm(
    profile: &DroneProfile,
    radar: &RadarConfig,
    geom: &TargetGeometry,
    carrier: Carrier,
) -> Result<ComplexTimeSeries> {
    profile.validate()?;
    radar.validate()?;
    geom.validate()?;
    let samples = (0..radar.sample_count())
        .map(|k| mm_sample(profile, radar, geom, carrier, k as f64 / radar.prf_hz))
        .collect();
    Ok(ComplexTimeSeries { samples, sample_rate: radar.prf_hz })
}

/// Noise variance `σ_n² = A_r² / 10^(snr/10)` for a single-pulse SNR in dB.
pub fn noise_variance(amplitude: f64, snr_db: f64) -> f64 {
    amplitude * amplitude * 10f64.powf(-snr_db / 10.0)
}

fn gaussian_samples(length: usize, sigma2: f64, seed: u64) -> Vec<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = (sigma2 / 2.0).sqrt();
    (0..length)
        .map(|_| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            Complex64::new(scale * re, scale * im)
        })
        .collect()
}

/// Adds circular complex Gaussian noise whose total variance is calibrated
/// to `amplitude` at the requested single-pulse SNR.
pub fn add_awgn(ts: &ComplexTimeSeries, snr_db: f64, amplitude: f64, seed: u64) -> Result<ComplexTimeSeries> {
    ensure_param!(snr_db.is_finite(), "snr_db must be finite, got {snr_db}");
    ensure_param!(
        amplitude.is_finite() && amplitude > 0.0,
        "amplitude must be positive, got {amplitude}"
    );
    ensure_param!(ts.samples.iter().all(|z| z.is_finite()), "input series has non-finite samples");
    let noise = gaussian_samples(ts.len(), noise_variance(amplitude, snr_db), seed);
    let samples = ts.samples.iter().zip(noise).map(|(s, n)| s + n).collect();
    Ok(ComplexTimeSeries { samples, sample_rate: ts.sample_rate })
}

/// Pure noise with total variance `sigma2` (each component `sigma2 / 2`).
pub fn noise_only(length: usize, sigma2: f64, sample_rate: f64, seed: u64) -> Result<ComplexTimeSeries> {
    ensure_param!(length > 0, "noise length must be positive");
    ensure_param!(sigma2.is_finite() && sigma2 > 0.0, "sigma2 must be positive, got {sigma2}");
    ensure_param!(sample_rate.is_finite() && sample_rate > 0.0, "sample rate must be positive");
    Ok(ComplexTimeSeries { samples: gaussian_samples(length, sigma2, seed), sample_rate })
}

/// SNR gain of coherently integrating `n_pulses` pulses.
pub fn coherent_gain_db(n_pulses: usize) -> Result<f64> {
    ensure_param!(n_pulses >= 1, "n_pulses must be >= 1");
    Ok(10.0 * (n_pulses as f64).log10())
}
