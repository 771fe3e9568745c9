//! Labelled spectrogram corpora for detection (noise vs. drone) and
//! five-way drone classification, with a checksummed binary container.
//!
//! File layout (all integers little-endian):
//!
//! ```text
//! "MDQD" | u32 format_version | u32 manifest_len | manifest JSON (UTF-8)
//! | { u8 label | f32 × (2·bins·frames) }*  | u32 CRC-32 of everything before it
//! ```

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, TAU};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_param, param_err, Error, Result};
use crate::signal::{self, Carrier, DroneProfile, RadarConfig, TargetGeometry};
use crate::spectrogram::{stft, Spectrogram, StftConfig};

pub const DATASET_MAGIC: &[u8; 4] = b"MDQD";
pub const DATASET_FORMAT_VERSION: u32 = 1;

/// Rotor parameters of the five drone types, in the order
/// Mavic Air 2, Mavic Mini 2, Matrice 300 RTK, Phantom 4, Parrot Disco.
pub fn builtin_profiles() -> Vec<DroneProfile> {
    [
        ("DJI Mavic Air 2", 0.005, 0.070, 91.66),
        ("DJI Mavic Mini 2", 0.005, 0.035, 160.0),
        ("DJI Matrice 300 RTK", 0.050, 0.2665, 70.0),
        ("DJI Phantom 4", 0.006, 0.050, 116.0),
        ("Parrot Disco", 0.010, 0.104, 40.0),
    ]
    .into_iter()
    .map(|(name, l1, l2, f_rot)| DroneProfile { name: name.to_string(), n_blades: 2, l1, l2, f_rot })
    .collect()
}

/// Classification label of each entry of [`builtin_profiles`].
const CLASS_OF_BUILTIN: [u8; 5] = [1, 2, 0, 3, 4];

/// Profiles ordered by classification label: 0 Matrice 300 RTK,
/// 1 Mavic Air 2, 2 Mavic Mini, 3 Phantom 4, 4 Parrot Disco.
pub fn class_profiles() -> Vec<DroneProfile> {
    let builtin = builtin_profiles();
    let mut ordered: Vec<(u8, DroneProfile)> = CLASS_OF_BUILTIN.iter().copied().zip(builtin).collect();
    ordered.sort_by_key(|(label, _)| *label);
    ordered.into_iter().map(|(_, p)| p).collect()
}

/// Looks up a built-in profile by (case-insensitive) name or label-order index.
pub fn find_profile(name: &str) -> Option<DroneProfile> {
    let wanted = name.trim().to_ascii_lowercase().replace(['_', '-'], " ");
    if let Ok(idx) = wanted.parse::<usize>() {
        return class_profiles().into_iter().nth(idx);
    }
    class_profiles().into_iter().find(|p| {
        let have = p.name.to_ascii_lowercase();
        have == wanted || have.ends_with(&wanted)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Detection,
    Classification,
}

impl Task {
    pub fn num_classes(self) -> usize {
        match self {
            Task::Detection => 2,
            Task::Classification => 5,
        }
    }

    /// Class names indexed by label.
    pub fn class_names(self) -> Vec<String> {
        match self {
            Task::Detection => vec!["noise".into(), "drone".into()],
            Task::Classification => class_profiles().into_iter().map(|p| p.name).collect(),
        }
    }
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn validate(&self, name: &str) -> Result<()> {
        ensure_param!(
            self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi,
            "sampler interval {name} is empty or non-finite: [{}, {}]",
            self.lo,
            self.hi
        );
        Ok(())
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..self.hi)
        }
    }
}

/// Random target pose used to diversify examples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometrySampler {
    /// Magnitude of θ, radians; the sign is drawn separately.
    pub theta_abs: Interval,
    pub phi_p: Interval,
    pub range_m: Interval,
    pub v_rad: Interval,
    pub rotor_phase: Interval,
    pub amplitude: f64,
}

impl Default for GeometrySampler {
    fn default() -> Self {
        Self {
            theta_abs: Interval::new(0.05, 1.3),
            phi_p: Interval::new(0.087, 0.26),
            range_m: Interval::new(100.0, 2000.0),
            v_rad: Interval::new(-10.0, 10.0),
            rotor_phase: Interval::new(0.0, TAU),
            amplitude: 1.0,
        }
    }
}

impl GeometrySampler {
    pub fn validate(&self) -> Result<()> {
        self.theta_abs.validate("theta_abs")?;
        self.phi_p.validate("phi_p")?;
        self.range_m.validate("range_m")?;
        self.v_rad.validate("v_rad")?;
        self.rotor_phase.validate("rotor_phase")?;
        ensure_param!(
            self.theta_abs.lo >= 0.05 && self.theta_abs.hi < FRAC_PI_2,
            "theta_abs must stay within [0.05, pi/2), got [{}, {}]",
            self.theta_abs.lo,
            self.theta_abs.hi
        );
        ensure_param!(
            self.amplitude.is_finite() && self.amplitude > 0.0,
            "amplitude must be positive, got {}",
            self.amplitude
        );
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> TargetGeometry {
        let magnitude = self.theta_abs.sample(rng);
        let theta = if rng.random::<bool>() { magnitude } else { -magnitude };
        TargetGeometry {
            theta,
            phi_p: self.phi_p.sample(rng),
            range_m: self.range_m.sample(rng),
            v_rad: self.v_rad.sample(rng),
            rotor_phase: self.rotor_phase.sample(rng),
            amplitude: self.amplitude,
        }
    }
}

/// Per-channel affine standardization, `(x − mean) / std`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: [f64; 2],
    pub std: [f64; 2],
}

impl Standardization {
    pub const IDENTITY: Self = Self { mean: [0.0, 0.0], std: [1.0, 1.0] };

    /// Population mean and standard deviation of each channel.
    pub fn fit(spectrograms: &[Spectrogram]) -> Result<Self> {
        let first = spectrograms.first().ok_or_else(|| param_err!("cannot standardize an empty set"))?;
        let plane = first.n_bins * first.n_frames;
        let mut mean = [0.0; 2];
        let mut std = [0.0; 2];
        for ch in 0..2 {
            let n = (plane * spectrograms.len()) as f64;
            let sum: f64 = spectrograms.iter().map(|s| s.data[ch * plane..(ch + 1) * plane].iter().sum::<f64>()).sum();
            mean[ch] = sum / n;
            let sq: f64 = spectrograms
                .iter()
                .map(|s| s.data[ch * plane..(ch + 1) * plane].iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>())
                .sum();
            std[ch] = (sq / n).sqrt();
            ensure_param!(std[ch] > 0.0, "channel {ch} has zero variance");
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, spec: &Spectrogram) -> Vec<f32> {
        let plane = spec.n_bins * spec.n_frames;
        spec.data
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let ch = i / plane;
                ((v - self.mean[ch]) / self.std[ch]) as f32
            })
            .collect()
    }
}

/// STFT layout echoed into manifests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StftEcho {
    pub window: usize,
    pub hop: usize,
    pub n_bins: usize,
    pub n_frames: usize,
    pub sample_rate: f64,
}

impl StftEcho {
    pub fn feature_shape(&self) -> [usize; 3] {
        [2, self.n_bins, self.n_frames]
    }

    pub fn feature_len(&self) -> usize {
        2 * self.n_bins * self.n_frames
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub task: Task,
    pub snr_db: f64,
    /// Class name → example count.
    pub counts: BTreeMap<String, usize>,
    /// Class names in label order.
    pub class_names: Vec<String>,
    pub seed: u64,
    pub standardization: Standardization,
    pub stft: StftEcho,
    pub radar: RadarConfig,
    pub sampler: GeometrySampler,
    pub example_count: usize,
}

impl DatasetManifest {
    pub fn feature_shape(&self) -> [usize; 3] {
        self.stft.feature_shape()
    }
}

/// One standardized spectrogram (binary32, `[channel][bin][frame]`) and its label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub features: Vec<f32>,
    pub label: u8,
}

/// Everything that determines a generated corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRequest {
    pub task: Task,
    pub snr_db: f64,
    /// Example count per label.
    pub counts: Vec<usize>,
    pub sampler: GeometrySampler,
    pub radar: RadarConfig,
    pub stft: StftConfig,
    pub seed: u64,
}

impl DatasetRequest {
    pub fn new(task: Task, snr_db: f64, counts: Vec<usize>, seed: u64) -> Self {
        Self {
            task,
            snr_db,
            counts,
            sampler: GeometrySampler::default(),
            radar: RadarConfig::default(),
            stft: StftConfig::default(),
            seed,
        }
    }

    /// `per_class` examples of every label.
    pub fn balanced(task: Task, snr_db: f64, per_class: usize, seed: u64) -> Self {
        Self::new(task, snr_db, vec![per_class; task.num_classes()], seed)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_param!(self.snr_db.is_finite(), "snr_db must be finite");
        ensure_param!(
            self.counts.len() == self.task.num_classes(),
            "{:?} needs {} class counts, got {}",
            self.task,
            self.task.num_classes(),
            self.counts.len()
        );
        ensure_param!(self.counts.iter().all(|&c| c >= 1), "every class needs at least one example");
        self.sampler.validate()?;
        self.radar.validate()?;
        self.stft.frame_count(self.radar.sample_count())?;
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// splitmix64 finalizer.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of example `index`: `splitmix64(splitmix64(seed) ^ index)`.
pub fn example_seed(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ index)
}

/// Label of the example at `index` when classes are laid out in blocks.
fn label_at(counts: &[usize], mut index: usize) -> (u8, usize) {
    for (label, &count) in counts.iter().enumerate() {
        if index < count {
            return (label as u8, index);
        }
        index -= count;
    }
    unreachable!("index beyond total count")
}

/// Raw (unstandardized) spectrogram of example `index`.
fn synthesize_example(request: &DatasetRequest, index: usize) -> Result<(Spectrogram, u8)> {
    let (label, ordinal) = label_at(&request.counts, index);
    let mut rng = ChaCha8Rng::seed_from_u64(example_seed(request.seed, index as u64));
    let amplitude = request.sampler.amplitude;
    let sigma2 = signal::noise_variance(amplitude, request.snr_db);
    let profile = match (request.task, label) {
        (Task::Detection, 0) => None,
        (Task::Detection, _) => Some(class_profiles()[ordinal % 5].clone()),
        (Task::Classification, l) => Some(class_profiles()[usize::from(l)].clone()),
    };
    let series = match profile {
        Some(profile) => {
            let geom = request.sampler.sample(&mut rng);
            let clean = signal::synthesize_mm(&profile, &request.radar, &geom, Carrier::Baseband)?;
            signal::add_awgn(&clean, request.snr_db, amplitude, rng.next_u64())?
        }
        None => signal::noise_only(request.radar.sample_count(), sigma2, request.radar.prf_hz, rng.next_u64())?,
    };
    Ok((stft(&series, request.stft)?, label))
}

/// Generates a shuffled corpus. Standardization statistics are fitted on
/// this corpus unless `standardization` is given (evaluation sets reuse the
/// training statistics verbatim).
pub fn generate(
    request: &DatasetRequest,
    standardization: Option<Standardization>,
) -> Result<(Vec<LabeledExample>, DatasetManifest)> {
    request.validate()?;
    let raw: Vec<(Spectrogram, u8)> =
        (0..request.total()).into_par_iter().map(|i| synthesize_example(request, i)).collect::<Result<_>>()?;

    let standardization = match standardization {
        Some(s) => s,
        None => {
            let specs: Vec<Spectrogram> = raw.iter().map(|(s, _)| s.clone()).collect();
            Standardization::fit(&specs)?
        }
    };
    let first = &raw[0].0;
    let stft_echo = StftEcho {
        window: request.stft.window,
        hop: request.stft.hop,
        n_bins: first.n_bins,
        n_frames: first.n_frames,
        sample_rate: first.sample_rate,
    };
    let mut examples: Vec<LabeledExample> =
        raw.par_iter().map(|(s, label)| LabeledExample { features: standardization.apply(s), label: *label }).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(example_seed(request.seed, u64::MAX));
    examples.shuffle(&mut rng);

    let class_names = request.task.class_names();
    let counts = class_names.iter().cloned().zip(request.counts.iter().copied()).collect();
    let manifest = DatasetManifest {
        format_version: DATASET_FORMAT_VERSION,
        task: request.task,
        snr_db: request.snr_db,
        counts,
        class_names,
        seed: request.seed,
        standardization,
        stft: stft_echo,
        radar: request.radar.clone(),
        sampler: request.sampler.clone(),
        example_count: examples.len(),
    };
    Ok((examples, manifest))
}

/// Serializes a corpus to bytes in the `MDQD` layout.
pub fn encode(examples: &[LabeledExample], manifest: &DatasetManifest) -> Result<Vec<u8>> {
    let feature_len = manifest.stft.feature_len();
    ensure_param!(
        examples.len() == manifest.example_count,
        "manifest declares {} examples, got {}",
        manifest.example_count,
        examples.len()
    );
    let json = serde_json::to_vec(manifest)?;
    let mut out = Vec::with_capacity(16 + json.len() + examples.len() * (1 + 4 * feature_len));
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&manifest.format_version.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for ex in examples {
        ensure_param!(ex.features.len() == feature_len, "example has {} features, expected {feature_len}", ex.features.len());
        out.push(ex.label);
        for v in &ex.features {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("four bytes")))
        .ok_or_else(|| Error::Truncated(format!("need 4 bytes at offset {at}, have {}", bytes.len())))
}

pub fn decode(bytes: &[u8]) -> Result<(Vec<LabeledExample>, DatasetManifest)> {
    if bytes.len() < 4 {
        return Err(Error::Truncated("missing magic".into()));
    }
    if &bytes[..4] != DATASET_MAGIC {
        return Err(Error::Format("not a dataset file (bad magic)".into()));
    }
    let version = read_u32(bytes, 4)?;
    if version != DATASET_FORMAT_VERSION {
        return Err(Error::Version { found: version, expected: DATASET_FORMAT_VERSION });
    }
    let json_len = read_u32(bytes, 8)? as usize;
    let json = bytes
        .get(12..12 + json_len)
        .ok_or_else(|| Error::Truncated(format!("manifest of {json_len} bytes runs past end of file")))?;
    let manifest: DatasetManifest = serde_json::from_slice(json)?;
    if manifest.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::Version { found: manifest.format_version, expected: DATASET_FORMAT_VERSION });
    }

    let feature_len = manifest.stft.feature_len();
    let record = 1 + 4 * feature_len;
    let body_start = 12 + json_len;
    let expected = body_start + manifest.example_count * record + 4;
    if bytes.len() < expected {
        return Err(Error::Truncated(format!("expected {expected} bytes, file has {}", bytes.len())));
    }
    if bytes.len() > expected {
        return Err(Error::Format(format!("{} trailing bytes after checksum", bytes.len() - expected)));
    }
    let stored = read_u32(bytes, expected - 4)?;
    let computed = crc32fast::hash(&bytes[..expected - 4]);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }

    let n_classes = manifest.task.num_classes();
    let examples = bytes[body_start..expected - 4]
        .chunks_exact(record)
        .map(|chunk| {
            let label = chunk[0];
            if usize::from(label) >= n_classes {
                return Err(Error::Format(format!("label {label} out of range for {n_classes} classes")));
            }
            let features =
                chunk[1..].chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("four bytes"))).collect();
            Ok(LabeledExample { features, label })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((examples, manifest))
}

pub fn save(examples: &[LabeledExample], manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(examples, manifest)?)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<(Vec<LabeledExample>, DatasetManifest)> {
    decode(&fs::read(path)?)
}
