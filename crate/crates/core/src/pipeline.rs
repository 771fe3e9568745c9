//! Config-driven experiment steps shared by the command-line tool and the
//! end-to-end tests. Every output is a pure function of the inputs and
//! seeds; nothing time-dependent is written.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::{Checkpoint, Preprocessing};
use crate::dataset::{self, DatasetRequest, GeometrySampler, Task};
use crate::error::{ensure_param, Error, Result};
use crate::evaluation::{self, confusion_csv, f1_table_csv, snr_tag, F1TableRow};
use crate::models::{ArchitectureSpec, ModelKind, Network, QuantumSpec};
use crate::signal::{self, Carrier, ComplexTimeSeries, DroneProfile, RadarConfig, TargetGeometry};
use crate::spectrogram::{stft, Spectrogram, StftConfig};
use crate::svg::{self, Axis, Series};
use crate::training::{self, EpochRecord, StopReason, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub task: Task,
    pub snr_db: f64,
    /// Examples per class, in label order.
    pub counts: Vec<usize>,
    pub seed: u64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self { task: Task::Detection, snr_db: -5.0, counts: vec![1000, 1000], seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchitectureSection {
    pub model: ModelKind,
    /// Head width; must agree with the task when given.
    pub classes: Option<usize>,
    /// Quantum layer shape (HQNN only).
    pub quantum: QuantumSpec,
    pub init_seed: u64,
}

impl Default for ArchitectureSection {
    fn default() -> Self {
        Self { model: ModelKind::Hqnn, classes: None, quantum: QuantumSpec::default(), init_seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSection {
    pub snr_db: Vec<f64>,
    pub repeats: usize,
    /// Test examples per class; defaults to 200 (detection) or 100 (classification).
    pub counts: Option<Vec<usize>>,
    pub seed: u64,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self { snr_db: vec![-5.0, -10.0, -15.0, -20.0], repeats: 3, counts: None, seed: 1 }
    }
}

/// Single-signal simulation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    pub profile: String,
    pub geometry: TargetGeometry,
    /// Noise level; `None` leaves the return noiseless.
    pub snr_db: Option<f64>,
    /// Replace the drone return by white noise (at `snr_db`, or unit power).
    pub noise_only: bool,
    pub carrier: Carrier,
    pub seed: u64,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            profile: "Parrot Disco".into(),
            geometry: TargetGeometry {
                theta: 0.5,
                phi_p: 0.15,
                range_m: 500.0,
                v_rad: 2.0,
                rotor_phase: 0.3,
                amplitude: 1.0,
            },
            snr_db: None,
            noise_only: false,
            carrier: Carrier::Baseband,
            seed: 0,
        }
    }
}

/// Every section is optional and falls back to its defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub radar: RadarConfig,
    pub stft: StftConfig,
    pub sampler: GeometrySampler,
    pub dataset: DatasetSection,
    pub architecture: ArchitectureSection,
    pub training: TrainConfig,
    pub evaluation: EvaluationSection,
    pub simulate: SimulateSection,
}

fn in_section(section: &str, r: Result<()>) -> Result<()> {
    r.map_err(|e| match e {
        Error::Parameter(msg) | Error::Config(msg) => Error::Config(format!("{section}: {msg}")),
        other => other,
    })
}

impl ExperimentConfig {
    /// Parses and validates; errors name the offending key.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Config(format!("{path}: {}", e.inner()))
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        in_section("radar", self.radar.validate())?;
        in_section("sampler", self.sampler.validate())?;
        in_section("stft", self.stft.frame_count(self.radar.sample_count()).map(|_| ()))?;
        in_section("dataset", self.dataset_request().validate())?;
        in_section("architecture", self.architecture_spec().and_then(|s| s.validate()))?;
        in_section("training", self.training.validate())?;
        let eval = &self.evaluation;
        in_section(
            "evaluation",
            (|| {
                ensure_param!(!eval.snr_db.is_empty(), "snr_db must list at least one SNR");
                ensure_param!(eval.snr_db.iter().all(|s| s.is_finite()), "snr_db values must be finite");
                ensure_param!(eval.repeats >= 1, "repeats must be >= 1");
                self.test_template().validate()
            })(),
        )?;
        in_section(
            "simulate",
            (|| {
                let sim = &self.simulate;
                dataset::find_profile(&sim.profile)
                    .ok_or_else(|| Error::Parameter(format!("profile: unknown drone {:?}", sim.profile)))?;
                sim.geometry.validate()?;
                if let Some(snr) = sim.snr_db {
                    ensure_param!(snr.is_finite(), "snr_db must be finite");
                }
                Ok(())
            })(),
        )
    }

    pub fn dataset_request(&self) -> DatasetRequest {
        DatasetRequest {
            task: self.dataset.task,
            snr_db: self.dataset.snr_db,
            counts: self.dataset.counts.clone(),
            sampler: self.sampler.clone(),
            radar: self.radar.clone(),
            stft: self.stft,
            seed: self.dataset.seed,
        }
    }

    /// Test-set request; SNR and seed are set per sweep point.
    pub fn test_template(&self) -> DatasetRequest {
        let k = self.dataset.task.num_classes();
        let per_class = if k == 2 { 200 } else { 100 };
        DatasetRequest {
            counts: self.evaluation.counts.clone().unwrap_or_else(|| vec![per_class; k]),
            seed: self.evaluation.seed,
            ..self.dataset_request()
        }
    }

    pub fn architecture_spec(&self) -> Result<ArchitectureSpec> {
        let classes = self.dataset.task.num_classes();
        if let Some(k) = self.architecture.classes {
            if k != classes {
                return Err(Error::Parameter(format!(
                    "classes: {k} does not match the {} task ({classes} classes)",
                    task_name(self.dataset.task)
                )));
            }
        }
        let input = [2, self.stft.window, self.stft.frame_count(self.radar.sample_count())?];
        let spec = match self.architecture.model {
            ModelKind::Cnn => ArchitectureSpec::cnn(classes),
            ModelKind::Hqnn => ArchitectureSpec::hqnn_with(classes, self.architecture.quantum),
        };
        Ok(spec.with_input(input))
    }
}

fn task_name(task: Task) -> &'static str {
    match task {
        Task::Detection => "detection",
        Task::Classification => "classification",
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write(path: PathBuf, bytes: impl AsRef<[u8]>, written: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(&path, bytes)?;
    written.push(path);
    Ok(())
}

/// Output of [`run_simulate`].
pub struct Simulation {
    pub series: ComplexTimeSeries,
    pub spectrogram: Spectrogram,
    pub files: Vec<PathBuf>,
}

/// One return (or noise record) and its spectrogram.
pub fn simulate_signal(config: &ExperimentConfig) -> Result<(ComplexTimeSeries, Spectrogram)> {
    let sim = &config.simulate;
    let profile: DroneProfile = dataset::find_profile(&sim.profile)
        .ok_or_else(|| Error::Config(format!("simulate.profile: unknown drone {:?}", sim.profile)))?;
    let amp = sim.geometry.amplitude;
    let series = if sim.noise_only {
        let sigma2 = signal::noise_variance(amp, sim.snr_db.unwrap_or(0.0));
        signal::noise_only(config.radar.sample_count(), sigma2, config.radar.prf_hz, sim.seed)?
    } else {
        let clean = signal::synthesize_mm(&profile, &config.radar, &sim.geometry, sim.carrier)?;
        match sim.snr_db {
            Some(snr) => signal::add_awgn(&clean, snr, amp, sim.seed)?,
            None => clean,
        }
    };
    let spectrogram = stft(&series, config.stft)?;
    Ok((series, spectrogram))
}

/// Writes `timeseries.csv`, `spectrogram.csv` and, with `plot`, SVG figures.
pub fn run_simulate(config: &ExperimentConfig, out: &Path, plot: bool) -> Result<Simulation> {
    fs::create_dir_all(out)?;
    let (series, spectrogram) = simulate_signal(config)?;
    let mut files = Vec::new();

    let mut ts_csv = String::from("t_s,re,im\n");
    for (t, z) in series.times().zip(&series.samples) {
        ts_csv.push_str(&format!("{t},{},{}\n", z.re, z.im));
    }
    write(out.join("timeseries.csv"), ts_csv, &mut files)?;

    let freqs = crate::spectrogram::bin_frequencies(spectrogram.n_bins, spectrogram.sample_rate)?;
    let mut sp_csv = String::from("channel,bin,freq_hz");
    for f in 0..spectrogram.n_frames {
        sp_csv.push_str(&format!(",f{f}"));
    }
    sp_csv.push('\n');
    for (c, name) in ["re", "im"].iter().enumerate() {
        for (b, freq) in freqs.iter().enumerate() {
            sp_csv.push_str(&format!("{name},{b},{freq}"));
            for f in 0..spectrogram.n_frames {
                sp_csv.push_str(&format!(",{}", spectrogram.get(c, b, f)));
            }
            sp_csv.push('\n');
        }
    }
    write(out.join("spectrogram.csv"), sp_csv, &mut files)?;

    if plot {
        let ms: Vec<f64> = series.times().map(|t| t * 1e3).collect();
        let re: Vec<(f64, f64)> = ms.iter().zip(&series.samples).map(|(&t, z)| (t, z.re)).collect();
        let im: Vec<(f64, f64)> = ms.iter().zip(&series.samples).map(|(&t, z)| (t, z.im)).collect();
        let peak = series.samples.iter().map(|z| z.re.abs().max(z.im.abs())).fold(0.0, f64::max).max(1e-12);
        let t_end = ms.last().copied().unwrap_or(1.0);
        let svg_ts = svg::line_plot(
            &format!("{} time series", config.simulate.profile),
            &Axis::linear("time (ms)", 0.0, t_end),
            &Axis::linear("amplitude", -peak, peak),
            &[Series { name: "real", points: &re }, Series { name: "imaginary", points: &im }],
        );
        write(out.join("timeseries.svg"), svg_ts, &mut files)?;
        let (n_bins, n_frames) = (spectrogram.n_bins, spectrogram.n_frames);
        for (c, name) in ["re", "im"].iter().enumerate() {
            let values = &spectrogram.data[c * n_bins * n_frames..(c + 1) * n_bins * n_frames];
            let svg_sp = svg::heatmap(&format!("STFT {name}"), "frame", "frequency bin", values, n_bins, n_frames);
            write(out.join(format!("spectrogram_{name}.svg")), svg_sp, &mut files)?;
        }
        let mag: Vec<f64> = (0..n_bins)
            .flat_map(|b| (0..n_frames).map(move |f| (b, f)))
            .map(|(b, f)| 10.0 * (spectrogram.value(b, f).norm_sqr() + 1e-12).log10())
            .collect();
        let svg_mag = svg::heatmap("STFT magnitude (dB)", "frame", "frequency bin", &mag, n_bins, n_frames);
        write(out.join("spectrogram_mag.svg"), svg_mag, &mut files)?;
    }
    Ok(Simulation { series, spectrogram, files })
}

/// Files written by [`run_dataset`].
pub struct DatasetOutput {
    pub data_path: PathBuf,
    pub manifest_path: PathBuf,
    pub sha256: String,
}

/// Generates the configured corpus as `dataset.mdqd` plus `dataset.json`.
pub fn run_dataset(config: &ExperimentConfig, out: &Path) -> Result<DatasetOutput> {
    fs::create_dir_all(out)?;
    let (examples, manifest) = dataset::generate(&config.dataset_request(), None)?;
    let bytes = dataset::encode(&examples, &manifest)?;
    let data_path = out.join("dataset.mdqd");
    let manifest_path = out.join("dataset.json");
    fs::write(&data_path, &bytes)?;
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(DatasetOutput { data_path, manifest_path, sha256: sha256_hex(&bytes) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub architecture: ArchitectureSpec,
    pub parameter_count: usize,
    pub quantum_parameter_count: usize,
    pub dataset_sha256: String,
    pub dataset_examples: usize,
    pub history: Vec<EpochRecord>,
    pub stop_reason: StopReason,
    pub best_epoch: usize,
    pub final_checkpoint: String,
    pub best_checkpoint: String,
}

pub struct TrainOutput {
    pub manifest: RunManifest,
    pub final_path: PathBuf,
    pub best_path: PathBuf,
    pub manifest_path: PathBuf,
}

/// Trains on a dataset file and writes `final.mdqw`, `best.mdqw` and `run.json`.
pub fn run_train(config: &ExperimentConfig, dataset_path: &Path, out: &Path) -> Result<TrainOutput> {
    fs::create_dir_all(out)?;
    let bytes = fs::read(dataset_path)?;
    let (examples, data_manifest) = dataset::decode(&bytes)?;
    if data_manifest.task != config.dataset.task {
        return Err(Error::Config(format!(
            "dataset.task: config says {}, dataset file holds {}",
            task_name(config.dataset.task),
            task_name(data_manifest.task)
        )));
    }
    let spec = config.architecture_spec()?;
    if data_manifest.feature_shape() != spec.input {
        return Err(Error::Mismatch(format!(
            "dataset features are {:?}, architecture expects {:?}",
            data_manifest.feature_shape(),
            spec.input
        )));
    }
    let network = Network::build(spec.clone(), config.architecture.init_seed)?;
    let outcome = training::train(network, &examples, &config.training)?;
    let preprocessing = Some(Preprocessing {
        task: data_manifest.task,
        standardization: data_manifest.standardization,
        stft: data_manifest.stft,
    });
    let last_epoch = outcome.history.last().map(|r| r.epoch);
    let final_path = out.join("final.mdqw");
    let best_path = out.join("best.mdqw");
    Checkpoint::new(outcome.final_network.clone(), preprocessing, last_epoch).save(&final_path)?;
    Checkpoint::new(outcome.best_network.clone(), preprocessing, Some(outcome.best_epoch)).save(&best_path)?;

    let manifest = RunManifest {
        config: config.clone(),
        parameter_count: outcome.final_network.parameter_count(),
        quantum_parameter_count: outcome.final_network.quantum_parameter_count(),
        architecture: spec,
        dataset_sha256: sha256_hex(&bytes),
        dataset_examples: examples.len(),
        history: outcome.history,
        stop_reason: outcome.stop_reason,
        best_epoch: outcome.best_epoch,
        final_checkpoint: "final.mdqw".into(),
        best_checkpoint: "best.mdqw".into(),
    };
    let manifest_path = out.join("run.json");
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(TrainOutput { manifest, final_path, best_path, manifest_path })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummaryRow {
    pub snr_db: f64,
    pub seeds: Vec<u64>,
    pub f1: Vec<f64>,
    pub mean_f1: f64,
    pub std_f1: f64,
    /// Set when only one repeat was run and the deviation is a placeholder 0.
    pub single_repeat: bool,
    pub auc: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub model: String,
    pub task: Task,
    pub checkpoint_epoch: Option<usize>,
    pub rows: Vec<EvalSummaryRow>,
    pub files: BTreeMap<String, String>,
}

/// SNR sweep of a checkpoint. Writes `f1_table.csv`, ROC and confusion CSVs,
/// `eval.json` and, with `plot`, SVG figures.
pub fn run_eval(config: &ExperimentConfig, checkpoint_path: &Path, out: &Path, plot: bool) -> Result<EvalSummary> {
    fs::create_dir_all(out)?;
    let ckpt = Checkpoint::load(checkpoint_path)?;
    let expected = config.architecture_spec()?;
    ckpt.require_architecture(&expected)?;
    let pre = ckpt
        .preprocessing
        .ok_or_else(|| Error::Mismatch("checkpoint carries no preprocessing statistics".into()))?;
    if pre.task != config.dataset.task {
        return Err(Error::Mismatch("checkpoint was trained for a different task".into()));
    }
    if pre.stft.window != config.stft.window || pre.stft.hop != config.stft.hop {
        return Err(Error::Mismatch("checkpoint STFT framing differs from the config".into()));
    }
    let network = &ckpt.network;
    let model = network.spec.kind.as_str().to_string();
    let class_names = config.dataset.task.class_names();
    let sweep = evaluation::evaluate_over_snr(
        network,
        &config.test_template(),
        pre.standardization,
        &config.evaluation.snr_db,
        config.evaluation.repeats,
        config.evaluation.seed,
    )?;

    let mut files = Vec::new();
    let mut rows = Vec::new();
    let mut table = Vec::new();
    let mut roc_series: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for row in &sweep {
        let tag = snr_tag(row.snr_db);
        let curves = row.pooled.roc_curves()?;
        for curve in &curves {
            let name = match curve.class {
                Some(c) => format!("roc_{model}_{tag}_c{c}.csv"),
                None => format!("roc_{model}_{tag}.csv"),
            };
            write(out.join(name), curve.to_csv(), &mut files)?;
        }
        if curves.len() == 1 {
            let pts = curves[0].distinct_points().into_iter().map(|(f, t)| (f.max(evaluation::LOG_FPR_FLOOR), t)).collect();
            roc_series.push((format!("{tag} dB"), pts));
        }
        write(out.join(format!("confusion_{model}_{tag}.csv")), confusion_csv(&row.confusion, &class_names)?, &mut files)?;
        table.push(F1TableRow { snr_db: row.snr_db, model: model.clone(), mean_f1: row.mean_f1, std_f1: row.std_f1 });
        rows.push(EvalSummaryRow {
            snr_db: row.snr_db,
            seeds: row.seeds.clone(),
            f1: row.f1.clone(),
            mean_f1: row.mean_f1,
            std_f1: row.std_f1,
            single_repeat: row.single_repeat(),
            auc: curves.iter().map(|c| c.auc()).collect(),
        });
    }
    write(out.join("f1_table.csv"), f1_table_csv(&table), &mut files)?;

    if plot {
        let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.snr_db, r.mean_f1)).collect();
        let (lo, hi) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 1.0, hi + 1.0) };
        let f1_svg = svg::line_plot(
            &format!("{model} F1 vs SNR"),
            &Axis::linear("SNR (dB)", lo, hi),
            &Axis::linear("F1", 0.0, 1.0),
            &[Series { name: &model, points: &pts }],
        );
        write(out.join(format!("f1_{model}.svg")), f1_svg, &mut files)?;
        if !roc_series.is_empty() {
            let series: Vec<Series<'_>> = roc_series.iter().map(|(n, p)| Series { name: n, points: p }).collect();
            let roc_svg = svg::line_plot(
                &format!("{model} ROC"),
                &Axis::log10("false positive rate", evaluation::LOG_FPR_FLOOR, 1.0),
                &Axis::linear("true positive rate", 0.0, 1.0),
                &series,
            );
            write(out.join(format!("roc_{model}.svg")), roc_svg, &mut files)?;
        }
    }

    let summary = EvalSummary {
        model,
        task: config.dataset.task,
        checkpoint_epoch: ckpt.epoch,
        rows,
        files: files
            .iter()
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .map(|n| {
                let hash = fs::read(out.join(&n)).map(|b| sha256_hex(&b)).unwrap_or_default();
                (n, hash)
            })
            .collect(),
    };
    fs::write(out.join("eval.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"dataset": {"task": "detection", "snr_db": -5, "counts": [4, 4]}}"#;

    #[test]
    fn minimal_config_uses_defaults() {
        let c = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.training.epochs, 50);
        assert_eq!(c.architecture_spec().unwrap().input, [2, 16, 249]);
        assert_eq!(c.test_template().counts, vec![200, 200]);
    }

    #[test]
    fn empty_config_is_valid() {
        let c = ExperimentConfig::from_json("{}").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!(c.dataset.counts, vec![1000, 1000]);
    }

    #[test]
    fn unknown_key_is_named() {
        let text = r#"{"dataset": {"task": "detection", "snr_db": -5, "counts": [4, 4]}, "training": {"epoch": 3}}"#;
        let err = ExperimentConfig::from_json(text).unwrap_err().to_string();
        assert!(err.contains("training") && err.contains("epoch"), "{err}");
    }

    #[test]
    fn semantic_errors_name_the_section() {
        let text = r#"{"dataset": {"task": "detection", "snr_db": -5, "counts": [4, 4]}, "training": {"epochs": 0}}"#;
        let err = ExperimentConfig::from_json(text).unwrap_err();
        assert!(matches!(&err, Error::Config(m) if m.starts_with("training:") && m.contains("epochs")), "{err}");
        let text = r#"{"dataset": {"task": "detection", "snr_db": -5, "counts": [4, 4]}, "architecture": {"classes": 5}}"#;
        let err = ExperimentConfig::from_json(text).unwrap_err();
        assert!(matches!(&err, Error::Config(m) if m.starts_with("architecture:")), "{err}");
    }
}
