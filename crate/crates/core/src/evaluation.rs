//! F1 scores, confusion matrices, ROC curves and SNR sweeps.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Array;
use crate::dataset::{example_seed, generate, DatasetRequest, LabeledExample, Standardization, Task};
use crate::error::{ensure_param, Error, Result};
use crate::layers::softmax_rows;
use crate::models::{argmax_rows, batch_array, Network};

/// Counts indexed `[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self { classes, counts: vec![0; classes * classes] }
    }

    pub fn from_predictions(labels: &[usize], predictions: &[usize], classes: usize) -> Result<Self> {
        ensure_param!(labels.len() == predictions.len(), "{} labels but {} predictions", labels.len(), predictions.len());
        let mut cm = Self::new(classes);
        for (&t, &p) in labels.iter().zip(predictions) {
            ensure_param!(t < classes && p < classes, "class index out of range for {classes} classes");
            cm.counts[t * classes + p] += 1;
        }
        Ok(cm)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.chunks(self.classes).map(|r| r.iter().sum()).collect()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        ensure_param!(self.classes == other.classes, "cannot merge matrices of different size");
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        Ok(())
    }

    /// F1 of one class treated as positive; 0 when it is never predicted nor present.
    pub fn class_f1(&self, k: usize) -> f64 {
        let tp = self.get(k, k);
        let predicted: u64 = (0..self.classes).map(|t| self.get(t, k)).sum();
        let actual: u64 = (0..self.classes).map(|p| self.get(k, p)).sum();
        let denom = predicted + actual;
        if denom == 0 {
            0.0
        } else {
            2.0 * tp as f64 / denom as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    /// F1 of class 1 (drone).
    Binary,
    /// Unweighted mean of per-class F1.
    Macro,
}

impl Averaging {
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Detection => Averaging::Binary,
            Task::Classification => Averaging::Macro,
        }
    }
}

pub fn f1_score(cm: &ConfusionMatrix, averaging: Averaging) -> Result<f64> {
    if cm.total() == 0 {
        return Err(Error::Parameter("F1 of an empty confusion matrix".into()));
    }
    match averaging {
        Averaging::Binary => {
            ensure_param!(cm.classes() == 2, "binary F1 needs 2 classes, got {}", cm.classes());
            Ok(cm.class_f1(1))
        }
        Averaging::Macro => Ok((0..cm.classes()).map(|k| cm.class_f1(k)).sum::<f64>() / cm.classes() as f64),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// One-vs-rest class, if any.
    pub class: Option<usize>,
    /// Ordered by decreasing threshold.
    pub points: Vec<RocPoint>,
}

/// Floor applied to zero false-positive rates when exporting for log axes.
pub const LOG_FPR_FLOOR: f64 = 1e-6;

impl RocCurve {
    /// Trapezoidal area under the curve.
    pub fn auc(&self) -> f64 {
        self.points.windows(2).map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0).sum()
    }

    /// `(fpr, tpr)` pairs with consecutive repeats removed.
    pub fn distinct_points(&self) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = Vec::new();
        for p in &self.points {
            if out.last() != Some(&(p.fpr, p.tpr)) {
                out.push((p.fpr, p.tpr));
            }
        }
        out
    }

    /// `threshold,fpr,tpr` rows; zero FPR is written as [`LOG_FPR_FLOOR`].
    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,fpr,tpr\n");
        for p in &self.points {
            let fpr = if p.fpr == 0.0 { LOG_FPR_FLOOR } else { p.fpr };
            let _ = writeln!(s, "{},{},{}", fmt_threshold(p.threshold), fpr, p.tpr);
        }
        s
    }
}

fn fmt_threshold(t: f64) -> String {
    if t == f64::INFINITY {
        "inf".to_string()
    } else {
        t.to_string()
    }
}

/// Sweeps `score >= t` over `+inf` and every distinct value of `scores ∪ {0, 1}`.
pub fn roc(scores: &[f64], positives: &[bool]) -> Result<RocCurve> {
    ensure_param!(scores.len() == positives.len(), "{} scores but {} labels", scores.len(), positives.len());
    ensure_param!(scores.iter().all(|s| !s.is_nan()), "scores contain NaN");
    let n_pos = positives.iter().filter(|&&p| p).count();
    let n_neg = positives.len() - n_pos;
    ensure_param!(n_pos > 0 && n_neg > 0, "ROC needs both positive and negative examples");

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut thresholds: Vec<f64> = scores.iter().copied().chain([0.0, 1.0]).collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();

    let mut points = vec![RocPoint { threshold: f64::INFINITY, fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp, mut next) = (0usize, 0usize, 0usize);
    for t in thresholds {
        while next < order.len() && scores[order[next]] >= t {
            if positives[order[next]] {
                tp += 1;
            } else {
                fp += 1;
            }
            next += 1;
        }
        points.push(RocPoint { threshold: t, fpr: fp as f64 / n_neg as f64, tpr: tp as f64 / n_pos as f64 });
    }
    Ok(RocCurve { class: None, points })
}

/// One-vs-rest curves from `[n, K]` probabilities.
pub fn multiclass_roc(probabilities: &Array, labels: &[usize]) -> Result<Vec<RocCurve>> {
    ensure_param!(probabilities.ndim() == 2, "probabilities must be [n, K]");
    let k = probabilities.last_dim();
    ensure_param!(probabilities.shape()[0] == labels.len(), "probability rows and labels differ in length");
    (0..k)
        .map(|c| {
            let scores: Vec<f64> = probabilities.data().chunks(k).map(|row| row[c]).collect();
            let positives: Vec<bool> = labels.iter().map(|&l| l == c).collect();
            let mut curve = roc(&scores, &positives)?;
            curve.class = Some(c);
            Ok(curve)
        })
        .collect()
}

/// Model outputs on a labelled set.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub probabilities: Array,
    pub predicted: Vec<usize>,
    pub labels: Vec<usize>,
}

impl Predictions {
    pub fn confusion(&self, classes: usize) -> Result<ConfusionMatrix> {
        ConfusionMatrix::from_predictions(&self.labels, &self.predicted, classes)
    }

    /// Binary curve on P(drone) for two classes, one-vs-rest otherwise.
    pub fn roc_curves(&self) -> Result<Vec<RocCurve>> {
        let k = self.probabilities.last_dim();
        if k == 2 {
            let scores: Vec<f64> = self.probabilities.data().chunks(2).map(|r| r[1]).collect();
            let positives: Vec<bool> = self.labels.iter().map(|&l| l == 1).collect();
            Ok(vec![roc(&scores, &positives)?])
        } else {
            multiclass_roc(&self.probabilities, &self.labels)
        }
    }
}

/// Evaluation-mode forward over `examples` in chunks of `batch_size`.
pub fn predict_examples(network: &Network, examples: &[LabeledExample], batch_size: usize) -> Result<Predictions> {
    ensure_param!(batch_size >= 1, "batch_size must be >= 1");
    let k = network.spec.classes;
    let mut probs = Vec::with_capacity(examples.len() * k);
    let mut predicted = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(batch_size) {
        let refs: Vec<&LabeledExample> = chunk.iter().collect();
        let logits = network.logits(&batch_array(&refs, network.spec.input)?)?;
        predicted.extend(argmax_rows(&logits));
        probs.extend_from_slice(softmax_rows(&logits).data());
    }
    Ok(Predictions {
        probabilities: Array::new(vec![examples.len(), k], probs)?,
        predicted,
        labels: examples.iter().map(|e| usize::from(e.label)).collect(),
    })
}

/// Seed of the `repeat`-th test set at the `snr_index`-th SNR.
pub fn sweep_seed(base: u64, snr_index: usize, repeat: usize) -> u64 {
    example_seed(base ^ 0x7e57, ((snr_index as u64) << 32) | repeat as u64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub snr_db: f64,
    pub seeds: Vec<u64>,
    pub f1: Vec<f64>,
    pub mean_f1: f64,
    /// Sample standard deviation; 0 with one repeat.
    pub std_f1: f64,
    /// Predictions pooled over all repeats.
    pub pooled: Predictions,
    pub confusion: ConfusionMatrix,
}

impl SweepRow {
    pub fn single_repeat(&self) -> bool {
        self.f1.len() == 1
    }
}

/// Mean and sample standard deviation (`n - 1`); the deviation is 0 for one value.
pub fn mean_and_sample_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Scores `network` on `repeats` fresh test sets per SNR. `template` supplies
/// everything except the SNR and seed; inputs are standardized with the
/// training statistics.
pub fn evaluate_over_snr(
    network: &Network,
    template: &DatasetRequest,
    standardization: Standardization,
    snr_list: &[f64],
    repeats: usize,
    base_seed: u64,
) -> Result<Vec<SweepRow>> {
    ensure_param!(repeats >= 1, "repeats must be >= 1");
    ensure_param!(!snr_list.is_empty(), "SNR list is empty");
    ensure_param!(
        template.task.num_classes() == network.spec.classes,
        "{:?} test sets do not fit a {}-class model",
        template.task,
        network.spec.classes
    );
    let averaging = Averaging::for_task(template.task);
    let classes = network.spec.classes;
    snr_list
        .iter()
        .enumerate()
        .map(|(si, &snr_db)| {
            let mut f1 = Vec::with_capacity(repeats);
            let mut seeds = Vec::with_capacity(repeats);
            let mut probs = Vec::new();
            let mut predicted = Vec::new();
            let mut labels = Vec::new();
            for r in 0..repeats {
                let seed = sweep_seed(base_seed, si, r);
                let request = DatasetRequest { snr_db, seed, ..template.clone() };
                let (examples, _) = generate(&request, Some(standardization))?;
                let preds = predict_examples(network, &examples, 64)?;
                f1.push(f1_score(&preds.confusion(classes)?, averaging)?);
                seeds.push(seed);
                probs.extend_from_slice(preds.probabilities.data());
                predicted.extend(preds.predicted);
                labels.extend(preds.labels);
            }
            let (mean_f1, std_f1) = mean_and_sample_std(&f1);
            let pooled = Predictions { probabilities: Array::new(vec![labels.len(), classes], probs)?, predicted, labels };
            let confusion = pooled.confusion(classes)?;
            log::info!("snr {snr_db} dB: F1 {mean_f1:.4} ± {std_f1:.4}");
            Ok(SweepRow { snr_db, seeds, f1, mean_f1, std_f1, pooled, confusion })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1TableRow {
    pub snr_db: f64,
    pub model: String,
    pub mean_f1: f64,
    pub std_f1: f64,
}

pub fn f1_table_csv(rows: &[F1TableRow]) -> String {
    let mut s = String::from("snr_db,model,mean_f1,std_f1\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.snr_db, r.model, r.mean_f1, r.std_f1);
    }
    s
}

/// K×K grid, rows = true class, with class names as headers.
pub fn confusion_csv(cm: &ConfusionMatrix, class_names: &[String]) -> Result<String> {
    ensure_param!(class_names.len() == cm.classes(), "need {} class names", cm.classes());
    let mut s = String::from("true\\predicted");
    for name in class_names {
        s.push(',');
        s.push_str(name);
    }
    s.push('\n');
    for (t, name) in class_names.iter().enumerate() {
        s.push_str(name);
        for p in 0..cm.classes() {
            let _ = write!(s, ",{}", cm.get(t, p));
        }
        s.push('\n');
    }
    Ok(s)
}

/// SNR as used in output file names (`-5`, `2.5`).
pub fn snr_tag(snr_db: f64) -> String {
    format!("{snr_db}")
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    fs::write(path, text)?;
    Ok(())
}
