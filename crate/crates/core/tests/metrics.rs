mod common;

use common::{enumerate_roc, random_roc_instance};
use mdq_core::autodiff::Array;
use mdq_core::dataset::Task;
use mdq_core::evaluation::{
    confusion_csv, f1_score, mean_and_sample_std, multiclass_roc, roc, Averaging, ConfusionMatrix, RocCurve,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn roc_equals_exhaustive_enumeration() {
    let mut r = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..200 {
        let (scores, positives) = random_roc_instance(&mut r);
        let curve = roc(&scores, &positives).unwrap();
        let got: Vec<(f64, f64, f64)> = curve.points.iter().map(|p| (p.threshold, p.fpr, p.tpr)).collect();
        assert_eq!(got, enumerate_roc(&scores, &positives));
        assert_eq!(curve.points.first().map(|p| (p.fpr, p.tpr)), Some((0.0, 0.0)));
        assert_eq!(curve.points.last().map(|p| (p.fpr, p.tpr)), Some((1.0, 1.0)));
        assert!(curve.points.windows(2).all(|w| w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr));
        let auc = curve.auc();
        assert!((0.0..=1.0).contains(&auc));
    }
}

#[test]
fn roc_is_invariant_under_logit_transform() {
    let mut r = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let (scores, positives) = random_roc_instance(&mut r);
        let scores: Vec<f64> = scores.iter().map(|s| s.clamp(0.01, 0.99)).collect();
        let logits: Vec<f64> = scores.iter().map(|p| (p / (1.0 - p)).ln()).collect();
        let a = roc(&scores, &positives).unwrap();
        let b = roc(&logits, &positives).unwrap();
        assert_eq!(a.distinct_points(), b.distinct_points());
    }
}

#[test]
fn perfect_and_reversed_scores() {
    let positives = [false, false, true, true];
    let perfect = roc(&[0.1, 0.2, 0.8, 0.9], &positives).unwrap();
    assert_eq!(perfect.auc(), 1.0);
    let reversed = roc(&[0.9, 0.8, 0.2, 0.1], &positives).unwrap();
    assert_eq!(reversed.auc(), 0.0);
    assert!(roc(&[0.5, 0.5], &[true, true]).is_err());
    assert!(roc(&[0.5], &[true, false]).is_err());
}

#[test]
fn csv_export_floors_zero_fpr() {
    let curve: RocCurve = roc(&[0.2, 0.7], &[false, true]).unwrap();
    let csv = curve.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("threshold,fpr,tpr"));
    assert_eq!(lines.next(), Some("inf,0.000001,0"));
    assert_eq!(csv.lines().last(), Some("0,1,1"));
}

#[test]
fn hand_computed_f1() {
    // truth 1 predicted 1: 3, truth 1 predicted 0: 1, truth 0 predicted 1: 2, truth 0 predicted 0: 4.
    let labels = [1, 1, 1, 1, 0, 0, 0, 0, 0, 0];
    let preds = [1, 1, 1, 0, 1, 1, 0, 0, 0, 0];
    let cm = ConfusionMatrix::from_predictions(&labels, &preds, 2).unwrap();
    assert_eq!((cm.get(1, 1), cm.get(1, 0), cm.get(0, 1), cm.get(0, 0)), (3, 1, 2, 4));
    // precision 3/5, recall 3/4.
    assert!((f1_score(&cm, Averaging::Binary).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    // class 0: precision 4/5, recall 4/6 -> 8/11.
    let macro_f1 = (2.0 / 3.0 + 8.0 / 11.0) / 2.0;
    assert!((f1_score(&cm, Averaging::Macro).unwrap() - macro_f1).abs() < 1e-15);
    assert_eq!(Averaging::for_task(Task::Detection), Averaging::Binary);
    assert_eq!(Averaging::for_task(Task::Classification), Averaging::Macro);
}

#[test]
fn macro_equals_binary_when_errors_are_symmetric() {
    let labels = [0, 0, 0, 0, 0, 1, 1, 1, 1, 1];
    let preds = [0, 0, 0, 0, 1, 1, 1, 1, 1, 0];
    let cm = ConfusionMatrix::from_predictions(&labels, &preds, 2).unwrap();
    let binary = f1_score(&cm, Averaging::Binary).unwrap();
    assert_eq!(binary, f1_score(&cm, Averaging::Macro).unwrap());
    assert!((binary - 0.8).abs() < 1e-15);
}

#[test]
fn absent_class_scores_zero_and_empty_matrix_is_an_error() {
    let cm = ConfusionMatrix::from_predictions(&[0, 1, 2], &[0, 1, 1], 5).unwrap();
    assert_eq!(cm.class_f1(3), 0.0);
    assert_eq!(cm.class_f1(2), 0.0);
    assert!((cm.class_f1(1) - 2.0 / 3.0).abs() < 1e-15);
    assert!(f1_score(&ConfusionMatrix::new(2), Averaging::Binary).is_err());
    assert!(ConfusionMatrix::from_predictions(&[0, 7], &[0, 1], 5).is_err());
}

#[test]
fn confusion_export() {
    let cm = ConfusionMatrix::from_predictions(&[0, 1, 1], &[0, 1, 0], 2).unwrap();
    let csv = confusion_csv(&cm, &["noise".into(), "drone".into()]).unwrap();
    assert_eq!(csv, "true\\predicted,noise,drone\nnoise,1,0\ndrone,1,1\n");
    assert_eq!(cm.row_sums(), vec![1, 2]);
}

#[test]
fn one_vs_rest_curves() {
    let probs = Array::new(
        vec![4, 3],
        vec![0.8, 0.1, 0.1, 0.2, 0.7, 0.1, 0.1, 0.2, 0.7, 0.6, 0.3, 0.1],
    )
    .unwrap();
    let curves = multiclass_roc(&probs, &[0, 1, 2, 0]).unwrap();
    assert_eq!(curves.len(), 3);
    for (c, curve) in curves.iter().enumerate() {
        assert_eq!(curve.class, Some(c));
        assert_eq!(curve.auc(), 1.0);
    }
    assert!(multiclass_roc(&probs, &[0, 0, 0, 0]).is_err());
}

#[test]
fn repeat_statistics() {
    assert_eq!(mean_and_sample_std(&[0.93]), (0.93, 0.0));
    let (m, s) = mean_and_sample_std(&[1.0, 2.0, 3.0]);
    assert_eq!((m, s), (2.0, 1.0));
}
