mod common;

use common::{random_array, rng};
use mdq_core::autodiff::{Array, Graph};
use mdq_core::checkpoint::Checkpoint;
use mdq_core::models::{argmax_rows, ArchitectureSpec, Mode, ModelKind, Network};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn parameter_counts() {
    let cnn = Network::build(ArchitectureSpec::cnn(2), 0).unwrap();
    let hqnn = Network::build(ArchitectureSpec::hqnn(2), 0).unwrap();
    // conv 304 + 4640 + 18496, dense 15872·128+128, then the heads.
    let front = 304 + 4640 + 18496 + 2_031_744;
    assert_eq!(cnn.parameter_count(), front + 8256 + 130);
    assert_eq!(hqnn.parameter_count(), front + 2064 + 96 + 34);
    assert_eq!(hqnn.quantum_parameter_count(), 96);
    assert_eq!(cnn.quantum_parameter_count(), 0);
    assert_eq!(Network::build(ArchitectureSpec::cnn(5), 0).unwrap().parameter_count(), front + 8256 + 325);
    assert_eq!(ArchitectureSpec::cnn(2).flatten_len().unwrap(), 15872);
}

#[test]
fn logits_have_one_column_per_class() {
    let mut r = rng(1);
    let batch = random_array(&[3, 2, 16, 249], &mut r);
    for kind in [ModelKind::Cnn, ModelKind::Hqnn] {
        for k in [2, 5] {
            let net = Network::build(ArchitectureSpec::for_kind(kind, k), 4).unwrap();
            let logits = net.logits(&batch).unwrap();
            assert_eq!(logits.shape(), &[3, k]);
            assert!(logits.data().iter().all(|v| v.is_finite()));
            let p = net.probabilities(&batch).unwrap();
            for row in p.data().chunks(k) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn rejects_unsupported_heads_and_shapes() {
    assert!(Network::build(ArchitectureSpec::cnn(3), 0).is_err());
    let net = Network::build(ArchitectureSpec::cnn(2), 0).unwrap();
    assert!(net.logits(&Array::zeros(&[1, 2, 16, 100])).is_err());
}

#[test]
fn batched_forward_equals_per_example() {
    let mut r = rng(2);
    let batch = random_array(&[4, 2, 16, 249], &mut r);
    let per = 2 * 16 * 249;
    for kind in [ModelKind::Cnn, ModelKind::Hqnn] {
        let net = Network::build(ArchitectureSpec::for_kind(kind, 2), 9).unwrap();
        let all = net.logits(&batch).unwrap();
        for n in 0..4 {
            let one = Array::new(vec![1, 2, 16, 249], batch.data()[n * per..(n + 1) * per].to_vec()).unwrap();
            let single = net.logits(&one).unwrap();
            for (a, b) in single.data().iter().zip(&all.data()[n * 2..n * 2 + 2]) {
                assert!((a - b).abs() < 1e-12, "{kind:?} example {n}");
            }
        }
    }
}

#[test]
fn argmax_ignores_a_constant_logit_shift() {
    let mut r = rng(3);
    let logits = random_array(&[20, 5], &mut r);
    let shifted = Array::new(vec![20, 5], logits.data().iter().map(|v| v + 17.5).collect()).unwrap();
    assert_eq!(argmax_rows(&logits), argmax_rows(&shifted));
    let tie = Array::new(vec![1, 3], vec![0.2, 0.9, 0.9]).unwrap();
    assert_eq!(argmax_rows(&tie), vec![1]);
}

#[test]
fn forward_is_bit_reproducible() {
    let mut r = rng(4);
    let batch = random_array(&[2, 2, 16, 249], &mut r);
    let a = Network::build(ArchitectureSpec::hqnn(5), 21).unwrap();
    let b = Network::build(ArchitectureSpec::hqnn(5), 21).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.logits(&batch).unwrap(), b.logits(&batch).unwrap());
    assert_ne!(a, Network::build(ArchitectureSpec::hqnn(5), 22).unwrap());
}

#[test]
fn dropout_only_in_training_mode() {
    let mut r = rng(5);
    let batch = random_array(&[2, 2, 16, 249], &mut r);
    let net = Network::build(ArchitectureSpec::hqnn(2), 1).unwrap();
    let run = |seed: Option<u64>| {
        let mut g = Graph::new();
        let x = g.constant(batch.clone());
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(0));
        let mode = match seed {
            Some(_) => Mode::Train(&mut dropout_rng),
            None => Mode::Eval,
        };
        let pass = net.forward(&mut g, x, mode).unwrap();
        g.value(pass.logits).clone()
    };
    assert_eq!(run(None), run(None));
    assert_eq!(run(None), net.logits(&batch).unwrap());
    assert_eq!(run(Some(1)), run(Some(1)));
    assert_ne!(run(Some(1)), run(Some(2)));
    assert_ne!(run(Some(1)), run(None));
}

#[test]
fn checkpoint_preserves_logits_exactly() {
    let mut r = rng(6);
    let batch = random_array(&[2, 2, 16, 249], &mut r);
    let net = Network::build(ArchitectureSpec::hqnn(2), 8).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.mdqw");
    Checkpoint::new(net.clone(), None, Some(3)).save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.epoch, Some(3));
    assert_eq!(back.network.logits(&batch).unwrap(), net.logits(&batch).unwrap());
    assert!(back.require_architecture(&ArchitectureSpec::cnn(2)).is_err());
}
