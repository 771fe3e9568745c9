#![allow(dead_code)]

pub mod unitary;

use mdq_core::autodiff::{Array, Graph, Var};
use mdq_core::models::{Mode, Network};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const ABS_TOL: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_array(shape: &[usize], rng: &mut impl Rng) -> Array {
    let n = shape.iter().product();
    Array::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// `|analytic − numeric| ≤ max(abs, rel·|numeric|)`.
pub fn close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= ABS_TOL.max(REL_TOL * numeric.abs())
}

/// Builds the scalar `Σ f(inputs) ⊙ R` for a fixed random projection `R`
/// and compares reverse-mode gradients against central differences at up to
/// `probes` entries of every input.
pub fn gradcheck(
    inputs: &[Array],
    f: impl Fn(&mut Graph, &[Var]) -> Var,
    probes: usize,
    seed: u64,
) -> Result<(), String> {
    let mut r = rng(seed);
    let projection = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|a| g.constant(a.clone())).collect();
        let out = f(&mut g, &vars);
        random_array(g.value(out).shape(), &mut r)
    };
    let loss = |arrays: &[Array], grads: bool| -> (f64, Vec<Array>) {
        let mut g = Graph::new();
        let vars: Vec<Var> = arrays.iter().map(|a| if grads { g.param(a.clone()) } else { g.constant(a.clone()) }).collect();
        let out = f(&mut g, &vars);
        let w = g.constant(projection.clone());
        let prod = g.mul(out, w).unwrap();
        let total = g.reduce_sum(prod).unwrap();
        let value = g.value(total).item();
        if !grads {
            return (value, Vec::new());
        }
        let gr = g.backward(total).unwrap();
        (value, vars.iter().zip(arrays).map(|(v, a)| gr.get_or_zeros(*v, a)).collect())
    };
    let (_, analytic) = loss(inputs, true);
    let h = 1e-6;
    for (i, input) in inputs.iter().enumerate() {
        let n = input.len();
        let picks: Vec<usize> = if n <= probes { (0..n).collect() } else { (0..probes).map(|_| r.random_range(0..n)).collect() };
        for idx in picks {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[idx] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[idx] -= h;
            let numeric = (loss(&plus, false).0 - loss(&minus, false).0) / (2.0 * h);
            let a = analytic[i].data()[idx];
            if !close(a, numeric) {
                return Err(format!("input {i} entry {idx}: analytic {a:e}, numeric {numeric:e}"));
            }
        }
    }
    Ok(())
}

/// ROC points `(threshold, fpr, tpr)` by counting at every candidate
/// threshold: `+inf`, then the distinct values of `scores ∪ {0, 1}` descending.
pub fn enumerate_roc(scores: &[f64], positives: &[bool]) -> Vec<(f64, f64, f64)> {
    let n_pos = positives.iter().filter(|&&p| p).count() as f64;
    let n_neg = positives.len() as f64 - n_pos;
    let mut cands: Vec<f64> = scores.to_vec();
    cands.extend([0.0, 1.0]);
    cands.sort_by(|a, b| b.partial_cmp(a).unwrap());
    cands.dedup();
    let mut out = vec![(f64::INFINITY, 0.0, 0.0)];
    for t in cands {
        let tp = scores.iter().zip(positives).filter(|(s, p)| **s >= t && **p).count() as f64;
        let fp = scores.iter().zip(positives).filter(|(s, p)| **s >= t && !**p).count() as f64;
        out.push((t, fp / n_neg, tp / n_pos));
    }
    out
}

/// Random scores and labels with both classes present; half the instances
/// use coarse scores so ties are common.
pub fn random_roc_instance(r: &mut impl Rng) -> (Vec<f64>, Vec<bool>) {
    let n = r.random_range(2..60);
    let coarse = r.random_bool(0.5);
    let scores: Vec<f64> = (0..n)
        .map(|_| if coarse { f64::from(r.random_range(0..8u8)) / 8.0 } else { r.random::<f64>() })
        .collect();
    let mut positives: Vec<bool> = (0..n).map(|_| r.random_bool(0.4)).collect();
    positives[0] = true;
    positives[1] = false;
    (scores, positives)
}

/// Loss gradients of a whole network at one random entry of every classical
/// parameter and two of every circuit, against central differences.
/// Returns the number of classical and quantum entries probed.
pub fn network_gradcheck(net: &Network, batch: &Array, labels: &[usize], seed: u64) -> Result<(usize, usize), String> {
    let mut r = rng(seed);
    let (_, grads, _) = net.loss_and_gradients(batch, labels, Mode::Eval).map_err(|e| e.to_string())?;
    let loss_at = |n: &Network| n.loss_and_gradients(batch, labels, Mode::Eval).map(|o| o.0).map_err(|e| e.to_string());
    let (mut classical, mut quantum) = (0, 0);
    let h = 1e-6;
    for (p, name) in net.params.names.iter().enumerate() {
        let is_quantum = name.ends_with(".angles");
        for _ in 0..if is_quantum { 2 } else { 1 } {
            let i = r.random_range(0..net.params.values[p].len());
            let mut plus = net.clone();
            plus.params.values[p].data_mut()[i] += h;
            let mut minus = net.clone();
            minus.params.values[p].data_mut()[i] -= h;
            let numeric = (loss_at(&plus)? - loss_at(&minus)?) / (2.0 * h);
            let analytic = grads[p].data()[i];
            if !close(analytic, numeric) {
                return Err(format!("{name}[{i}]: analytic {analytic:e}, numeric {numeric:e}"));
            }
            if is_quantum {
                quantum += 1;
            } else {
                classical += 1;
            }
        }
    }
    Ok((classical, quantum))
}
