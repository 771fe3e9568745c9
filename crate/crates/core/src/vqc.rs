//! Statevector simulation of the variational quantum dense layer.
//!
//! One circuit on `q` qubits:
//!
//! 1. angle embedding, `R_x(x_j)` on every qubit of `|0…0⟩`;
//! 2. `depth` repetitions of `Rot(α, β, γ) = R_z(γ) R_y(β) R_z(α)` on every
//!    qubit followed by the CNOT ring `0→1, 1→2, …, q−1→0`;
//! 3. readout `v_j = ⟨ψ|Y_j|ψ⟩`.
//!
//! Qubit `j` is bit `j` (least significant first) of the amplitude index.
//! Every rotation has a generator with eigenvalues ±1/2, so the two-point
//! parameter-shift rule gives exact derivatives.

use std::f64::consts::FRAC_PI_2;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Array, Backward, BackwardContext, Graph, Var};
use crate::error::{ensure_param, Error, Result};

pub const MAX_QUBITS: usize = 12;

/// Single-qubit gate as a row-major 2×2 matrix.
pub type Gate = [[Complex64; 2]; 2];

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

pub fn rx(phi: f64) -> Gate {
    let (s, c) = (phi / 2.0).sin_cos();
    [[Complex64::new(c, 0.0), Complex64::new(0.0, -s)], [Complex64::new(0.0, -s), Complex64::new(c, 0.0)]]
}

pub fn ry(phi: f64) -> Gate {
    let (s, c) = (phi / 2.0).sin_cos();
    [[Complex64::new(c, 0.0), Complex64::new(-s, 0.0)], [Complex64::new(s, 0.0), Complex64::new(c, 0.0)]]
}

pub fn rz(phi: f64) -> Gate {
    [[Complex64::from_polar(1.0, -phi / 2.0), ZERO], [ZERO, Complex64::from_polar(1.0, phi / 2.0)]]
}

fn matmul2(a: &Gate, b: &Gate) -> Gate {
    let mut out = [[ZERO; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

/// `R_z(γ) · R_y(β) · R_z(α)`.
pub fn rot(alpha: f64, beta: f64, gamma: f64) -> Gate {
    matmul2(&rz(gamma), &matmul2(&ry(beta), &rz(alpha)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    amplitudes: Vec<Complex64>,
    n_qubits: usize,
}

impl StateVector {
    /// `|0…0⟩` on `n_qubits` qubits.
    pub fn zero(n_qubits: usize) -> Self {
        let mut amplitudes = vec![ZERO; 1 << n_qubits];
        amplitudes[0] = Complex64::new(1.0, 0.0);
        Self { amplitudes, n_qubits }
    }

    pub fn from_amplitudes(amplitudes: Vec<Complex64>) -> Result<Self> {
        ensure_param!(
            amplitudes.len().is_power_of_two() && amplitudes.len() >= 2,
            "statevector length must be a power of two >= 2, got {}",
            amplitudes.len()
        );
        let n_qubits = amplitudes.len().trailing_zeros() as usize;
        Ok(Self { amplitudes, n_qubits })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Multiplies every amplitude by `e^{iφ}`.
    pub fn apply_global_phase(&mut self, phi: f64) {
        let phase = Complex64::from_polar(1.0, phi);
        for a in &mut self.amplitudes {
            *a *= phase;
        }
    }

    pub fn apply_single(&mut self, qubit: usize, gate: &Gate) {
        debug_assert!(qubit < self.n_qubits);
        let bit = 1usize << qubit;
        for i in 0..self.amplitudes.len() {
            if i & bit != 0 {
                continue;
            }
            let (a0, a1) = (self.amplitudes[i], self.amplitudes[i | bit]);
            self.amplitudes[i] = gate[0][0] * a0 + gate[0][1] * a1;
            self.amplitudes[i | bit] = gate[1][0] * a0 + gate[1][1] * a1;
        }
    }

    pub fn apply_cnot(&mut self, control: usize, target: usize) {
        debug_assert!(control != target);
        let (c, t) = (1usize << control, 1usize << target);
        for i in 0..self.amplitudes.len() {
            if i & c != 0 && i & t == 0 {
                self.amplitudes.swap(i, i | t);
            }
        }
    }

    /// `⟨ψ|Y_j|ψ⟩ = 2 Im(conj(a₀) a₁)` summed over amplitude pairs differing in bit `j`.
    pub fn expectation_y(&self, qubit: usize) -> f64 {
        let bit = 1usize << qubit;
        let mut acc = 0.0;
        for i in 0..self.amplitudes.len() {
            if i & bit == 0 {
                acc += (self.amplitudes[i].conj() * self.amplitudes[i | bit]).im;
            }
        }
        2.0 * acc
    }
}

/// Circuit shape: qubit count and number of variational repetitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VqcConfig {
    pub qubits: usize,
    pub depth: usize,
}

impl VqcConfig {
    pub fn new(qubits: usize, depth: usize) -> Result<Self> {
        let config = Self { qubits, depth };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_param!(
            (1..=MAX_QUBITS).contains(&self.qubits),
            "qubit count must be in 1..={MAX_QUBITS}, got {}",
            self.qubits
        );
        ensure_param!(self.depth >= 1, "variational depth must be >= 1");
        Ok(())
    }

    /// Trainable angles per circuit, `3 · depth · qubits`.
    pub fn param_count(&self) -> usize {
        3 * self.depth * self.qubits
    }

    pub fn param_shape(&self) -> [usize; 3] {
        [self.depth, self.qubits, 3]
    }
}

/// Variational angles laid out as `[depth][qubit][3]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VqcParams {
    pub config: VqcConfig,
    pub angles: Vec<f64>,
}

impl VqcParams {
    pub fn new(config: VqcConfig, angles: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if angles.len() != config.param_count() {
            return Err(Error::Shape(format!(
                "expected {} variational angles for {:?}, got {}",
                config.param_count(),
                config,
                angles.len()
            )));
        }
        Ok(Self { config, angles })
    }

    pub fn zeros(config: VqcConfig) -> Self {
        Self { config, angles: vec![0.0; config.param_count()] }
    }

    pub fn angle(&self, repetition: usize, qubit: usize, k: usize) -> f64 {
        self.angles[(repetition * self.config.qubits + qubit) * 3 + k]
    }
}

/// `⊗_j R_x(x_j) |0⟩`.
pub fn embed(x: &[f64]) -> StateVector {
    let mut state = StateVector::zero(x.len());
    for (j, &phi) in x.iter().enumerate() {
        state.apply_single(j, &rx(phi));
    }
    state
}

pub fn apply_variational(state: &mut StateVector, params: &VqcParams) -> Result<()> {
    let q = params.config.qubits;
    if state.n_qubits() != q {
        return Err(Error::Shape(format!("state has {} qubits, parameters expect {q}", state.n_qubits())));
    }
    for r in 0..params.config.depth {
        for j in 0..q {
            let gate = rot(params.angle(r, j, 0), params.angle(r, j, 1), params.angle(r, j, 2));
            state.apply_single(j, &gate);
        }
        if q > 1 {
            for j in 0..q {
                state.apply_cnot(j, (j + 1) % q);
            }
        }
    }
    Ok(())
}

pub fn measure_y(state: &StateVector) -> Vec<f64> {
    (0..state.n_qubits()).map(|j| state.expectation_y(j)).collect()
}

/// Embedding, variational block and Pauli-Y readout.
pub fn quantum_layer_forward(x: &[f64], params: &VqcParams) -> Result<Vec<f64>> {
    if x.len() != params.config.qubits {
        return Err(Error::Shape(format!("{} inputs for a {}-qubit circuit", x.len(), params.config.qubits)));
    }
    let mut state = embed(x);
    apply_variational(&mut state, params)?;
    Ok(measure_y(&state))
}

/// Parameter-shift Jacobians of one circuit.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumJacobian {
    /// `∂v_j/∂x_k`, row-major `[q][q]`.
    pub inputs: Vec<f64>,
    /// `∂v_j/∂θ_p`, row-major `[q][3·depth·q]`.
    pub params: Vec<f64>,
}

impl QuantumJacobian {
    pub fn d_input(&self, output: usize, input: usize, q: usize) -> f64 {
        self.inputs[output * q + input]
    }

    pub fn d_param(&self, output: usize, param: usize, n_params: usize) -> f64 {
        self.params[output * n_params + param]
    }
}

fn shifted_difference(plus: &[f64], minus: &[f64], out: &mut [f64], column: usize, stride: usize) {
    for (j, (p, m)) in plus.iter().zip(minus).enumerate() {
        out[j * stride + column] = 0.5 * (p - m);
    }
}

/// `∂v/∂θ = (v(θ + π/2) − v(θ − π/2)) / 2` for every embedding and
/// variational angle, by re-running the circuit.
pub fn quantum_layer_gradient(x: &[f64], params: &VqcParams) -> Result<QuantumJacobian> {
    let q = params.config.qubits;
    let n_params = params.config.param_count();
    if x.len() != q {
        return Err(Error::Shape(format!("{} inputs for a {q}-qubit circuit", x.len())));
    }
    let mut inputs = vec![0.0; q * q];
    let mut shifted_x = x.to_vec();
    for k in 0..q {
        shifted_x[k] = x[k] + FRAC_PI_2;
        let plus = quantum_layer_forward(&shifted_x, params)?;
        shifted_x[k] = x[k] - FRAC_PI_2;
        let minus = quantum_layer_forward(&shifted_x, params)?;
        shifted_x[k] = x[k];
        shifted_difference(&plus, &minus, &mut inputs, k, q);
    }

    let mut grads = vec![0.0; q * n_params];
    let embedded = embed(x);
    let mut shifted = params.clone();
    for p in 0..n_params {
        let mut run = |delta: f64| -> Result<Vec<f64>> {
            shifted.angles[p] = params.angles[p] + delta;
            let mut state = embedded.clone();
            apply_variational(&mut state, &shifted)?;
            Ok(measure_y(&state))
        };
        let plus = run(FRAC_PI_2)?;
        let minus = run(-FRAC_PI_2)?;
        shifted.angles[p] = params.angles[p];
        shifted_difference(&plus, &minus, &mut grads, p, n_params);
    }
    Ok(QuantumJacobian { inputs, params: grads })
}

struct QuantumLayerRule {
    config: VqcConfig,
}

impl Backward for QuantumLayerRule {
    fn name(&self) -> &'static str {
        "quantum_layer"
    }

    fn backward(&self, ctx: &BackwardContext<'_>) -> Result<Vec<Option<Array>>> {
        let (x, theta, g) = (ctx.inputs[0], ctx.inputs[1], ctx.grad_output);
        let q = self.config.qubits;
        let n_params = self.config.param_count();
        let params = VqcParams::new(self.config, theta.data().to_vec())?;

        let per_example: Vec<(Vec<f64>, Vec<f64>)> = x
            .data()
            .par_chunks(q)
            .zip(g.data().par_chunks(q))
            .map(|(xs, gs)| {
                let jac = quantum_layer_gradient(xs, &params)?;
                let gx = (0..q).map(|k| (0..q).map(|j| gs[j] * jac.d_input(j, k, q)).sum()).collect();
                let gp = (0..n_params).map(|p| (0..q).map(|j| gs[j] * jac.d_param(j, p, n_params)).sum()).collect();
                Ok((gx, gp))
            })
            .collect::<Result<_>>()?;

        let gx = ctx.needs_grad[0].then(|| {
            let data = per_example.iter().flat_map(|(gx, _)| gx.iter().copied()).collect();
            Array::new(x.shape().to_vec(), data).expect("one row per example")
        });
        let gp = ctx.needs_grad[1].then(|| {
            let mut acc = Array::zeros(theta.shape());
            for (_, gp) in &per_example {
                for (a, v) in acc.data_mut().iter_mut().zip(gp) {
                    *a += v;
                }
            }
            acc
        });
        Ok(vec![gx, gp])
    }
}

/// Quantum dense layer as a graph node: `[N, q]` features in, `[N, q]`
/// expectations out, with `params` shaped `[depth, q, 3]`. Gradients come
/// from the parameter-shift rule.
pub fn quantum_dense(g: &mut Graph, x: Var, params: Var, config: VqcConfig) -> Result<Var> {
    config.validate()?;
    let xv = g.value(x);
    let q = config.qubits;
    if xv.last_dim() != q || xv.ndim() == 0 || xv.ndim() > 2 {
        return Err(Error::Shape(format!("quantum layer input {:?} for {q} qubits", xv.shape())));
    }
    let pv = g.value(params);
    if pv.shape() != config.param_shape() {
        return Err(Error::Shape(format!(
            "quantum layer parameters {:?}, expected {:?}",
            pv.shape(),
            config.param_shape()
        )));
    }
    let vqc = VqcParams::new(config, pv.data().to_vec())?;
    let outputs: Vec<Vec<f64>> =
        xv.data().par_chunks(q).map(|xs| quantum_layer_forward(xs, &vqc)).collect::<Result<_>>()?;
    let value = Array::new(xv.shape().to_vec(), outputs.concat())?;
    g.record(&[x, params], value, Box::new(QuantumLayerRule { config }))
}
