//! Dense-matrix reference for small circuits.

use mdq_core::vqc::{rot, rx, Gate, VqcParams};
use num_complex::Complex64;

pub type Matrix = Vec<Vec<Complex64>>;

pub fn identity(n: usize) -> Matrix {
    (0..n).map(|i| (0..n).map(|j| if i == j { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) }).collect()).collect()
}

pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    let (na, nb) = (a.len(), b.len());
    let mut out = vec![vec![Complex64::new(0.0, 0.0); na * nb]; na * nb];
    for i in 0..na {
        for j in 0..na {
            for k in 0..nb {
                for l in 0..nb {
                    out[i * nb + k][j * nb + l] = a[i][j] * b[k][l];
                }
            }
        }
    }
    out
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    let n = a.len();
    (0..n).map(|i| (0..n).map(|j| (0..n).map(|k| a[i][k] * b[k][j]).sum()).collect()).collect()
}

pub fn apply(m: &Matrix, v: &[Complex64]) -> Vec<Complex64> {
    m.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

pub fn gate_matrix(g: &Gate) -> Matrix {
    g.iter().map(|r| r.to_vec()).collect()
}

/// Full operator of `gate` on `qubit`; qubit j is bit j of the basis index,
/// so it is the j-th factor from the right of the Kronecker product.
pub fn lift(gate: &Gate, qubit: usize, q: usize) -> Matrix {
    let mut m = identity(1);
    for j in (0..q).rev() {
        let factor = if j == qubit { gate_matrix(gate) } else { identity(2) };
        m = kron(&m, &factor);
    }
    m
}

pub fn cnot_matrix(control: usize, target: usize, q: usize) -> Matrix {
    let n = 1 << q;
    let mut m = vec![vec![Complex64::new(0.0, 0.0); n]; n];
    #[allow(clippy::needless_range_loop)]
    for i in 0..n {
        let j = if (i >> control) & 1 == 1 { i ^ (1 << target) } else { i };
        m[j][i] = Complex64::new(1.0, 0.0);
    }
    m
}

pub fn pauli_y_expectation(state: &[Complex64], qubit: usize, q: usize) -> f64 {
    let y: Gate = [[Complex64::new(0.0, 0.0), Complex64::new(0.0, -1.0)], [Complex64::new(0.0, 1.0), Complex64::new(0.0, 0.0)]];
    let applied = apply(&lift(&y, qubit, q), state);
    state.iter().zip(&applied).map(|(a, b)| (a.conj() * b).re).sum()
}

/// Final state of the embedding plus variational block, built as one dense
/// unitary from Kronecker-lifted gates.
pub fn dense_circuit_state(x: &[f64], params: &VqcParams) -> Vec<Complex64> {
    let q = x.len();
    let mut u = identity(1 << q);
    for (j, &phi) in x.iter().enumerate() {
        u = matmul(&lift(&rx(phi), j, q), &u);
    }
    for rep in 0..params.config.depth {
        for j in 0..q {
            let g = rot(params.angle(rep, j, 0), params.angle(rep, j, 1), params.angle(rep, j, 2));
            u = matmul(&lift(&g, j, q), &u);
        }
        if q > 1 {
            for j in 0..q {
                u = matmul(&cnot_matrix(j, (j + 1) % q, q), &u);
            }
        }
    }
    let mut zero = vec![Complex64::new(0.0, 0.0); 1 << q];
    zero[0] = Complex64::new(1.0, 0.0);
    apply(&u, &zero)
}
