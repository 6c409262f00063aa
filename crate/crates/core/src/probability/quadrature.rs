use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Gauss-Hermite rule for the standard normal weight (probabilists'
/// convention): `E[f(X)] ≈ Σ w_j f(x_j)` with `Σ w_j = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(*x))
            .sum()
    }
}

/// Probabilists' Hermite polynomials He_m(x) and He_{m-1}(x).
fn hermite_pair(m: usize, x: f64) -> (f64, f64) {
    let mut prev = 1.0;
    let mut cur = x;
    if m == 0 {
        return (1.0, 0.0);
    }
    for k in 1..m {
        let next = x * cur - k as f64 * prev;
        prev = cur;
        cur = next;
    }
    (cur, prev)
}

/// Nodes and weights from the eigen-decomposition of the Jacobi matrix of
/// He_m (Golub-Welsch), polished by Newton steps on He_m with weights from
/// `w_j = (m-1)! / (m He_{m-1}(x_j)^2)`, then symmetrised.
pub fn gauss_hermite_normal(m: usize) -> Result<QuadratureRule> {
    if !(2..=25).contains(&m) {
        return Err(invalid(format!("quadrature size must be in 2..=25, got {m}")));
    }
    let mut jacobi = DMatrix::<f64>::zeros(m, m);
    for k in 1..m {
        let off = (k as f64).sqrt();
        jacobi[(k - 1, k)] = off;
        jacobi[(k, k - 1)] = off;
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut nodes: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());

    // log((m-1)!) keeps the weight formula finite for m up to 25
    let log_fact: f64 = (1..m).map(|k| (k as f64).ln()).sum();
    let mut weights = Vec::with_capacity(m);
    for x in nodes.iter_mut() {
        for _ in 0..3 {
            let (he, he_prev) = hermite_pair(m, *x);
            let deriv = m as f64 * he_prev;
            *x -= he / deriv;
        }
        let (_, he_prev) = hermite_pair(m, *x);
        weights.push((log_fact - 2.0 * he_prev.abs().ln()).exp() / m as f64);
    }

    for j in 0..m / 2 {
        let x = 0.5 * (nodes[m - 1 - j] - nodes[j]);
        let w = 0.5 * (weights[j] + weights[m - 1 - j]);
        nodes[j] = -x;
        nodes[m - 1 - j] = x;
        weights[j] = w;
        weights[m - 1 - j] = w;
    }
    if m % 2 == 1 {
        nodes[m / 2] = 0.0;
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    Ok(QuadratureRule { nodes, weights })
}
