//! Gauss–Hermite quadrature and normal-law expectations.
//!
//! Nodes and weights come from the Golub–Welsch eigendecomposition of the
//! Jacobi matrix of the (physicists') Hermite polynomials: the rule
//! integrates `∫ e^(-x²) f(x) dx` exactly for polynomials up to degree
//! `2n - 1`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// A Gauss–Hermite rule with `n` nodes.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::input("Gauss-Hermite rule needs at least one node"));
        }
        // Jacobi matrix: zero diagonal, off-diagonal sqrt(i/2).
        let mut jac = DMatrix::<f64>::zeros(n, n);
        for i in 1..n {
            let beta = (i as f64 / 2.0).sqrt();
            jac[(i - 1, i)] = beta;
            jac[(i, i - 1)] = beta;
        }
        let eig = SymmetricEigen::new(jac);
        let sqrt_pi = std::f64::consts::PI.sqrt();
        let mut pairs: Vec<(f64, f64)> = (0..n)
            .map(|j| {
                let first = eig.eigenvectors[(0, j)];
                (eig.eigenvalues[j], sqrt_pi * first * first)
            })
            .collect();
        pairs.sort_by(|p, q| p.0.total_cmp(&q.0));
        Ok(GaussHermite {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1).collect(),
        })
    }

    /// Shared, memoized rule. Rules are small and immutable; repeated
    /// per-area or per-replicate callers should prefer this constructor.
    pub fn cached(n: usize) -> Result<Arc<Self>> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<GaussHermite>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().expect("quadrature cache poisoned");
        if let Some(rule) = guard.get(&n) {
            return Ok(rule.clone());
        }
        let rule = Arc::new(GaussHermite::new(n)?);
        guard.insert(n, rule.clone());
        Ok(rule)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `∫ e^(-x²) f(x) dx`.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    /// `E[f(T)]` for `T ~ Normal(mean, variance)`.
    pub fn normal_expectation<F: FnMut(f64) -> f64>(
        &self,
        mean: f64,
        variance: f64,
        mut f: F,
    ) -> f64 {
        if variance == 0.0 {
            return f(mean);
        }
        let scale = (2.0 * variance).sqrt();
        let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
        inv_sqrt_pi * self.integrate(|x| f(mean + scale * x))
    }

    /// `(E[f(T)], Var[f(T)])` for `T ~ Normal(mean, variance)` in one sweep.
    pub fn normal_mean_and_variance<F: FnMut(f64) -> f64>(
        &self,
        mean: f64,
        variance: f64,
        mut f: F,
    ) -> (f64, f64) {
        if variance == 0.0 {
            let v = f(mean);
            return (v, 0.0);
        }
        let scale = (2.0 * variance).sqrt();
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for (&x, &w) in self.nodes.iter().zip(&self.weights) {
            let v = f(mean + scale * x);
            m1 += w * v;
            m2 += w * v * v;
        }
        let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
        m1 *= inv_sqrt_pi;
        m2 *= inv_sqrt_pi;
        (m1, (m2 - m1 * m1).max(0.0))
    }
}
