//! Gauss rules from the Golub–Welsch eigenvalue construction.

use std::sync::OnceLock;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// One-dimensional Gauss rule.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

fn golub_welsch(order: usize, off_diagonal: impl Fn(usize) -> f64, total_mass: f64) -> GaussRule {
    let mut jacobi = DMatrix::<f64>::zeros(order, order);
    for k in 1..order {
        let b = off_diagonal(k);
        jacobi[(k - 1, k)] = b;
        jacobi[(k, k - 1)] = b;
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..order)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], total_mass * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Symmetrise to remove eigen-solver round-off.
    let n = pairs.len();
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let x = 0.5 * (pairs[j].0 - pairs[i].0);
        let w = 0.5 * (pairs[i].1 + pairs[j].1);
        pairs[i] = (-x, w);
        pairs[j] = (x, w);
    }
    if n % 2 == 1 {
        pairs[n / 2].0 = 0.0;
    }
    GaussRule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    }
}

impl GaussRule {
    /// Gauss–Hermite rule for the standard normal weight; weights sum to one.
    pub fn hermite_normal(order: usize) -> Self {
        golub_welsch(order, |k| (k as f64).sqrt(), 1.0)
    }

    /// Gauss–Legendre rule on `[-1, 1]`.
    pub fn legendre(order: usize) -> Self {
        golub_welsch(
            order,
            |k| {
                let k = k as f64;
                k / (4.0 * k * k - 1.0).sqrt()
            },
            2.0,
        )
    }
}

/// Fixed 16-point Gauss–Legendre rule used for the integrated-squared part of
/// each monotone component.
pub fn legendre16() -> &'static GaussRule {
    static RULE: OnceLock<GaussRule> = OnceLock::new();
    RULE.get_or_init(|| GaussRule::legendre(16))
}

/// Tensor-product Gauss–Hermite rule against `N(0, I_dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub order: usize,
    pub dim: usize,
    pub nodes: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn gauss_hermite(order: usize, dim: usize) -> Result<Self> {
        if order == 0 || dim == 0 {
            return Err(Error::Config("quadrature order and dimension must be positive".into()));
        }
        let rule = GaussRule::hermite_normal(order);
        let mut nodes = vec![Vec::new()];
        let mut weights = vec![1.0];
        for _ in 0..dim {
            let mut next_nodes = Vec::with_capacity(nodes.len() * order);
            let mut next_weights = Vec::with_capacity(nodes.len() * order);
            for (node, w) in nodes.iter().zip(&weights) {
                for (x, wx) in rule.nodes.iter().zip(&rule.weights) {
                    let mut n = node.clone();
                    n.push(*x);
                    next_nodes.push(n);
                    next_weights.push(w * wx);
                }
            }
            nodes = next_nodes;
            weights = next_weights;
        }
        Ok(Self {
            order,
            dim,
            nodes,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(x, w)| w * f(x)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn double_factorial(n: i64) -> f64 {
        if n <= 0 {
            1.0
        } else {
            n as f64 * double_factorial(n - 2)
        }
    }

    #[test]
    fn hermite_moments_exact_up_to_degree_2q_minus_1() {
        for q in [1usize, 3, 5, 10] {
            let rule = GaussRule::hermite_normal(q);
            assert!((rule.weights.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            for p in 0..(2 * q) {
                let got: f64 = rule.nodes.iter().zip(&rule.weights).map(|(x, w)| w * x.powi(p as i32)).sum();
                let exact = if p % 2 == 1 { 0.0 } else { double_factorial(p as i64 - 1) };
                let scale = double_factorial(p as i64 - (p as i64 % 2) - 1).max(1.0);
                assert!((got - exact).abs() <= 1e-10 * scale, "q={q} p={p}: {got} vs {exact}");
            }
        }
    }

    #[test]
    fn tensor_rule_moments() {
        let rule = QuadratureRule::gauss_hermite(10, 2).unwrap();
        assert_eq!(rule.len(), 100);
        let moments = [(0, 0, 1.0), (1, 0, 0.0), (2, 0, 1.0), (2, 2, 1.0), (4, 0, 3.0), (3, 1, 0.0), (0, 4, 3.0)];
        for (i, j, exact) in moments {
            let got = rule.integrate(|x| x[0].powi(i) * x[1].powi(j));
            assert!((got - exact).abs() < 1e-10, "({i},{j}) {got}");
        }
        assert!((rule.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(QuadratureRule::gauss_hermite(0, 2).is_err());
    }

    #[test]
    fn legendre_integrates_polynomials() {
        let rule = legendre16();
        for p in 0..32 {
            let got: f64 = rule.nodes.iter().zip(&rule.weights).map(|(x, w)| w * x.powi(p)).sum();
            let exact = if p % 2 == 1 { 0.0 } else { 2.0 / (p as f64 + 1.0) };
            assert!((got - exact).abs() < 1e-13, "p={p}");
        }
    }
}
