//! Univariate families and total-order multi-index sets for the monotone
//! components.
//!
//! Each variable carries a family indexed `0..=order`:
//!
//! * [`BasisKind::HermiteFunction`]: prefix variables use `1, x, ψ_0, ψ_1, …`
//!   and the integrated (last) variable uses `1, ψ_0, ψ_1, …`, where
//!   `ψ_n(x) = He_n(x) e^{-x²/4} / (2π)^{1/4} / √(n!)`.
//! * [`BasisKind::HermitePolynomial`]: every variable uses `He_n(x)/√(n!)`,
//!   which already starts with the constant and linear terms.
//!
//! Multivariate terms are products over variables with total index at most
//! `order`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    HermiteFunction,
    HermitePolynomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Prefix,
    Last,
}

/// Probabilists' Hermite polynomials `He_0..=He_n` and derivatives at `x`.
fn hermite_he(n: usize, x: f64, values: &mut [f64], derivs: &mut [f64]) {
    values[0] = 1.0;
    derivs[0] = 0.0;
    if n >= 1 {
        values[1] = x;
        derivs[1] = 1.0;
    }
    for k in 1..n {
        values[k + 1] = x * values[k] - k as f64 * values[k - 1];
    }
    for k in 2..=n {
        derivs[k] = k as f64 * values[k - 1];
    }
}

fn inv_sqrt_factorial(n: usize) -> f64 {
    let mut f = 1.0;
    for k in 2..=n {
        f *= k as f64;
    }
    1.0 / f.sqrt()
}

/// Largest order served by [`family_values`].
pub const MAX_FAST_ORDER: usize = 23;

/// Values of the family `0..=order` at `x`, written to `vals[..=order]`
/// without allocating.
pub fn family_values(kind: BasisKind, role: Role, order: usize, x: f64, vals: &mut [f64]) {
    debug_assert!(order <= MAX_FAST_ORDER && vals.len() > order);
    let (offset, scale) = match kind {
        BasisKind::HermitePolynomial => (0, 1.0),
        BasisKind::HermiteFunction => {
            vals[0] = 1.0;
            let offset = match role {
                Role::Prefix => {
                    if order >= 1 {
                        vals[1] = x;
                    }
                    2
                }
                Role::Last => 1,
            };
            if order < offset {
                return;
            }
            let root = (2.0 * std::f64::consts::PI).sqrt().sqrt();
            (offset, (-0.25 * x * x).exp() / root)
        }
    };
    let (mut prev, mut cur) = (0.0, 1.0);
    let mut c = scale;
    for n in 0..=order - offset {
        if n > 0 {
            let next = x * cur - (n - 1) as f64 * prev;
            prev = cur;
            cur = next;
            c /= (n as f64).sqrt();
        }
        vals[n + offset] = c * cur;
    }
}

/// Values and first derivatives of the family `0..=order` at `x`.
pub fn family(kind: BasisKind, role: Role, order: usize, x: f64) -> (Vec<f64>, Vec<f64>) {
    let mut vals = vec![0.0; order + 1];
    let mut ders = vec![0.0; order + 1];
    match kind {
        BasisKind::HermitePolynomial => {
            hermite_he(order, x, &mut vals, &mut ders);
            for n in 0..=order {
                let c = inv_sqrt_factorial(n);
                vals[n] *= c;
                ders[n] *= c;
            }
        }
        BasisKind::HermiteFunction => {
            let offset = match role {
                Role::Prefix => 2,
                Role::Last => 1,
            };
            vals[0] = 1.0;
            if role == Role::Prefix && order >= 1 {
                vals[1] = x;
                ders[1] = 1.0;
            }
            if order >= offset {
                let m = order - offset;
                let mut he = vec![0.0; m + 2];
                let mut dhe = vec![0.0; m + 2];
                hermite_he(m + 1, x, &mut he, &mut dhe);
                let damp = (-0.25 * x * x).exp();
                let root = (2.0 * std::f64::consts::PI).sqrt().sqrt();
                for n in 0..=m {
                    let c = inv_sqrt_factorial(n) / root;
                    vals[n + offset] = c * he[n] * damp;
                    ders[n + offset] = c * (dhe[n] - 0.5 * x * he[n]) * damp;
                }
            }
        }
    }
    (vals, ders)
}

/// Total-order multi-indices over `dim` variables, sorted by total degree and
/// then lexicographically.
pub fn total_order_indices(dim: usize, order: usize) -> Vec<Vec<usize>> {
    fn rec(dim: usize, budget: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == dim {
            out.push(prefix.clone());
            return;
        }
        for i in 0..=budget {
            prefix.push(i);
            rec(dim, budget - i, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(dim, order, &mut Vec::new(), &mut out);
    out.sort_by(|a, b| {
        let sa: usize = a.iter().sum();
        let sb: usize = b.iter().sum();
        sa.cmp(&sb).then_with(|| b.cmp(a))
    });
    out
}

/// Shape of one monotone component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BasisSpec {
    pub kind: BasisKind,
    pub order: usize,
    /// Number of variables preceding the integrated one.
    pub prefix_dim: usize,
}

impl BasisSpec {
    pub fn a_terms(&self) -> Vec<Vec<usize>> {
        total_order_indices(self.prefix_dim, self.order)
    }

    /// Multi-indices over `(prefix…, last)`.
    pub fn b_terms(&self) -> Vec<Vec<usize>> {
        total_order_indices(self.prefix_dim + 1, self.order)
    }

    pub fn a_len(&self) -> usize {
        self.a_terms().len()
    }

    pub fn b_len(&self) -> usize {
        self.b_terms().len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn index_sets() {
        assert_eq!(total_order_indices(0, 4), vec![Vec::<usize>::new()]);
        assert_eq!(total_order_indices(1, 4).len(), 5);
        assert_eq!(total_order_indices(2, 4).len(), 15);
        let idx = total_order_indices(2, 2);
        assert_eq!(idx[0], vec![0, 0]);
        assert!(idx.iter().all(|m| m.iter().sum::<usize>() <= 2));
        let spec = BasisSpec { kind: BasisKind::HermiteFunction, order: 4, prefix_dim: 1 };
        assert_eq!((spec.a_len(), spec.b_len()), (5, 15));
    }

    #[test]
    fn hermite_functions_are_orthonormal() {
        // ∫ψ_mψ_n dx = δ_mn, checked with a fine trapezoid rule.
        let order = 5;
        let (lo, hi, n) = (-20.0, 20.0, 40_000);
        let dx = (hi - lo) / n as f64;
        let mut gram = vec![vec![0.0; order]; order];
        for i in 0..=n {
            let x = lo + dx * i as f64;
            let (v, _) = family(BasisKind::HermiteFunction, Role::Last, order, x);
            for a in 0..order {
                for b in 0..order {
                    gram[a][b] += dx * v[a + 1] * v[b + 1];
                }
            }
        }
        for a in 0..order {
            for b in 0..order {
                let e = if a == b { 1.0 } else { 0.0 };
                assert!((gram[a][b] - e).abs() < 1e-9, "({a},{b}) {}", gram[a][b]);
            }
        }
    }

    #[test]
    fn extended_families_start_with_constant_and_linear() {
        let (v, d) = family(BasisKind::HermiteFunction, Role::Prefix, 4, 0.7);
        assert_eq!((v[0], v[1], d[0], d[1]), (1.0, 0.7, 0.0, 1.0));
        let (v, _) = family(BasisKind::HermiteFunction, Role::Last, 4, 0.7);
        assert_eq!(v[0], 1.0);
        let (v, _) = family(BasisKind::HermitePolynomial, Role::Last, 3, 2.0);
        assert_eq!(v[..2], [1.0, 2.0]);
        assert!((v[2] - 3.0 / 2f64.sqrt()).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn fast_values_match_family(x in -6.0f64..6.0, order in 0usize..9, prefix in any::<bool>(), poly in any::<bool>()) {
            let kind = if poly { BasisKind::HermitePolynomial } else { BasisKind::HermiteFunction };
            let role = if prefix { Role::Prefix } else { Role::Last };
            let (v, _) = family(kind, role, order, x);
            let mut fast = [0.0; MAX_FAST_ORDER + 1];
            family_values(kind, role, order, x, &mut fast);
            for n in 0..=order {
                prop_assert!((fast[n] - v[n]).abs() <= 1e-13 * (1.0 + v[n].abs()));
            }
        }

        #[test]
        fn family_derivatives_match_finite_differences(x in -5.0f64..5.0, prefix in any::<bool>(), poly in any::<bool>()) {
            let kind = if poly { BasisKind::HermitePolynomial } else { BasisKind::HermiteFunction };
            let role = if prefix { Role::Prefix } else { Role::Last };
            let e = 1e-6;
            let (_, d) = family(kind, role, 6, x);
            let (vp, _) = family(kind, role, 6, x + e);
            let (vm, _) = family(kind, role, 6, x - e);
            for n in 0..=6 {
                let fd = (vp[n] - vm[n]) / (2.0 * e);
                prop_assert!((fd - d[n]).abs() < 1e-5 * (1.0 + d[n].abs()));
            }
        }
    }
}
