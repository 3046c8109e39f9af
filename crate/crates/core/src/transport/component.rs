//! Monotone components `T(x) = a(x_{<i}) + ∫_0^{x_i} b(x_{<i}, s)² ds`.

use crate::error::{Error, Result};
use crate::models::Jet;

use super::basis::{family, family_values, BasisSpec, Role, MAX_FAST_ORDER};
use super::quadrature::legendre16;

#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneComponent {
    spec: BasisSpec,
    a_terms: Vec<Vec<usize>>,
    b_terms: Vec<Vec<usize>>,
    a_coeffs: Vec<f64>,
    b_coeffs: Vec<f64>,
}

/// Coefficient-independent evaluation data of one component at one input.
#[derive(Debug, Clone)]
pub struct ComponentDesign {
    /// Basis values of `a` at the prefix.
    pub a_row: Vec<f64>,
    /// Basis values of `b` at the full input.
    pub b_point: Vec<f64>,
    /// Basis values of `b` at the Gauss–Legendre nodes on `[0, x_i]`.
    pub b_nodes: Vec<Vec<f64>>,
    /// Matching signed integration weights.
    pub node_weights: Vec<f64>,
}

impl ComponentDesign {
    /// `T` and `b` for the given coefficients.
    pub fn eval(&self, a: &[f64], b: &[f64]) -> (f64, f64) {
        let mut t = dot(&self.a_row, a);
        for (row, w) in self.b_nodes.iter().zip(&self.node_weights) {
            let v = dot(row, b);
            t += w * v * v;
        }
        (t, dot(&self.b_point, b))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn prefix_product(term: &[usize], fams: &[Vec<f64>]) -> f64 {
    term.iter().zip(fams).map(|(&j, f)| f[j]).product()
}

impl MonotoneComponent {
    pub fn new(spec: BasisSpec, a_coeffs: Vec<f64>, b_coeffs: Vec<f64>) -> Result<Self> {
        let a_terms = spec.a_terms();
        let b_terms = spec.b_terms();
        if a_coeffs.len() != a_terms.len() || b_coeffs.len() != b_terms.len() {
            return Err(Error::ContractViolation(format!(
                "component expects {} a- and {} b-coefficients, got {} and {}",
                a_terms.len(),
                b_terms.len(),
                a_coeffs.len(),
                b_coeffs.len()
            )));
        }
        if a_coeffs.iter().chain(&b_coeffs).any(|c| !c.is_finite()) {
            return Err(Error::Numerical("non-finite map coefficient".into()));
        }
        Ok(Self {
            spec,
            a_terms,
            b_terms,
            a_coeffs,
            b_coeffs,
        })
    }

    /// `T(x) = x_i`.
    pub fn identity(spec: BasisSpec) -> Self {
        let mut b = vec![0.0; spec.b_len()];
        b[0] = 1.0;
        Self::new(spec, vec![0.0; spec.a_len()], b).expect("identity coefficients")
    }

    /// `T(x) = shift + Σ slopes_j x_j + scale·x_i`, with `scale ≥ 0`.
    pub fn affine(spec: BasisSpec, shift: f64, prefix_slopes: &[f64], scale: f64) -> Result<Self> {
        if prefix_slopes.len() != spec.prefix_dim || spec.order < 1 && prefix_slopes.iter().any(|s| *s != 0.0) {
            return Err(Error::ContractViolation("affine component does not fit the basis".into()));
        }
        if scale < 0.0 {
            return Err(Error::ContractViolation("affine component must be non-decreasing".into()));
        }
        let a_terms = spec.a_terms();
        let mut a = vec![0.0; a_terms.len()];
        for (k, term) in a_terms.iter().enumerate() {
            match term.iter().sum::<usize>() {
                0 => a[k] = shift,
                1 => {
                    let j = term.iter().position(|&e| e == 1).expect("unit index");
                    a[k] = prefix_slopes[j];
                }
                _ => {}
            }
        }
        let mut b = vec![0.0; spec.b_len()];
        b[0] = scale.sqrt();
        Self::new(spec, a, b)
    }

    pub fn spec(&self) -> BasisSpec {
        self.spec
    }

    /// Position of this component in the permuted coordinates (1-based).
    pub fn index(&self) -> usize {
        self.spec.prefix_dim + 1
    }

    pub fn a_coeffs(&self) -> &[f64] {
        &self.a_coeffs
    }

    pub fn b_coeffs(&self) -> &[f64] {
        &self.b_coeffs
    }

    pub fn a_terms(&self) -> &[Vec<usize>] {
        &self.a_terms
    }

    pub fn b_terms(&self) -> &[Vec<usize>] {
        &self.b_terms
    }

    fn prefix_families(&self, prefix: &[f64]) -> Vec<Vec<f64>> {
        prefix
            .iter()
            .map(|&x| family(self.spec.kind, Role::Prefix, self.spec.order, x).0)
            .collect()
    }

    /// `a(prefix)` and the coefficients of `b(prefix, ·)` in the last-variable
    /// family.
    fn reduce(&self, prefix: &[f64]) -> (f64, Vec<f64>) {
        assert_eq!(prefix.len(), self.spec.prefix_dim, "component input length");
        let fams = self.prefix_families(prefix);
        let a = self
            .a_terms
            .iter()
            .zip(&self.a_coeffs)
            .map(|(t, c)| c * prefix_product(t, &fams))
            .sum();
        let mut e = vec![0.0; self.spec.order + 1];
        for (t, c) in self.b_terms.iter().zip(&self.b_coeffs) {
            let (last, head) = t.split_last().expect("non-empty b term");
            e[*last] += c * prefix_product(head, &fams);
        }
        (a, e)
    }

    fn last_b(&self, e: &[f64], s: f64) -> (f64, f64) {
        let (v, d) = family(self.spec.kind, Role::Last, self.spec.order, s);
        (dot(e, &v), dot(e, &d))
    }

    fn integral(&self, e: &[f64], x: f64) -> f64 {
        let rule = legendre16();
        let half = 0.5 * x;
        rule.nodes
            .iter()
            .zip(&rule.weights)
            .map(|(xi, w)| {
                let (b, _) = self.last_b(e, half * (1.0 + xi));
                half * w * b * b
            })
            .sum()
    }

    /// Allocation-free evaluation for components with at most one prefix
    /// variable.
    fn eval_fast(&self, prefix: Option<f64>, x: f64) -> f64 {
        let order = self.spec.order;
        let mut pf = [0.0; MAX_FAST_ORDER + 1];
        let mut a = 0.0;
        let mut e = [0.0; MAX_FAST_ORDER + 1];
        match prefix {
            None => {
                a = self.a_coeffs[0];
                e[..=order].copy_from_slice(&self.b_coeffs);
            }
            Some(p) => {
                family_values(self.spec.kind, Role::Prefix, order, p, &mut pf);
                for (t, c) in self.a_terms.iter().zip(&self.a_coeffs) {
                    a += c * pf[t[0]];
                }
                for (t, c) in self.b_terms.iter().zip(&self.b_coeffs) {
                    e[t[1]] += c * pf[t[0]];
                }
            }
        }
        let rule = legendre16();
        let half = 0.5 * x;
        let mut lv = [0.0; MAX_FAST_ORDER + 1];
        let mut integral = 0.0;
        for (xi, w) in rule.nodes.iter().zip(&rule.weights) {
            family_values(self.spec.kind, Role::Last, order, half * (1.0 + xi), &mut lv);
            let b = dot(&e[..=order], &lv[..=order]);
            integral += w * b * b;
        }
        a + half * integral
    }

    /// `T(x_{1:i})`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.spec.prefix_dim + 1, "component input length");
        if self.spec.order <= MAX_FAST_ORDER && x.len() <= 2 {
            return self.eval_fast(x.first().filter(|_| x.len() == 2).copied(), x[x.len() - 1]);
        }
        let (prefix, last) = x.split_at(x.len() - 1);
        let (a, e) = self.reduce(prefix);
        a + self.integral(&e, last[0])
    }

    /// `∂_i T = b(x)²`.
    pub fn partial(&self, x: &[f64]) -> f64 {
        let (prefix, last) = x.split_at(x.len() - 1);
        let (_, e) = self.reduce(prefix);
        let (b, _) = self.last_b(&e, last[0]);
        b * b
    }

    /// Value and first two derivatives of a component without prefix.
    pub fn jet(&self, x: f64) -> Jet {
        let (a, e) = self.reduce(&[]);
        let (b, db) = self.last_b(&e, x);
        Jet::new(a + self.integral(&e, x), b * b, 2.0 * b * db)
    }

    /// Basis evaluations at `x_{1:i}` for gradient-based fitting.
    pub fn design(&self, x: &[f64]) -> ComponentDesign {
        let (prefix, last) = x.split_at(x.len() - 1);
        assert_eq!(prefix.len(), self.spec.prefix_dim, "component input length");
        let fams = self.prefix_families(prefix);
        let a_row = self.a_terms.iter().map(|t| prefix_product(t, &fams)).collect();
        let b_row = |s: f64| -> Vec<f64> {
            let (lv, _) = family(self.spec.kind, Role::Last, self.spec.order, s);
            self.b_terms
                .iter()
                .map(|t| {
                    let (j, head) = t.split_last().expect("non-empty b term");
                    lv[*j] * prefix_product(head, &fams)
                })
                .collect()
        };
        let rule = legendre16();
        let half = 0.5 * last[0];
        ComponentDesign {
            a_row,
            b_point: b_row(last[0]),
            b_nodes: rule.nodes.iter().map(|xi| b_row(half * (1.0 + xi))).collect(),
            node_weights: rule.weights.iter().map(|w| half * w).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::basis::BasisKind;
    use proptest::prelude::*;

    fn spec(kind: BasisKind, prefix_dim: usize) -> BasisSpec {
        BasisSpec { kind, order: 4, prefix_dim }
    }

    fn random_component(kind: BasisKind, prefix_dim: usize, seed: &[f64]) -> MonotoneComponent {
        let s = spec(kind, prefix_dim);
        let pick = |k: usize| seed[k % seed.len()] * (1.0 + k as f64).recip();
        let a = (0..s.a_len()).map(pick).collect();
        let b = (0..s.b_len()).map(|k| pick(k + 7)).collect();
        MonotoneComponent::new(s, a, b).unwrap()
    }

    #[test]
    fn identity_and_affine_examples() {
        for kind in [BasisKind::HermiteFunction, BasisKind::HermitePolynomial] {
            let id = MonotoneComponent::identity(spec(kind, 1));
            assert!((id.eval(&[0.3, -1.7]) + 1.7).abs() < 1e-14);
            assert!((id.partial(&[0.3, -1.7]) - 1.0).abs() < 1e-14);
            let c = 1.3;
            let aff = MonotoneComponent::affine(spec(kind, 0), 0.5, &[], c * c).unwrap();
            assert!((aff.eval(&[2.0]) - (0.5 + c * c * 2.0)).abs() < 1e-13);
            let aff2 = MonotoneComponent::affine(spec(kind, 1), -1.0, &[0.25], 4.0).unwrap();
            assert!((aff2.eval(&[2.0, 3.0]) - (-1.0 + 0.5 + 12.0)).abs() < 1e-12);
        }
        assert!(MonotoneComponent::new(spec(BasisKind::HermiteFunction, 1), vec![0.0; 2], vec![0.0; 15]).is_err());
    }

    #[test]
    fn jet_and_design_agree_with_eval() {
        let c = random_component(BasisKind::HermiteFunction, 0, &[0.4, -0.9, 1.1, 0.2]);
        let x = 0.8;
        let j = c.jet(x);
        let e = 1e-5;
        assert!((j.value - c.eval(&[x])).abs() < 1e-14);
        assert!((j.d1 - (c.eval(&[x + e]) - c.eval(&[x - e])) / (2.0 * e)).abs() < 1e-7);
        assert!((j.d2 - (c.partial(&[x + e]) - c.partial(&[x - e])) / (2.0 * e)).abs() < 1e-7);
        let c2 = random_component(BasisKind::HermitePolynomial, 1, &[0.3, 0.7, -0.2]);
        let d = c2.design(&[0.4, -1.2]);
        let (t, b) = d.eval(c2.a_coeffs(), c2.b_coeffs());
        assert!((t - c2.eval(&[0.4, -1.2])).abs() < 1e-12);
        assert!((b * b - c2.partial(&[0.4, -1.2])).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn fast_path_matches_reduction(
            coeffs in proptest::collection::vec(-2.0f64..2.0, 5),
            p in -3.0f64..3.0, x in -4.0f64..4.0, poly in any::<bool>(), dim in 0usize..2
        ) {
            let kind = if poly { BasisKind::HermitePolynomial } else { BasisKind::HermiteFunction };
            let c = random_component(kind, dim, &coeffs);
            let input: Vec<f64> = if dim == 1 { vec![p, x] } else { vec![x] };
            let (a, e) = c.reduce(&input[..dim]);
            let slow = a + c.integral(&e, x);
            prop_assert!((c.eval(&input) - slow).abs() <= 1e-12 * (1.0 + slow.abs()));
        }

        #[test]
        fn monotone_in_last_argument(
            coeffs in proptest::collection::vec(-2.0f64..2.0, 4),
            p in -3.0f64..3.0, x in -4.0f64..4.0, dx in 0.0f64..3.0, poly in any::<bool>()
        ) {
            let kind = if poly { BasisKind::HermitePolynomial } else { BasisKind::HermiteFunction };
            let c = random_component(kind, 1, &coeffs);
            prop_assert!(c.eval(&[p, x]) <= c.eval(&[p, x + dx]) + 1e-12);
        }

        #[test]
        fn partial_matches_central_differences(
            coeffs in proptest::collection::vec(-1.5f64..1.5, 5),
            p in -3.0f64..3.0, x in -3.0f64..3.0, poly in any::<bool>()
        ) {
            let kind = if poly { BasisKind::HermitePolynomial } else { BasisKind::HermiteFunction };
            let c = random_component(kind, 1, &coeffs);
            let e = 1e-4;
            let fd = (c.eval(&[p, x + e]) - c.eval(&[p, x - e])) / (2.0 * e);
            prop_assert!((fd - c.partial(&[p, x])).abs() <= 1e-5 * (1.0 + fd.abs()));
        }
    }
}
