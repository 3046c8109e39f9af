//! Quadrature KL objective for a pair map and its derivatives.
//!
//! Coefficients are stacked as `[a₁, c₁, a₂, c₂]`, where component 1 maps the
//! first permuted coordinate `w₁ = z_{t+h}` and component 2 maps
//! `(w₁, w₂ = z_t)`. At each node the integrand is
//! `-log π(T₂, T₁) - log b₁² - log b₂²`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::optim::SmoothObjective;

use super::basis::BasisSpec;
use super::component::{ComponentDesign, MonotoneComponent};
use super::quadrature::QuadratureRule;
use super::target::PairTarget;
use super::TriangularMap;

struct NodeDesign {
    weight: f64,
    d1: ComponentDesign,
    d2: ComponentDesign,
    /// `∇²_c T` of each component (constant in the coefficients).
    g1: DMatrix<f64>,
    g2: DMatrix<f64>,
}

pub struct KlObjective<'a> {
    target: &'a PairTarget,
    spec1: BasisSpec,
    spec2: BasisSpec,
    nodes: Vec<NodeDesign>,
    offsets: [usize; 4],
    n: usize,
}

struct NodeEval {
    t1: f64,
    t2: f64,
    b1: f64,
    b2: f64,
    /// Gradients of `T₁`, `T₂` over the full coefficient vector.
    gt1: DVector<f64>,
    gt2: DVector<f64>,
}

fn integral_hessian(d: &ComponentDesign) -> DMatrix<f64> {
    let n = d.b_point.len();
    let mut g = DMatrix::zeros(n, n);
    for (row, w) in d.b_nodes.iter().zip(&d.node_weights) {
        let r = DVector::from_column_slice(row);
        g.ger(2.0 * w, &r, &r, 1.0);
    }
    g
}

impl<'a> KlObjective<'a> {
    pub fn new(target: &'a PairTarget, spec1: BasisSpec, spec2: BasisSpec, rule: &QuadratureRule) -> Result<Self> {
        if rule.dim != 2 || spec1.prefix_dim != 0 || spec2.prefix_dim != 1 {
            return Err(Error::ContractViolation("pair objective needs a 2-d rule and components of index 1, 2".into()));
        }
        let c1 = MonotoneComponent::identity(spec1);
        let c2 = MonotoneComponent::identity(spec2);
        let nodes = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(w, &weight)| {
                let d1 = c1.design(&w[..1]);
                let d2 = c2.design(w);
                NodeDesign {
                    weight,
                    g1: integral_hessian(&d1),
                    g2: integral_hessian(&d2),
                    d1,
                    d2,
                }
            })
            .collect();
        let sizes = [spec1.a_len(), spec1.b_len(), spec2.a_len(), spec2.b_len()];
        let offsets = [0, sizes[0], sizes[0] + sizes[1], sizes[0] + sizes[1] + sizes[2]];
        Ok(Self {
            target,
            spec1,
            spec2,
            nodes,
            offsets,
            n: sizes.iter().sum(),
        })
    }

    pub fn pack(&self, map: &TriangularMap) -> DVector<f64> {
        let [c1, c2] = map.components();
        let mut v = Vec::with_capacity(self.n);
        v.extend_from_slice(c1.a_coeffs());
        v.extend_from_slice(c1.b_coeffs());
        v.extend_from_slice(c2.a_coeffs());
        v.extend_from_slice(c2.b_coeffs());
        DVector::from_vec(v)
    }

    pub fn unpack(&self, x: &DVector<f64>) -> Result<(MonotoneComponent, MonotoneComponent)> {
        let o = self.offsets;
        let s = x.as_slice();
        Ok((
            MonotoneComponent::new(self.spec1, s[o[0]..o[1]].to_vec(), s[o[1]..o[2]].to_vec())?,
            MonotoneComponent::new(self.spec2, s[o[2]..o[3]].to_vec(), s[o[3]..].to_vec())?,
        ))
    }

    fn slices<'x>(&self, x: &'x DVector<f64>) -> [&'x [f64]; 4] {
        let o = self.offsets;
        let s = x.as_slice();
        [&s[o[0]..o[1]], &s[o[1]..o[2]], &s[o[2]..o[3]], &s[o[3]..]]
    }

    fn eval_node(&self, node: &NodeDesign, x: &DVector<f64>, with_grad: bool) -> NodeEval {
        let [a1, c1, a2, c2] = self.slices(x);
        let (t1, b1) = node.d1.eval(a1, c1);
        let (t2, b2) = node.d2.eval(a2, c2);
        let mut gt1 = DVector::zeros(0);
        let mut gt2 = DVector::zeros(0);
        if with_grad {
            gt1 = DVector::zeros(self.n);
            gt2 = DVector::zeros(self.n);
            let o = self.offsets;
            fill_component_grad(&node.d1, c1, &mut gt1, o[0], o[1]);
            fill_component_grad(&node.d2, c2, &mut gt2, o[2], o[3]);
        }
        NodeEval { t1, t2, b1, b2, gt1, gt2 }
    }

    /// Objective value; `+∞` if any node is outside the target's support or a
    /// component has a vanishing derivative.
    pub fn value_at(&self, x: &DVector<f64>) -> f64 {
        let mut total = 0.0;
        for node in &self.nodes {
            let e = self.eval_node(node, x, false);
            let lp = self.target.log_density(e.t2, e.t1);
            let f = -(lp + (e.b1 * e.b1).ln() + (e.b2 * e.b2).ln());
            if !f.is_finite() {
                return f64::INFINITY;
            }
            total += node.weight * f;
        }
        total
    }

    fn point_rows(&self, node: &NodeDesign) -> (DVector<f64>, DVector<f64>) {
        let o = self.offsets;
        let mut p1 = DVector::zeros(self.n);
        let mut p2 = DVector::zeros(self.n);
        p1.rows_mut(o[1], o[2] - o[1]).copy_from_slice(&node.d1.b_point);
        p2.rows_mut(o[3], self.n - o[3]).copy_from_slice(&node.d2.b_point);
        (p1, p2)
    }

    pub fn gradient_at(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(self.n);
        for node in &self.nodes {
            let e = self.eval_node(node, x, true);
            let j = self.target.log_density_jet(e.t2, e.t1);
            let (p1, p2) = self.point_rows(node);
            g.axpy(-node.weight * j.grad[1], &e.gt1, 1.0);
            g.axpy(-node.weight * j.grad[0], &e.gt2, 1.0);
            g.axpy(-node.weight * 2.0 / e.b1, &p1, 1.0);
            g.axpy(-node.weight * 2.0 / e.b2, &p2, 1.0);
        }
        g
    }

    fn hessian_impl(&self, x: &DVector<f64>, gauss_newton: bool) -> DMatrix<f64> {
        let o = self.offsets;
        let mut h = DMatrix::zeros(self.n, self.n);
        for node in &self.nodes {
            let e = self.eval_node(node, x, true);
            let j = self.target.log_density_jet(e.t2, e.t1);
            let w = node.weight;
            // Curvature of -log π in (x_t, x') = (T₂, T₁).
            let mut c = [[-j.hess[0][0], -j.hess[0][1]], [-j.hess[1][0], -j.hess[1][1]]];
            if gauss_newton {
                let m = DMatrix::from_row_slice(2, 2, &[c[0][0], c[0][1], c[1][0], c[1][1]]);
                let eig = SymmetricEigen::new(m);
                let mut psd = DMatrix::zeros(2, 2);
                for k in 0..2 {
                    let lam = eig.eigenvalues[k].max(0.0);
                    let v = eig.eigenvectors.column(k);
                    psd += lam * v * v.transpose();
                }
                c = [[psd[(0, 0)], psd[(0, 1)]], [psd[(1, 0)], psd[(1, 1)]]];
            }
            h.ger(w * c[0][0], &e.gt2, &e.gt2, 1.0);
            h.ger(w * c[1][1], &e.gt1, &e.gt1, 1.0);
            h.ger(w * c[0][1], &e.gt2, &e.gt1, 1.0);
            h.ger(w * c[1][0], &e.gt1, &e.gt2, 1.0);
            let (p1, p2) = self.point_rows(node);
            h.ger(2.0 * w / (e.b1 * e.b1), &p1, &p1, 1.0);
            h.ger(2.0 * w / (e.b2 * e.b2), &p2, &p2, 1.0);
            if !gauss_newton {
                let n1 = o[2] - o[1];
                let n2 = self.n - o[3];
                let mut blk = h.view_mut((o[1], o[1]), (n1, n1));
                blk -= (w * j.grad[1]) * &node.g1;
                let mut blk = h.view_mut((o[3], o[3]), (n2, n2));
                blk -= (w * j.grad[0]) * &node.g2;
            }
        }
        h
    }
}

fn fill_component_grad(d: &ComponentDesign, c: &[f64], g: &mut DVector<f64>, a_off: usize, b_off: usize) {
    for (k, v) in d.a_row.iter().enumerate() {
        g[a_off + k] = *v;
    }
    for (row, w) in d.b_nodes.iter().zip(&d.node_weights) {
        let bv: f64 = row.iter().zip(c).map(|(r, ci)| r * ci).sum();
        let s = 2.0 * w * bv;
        for (k, r) in row.iter().enumerate() {
            g[b_off + k] += s * r;
        }
    }
}

impl SmoothObjective for KlObjective<'_> {
    fn dim(&self) -> usize {
        self.n
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        self.value_at(x)
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.gradient_at(x)
    }

    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.hessian_impl(x, false)
    }

    fn gauss_newton(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.hessian_impl(x, true)
    }
}

/// Objective value and gradient for the coefficients of `map`.
pub fn kl_objective(map: &TriangularMap, target: &PairTarget, rule: &QuadratureRule) -> Result<(f64, Vec<f64>)> {
    let [c1, c2] = map.components();
    let obj = KlObjective::new(target, c1.spec(), c2.spec(), rule)?;
    let x = obj.pack(map);
    for (k, name) in [(0usize, "first"), (1, "second")] {
        let degenerate = obj.nodes.iter().all(|n| {
            let e = obj.eval_node(n, &x, false);
            if k == 0 { e.b1 == 0.0 } else { e.b2 == 0.0 }
        });
        if degenerate {
            return Err(Error::DegenerateMap(format!("b vanishes on every node of the {name} component")));
        }
    }
    Ok((obj.value_at(&x), obj.gradient_at(&x).as_slice().to_vec()))
}
