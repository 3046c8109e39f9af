//! Fitting pair maps and whole levels.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{ObservationModel, ObservationRecord, SdeModel};
use crate::optim::{newton_cg, NewtonCgOptions};

use super::basis::{BasisKind, BasisSpec};
use super::objective::KlObjective;
use super::quadrature::QuadratureRule;
use super::target::{build_pair_target, PairTarget};
use super::{MapComposition, TriangularMap};

/// Optimizer tolerance per level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TolSchedule {
    Constant { tol: f64 },
    /// `10^{-l-1}` at level `l`.
    PerLevel,
}

impl TolSchedule {
    pub fn tol(&self, level: u32) -> f64 {
        match *self {
            TolSchedule::Constant { tol } => tol,
            TolSchedule::PerLevel => 10f64.powi(-(level as i32) - 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub basis: BasisKind,
    pub order: usize,
    pub quad_order: usize,
    pub tol: TolSchedule,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            basis: BasisKind::HermiteFunction,
            order: 4,
            quad_order: 10,
            tol: TolSchedule::Constant { tol: 1e-4 },
            max_iter: 200,
        }
    }
}

impl FitOptions {
    pub fn specs(&self) -> (BasisSpec, BasisSpec) {
        (
            BasisSpec { kind: self.basis, order: self.order, prefix_dim: 0 },
            BasisSpec { kind: self.basis, order: self.order, prefix_dim: 1 },
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.order == 0 || self.quad_order == 0 || self.max_iter == 0 {
            return Err(Error::Config("map order, quadrature order and iteration cap must be positive".into()));
        }
        if let TolSchedule::Constant { tol } = self.tol {
            if !(tol > 0.0) {
                return Err(Error::Config("optimizer tolerance must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub iterations: usize,
    pub grad_norm: f64,
    pub objective: f64,
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct PairFit {
    pub map: TriangularMap,
    pub report: FitReport,
}

/// Minimises the quadrature KL objective from the identity map until the
/// gradient norm is at most `tol`.
pub fn fit_pair_map(
    target: &PairTarget,
    basis: BasisKind,
    order: usize,
    rule: &QuadratureRule,
    tol: f64,
    max_iter: usize,
) -> Result<PairFit> {
    if !(tol > 0.0) {
        return Err(Error::Config("optimizer tolerance must be positive".into()));
    }
    let s1 = BasisSpec { kind: basis, order, prefix_dim: 0 };
    let s2 = BasisSpec { kind: basis, order, prefix_dim: 1 };
    let obj = KlObjective::new(target, s1, s2, rule)?;
    let start: DVector<f64> = obj.pack(&TriangularMap::identity(target.level, target.t_index, s1, s2));
    let opts = NewtonCgOptions { tol, max_iter, ..Default::default() };
    let report = newton_cg(&obj, start, &opts)?;
    let (c1, c2) = obj.unpack(&report.x)?;
    let map = TriangularMap::new(target.level, target.t_index, c1, c2)?;
    for (w, _) in rule.nodes.iter().zip(&rule.weights) {
        let [p1, p2] = map.partials_permuted([w[0], w[1]]);
        if !(p1 > 0.0 && p2 > 0.0) {
            return Err(Error::DegenerateMap(format!(
                "fitted map has a vanishing derivative at node ({}, {})",
                w[0], w[1]
            )));
        }
    }
    Ok(PairFit {
        map,
        report: FitReport {
            iterations: report.iterations,
            grad_norm: report.grad_norm,
            objective: report.value,
            trace: report.trace,
        },
    })
}

/// Fits all `M_l·T` maps of a level, in time order: the target at `t` uses the
/// filter component of the map fitted at `t - h`.
pub fn build_level_maps(
    model: &SdeModel,
    obs_model: &ObservationModel,
    obs: &ObservationRecord,
    level: u32,
    opts: &FitOptions,
) -> Result<MapComposition> {
    opts.validate()?;
    let rule = QuadratureRule::gauss_hermite(opts.quad_order, 2)?;
    let tol = opts.tol.tol(level);
    let n = (1usize << level) * model.intervals();
    let mut maps: Vec<TriangularMap> = Vec::with_capacity(n);
    for t in 0..n {
        let upstream = maps.last().map(|m| m.filter_component());
        let target = build_pair_target(model, obs_model, obs, level, t, upstream)?;
        let fit = fit_pair_map(&target, opts.basis, opts.order, &rule, tol, opts.max_iter)
            .map_err(|e| e.with_fit_context(level, t))?;
        maps.push(fit.map);
    }
    MapComposition::new(level, model.intervals(), model.obs_interval, maps)
}

/// Fits several levels in parallel.
pub fn build_levels(
    model: &SdeModel,
    obs_model: &ObservationModel,
    obs: &ObservationRecord,
    levels: &[u32],
    opts: &FitOptions,
) -> Result<Vec<MapComposition>> {
    levels
        .par_iter()
        .map(|&l| build_level_maps(model, obs_model, obs, l, opts))
        .collect()
}
