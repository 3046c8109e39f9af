//! Unnormalised pair targets `π_{t,t+h}(x_t, x_{t+h})`.

use serde::{Deserialize, Serialize};

use crate::discretization::LevelGrid;
use crate::error::{Error, Result};
use crate::models::{InitialLaw, Jet, ObservationModel, ObservationRecord, SdeModel};

use super::component::MonotoneComponent;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    /// `t = 0` on the coarsest level: both endpoint observations enter.
    InitialL0,
    Initial,
    Interior,
    /// `t + h` is an observation time.
    PreObservation,
    /// Explicit bivariate Gaussian, used for testing.
    Gaussian,
}

/// Log-density with gradient and Hessian in `(x_t, x_{t+h})`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogDensity2 {
    pub value: f64,
    pub grad: [f64; 2],
    pub hess: [[f64; 2]; 2],
}

#[derive(Debug, Clone)]
enum Head {
    /// `log η(x_t)` for the standard normal reference.
    Reference,
    /// `log p_0(x_0) [+ log ℓ(x_0, y_0)]`.
    Prior { law: InitialLaw, y0: Option<f64> },
}

#[derive(Debug, Clone)]
enum Density {
    Model {
        model: SdeModel,
        obs_model: ObservationModel,
        h: f64,
        head: Head,
        upstream: Option<MonotoneComponent>,
        y_next: Option<f64>,
    },
    Gaussian {
        mean: [f64; 2],
        precision: [[f64; 2]; 2],
    },
}

#[derive(Debug, Clone)]
pub struct PairTarget {
    pub kind: TargetKind,
    pub level: u32,
    pub t_index: usize,
    density: Density,
}

/// Builds the target for the pair `(t, t+h)` with `t = t_index·h`.
pub fn build_pair_target(
    model: &SdeModel,
    obs_model: &ObservationModel,
    obs: &ObservationRecord,
    level: u32,
    t_index: usize,
    upstream: Option<&MonotoneComponent>,
) -> Result<PairTarget> {
    let grid = LevelGrid::for_model(model, level);
    if t_index >= grid.n_steps() {
        return Err(Error::ContractViolation(format!(
            "pair index {t_index} outside the {} steps of level {level}",
            grid.n_steps()
        )));
    }
    match (t_index, upstream) {
        (0, Some(_)) => {
            return Err(Error::ContractViolation("initial pair target takes no upstream map".into()))
        }
        (t, None) if t > 0 => {
            return Err(Error::ContractViolation(format!(
                "pair target at index {t} needs the upstream filter map"
            )))
        }
        (_, Some(u)) if u.spec().prefix_dim != 0 => {
            return Err(Error::ContractViolation("upstream map must be a filter component".into()))
        }
        _ => {}
    }
    let steps = grid.steps_per_obs();
    let obs_at = |node: usize| -> Option<f64> {
        if node.is_multiple_of(steps) {
            obs.value_at(node / steps, model.obs_interval)
        } else {
            None
        }
    };
    let head = if t_index == 0 {
        if matches!(model.initial_law, InitialLaw::PointMass { .. }) {
            return Err(Error::UnsupportedModel(
                "transport maps need an initial law with a density".into(),
            ));
        }
        Head::Prior {
            law: model.initial_law,
            y0: obs_at(0),
        }
    } else {
        Head::Reference
    };
    let next_is_obs = grid.is_obs_node(t_index + 1);
    let kind = match (t_index, level) {
        (0, 0) => TargetKind::InitialL0,
        (0, _) => TargetKind::Initial,
        _ if next_is_obs => TargetKind::PreObservation,
        _ => TargetKind::Interior,
    };
    Ok(PairTarget {
        kind,
        level,
        t_index,
        density: Density::Model {
            model: model.clone(),
            obs_model: *obs_model,
            h: grid.step(),
            head,
            upstream: upstream.cloned(),
            y_next: obs_at(t_index + 1),
        },
    })
}

/// `log K(u, x')` for `x' ~ N(u + h a(u), h b(u)²)`, with derivatives in `u` and `x'`.
fn log_kernel(model: &SdeModel, h: f64, u: f64, xp: f64) -> LogDensity2 {
    let a = model.unit_drift(u);
    let b = model.unit_diffusion(u);
    let m = u + h * a.value;
    let m1 = 1.0 + h * a.d1;
    let m2 = h * a.d2;
    let v = h * b.value * b.value;
    let v1 = 2.0 * h * b.value * b.d1;
    let v2 = 2.0 * h * (b.d1 * b.d1 + b.value * b.d2);
    let r = xp - m;
    let value = -0.5 * (2.0 * std::f64::consts::PI * v).ln() - 0.5 * r * r / v;
    let l_u = -0.5 * v1 / v + r * m1 / v + r * r * v1 / (2.0 * v * v);
    let l_p = -r / v;
    let l_pp = -1.0 / v;
    let l_up = m1 / v + r * v1 / (v * v);
    let l_uu = -0.5 * v2 / v + 0.5 * v1 * v1 / (v * v) - m1 * m1 / v + r * m2 / v
        - 2.0 * r * m1 * v1 / (v * v)
        + r * r * v2 / (2.0 * v * v)
        - r * r * v1 * v1 / (v * v * v);
    LogDensity2 {
        value,
        grad: [l_u, l_p],
        hess: [[l_uu, l_up], [l_up, l_pp]],
    }
}

impl PairTarget {
    /// Bivariate Gaussian `N(mean, cov)` over `(x_t, x_{t+h})`.
    pub fn gaussian(mean: [f64; 2], cov: [[f64; 2]; 2]) -> Result<Self> {
        let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
        if !(cov[0][0] > 0.0 && det > 0.0) || (cov[0][1] - cov[1][0]).abs() > 1e-14 {
            return Err(Error::ContractViolation("covariance must be symmetric positive definite".into()));
        }
        Ok(Self {
            kind: TargetKind::Gaussian,
            level: 0,
            t_index: 0,
            density: Density::Gaussian {
                mean,
                precision: [[cov[1][1] / det, -cov[0][1] / det], [-cov[1][0] / det, cov[0][0] / det]],
            },
        })
    }

    /// `log π` with gradient and Hessian; `value` may be `-∞` or NaN far out.
    pub fn log_density_jet(&self, xt: f64, xp: f64) -> LogDensity2 {
        match &self.density {
            Density::Gaussian { mean, precision: p } => {
                let r = [xt - mean[0], xp - mean[1]];
                let g = [-(p[0][0] * r[0] + p[0][1] * r[1]), -(p[1][0] * r[0] + p[1][1] * r[1])];
                LogDensity2 {
                    value: 0.5 * (g[0] * r[0] + g[1] * r[1]),
                    grad: g,
                    hess: [[-p[0][0], -p[0][1]], [-p[1][0], -p[1][1]]],
                }
            }
            Density::Model {
                model,
                obs_model,
                h,
                head,
                upstream,
                y_next,
            } => {
                let head_jet = match head {
                    Head::Reference => Jet::new(-0.5 * xt * xt, -xt, -1.0),
                    Head::Prior { law, y0 } => {
                        let mut j = law.log_density_jet(xt).expect("prior with density");
                        if let Some(y) = y0 {
                            let l = obs_model.log_likelihood_jet(xt, *y);
                            j = Jet::new(j.value + l.value, j.d1 + l.d1, j.d2 + l.d2);
                        }
                        j
                    }
                };
                let u = match upstream {
                    Some(c) => c.jet(xt),
                    None => Jet::new(xt, 1.0, 0.0),
                };
                let k = log_kernel(model, *h, u.value, xp);
                let mut out = LogDensity2 {
                    value: head_jet.value + k.value,
                    grad: [head_jet.d1 + k.grad[0] * u.d1, k.grad[1]],
                    hess: [
                        [
                            head_jet.d2 + k.hess[0][0] * u.d1 * u.d1 + k.grad[0] * u.d2,
                            k.hess[0][1] * u.d1,
                        ],
                        [k.hess[1][0] * u.d1, k.hess[1][1]],
                    ],
                };
                if let Some(y) = y_next {
                    let l = obs_model.log_likelihood_jet(xp, *y);
                    out.value += l.value;
                    out.grad[1] += l.d1;
                    out.hess[1][1] += l.d2;
                }
                out
            }
        }
    }

    pub fn log_density(&self, xt: f64, xp: f64) -> f64 {
        self.log_density_jet(xt, xp).value
    }

    /// Whether an observation likelihood on `x_{t+h}` is part of the target.
    pub fn observes_next(&self) -> bool {
        matches!(&self.density, Density::Model { y_next: Some(_), .. })
    }

    /// Whether `ℓ(x_0, y_0)` is part of the target.
    pub fn observes_initial(&self) -> bool {
        matches!(
            &self.density,
            Density::Model {
                head: Head::Prior { y0: Some(_), .. },
                ..
            }
        )
    }
}
