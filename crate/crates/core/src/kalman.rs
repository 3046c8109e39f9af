//! Exact filtering moments of the Euler-discretised linear-Gaussian model.
//!
//! With unit-interval coefficients `a`, `b`, step `h = 2^{-l}` and
//! `M = 2^l` steps per interval, one interval of the Euler chain is the
//! linear map `x ↦ (1+ha)^M x` plus Gaussian noise of variance
//! `h b² Σ_{i<M} (1+ha)^{2i}`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Diffusion, Drift, InitialLaw, ObservationModel, ObservationRecord, SdeModel};
use crate::transport::{BasisKind, MapComposition, TriangularMap};

/// Linear-Gaussian parameters in interval units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearGaussianParams {
    pub a: f64,
    pub b: f64,
    pub tau: f64,
    pub initial: InitialLaw,
    pub intervals: usize,
    pub obs_interval: f64,
}

impl LinearGaussianParams {
    pub fn from_models(model: &SdeModel, obs_model: &ObservationModel) -> Result<Self> {
        let (Drift::Linear { slope }, Diffusion::Constant { value }, ObservationModel::LinearGaussian { tau }) =
            (model.drift, model.diffusion, *obs_model)
        else {
            return Err(Error::UnsupportedModel(
                "the Kalman oracle needs linear drift, constant diffusion and Gaussian observations".into(),
            ));
        };
        Ok(Self {
            a: slope * model.obs_interval,
            b: value * model.obs_interval.sqrt(),
            tau,
            initial: model.initial_law,
            intervals: model.intervals(),
            obs_interval: model.obs_interval,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KalmanState {
    pub pred_mean: f64,
    pub pred_std: f64,
    pub upd_mean: f64,
    pub upd_std: f64,
    pub level: u32,
    pub time: usize,
}

/// One observation interval of the level-`l` Euler chain.
pub fn predict(upd_mean: f64, upd_std: f64, a: f64, b: f64, level: u32) -> (f64, f64) {
    let m = 1usize << level;
    let h = 1.0 / m as f64;
    let f = 1.0 + h * a;
    let fm = f.powi(m as i32);
    let mut noise = 0.0;
    let mut p = 1.0;
    for _ in 0..m {
        noise += p;
        p *= f * f;
    }
    let var = fm * fm * upd_std * upd_std + h * b * b * noise;
    (fm * upd_mean, var.sqrt())
}

/// Bayes update with `y ~ N(x, τ²)`.
pub fn update(mean: f64, std: f64, y: f64, tau: f64) -> (f64, f64) {
    let s2 = std * std;
    let t2 = tau * tau;
    (mean + s2 * (y - mean) / (t2 + s2), (t2 * s2 / (t2 + s2)).sqrt())
}

/// Filter states at observation times `0..=T`. Times without a recorded
/// observation keep the predicted moments.
pub fn filter_path(params: &LinearGaussianParams, obs: &ObservationRecord, level: u32) -> Vec<KalmanState> {
    let mut out = Vec::with_capacity(params.intervals + 1);
    let (mut pm, mut ps) = (params.initial.mean(), params.initial.std());
    for k in 0..=params.intervals {
        if k > 0 {
            let prev: &KalmanState = out.last().expect("previous state");
            (pm, ps) = predict(prev.upd_mean, prev.upd_std, params.a, params.b, level);
        }
        let (um, us) = match obs.value_at(k, params.obs_interval) {
            Some(y) => update(pm, ps, y, params.tau),
            None => (pm, ps),
        };
        out.push(KalmanState {
            pred_mean: pm,
            pred_std: ps,
            upd_mean: um,
            upd_std: us,
            level,
            time: k,
        });
    }
    out
}

pub fn filter_moments(
    model: &SdeModel,
    obs_model: &ObservationModel,
    obs: &ObservationRecord,
    level: u32,
    k: usize,
) -> Result<KalmanState> {
    let params = LinearGaussianParams::from_models(model, obs_model)?;
    if k > params.intervals {
        return Err(Error::ContractViolation(format!(
            "time index {k} beyond the horizon ({} intervals)",
            params.intervals
        )));
    }
    Ok(filter_path(&params, obs, level)[k])
}

/// Smoothed means `E[x_k | y_{0:T}]` at observation times (Rauch–Tung–Striebel).
pub fn smoothed_means(params: &LinearGaussianParams, obs: &ObservationRecord, level: u32) -> Vec<f64> {
    let path = filter_path(params, obs, level);
    let m = 1usize << level;
    let gain = (1.0 + params.a / m as f64).powi(m as i32);
    let mut out = vec![0.0; path.len()];
    let last = path.len() - 1;
    out[last] = path[last].upd_mean;
    for k in (0..last).rev() {
        let s = &path[k];
        let next = &path[k + 1];
        let j = if next.pred_std > 0.0 {
            s.upd_std * s.upd_std * gain / (next.pred_std * next.pred_std)
        } else {
            0.0
        };
        out[k] = s.upd_mean + j * (out[k + 1] - next.pred_mean);
    }
    out
}

/// `z ↦ μ̂ + σ̂·z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub shift: f64,
    pub scale: f64,
}

impl AffineMap {
    pub fn apply(&self, z: f64) -> f64 {
        self.shift + self.scale * z
    }
}

pub fn exact_filter_map(state: &KalmanState) -> AffineMap {
    AffineMap {
        shift: state.upd_mean,
        scale: state.upd_std,
    }
}

/// `E[(F⁻¹_{l,k}(U) − F⁻¹_{l',k}(U))²] = (μ̂_l − μ̂_{l'})² + (σ̂_l − σ̂_{l'})²`.
pub fn proxy_between(a: &KalmanState, b: &KalmanState) -> f64 {
    (a.upd_mean - b.upd_mean).powi(2) + (a.upd_std - b.upd_std).powi(2)
}

/// Proxy between consecutive levels `l−1, l` for `l = 1..=max_level` at time `k`.
pub fn variance_proxy(
    params: &LinearGaussianParams,
    obs: &ObservationRecord,
    k: usize,
    max_level: u32,
) -> Vec<(u32, f64)> {
    let states: Vec<KalmanState> = (0..=max_level).map(|l| filter_path(params, obs, l)[k]).collect();
    (1..=max_level)
        .map(|l| (l, proxy_between(&states[l as usize], &states[l as usize - 1])))
        .collect()
}

/// Exact pair maps of the linear-Gaussian model at one level, expressed in the
/// given basis. Each pair target is a bivariate Gaussian, so its
/// Knothe–Rosenblatt map is affine.
pub fn exact_level_maps(
    params: &LinearGaussianParams,
    obs: &ObservationRecord,
    level: u32,
    kind: BasisKind,
    order: usize,
) -> Result<MapComposition> {
    if params.initial.std() <= 0.0 {
        return Err(Error::UnsupportedModel("exact maps need a Gaussian initial law".into()));
    }
    let m = 1usize << level;
    let h = 1.0 / m as f64;
    let f = 1.0 + h * params.a;
    let q = h * params.b * params.b;
    let n = m * params.intervals;
    let obs_at = |node: usize| {
        if node.is_multiple_of(m) {
            obs.value_at(node / m, params.obs_interval)
        } else {
            None
        }
    };
    let (mut alpha, mut beta) = (0.0, 1.0);
    let mut maps = Vec::with_capacity(n);
    for t in 0..n {
        let (mx, sx2) = if t == 0 {
            let (m0, s0) = (params.initial.mean(), params.initial.std());
            match obs_at(0) {
                Some(y) => {
                    let (um, us) = update(m0, s0, y, params.tau);
                    (um, us * us)
                }
                None => (m0, s0 * s0),
            }
        } else {
            (0.0, 1.0)
        };
        let mut mean = [mx, f * (alpha + beta * mx)];
        let mut cov = [[sx2, f * beta * sx2], [f * beta * sx2, f * f * beta * beta * sx2 + q]];
        if let Some(y) = obs_at(t + 1) {
            let s = cov[1][1] + params.tau * params.tau;
            let k = [cov[0][1] / s, cov[1][1] / s];
            let innov = y - mean[1];
            mean = [mean[0] + k[0] * innov, mean[1] + k[1] * innov];
            cov = [
                [cov[0][0] - k[0] * cov[1][0], cov[0][1] - k[0] * cov[1][1]],
                [cov[1][0] - k[1] * cov[1][0], cov[1][1] - k[1] * cov[1][1]],
            ];
        }
        let v2 = cov[1][1];
        let c = cov[0][1] / v2;
        let cond = (cov[0][0] - c * c * v2).max(0.0);
        let s2 = v2.sqrt();
        maps.push(TriangularMap::affine(level, t, kind, order, mean[1], s2, mean[0], c * s2, cond.sqrt())?);
        alpha = mean[1];
        beta = s2;
    }
    MapComposition::new(level, params.intervals, params.obs_interval, maps)
}
