//! Reference smoothing moments for models without a closed form: a
//! forward–backward recursion for the level-`l` Euler chain on a fine spatial
//! grid.

use serde::{Deserialize, Serialize};

use crate::coupled_sampler::Functional;
use crate::error::{Error, Result};
use crate::kalman::{filter_path, smoothed_means, LinearGaussianParams};
use crate::models::{normal_log_density, InitialLaw, ObservationModel, ObservationRecord, SdeModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            lo: -10.0,
            hi: 10.0,
            points: 4001,
        }
    }
}

/// Filter and smoother means at the observation times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingMoments {
    pub level: u32,
    pub filter_means: Vec<f64>,
    pub smoothed_means: Vec<f64>,
}

struct BandedKernel {
    rows: Vec<(usize, Vec<f64>)>,
}

impl BandedKernel {
    fn new(model: &SdeModel, level: u32, xs: &[f64]) -> Result<Self> {
        let h = (-(level as f64)).exp2();
        let dx = xs[1] - xs[0];
        let n = xs.len();
        let rows = xs
            .iter()
            .map(|&x| {
                let m = x + h * model.unit_drift(x).value;
                let s = h.sqrt() * model.unit_diffusion(x).value.abs();
                if !(m.is_finite() && s.is_finite()) {
                    return Err(Error::Numerical(format!("non-finite transition at x = {x}")));
                }
                let pos = ((m - xs[0]) / dx).clamp(0.0, (n - 1) as f64);
                if s < 1.5 * dx {
                    // Under-resolved: split the mass between the two nodes around the mean.
                    let j = (pos.floor() as usize).min(n - 2);
                    let f = pos - j as f64;
                    return Ok((j, vec![1.0 - f, f]));
                }
                let lo = ((m - 8.0 * s - xs[0]) / dx).floor().max(0.0) as usize;
                let hi = (((m + 8.0 * s - xs[0]) / dx).ceil() as usize).min(n - 1);
                let mut w: Vec<f64> = (lo..=hi).map(|j| (-0.5 * ((xs[j] - m) / s).powi(2)).exp()).collect();
                let total: f64 = w.iter().sum();
                if !(total > 0.0) {
                    let j = (pos.round() as usize).min(n - 1);
                    return Ok((j, vec![1.0]));
                }
                w.iter_mut().for_each(|v| *v /= total);
                Ok((lo, w))
            })
            .collect::<Result<_>>()?;
        Ok(Self { rows })
    }

    fn forward(&self, a: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; a.len()];
        for (i, (start, w)) in self.rows.iter().enumerate() {
            let ai = a[i];
            if ai == 0.0 {
                continue;
            }
            for (k, wk) in w.iter().enumerate() {
                out[start + k] += ai * wk;
            }
        }
        out
    }

    fn backward(&self, b: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|(start, w)| w.iter().enumerate().map(|(k, wk)| wk * b[start + k]).sum())
            .collect()
    }
}

fn normalise_sum(v: &mut [f64]) -> Result<()> {
    let s: f64 = v.iter().sum();
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::Numerical("grid density lost all mass".into()));
    }
    v.iter_mut().for_each(|x| *x /= s);
    Ok(())
}

fn normalise_max(v: &mut [f64]) -> Result<()> {
    let m = v.iter().copied().fold(0.0, f64::max);
    if !(m > 0.0 && m.is_finite()) {
        return Err(Error::Numerical("backward message vanished".into()));
    }
    v.iter_mut().for_each(|x| *x /= m);
    Ok(())
}

fn likelihood(obs_model: &ObservationModel, xs: &[f64], y: f64) -> Vec<f64> {
    let l: Vec<f64> = xs.iter().map(|&x| obs_model.log_likelihood(x, y)).collect();
    let m = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    l.iter().map(|v| (v - m).exp()).collect()
}

fn weighted_mean(xs: &[f64], w: &[f64]) -> f64 {
    let s: f64 = w.iter().sum();
    xs.iter().zip(w).map(|(x, w)| x * w).sum::<f64>() / s
}

/// Forward–backward on the grid for the level-`level` Euler chain.
pub fn grid_smoother(
    model: &SdeModel,
    obs_model: &ObservationModel,
    obs: &ObservationRecord,
    level: u32,
    spec: &GridSpec,
) -> Result<SmoothingMoments> {
    if spec.points < 3 || !(spec.hi > spec.lo) {
        return Err(Error::Config("reference grid needs at least 3 points on a proper interval".into()));
    }
    let dx = (spec.hi - spec.lo) / (spec.points - 1) as f64;
    let xs: Vec<f64> = (0..spec.points).map(|i| spec.lo + dx * i as f64).collect();
    let kernel = BandedKernel::new(model, level, &xs)?;
    let steps = 1usize << level;
    let t = model.intervals();
    let lik: Vec<Option<Vec<f64>>> = (0..=t)
        .map(|k| obs.value_at(k, model.obs_interval).map(|y| likelihood(obs_model, &xs, y)))
        .collect();

    let mut alpha: Vec<f64> = match model.initial_law {
        InitialLaw::Gaussian { mean, std } => xs.iter().map(|&x| normal_log_density(x, mean, std * std).exp()).collect(),
        InitialLaw::PointMass { x0 } => {
            let mut v = vec![0.0; xs.len()];
            let j = (((x0 - spec.lo) / dx).round().max(0.0) as usize).min(xs.len() - 1);
            v[j] = 1.0;
            v
        }
    };
    let mut filters = Vec::with_capacity(t + 1);
    for k in 0..=t {
        if k > 0 {
            for _ in 0..steps {
                alpha = kernel.forward(&alpha);
            }
        }
        if let Some(l) = &lik[k] {
            alpha.iter_mut().zip(l).for_each(|(a, l)| *a *= l);
        }
        normalise_sum(&mut alpha)?;
        filters.push(alpha.clone());
    }

    let mut beta = vec![1.0; xs.len()];
    let mut smoothed = vec![0.0; t + 1];
    for k in (0..=t).rev() {
        if k < t {
            if let Some(l) = &lik[k + 1] {
                beta.iter_mut().zip(l).for_each(|(b, l)| *b *= l);
            }
            for _ in 0..steps {
                beta = kernel.backward(&beta);
            }
            normalise_max(&mut beta)?;
        }
        let w: Vec<f64> = filters[k].iter().zip(&beta).map(|(a, b)| a * b).collect();
        smoothed[k] = weighted_mean(&xs, &w);
    }
    Ok(SmoothingMoments {
        level,
        filter_means: filters.iter().map(|f| weighted_mean(&xs, f)).collect(),
        smoothed_means: smoothed,
    })
}

/// Smoothing expectation of a linear functional at the given level: Kalman
/// recursions when the model is linear-Gaussian, the grid smoother otherwise.
pub fn reference_value(
    model: &SdeModel,
    obs_model: &ObservationModel,
    obs: &ObservationRecord,
    functional: &Functional,
    level: u32,
    spec: &GridSpec,
) -> Result<f64> {
    let means = match LinearGaussianParams::from_models(model, obs_model) {
        Ok(p) => {
            let mut s = smoothed_means(&p, obs, level);
            // The filter and smoother agree at T; use the filter value exactly.
            s[p.intervals] = filter_path(&p, obs, level)[p.intervals].upd_mean;
            s
        }
        Err(_) => grid_smoother(model, obs_model, obs, level, spec)?.smoothed_means,
    };
    match functional {
        Functional::TerminalState | Functional::DiscountedSum { .. } => {
            Ok(functional.eval_observations(&means, model.obs_interval))
        }
        Functional::Custom(_) => Err(Error::Config(
            "reference values are available for linear functionals only".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kalman::{filter_path, smoothed_means, LinearGaussianParams};
    use crate::mlpf::bootstrap_pf;
    use crate::models::{make_linear_gaussian, make_nonlinear_diffusion};

    fn test_obs() -> ObservationRecord {
        ObservationRecord {
            times: vec![0.0, 1.0, 2.0, 3.0, 4.0],
            values: vec![0.3, -0.4, 0.8, 0.1, -0.6],
        }
    }

    #[test]
    fn grid_matches_kalman_on_linear_gaussian() {
        let (m, om) = make_linear_gaussian();
        let obs = test_obs();
        let p = LinearGaussianParams::from_models(&m, &om).unwrap();
        let r = grid_smoother(&m, &om, &obs, 4, &GridSpec { lo: -8.0, hi: 8.0, points: 1601 }).unwrap();
        let f = filter_path(&p, &obs, 4);
        let s = smoothed_means(&p, &obs, 4);
        for k in 0..=4 {
            assert!((r.filter_means[k] - f[k].upd_mean).abs() < 1e-6, "filter k={k}");
            assert!((r.smoothed_means[k] - s[k]).abs() < 1e-6, "smoother k={k}");
        }
        assert!((r.smoothed_means[4] - r.filter_means[4]).abs() < 1e-12);
    }

    #[test]
    fn grid_filter_matches_particle_filter_on_nonlinear_model() {
        let (m, om) = make_nonlinear_diffusion();
        let obs = ObservationRecord { times: vec![0.0, 0.5, 1.0, 1.5, 2.0], values: vec![0.2, 0.8, 1.1, 0.7, 1.3] };
        let r = grid_smoother(&m, &om, &obs, 3, &GridSpec { lo: -5.0, hi: 6.0, points: 4401 }).unwrap();
        let n = 100_000;
        let pf = bootstrap_pf(&m, &om, &obs, 3, n, &|x| x, 17).unwrap();
        for k in 0..=4 {
            assert!((pf[k] - r.filter_means[k]).abs() < 5e-3, "k={k}: {} vs {}", pf[k], r.filter_means[k]);
        }
    }

    #[test]
    fn reference_value_for_functionals() {
        let (m, om) = make_linear_gaussian();
        let obs = test_obs();
        let p = LinearGaussianParams::from_models(&m, &om).unwrap();
        let v = reference_value(&m, &om, &obs, &Functional::TerminalState, 5, &GridSpec::default()).unwrap();
        assert_eq!(v, filter_path(&p, &obs, 5)[4].upd_mean);
        let s = smoothed_means(&p, &obs, 5);
        let d = reference_value(&m, &om, &obs, &Functional::DiscountedSum { kappa: 2.0 }, 5, &GridSpec::default()).unwrap();
        let expected: f64 = (0..5).map(|k| (-2.0 * (4 - k) as f64).exp() * s[k]).sum();
        assert!((d - expected).abs() < 1e-14);
    }
}
