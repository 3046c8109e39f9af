//! Multilevel particle filter with maximal-coupling resampling, and the plain
//! bootstrap filter it reduces to on a single level.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretization::{advance_interval, advance_interval_coupled};
use crate::error::{Error, Result};
use crate::models::{ObservationModel, ObservationRecord, SdeModel};
use crate::rng::{Purpose, StreamId};
use crate::stats::sample_variance;

/// Fine and coarse particle clouds with their normalised weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledEnsemble {
    pub fine: Vec<f64>,
    pub coarse: Vec<f64>,
    pub w_fine: Vec<f64>,
    pub w_coarse: Vec<f64>,
    pub level: u32,
    pub time: usize,
}

impl CoupledEnsemble {
    /// Common initial draws from `p_0` for both clouds, uniform weights.
    pub fn initial(model: &SdeModel, level: u32, n: usize, seed: u64) -> Self {
        let fine: Vec<f64> = (0..n as u64)
            .map(|i| {
                let mut rng = StreamId::tagged(seed, Purpose::Mlpf, level, i).rng();
                model.initial_law.sample(&mut rng)
            })
            .collect();
        let w = vec![1.0 / n as f64; n];
        Self {
            coarse: fine.clone(),
            fine,
            w_fine: w.clone(),
            w_coarse: w,
            level,
            time: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.fine.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fine.is_empty()
    }
}

fn particle_stream(seed: u64, level: u32, time: usize, n: usize, i: usize) -> StreamId {
    StreamId::tagged(seed, Purpose::Mlpf, level, (time as u64 + 1) * n as u64 + i as u64)
}

fn resampling_stream(seed: u64, level: u32, time: usize) -> StreamId {
    StreamId::tagged(seed, Purpose::Mlpf, level, u64::MAX - time as u64)
}

/// Advances every pair by one observation interval; on level 0 only the fine
/// cloud moves and the coarse cloud mirrors it. Returns the Euler-step cost.
pub fn propagate_coupled(model: &SdeModel, ens: &mut CoupledEnsemble, seed: u64) -> Result<u64> {
    let (level, time, n) = (ens.level, ens.time, ens.len());
    let moved: Vec<(f64, f64)> = ens
        .fine
        .par_iter()
        .zip(ens.coarse.par_iter())
        .enumerate()
        .map(|(i, (&xf, &xc))| {
            let mut rng = particle_stream(seed, level, time, n, i).rng();
            if level == 0 {
                advance_interval(model, 0, xf, &mut rng).map(|x| (x, x))
            } else {
                advance_interval_coupled(model, level, xf, xc, &mut rng)
            }
        })
        .collect::<Result<_>>()?;
    (ens.fine, ens.coarse) = moved.into_iter().unzip();
    ens.time += 1;
    let m = 1u64 << level;
    Ok(n as u64 * if level == 0 { 1 } else { m + m / 2 })
}

/// Normalised weights from log-weights via log-sum-exp; `None` if every
/// log-weight is `-∞` or NaN.
pub fn normalize_log_weights(logw: &[f64]) -> Option<Vec<f64>> {
    let max = logw.iter().copied().filter(|v| !v.is_nan()).fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let w: Vec<f64> = logw
        .iter()
        .map(|v| if v.is_nan() { 0.0 } else { (v - max).exp() })
        .collect();
    let s: f64 = w.iter().sum();
    Some(w.into_iter().map(|v| v / s).collect())
}

/// Self-normalised likelihood weights of both clouds.
pub fn weight(ens: &mut CoupledEnsemble, y: f64, obs_model: &ObservationModel) -> Result<()> {
    let collapse = || Error::WeightCollapse { level: ens.level, k: ens.time };
    let lf: Vec<f64> = ens.fine.iter().map(|&x| obs_model.log_likelihood(x, y)).collect();
    let lc: Vec<f64> = ens.coarse.iter().map(|&x| obs_model.log_likelihood(x, y)).collect();
    let wf = normalize_log_weights(&lf).ok_or_else(collapse)?;
    let wc = normalize_log_weights(&lc).ok_or_else(collapse)?;
    ens.w_fine = wf;
    ens.w_coarse = wc;
    Ok(())
}

pub fn ess(w: &[f64]) -> f64 {
    1.0 / w.iter().map(|v| v * v).sum::<f64>()
}

/// Outcome of one maximal-coupling resampling.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledIndices {
    pub fine: Vec<usize>,
    pub coarse: Vec<usize>,
    pub rho: f64,
    /// Number of slots that drew a shared index.
    pub shared: usize,
}

fn sampler(weights: &[f64]) -> Result<WeightedIndex<f64>> {
    WeightedIndex::new(weights).map_err(|e| Error::DegenerateResampling(e.to_string()))
}

/// Draws `n` index pairs: with probability `ρ = Σ min(w^f, w^c)` a shared
/// index from `min(w^f, w^c)/ρ`, otherwise independent indices from the two
/// normalised residuals.
pub fn coupled_resample_indices<R: Rng + ?Sized>(
    w_fine: &[f64],
    w_coarse: &[f64],
    n: usize,
    rng: &mut R,
) -> Result<CoupledIndices> {
    if w_fine.len() != w_coarse.len() || w_fine.is_empty() {
        return Err(Error::ContractViolation("weight vectors must be non-empty and equally long".into()));
    }
    let mins: Vec<f64> = w_fine.iter().zip(w_coarse).map(|(a, b)| a.min(*b)).collect();
    let rho: f64 = mins.iter().sum::<f64>().min(1.0);
    let rf: Vec<f64> = w_fine.iter().zip(&mins).map(|(w, m)| (w - m).max(0.0)).collect();
    let rc: Vec<f64> = w_coarse.iter().zip(&mins).map(|(w, m)| (w - m).max(0.0)).collect();
    let shared_dist = if rho > 0.0 { Some(sampler(&mins)?) } else { None };
    let residual_mass = rf.iter().sum::<f64>() > 0.0 && rc.iter().sum::<f64>() > 0.0;
    let residual = if residual_mass { Some((sampler(&rf)?, sampler(&rc)?)) } else { None };
    if shared_dist.is_none() && residual.is_none() {
        return Err(Error::DegenerateResampling("no coupled or residual weight mass".into()));
    }
    let mut out = CoupledIndices {
        fine: Vec::with_capacity(n),
        coarse: Vec::with_capacity(n),
        rho,
        shared: 0,
    };
    for _ in 0..n {
        let u: f64 = rng.random();
        match (&shared_dist, &residual) {
            (Some(d), _) if u < rho || residual.is_none() => {
                let i = d.sample(rng);
                out.fine.push(i);
                out.coarse.push(i);
                out.shared += 1;
            }
            (_, Some((df, dc))) => {
                out.fine.push(df.sample(rng));
                out.coarse.push(dc.sample(rng));
            }
            _ => unreachable!("checked above"),
        }
    }
    Ok(out)
}

/// Resamples both clouds to uniform weights; returns `ρ`.
pub fn coupled_resample<R: Rng + ?Sized>(ens: &mut CoupledEnsemble, rng: &mut R) -> Result<f64> {
    let n = ens.len();
    let idx = coupled_resample_indices(&ens.w_fine, &ens.w_coarse, n, rng)?;
    ens.fine = idx.fine.iter().map(|&i| ens.fine[i]).collect();
    ens.coarse = idx.coarse.iter().map(|&i| ens.coarse[i]).collect();
    ens.w_fine = vec![1.0 / n as f64; n];
    ens.w_coarse = ens.w_fine.clone();
    Ok(idx.rho)
}

/// Per observation time and level: `Σ w^f φ(x^f) − Σ w^c φ(x^c)` (level 0:
/// the plain weighted mean; coarse columns are NaN).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlpfRecord {
    pub level: u32,
    pub k: usize,
    pub increment_estimate: f64,
    pub ess_fine: f64,
    pub ess_coarse: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpfLevelRun {
    pub level: u32,
    pub n: usize,
    pub records: Vec<MlpfRecord>,
    /// Sample variance of `φ(x^f_i) − φ(x^c_i)` over the resampled pairs at
    /// the final time (of `φ(x_i)` on level 0).
    pub pair_variance: f64,
    pub cost: u64,
}

impl MlpfLevelRun {
    pub fn terminal_increment(&self) -> f64 {
        self.records.last().expect("at least one record").increment_estimate
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpfResult {
    pub levels: Vec<MlpfLevelRun>,
    /// Telescoped filter estimate of `φ(x_T)`.
    pub estimate: f64,
    pub cost: u64,
}

/// Filter run at one level (`level = 0`: bootstrap filter).
pub fn run_mlpf_level<F>(
    model: &SdeModel,
    obs_model: &ObservationModel,
    obs: &ObservationRecord,
    level: u32,
    n: usize,
    phi: &F,
    seed: u64,
) -> Result<MlpfLevelRun>
where
    F: Fn(f64) -> f64 + Sync,
{
    if n < 2 {
        return Err(Error::ContractViolation("particle filter needs at least 2 particles".into()));
    }
    let mut ens = CoupledEnsemble::initial(model, level, n, seed);
    let mut records = Vec::with_capacity(model.intervals() + 1);
    let mut cost = 0u64;
    let mut pair_variance = f64::NAN;
    for k in 0..=model.intervals() {
        if k > 0 {
            cost += propagate_coupled(model, &mut ens, seed)?;
        }
        if let Some(y) = obs.value_at(k, model.obs_interval) {
            weight(&mut ens, y, obs_model)?;
        }
        let ef: f64 = ens.w_fine.iter().zip(&ens.fine).map(|(w, x)| w * phi(*x)).sum();
        let ec: f64 = ens.w_coarse.iter().zip(&ens.coarse).map(|(w, x)| w * phi(*x)).sum();
        let (ess_f, ess_c) = (ess(&ens.w_fine), ess(&ens.w_coarse));
        let mut rng = resampling_stream(seed, level, k).rng();
        let rho = coupled_resample(&mut ens, &mut rng)?;
        if k == model.intervals() {
            let d: Vec<f64> = if level == 0 {
                ens.fine.iter().map(|x| phi(*x)).collect()
            } else {
                ens.fine.iter().zip(&ens.coarse).map(|(f, c)| phi(*f) - phi(*c)).collect()
            };
            pair_variance = sample_variance(&d);
        }
        records.push(if level == 0 {
            MlpfRecord {
                level,
                k,
                increment_estimate: ef,
                ess_fine: ess_f,
                ess_coarse: f64::NAN,
                rho: f64::NAN,
            }
        } else {
            MlpfRecord {
                level,
                k,
                increment_estimate: ef - ec,
                ess_fine: ess_f,
                ess_coarse: ess_c,
                rho,
            }
        });
    }
    Ok(MlpfLevelRun {
        level,
        n,
        records,
        pair_variance,
        cost,
    })
}

/// Runs levels `0..n_per_level.len()` independently and telescopes the
/// terminal estimates.
pub fn run_mlpf<F>(
    model: &SdeModel,
    obs_model: &ObservationModel,
    obs: &ObservationRecord,
    n_per_level: &[usize],
    phi: &F,
    seed: u64,
) -> Result<MlpfResult>
where
    F: Fn(f64) -> f64 + Sync,
{
    if n_per_level.is_empty() {
        return Err(Error::ContractViolation("run_mlpf needs at least one level".into()));
    }
    let levels = n_per_level
        .par_iter()
        .enumerate()
        .map(|(l, &n)| run_mlpf_level(model, obs_model, obs, l as u32, n, phi, seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(MlpfResult {
        estimate: levels.iter().map(|r| r.terminal_increment()).sum(),
        cost: levels.iter().map(|r| r.cost).sum(),
        levels,
    })
}

/// Bootstrap particle filter at one level: weighted filter means at each
/// observation time.
pub fn bootstrap_pf<F>(
    model: &SdeModel,
    obs_model: &ObservationModel,
    obs: &ObservationRecord,
    level: u32,
    n: usize,
    phi: &F,
    seed: u64,
) -> Result<Vec<f64>>
where
    F: Fn(f64) -> f64 + Sync,
{
    if n < 2 {
        return Err(Error::ContractViolation("particle filter needs at least 2 particles".into()));
    }
    let mut xs: Vec<f64> = (0..n as u64)
        .map(|i| model.initial_law.sample(&mut StreamId::tagged(seed, Purpose::Mlpf, level, i).rng()))
        .collect();
    let mut out = Vec::with_capacity(model.intervals() + 1);
    for k in 0..=model.intervals() {
        if k > 0 {
            xs = xs
                .par_iter()
                .enumerate()
                .map(|(i, &x)| {
                    let mut rng = particle_stream(seed, level, k - 1, n, i).rng();
                    advance_interval(model, level, x, &mut rng)
                })
                .collect::<Result<_>>()?;
        }
        let w = match obs.value_at(k, model.obs_interval) {
            Some(y) => {
                let lw: Vec<f64> = xs.iter().map(|&x| obs_model.log_likelihood(x, y)).collect();
                normalize_log_weights(&lw).ok_or(Error::WeightCollapse { level, k })?
            }
            None => vec![1.0 / n as f64; n],
        };
        out.push(w.iter().zip(&xs).map(|(w, x)| w * phi(*x)).sum());
        let dist = sampler(&w)?;
        let mut rng = resampling_stream(seed, level, k).rng();
        // Same uniform consumption as the coupled resampler with identical weights.
        xs = (0..n)
            .map(|_| {
                let _: f64 = rng.random();
                xs[dist.sample(&mut rng)]
            })
            .collect();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kalman::{filter_path, LinearGaussianParams};
    use crate::models::{make_linear_gaussian, Drift};
    use crate::stats::{chi_square_gof, ks_two_sample, mean};

    fn test_obs() -> ObservationRecord {
        ObservationRecord {
            times: vec![0.0, 1.0, 2.0, 3.0, 4.0],
            values: vec![0.3, -0.4, 0.8, 0.1, -0.6],
        }
    }

    #[test]
    fn weight_examples() {
        let w = normalize_log_weights(&[1.0, 2.0]).unwrap();
        let e = std::f64::consts::E;
        assert!((w[0] - 1.0 / (1.0 + e)).abs() < 1e-15 && (w[1] - e / (1.0 + e)).abs() < 1e-15);
        let shifted = normalize_log_weights(&[1001.0, 1002.0]).unwrap();
        assert!((shifted[0] - w[0]).abs() < 1e-15);
        assert_eq!(normalize_log_weights(&[3.0, 3.0, 3.0]).unwrap(), vec![1.0 / 3.0; 3]);
        assert!(normalize_log_weights(&[f64::NEG_INFINITY; 2]).is_none());
        let (m, _) = make_linear_gaussian();
        let mut ens = CoupledEnsemble::initial(&m, 1, 4, 0);
        let om = ObservationModel::LinearGaussian { tau: 1e-200 };
        ens.fine = vec![1e300; 4];
        assert!(matches!(weight(&mut ens, 0.0, &om), Err(Error::WeightCollapse { level: 1, k: 0 })));
    }

    #[test]
    fn identical_and_disjoint_weights() {
        let mut rng = StreamId::new(1, 0, 0).rng();
        let w = [0.2, 0.5, 0.3];
        let idx = coupled_resample_indices(&w, &w, 1000, &mut rng).unwrap();
        assert_eq!(idx.fine, idx.coarse);
        assert!((idx.rho - 1.0).abs() < 1e-15);
        let idx = coupled_resample_indices(&[1.0, 0.0], &[0.0, 1.0], 100, &mut rng).unwrap();
        assert_eq!(idx.rho, 0.0);
        assert!(idx.fine.iter().all(|&i| i == 0) && idx.coarse.iter().all(|&i| i == 1));
        assert!(coupled_resample_indices(&[0.0, 0.0], &[0.0, 0.0], 1, &mut rng).is_err());
    }

    #[test]
    fn maximal_coupling_marginals() {
        let mut rng = StreamId::new(2, 0, 0).rng();
        let (wf, wc) = ([0.7, 0.3], [0.4, 0.6]);
        let n = 100_000;
        let idx = coupled_resample_indices(&wf, &wc, n, &mut rng).unwrap();
        let count = |v: &[usize]| [v.iter().filter(|&&i| i == 0).count() as u64, v.iter().filter(|&&i| i == 1).count() as u64];
        assert!(chi_square_gof(&count(&idx.fine), &wf) > 0.01);
        assert!(chi_square_gof(&count(&idx.coarse), &wc) > 0.01);
        let rho = 0.7;
        let se = (rho * (1.0 - rho) / n as f64).sqrt();
        assert!((idx.shared as f64 / n as f64 - rho).abs() < 3.0 * se);
    }

    #[test]
    fn brownian_pairs_coincide() {
        let (mut m, _) = make_linear_gaussian();
        m.drift = Drift::Linear { slope: 0.0 };
        let mut ens = CoupledEnsemble::initial(&m, 3, 50, 4);
        let cost = propagate_coupled(&m, &mut ens, 4).unwrap();
        assert_eq!(ens.len(), 50);
        assert_eq!(cost, 50 * (8 + 4));
        for (f, c) in ens.fine.iter().zip(&ens.coarse) {
            assert!((f - c).abs() < 1e-12);
        }
    }

    #[test]
    fn fine_cloud_has_the_level_predictive_law() {
        let (m, _) = make_linear_gaussian();
        let mut ens = CoupledEnsemble::initial(&m, 2, 10_000, 8);
        propagate_coupled(&m, &mut ens, 8).unwrap();
        let mut rng = StreamId::new(99, 2, 0).rng();
        let indep: Vec<f64> = (0..10_000)
            .map(|_| {
                let x0 = m.initial_law.sample(&mut rng);
                advance_interval(&m, 2, x0, &mut rng).unwrap()
            })
            .collect();
        assert!(ks_two_sample(&ens.fine, &indep).p_value > 0.01);
    }

    #[test]
    fn single_level_is_bootstrap_filter() {
        let (m, om) = make_linear_gaussian();
        let obs = test_obs();
        let phi = |x: f64| x;
        let r = run_mlpf(&m, &om, &obs, &[500], &phi, 5).unwrap();
        let pf = bootstrap_pf(&m, &om, &obs, 0, 500, &phi, 5).unwrap();
        assert_eq!(r.estimate, *pf.last().unwrap());
        assert!(r.levels[0].records.iter().all(|rec| rec.rho.is_nan()));
    }

    #[test]
    fn telescoped_filter_mean_matches_kalman() {
        let (m, om) = make_linear_gaussian();
        let obs = test_obs();
        let p = LinearGaussianParams::from_models(&m, &om).unwrap();
        let phi = |x: f64| x;
        let mut ests = Vec::new();
        for rep in 0..10 {
            ests.push(run_mlpf(&m, &om, &obs, &[10_000; 4], &phi, 100 + rep).unwrap().estimate);
        }
        let kalman = filter_path(&p, &obs, 3)[4];
        let se = (crate::stats::sample_variance(&ests) / ests.len() as f64).sqrt();
        let allowance = (kalman.upd_mean - filter_path(&p, &obs, 10)[4].upd_mean).abs();
        assert!((mean(&ests) - kalman.upd_mean).abs() < 3.0 * se + allowance + 1e-3, "{} vs {}", mean(&ests), kalman.upd_mean);
    }

    #[test]
    fn one_step_bootstrap_mean_matches_kalman() {
        let (m, om) = make_linear_gaussian();
        let obs = ObservationRecord { times: vec![0.0], values: vec![0.3] };
        let p = LinearGaussianParams::from_models(&m, &om).unwrap();
        let mut one = m.clone();
        one.horizon = 1.0;
        let est = bootstrap_pf(&one, &om, &obs, 2, 100_000, &|x| x, 3).unwrap();
        let k = filter_path(&LinearGaussianParams { intervals: 1, ..p }, &obs, 2);
        // Prediction spread plus the resampling noise of the time-0 posterior.
        let se = ((k[1].pred_std.powi(2) + k[0].upd_std.powi(2)) / 100_000.0).sqrt();
        assert!((est[1] - k[1].pred_mean).abs() < 3.0 * se);
    }
}
