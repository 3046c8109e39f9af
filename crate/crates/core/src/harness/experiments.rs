//! Experiment runners behind the command-line subcommands.

use std::ops::Range;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coupled_sampler::{sample_coupled_range, sample_single_range, Functional};
use crate::error::{Error, Result};
use crate::kalman::{exact_level_maps, filter_path, proxy_between, LinearGaussianParams};
use crate::ml_estimator::{allocate, pilot_n1, rate_fit, telescoped_from_stats, LevelStats, MultilevelEstimate, RateFit};
use crate::mlpf::{run_mlpf, run_mlpf_level};
use crate::models::{simulate_truth, ObservationModel, ObservationRecord, SdeModel};
use crate::plot;
use crate::reference::reference_value;
use crate::rng::{mix, Purpose};
use crate::stats::sample_variance;
use crate::transport::{build_level_maps, MapComposition};

use super::config::{ExperimentConfig, MapSource};
use super::{fmt_f64, RunManifest, RunOutput};

/// Model, observations and functional of an experiment.
#[derive(Debug, Clone)]
pub struct Problem {
    pub model: SdeModel,
    pub obs_model: ObservationModel,
    pub obs: ObservationRecord,
    pub functional: Functional,
}

impl Problem {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        let (model, obs_model) = cfg.model.build();
        let obs = match &cfg.observations {
            Some(path) => ObservationRecord::read_csv(path)?,
            None => simulate_truth(&model, &obs_model, cfg.obs_seed)?.1,
        };
        obs.validate(&model)?;
        Ok(Self {
            model,
            obs_model,
            obs,
            functional: cfg.functional.into(),
        })
    }

    /// Smoothing expectation of the functional at the reference level.
    pub fn oracle(&self, cfg: &ExperimentConfig) -> Result<f64> {
        reference_value(
            &self.model,
            &self.obs_model,
            &self.obs,
            &self.functional,
            cfg.reference_level,
            &cfg.reference_grid,
        )
    }
}

/// Map compositions of levels `0..=L` and the wall time spent on each.
#[derive(Debug, Clone)]
pub struct LevelMaps {
    pub maps: Vec<MapComposition>,
    pub build_seconds: Vec<f64>,
}

impl LevelMaps {
    pub fn total_seconds(&self) -> f64 {
        self.build_seconds.iter().sum()
    }
}

pub fn map_file_name(level: u32) -> String {
    format!("maps_level_{level}.json")
}

fn load_level(dir: &Path, level: u32, problem: &Problem) -> Result<MapComposition> {
    let maps = MapComposition::load_json(&dir.join(map_file_name(level)))?;
    if maps.level != level || maps.intervals != problem.model.intervals() {
        return Err(Error::Config(format!(
            "map file for level {level} in {} does not match the model",
            dir.display()
        )));
    }
    Ok(maps)
}

/// Builds (or loads) the maps of levels `0..=cfg.levels`, one level per task.
pub fn build_maps(cfg: &ExperimentConfig, problem: &Problem) -> Result<LevelMaps> {
    let opts = cfg.fit_options();
    let results = (0..=cfg.levels)
        .into_par_iter()
        .map(|l| {
            let start = Instant::now();
            let maps = if let Some(dir) = &cfg.maps_dir {
                load_level(dir, l, problem)?
            } else {
                match cfg.maps {
                    MapSource::Fitted => build_level_maps(&problem.model, &problem.obs_model, &problem.obs, l, &opts)?,
                    MapSource::Exact => {
                        let params = LinearGaussianParams::from_models(&problem.model, &problem.obs_model)
                            .map_err(|_| Error::Config("exact maps need the linear_gaussian model".into()))?;
                        exact_level_maps(&params, &problem.obs, l, cfg.basis, cfg.order)?
                    }
                }
            };
            Ok((maps, start.elapsed().as_secs_f64()))
        })
        .collect::<Result<Vec<_>>>()?;
    let (maps, build_seconds) = results.into_iter().unzip();
    Ok(LevelMaps { maps, build_seconds })
}

/// Euler units per sample at level `l` (per pair for `l ≥ 1`).
pub fn level_cost(maps: &[MapComposition], level: u32) -> u64 {
    let steps = |l: u32| maps[l as usize].grid().n_steps() as u64;
    if level == 0 {
        steps(0)
    } else {
        steps(level) + steps(level - 1)
    }
}

/// Level-`l` term of the telescoping sum for stream indices in `range`:
/// `φ(X⁰)` at level 0, `φ(X^l) − φ(X^{l−})` above; returns values and cost.
pub fn sample_level(
    maps: &[MapComposition],
    level: u32,
    functional: &Functional,
    seed: u64,
    purpose: Purpose,
    range: Range<u64>,
) -> Result<(Vec<f64>, u64)> {
    if level == 0 {
        let d = sample_single_range(&maps[0], functional, seed, purpose, range)?;
        Ok((d.values, d.cost))
    } else {
        let l = level as usize;
        let d = sample_coupled_range(&maps[l], &maps[l - 1], functional, seed, purpose, range)?;
        Ok((d.increments(), d.cost))
    }
}

fn batches(n: u64, batch: u64) -> impl Iterator<Item = Range<u64>> {
    (0..n.div_ceil(batch)).map(move |j| j * batch..((j + 1) * batch).min(n))
}

/// Per-level sample sizes: `N_0` from the config, `N_1` from a pilot run and
/// the rest from the geometric allocation rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub n: Vec<u64>,
    pub pilot_v0: f64,
    pub pilot_v1: f64,
    pub pilot_cost: u64,
}

pub fn pilot_allocation(cfg: &ExperimentConfig, maps: &[MapComposition], functional: &Functional) -> Result<Allocation> {
    let n0 = cfg.n0();
    let levels = (maps.len() - 1) as u32;
    if levels == 0 || n0 == 0 {
        return Ok(Allocation {
            n: vec![n0; maps.len()],
            pilot_v0: f64::NAN,
            pilot_v1: f64::NAN,
            pilot_cost: 0,
        });
    }
    let seed = mix(cfg.seed, Purpose::Pilot as u64);
    let (v0, c0) = sample_level(maps, 0, functional, seed, Purpose::Pilot, 0..cfg.pilot)?;
    let (v1, c1) = sample_level(maps, 1, functional, seed, Purpose::Pilot, 0..cfg.pilot)?;
    let (var0, var1) = (sample_variance(&v0), sample_variance(&v1));
    let n1 = pilot_n1(n0, var0, var1, level_cost(maps, 0) as f64, level_cost(maps, 1) as f64)?;
    let mut n = vec![n0];
    n.extend(allocate(n1, cfg.beta, cfg.zeta, levels));
    Ok(Allocation {
        n,
        pilot_v0: var0,
        pilot_v1: var1,
        pilot_cost: c0 + c1,
    })
}

/// Telescoped estimate with the given per-level sample sizes, drawn in
/// batches.
pub fn multilevel_estimate(
    maps: &[MapComposition],
    n: &[u64],
    functional: &Functional,
    seed: u64,
    batch: u64,
) -> Result<MultilevelEstimate> {
    let mut stats = Vec::with_capacity(n.len());
    for (l, &nl) in n.iter().enumerate() {
        let mut s = LevelStats::new(l as u32);
        for range in batches(nl, batch) {
            let purpose = if l == 0 { Purpose::Single } else { Purpose::Coupled };
            let (values, cost) = sample_level(maps, l as u32, functional, seed, purpose, range)?;
            s.extend(&values, cost);
        }
        stats.push(s);
    }
    telescoped_from_stats(stats)
}

fn setup(cfg: &ExperimentConfig, command: &str) -> Result<(Problem, RunOutput)> {
    cfg.validate()?;
    let problem = Problem::from_config(cfg)?;
    let mut out = RunOutput::create(&cfg.output_dir, command, cfg)?;
    let path = out.path("observations.csv");
    problem.obs.write_csv(&path)?;
    Ok((problem, out))
}

fn maps_phase(cfg: &ExperimentConfig, problem: &Problem, out: &mut RunOutput) -> Result<LevelMaps> {
    let maps = out.phase("maps", || build_maps(cfg, problem))?;
    out.manifest_mut().map_build_seconds = maps.total_seconds();
    Ok(maps)
}

/// `fit-maps`: one map file per level.
pub fn run_fit_maps(cfg: &ExperimentConfig) -> Result<RunManifest> {
    let (problem, mut out) = setup(cfg, "fit-maps")?;
    let maps = maps_phase(cfg, &problem, &mut out)?;
    for m in &maps.maps {
        let path = out.path(&map_file_name(m.level));
        m.save_json(&path)?;
    }
    out.finish()
}

/// `sample`: coupled functional values per level (`phi_coarse` is NaN at
/// level 0).
pub fn run_sample(cfg: &ExperimentConfig) -> Result<RunManifest> {
    let (problem, mut out) = setup(cfg, "sample")?;
    let maps = maps_phase(cfg, &problem, &mut out)?;
    let n = cfg.pairs_per_level;
    let rows = out.phase("sample", || {
        let mut rows = Vec::new();
        let single = sample_single_range(&maps.maps[0], &problem.functional, cfg.seed, Purpose::Single, 0..n)?;
        let mut cost = single.cost;
        for (i, v) in single.values.iter().enumerate() {
            rows.push(vec![i.to_string(), "0".into(), fmt_f64(*v), fmt_f64(f64::NAN)]);
        }
        for l in 1..maps.maps.len() {
            let d = sample_coupled_range(
                &maps.maps[l],
                &maps.maps[l - 1],
                &problem.functional,
                cfg.seed,
                Purpose::Coupled,
                0..n,
            )?;
            cost += d.cost;
            for (i, (f, c)) in d.fine.iter().zip(&d.coarse).enumerate() {
                rows.push(vec![i.to_string(), l.to_string(), fmt_f64(*f), fmt_f64(*c)]);
            }
        }
        Ok((rows, cost))
    })?;
    out.manifest_mut().cost_units = rows.1;
    out.write_csv("samples.csv", &["pair_id", "level", "phi_fine", "phi_coarse"], &rows.0)?;
    out.finish()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub level: u32,
    #[serde(rename = "N")]
    pub n: u64,
    pub var: f64,
    pub cost: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub value: f64,
    pub per_level: Vec<LevelSummary>,
    pub total_variance: f64,
    pub total_cost: u64,
}

impl From<&MultilevelEstimate> for EstimateReport {
    fn from(e: &MultilevelEstimate) -> Self {
        Self {
            value: e.value,
            per_level: e
                .per_level
                .iter()
                .map(|s| LevelSummary {
                    level: s.level,
                    n: s.n_samples,
                    var: s.variance_estimate(),
                    cost: s.cost_units,
                })
                .collect(),
            total_variance: e.total_variance,
            total_cost: e.total_cost,
        }
    }
}

/// `estimate`: pilot allocation followed by the telescoped estimate.
pub fn run_estimate(cfg: &ExperimentConfig) -> Result<(EstimateReport, RunManifest)> {
    if cfg.n0() == 0 {
        return Err(Error::Config("estimate needs n0_batches > 0".into()));
    }
    let (problem, mut out) = setup(cfg, "estimate")?;
    let maps = maps_phase(cfg, &problem, &mut out)?;
    let alloc = out.phase("pilot", || pilot_allocation(cfg, &maps.maps, &problem.functional))?;
    let est = out.phase("estimate", || {
        multilevel_estimate(&maps.maps, &alloc.n, &problem.functional, cfg.seed, cfg.batch_size)
    })?;
    let report = EstimateReport::from(&est);
    out.manifest_mut().cost_units = est.total_cost + alloc.pilot_cost;
    out.write_json("estimate.json", &report)?;
    Ok((report, out.finish()?))
}

/// `oracle`: Kalman moments per level with the proxy against level `l − 1`.
pub fn run_oracle(cfg: &ExperimentConfig) -> Result<RunManifest> {
    let (problem, mut out) = setup(cfg, "oracle")?;
    let params = LinearGaussianParams::from_models(&problem.model, &problem.obs_model)
        .map_err(|_| Error::Config("the Kalman oracle needs the linear_gaussian model".into()))?;
    let paths: Vec<_> = (0..=cfg.levels).map(|l| filter_path(&params, &problem.obs, l)).collect();
    let mut rows = Vec::new();
    for (l, path) in paths.iter().enumerate() {
        for (k, s) in path.iter().enumerate() {
            let proxy = if l == 0 { f64::NAN } else { proxy_between(s, &paths[l - 1][k]) };
            rows.push(vec![
                l.to_string(),
                k.to_string(),
                fmt_f64(s.pred_mean),
                fmt_f64(s.pred_std),
                fmt_f64(s.upd_mean),
                fmt_f64(s.upd_std),
                fmt_f64(proxy),
            ]);
        }
    }
    out.write_csv(
        "oracle.csv",
        &["level", "k", "pred_mean", "pred_std", "upd_mean", "upd_std", "proxy"],
        &rows,
    )?;
    out.finish()
}

/// `mlpf`: coupled-resampling filter with `mlpf_particles` at every level,
/// for `φ(x) = x`.
pub fn run_mlpf_cmd(cfg: &ExperimentConfig) -> Result<RunManifest> {
    let (problem, mut out) = setup(cfg, "mlpf")?;
    let n = vec![cfg.mlpf_particles as usize; cfg.levels as usize + 1];
    let seed = mix(cfg.seed, Purpose::Mlpf as u64);
    let res = out.phase("mlpf", || {
        run_mlpf(&problem.model, &problem.obs_model, &problem.obs, &n, &|x| x, seed)
    })?;
    let mut rows = Vec::new();
    for run in &res.levels {
        for r in &run.records {
            rows.push(vec![
                r.level.to_string(),
                r.k.to_string(),
                fmt_f64(r.increment_estimate),
                fmt_f64(r.ess_fine),
                fmt_f64(r.ess_coarse),
                fmt_f64(r.rho),
            ]);
        }
    }
    out.manifest_mut().cost_units = res.cost;
    out.write_csv(
        "mlpf.csv",
        &["level", "k", "increment_estimate", "ess_fine", "ess_coarse", "rho"],
        &rows,
    )?;
    out.write_json(
        "mlpf_estimate.json",
        &serde_json::json!({ "estimate": res.estimate, "cost": res.cost }),
    )?;
    out.finish()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub level: u32,
    pub h: f64,
    pub variance: f64,
    pub cost_units: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatesOutput {
    pub rows: Vec<RateRow>,
    /// Least-squares `c` in `V_l ≈ c·h_l²`.
    pub quadratic_coefficient: f64,
    /// Least-squares `a` in `C_l ≈ a/h_l`.
    pub inverse_coefficient: f64,
    /// Log-log fits; absent below three levels.
    pub variance_fit: Option<RateFit>,
    pub cost_fit: Option<RateFit>,
}

/// Coupled increment variance and per-pair cost for `l = 1..=L`.
pub fn rates_from_maps(
    maps: &[MapComposition],
    functional: &Functional,
    pairs: u64,
    seed: u64,
) -> Result<(RatesOutput, u64)> {
    let mut rows = Vec::new();
    let mut spent = 0;
    for l in 1..maps.len() as u32 {
        let (inc, cost) = sample_level(maps, l, functional, seed, Purpose::Coupled, 0..pairs)?;
        spent += cost;
        rows.push(RateRow {
            level: l,
            h: (-(l as f64)).exp2(),
            variance: sample_variance(&inc),
            cost_units: level_cost(maps, l),
        });
    }
    let h: Vec<f64> = rows.iter().map(|r| r.h).collect();
    let v: Vec<f64> = rows.iter().map(|r| r.variance).collect();
    let c: Vec<f64> = rows.iter().map(|r| r.cost_units as f64).collect();
    let quadratic_coefficient =
        h.iter().zip(&v).map(|(h, v)| v * h * h).sum::<f64>() / h.iter().map(|h| h.powi(4)).sum::<f64>();
    let inverse_coefficient =
        h.iter().zip(&c).map(|(h, c)| c / h).sum::<f64>() / h.iter().map(|h| h.powi(-2)).sum::<f64>();
    Ok((
        RatesOutput {
            quadratic_coefficient,
            inverse_coefficient,
            variance_fit: rate_fit(&h, &v).ok(),
            cost_fit: rate_fit(&h, &c).ok(),
            rows,
        },
        spent,
    ))
}

pub fn run_rates(cfg: &ExperimentConfig) -> Result<(RatesOutput, RunManifest)> {
    if cfg.levels == 0 {
        return Err(Error::Config("rates need levels ≥ 1".into()));
    }
    let (problem, mut out) = setup(cfg, "rates")?;
    let maps = maps_phase(cfg, &problem, &mut out)?;
    let (rates, spent) = out.phase("sample", || {
        rates_from_maps(&maps.maps, &problem.functional, cfg.pairs_per_level, cfg.seed)
    })?;
    let rows: Vec<Vec<String>> = rates
        .rows
        .iter()
        .map(|r| {
            vec![
                r.level.to_string(),
                fmt_f64(r.h),
                fmt_f64(r.variance),
                r.cost_units.to_string(),
                fmt_f64(rates.quadratic_coefficient * r.h * r.h),
                fmt_f64(rates.inverse_coefficient / r.h),
            ]
        })
        .collect();
    out.manifest_mut().cost_units = spent;
    out.write_csv(
        "rates.csv",
        &["level", "h", "variance", "cost_units", "variance_fit", "cost_fit"],
        &rows,
    )?;
    out.write_json("rates_fit.json", &rates)?;
    Ok((rates, out.finish()?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseRow {
    pub round: usize,
    /// Euler units spent by either strategy after this round.
    pub cost: u64,
    pub mse_ml: f64,
    pub mse_highest: f64,
    /// Mean wall time including map construction (combined-cost view).
    pub ml_seconds: f64,
    pub highest_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlVsHighestOutput {
    pub oracle: f64,
    pub allocation: Allocation,
    pub rows: Vec<MseRow>,
    pub map_build_seconds: Vec<f64>,
    /// Pilot plus all replicate sampling, both strategies.
    pub cost_units: u64,
}

impl MlVsHighestOutput {
    pub fn final_row(&self) -> Option<&MseRow> {
        self.rows.last()
    }
}

struct ReplicateCurve {
    cost: Vec<u64>,
    err_ml: Vec<f64>,
    err_highest: Vec<f64>,
    ml_seconds: Vec<f64>,
    highest_seconds: Vec<f64>,
    spent: u64,
}

/// Round-robin sweep over the levels in batches; after each round the
/// highest-level estimator is topped up to the same cost.
fn replicate_curve(
    maps: &[MapComposition],
    alloc: &[u64],
    functional: &Functional,
    seed: u64,
    batch: u64,
    oracle: f64,
) -> Result<ReplicateCurve> {
    let top = maps.len() - 1;
    let unit_high = maps[top].grid().n_steps() as u64;
    let rounds = alloc.iter().map(|n| n.div_ceil(batch)).max().unwrap_or(0);
    let mut stats: Vec<LevelStats> = (0..maps.len()).map(|l| LevelStats::new(l as u32)).collect();
    let mut high = LevelStats::new(top as u32);
    let mut curve = ReplicateCurve {
        cost: Vec::new(),
        err_ml: Vec::new(),
        err_highest: Vec::new(),
        ml_seconds: Vec::new(),
        highest_seconds: Vec::new(),
        spent: 0,
    };
    let (mut ml_time, mut high_time) = (0.0, 0.0);
    for j in 0..rounds {
        let start = Instant::now();
        for (l, &nl) in alloc.iter().enumerate() {
            let range = j * batch..((j + 1) * batch).min(nl);
            if range.is_empty() {
                continue;
            }
            let purpose = if l == 0 { Purpose::Single } else { Purpose::Coupled };
            let (values, cost) = sample_level(maps, l as u32, functional, seed, purpose, range)?;
            stats[l].extend(&values, cost);
        }
        ml_time += start.elapsed().as_secs_f64();
        let cost: u64 = stats.iter().map(|s| s.cost_units).sum();
        let start = Instant::now();
        let target = cost / unit_high;
        if target > high.n_samples {
            let d = sample_single_range(&maps[top], functional, seed, Purpose::Highest, high.n_samples..target)?;
            high.extend(&d.values, d.cost);
        }
        high_time += start.elapsed().as_secs_f64();
        let ml: f64 = stats.iter().filter(|s| s.n_samples > 0).map(|s| s.mean()).sum();
        curve.cost.push(cost);
        curve.err_ml.push((ml - oracle).powi(2));
        curve.err_highest.push(if high.n_samples > 0 {
            (high.mean() - oracle).powi(2)
        } else {
            f64::NAN
        });
        curve.ml_seconds.push(ml_time);
        curve.highest_seconds.push(high_time);
    }
    curve.spent = stats.iter().map(|s| s.cost_units).sum::<u64>() + high.cost_units;
    Ok(curve)
}

/// Multilevel versus highest-level estimation at matched Euler cost, with
/// squared errors averaged over replicates.
pub fn ml_vs_highest(cfg: &ExperimentConfig, problem: &Problem, maps: &LevelMaps) -> Result<MlVsHighestOutput> {
    let oracle = problem.oracle(cfg)?;
    let allocation = pilot_allocation(cfg, &maps.maps, &problem.functional)?;
    let curves = (0..cfg.replicates)
        .map(|r| {
            replicate_curve(
                &maps.maps,
                &allocation.n,
                &problem.functional,
                replicate_seed(cfg.seed, r),
                cfg.batch_size,
                oracle,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let reps = cfg.replicates as f64;
    let rounds = curves.first().map_or(0, |c| c.cost.len());
    let build_all = maps.total_seconds();
    let build_top = *maps.build_seconds.last().expect("at least one level");
    let rows = (0..rounds)
        .map(|j| MseRow {
            round: j + 1,
            cost: curves[0].cost[j],
            mse_ml: curves.iter().map(|c| c.err_ml[j]).sum::<f64>() / reps,
            mse_highest: curves.iter().map(|c| c.err_highest[j]).sum::<f64>() / reps,
            ml_seconds: build_all + curves.iter().map(|c| c.ml_seconds[j]).sum::<f64>() / reps,
            highest_seconds: build_top + curves.iter().map(|c| c.highest_seconds[j]).sum::<f64>() / reps,
        })
        .collect();
    let cost_units = allocation.pilot_cost + curves.iter().map(|c| c.spent).sum::<u64>();
    Ok(MlVsHighestOutput {
        oracle,
        cost_units,
        allocation,
        rows,
        map_build_seconds: maps.build_seconds.clone(),
    })
}

pub fn replicate_seed(seed: u64, replicate: usize) -> u64 {
    mix(seed, 0x5eed_0000 + replicate as u64)
}

pub fn run_ml_vs_highest(cfg: &ExperimentConfig) -> Result<(MlVsHighestOutput, RunManifest)> {
    let (problem, mut out) = setup(cfg, "ml-vs-highest")?;
    let maps = maps_phase(cfg, &problem, &mut out)?;
    let res = out.phase("sweep", || ml_vs_highest(cfg, &problem, &maps))?;
    let mut header = vec!["round", "cost", "mse_ml", "mse_highest"];
    if cfg.combined_cost {
        header.extend(["ml_seconds", "highest_seconds"]);
    }
    let rows: Vec<Vec<String>> = res
        .rows
        .iter()
        .map(|r| {
            let mut row = vec![r.round.to_string(), r.cost.to_string(), fmt_f64(r.mse_ml), fmt_f64(r.mse_highest)];
            if cfg.combined_cost {
                row.extend([fmt_f64(r.ml_seconds), fmt_f64(r.highest_seconds)]);
            }
            row
        })
        .collect();
    let m = out.manifest_mut();
    m.seeds = (0..cfg.replicates).map(|r| replicate_seed(cfg.seed, r)).collect();
    m.cost_units = res.cost_units;
    out.write_csv("ml_vs_highest.csv", &header, &rows)?;
    out.write_json(
        "ml_vs_highest_summary.json",
        &serde_json::json!({
            "oracle": res.oracle,
            "allocation": res.allocation.n,
            "pilot_v0": res.allocation.pilot_v0,
            "pilot_v1": res.allocation.pilot_v1,
            "final": res.final_row().map(|r| serde_json::json!({
                "round": r.round,
                "cost": r.cost,
                "mse_ml": r.mse_ml,
                "mse_highest": r.mse_highest,
            })),
        }),
    )?;
    Ok((res, out.finish()?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub level: u32,
    pub h: f64,
    pub transport_variance: f64,
    pub mlpf_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareOutput {
    pub rows: Vec<CompareRow>,
    pub transport_fit: Option<RateFit>,
    pub mlpf_fit: Option<RateFit>,
}

/// Increment variances of `φ(x_T) = x_T` for transport couplings and the
/// coupled-resampling filter at matched sample sizes, levels `1..=L` (level 0
/// alone for a single-level config).
pub fn mlpf_compare(cfg: &ExperimentConfig, problem: &Problem, maps: &LevelMaps) -> Result<(CompareOutput, u64)> {
    let n = cfg.pairs_per_level;
    let phi = Functional::TerminalState;
    let levels: Vec<u32> = if cfg.levels == 0 { vec![0] } else { (1..=cfg.levels).collect() };
    let mut rows = Vec::new();
    let mut spent = 0;
    let mlpf_seed = mix(cfg.seed, Purpose::Mlpf as u64);
    for &l in &levels {
        let (inc, cost) = sample_level(&maps.maps, l, &phi, cfg.seed, Purpose::Coupled, 0..n)?;
        let pf = run_mlpf_level(&problem.model, &problem.obs_model, &problem.obs, l, n as usize, &|x| x, mlpf_seed)?;
        spent += cost + pf.cost;
        rows.push(CompareRow {
            level: l,
            h: (-(l as f64)).exp2(),
            transport_variance: sample_variance(&inc),
            mlpf_variance: pf.pair_variance,
        });
    }
    let h: Vec<f64> = rows.iter().map(|r| r.h).collect();
    let tv: Vec<f64> = rows.iter().map(|r| r.transport_variance).collect();
    let mv: Vec<f64> = rows.iter().map(|r| r.mlpf_variance).collect();
    Ok((
        CompareOutput {
            transport_fit: rate_fit(&h, &tv).ok(),
            mlpf_fit: rate_fit(&h, &mv).ok(),
            rows,
        },
        spent,
    ))
}

pub fn run_mlpf_compare(cfg: &ExperimentConfig) -> Result<(CompareOutput, RunManifest)> {
    let (problem, mut out) = setup(cfg, "mlpf-compare")?;
    let maps = maps_phase(cfg, &problem, &mut out)?;
    let (res, spent) = out.phase("compare", || mlpf_compare(cfg, &problem, &maps))?;
    let rows: Vec<Vec<String>> = res
        .rows
        .iter()
        .map(|r| {
            vec![
                r.level.to_string(),
                fmt_f64(r.h),
                fmt_f64(r.transport_variance),
                fmt_f64(r.mlpf_variance),
            ]
        })
        .collect();
    out.manifest_mut().cost_units = spent;
    out.write_csv(
        "mlpf_compare.csv",
        &["level", "h", "transport_variance", "mlpf_variance"],
        &rows,
    )?;
    out.write_json("mlpf_compare_fit.json", &res)?;
    Ok((res, out.finish()?))
}

/// `plot`: SVG charts for the given CSV files, or for every known CSV in the
/// output directory.
pub fn run_plot(cfg: &ExperimentConfig, inputs: &[PathBuf]) -> Result<RunManifest> {
    let mut out = RunOutput::create(&cfg.output_dir, "plot", cfg)?;
    let inputs: Vec<PathBuf> = if inputs.is_empty() {
        plot::KNOWN_TABLES
            .iter()
            .map(|name| cfg.output_dir.join(name))
            .filter(|p| p.exists())
            .collect()
    } else {
        inputs.to_vec()
    };
    for input in &inputs {
        let svg = plot::plot_csv(input, cfg.plot_skip)?;
        let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("plot");
        out.write_text(&format!("{stem}.svg"), &svg)?;
    }
    out.finish()
}
