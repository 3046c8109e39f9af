//! Single-level and coupled cross-level sampling through map compositions.
//!
//! A coupled pair uses one standard-normal draw `z` on the fine grid. The fine
//! sample is `G^l(z)`; the coarse sample is `G^{l-1}` applied to the
//! even-indexed entries of `z`.

use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretization::LevelGrid;
use crate::error::{Error, Result};
use crate::rng::{Purpose, StreamId};
use crate::stats::{mean, sample_variance};
use crate::transport::MapComposition;

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingSample {
    pub level: u32,
    pub grid: LevelGrid,
    pub values: Vec<f64>,
}

impl SmoothingSample {
    pub fn new(grid: LevelGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ContractViolation(format!(
                "level-{} sample needs {} values, got {}",
                grid.level,
                grid.len(),
                values.len()
            )));
        }
        Ok(Self { level: grid.level, grid, values })
    }

    /// Values at the observation times `0, Δ, …, T`.
    pub fn observation_values(&self) -> Vec<f64> {
        (0..=self.grid.intervals).map(|k| self.values[self.grid.obs_node(k)]).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledSamplePair {
    pub fine: SmoothingSample,
    pub coarse: SmoothingSample,
    pub shared_seed: StreamId,
}

/// Configuration form of a functional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FunctionalSpec {
    TerminalState,
    DiscountedSum { kappa: f64 },
}

impl FunctionalSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            FunctionalSpec::DiscountedSum { kappa } if !(kappa > 0.0) => {
                Err(Error::Config("discount rate kappa must be positive".into()))
            }
            _ => Ok(()),
        }
    }
}

/// User functional of observation-time values and the observation interval.
pub type CustomFn = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;

/// Functional of the observation-time coordinates `(x_0, x_Δ, …, x_T)`.
#[derive(Clone)]
pub enum Functional {
    TerminalState,
    /// `Σ_k e^{-κ(T - t_k)} x_{t_k}` over observation times `t_k`.
    DiscountedSum { kappa: f64 },
    /// Receives the observation-time values and the observation spacing.
    Custom(CustomFn),
}

impl fmt::Debug for Functional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Functional::TerminalState => f.write_str("TerminalState"),
            Functional::DiscountedSum { kappa } => write!(f, "DiscountedSum {{ kappa: {kappa} }}"),
            Functional::Custom(_) => f.write_str("Custom"),
        }
    }
}

impl From<FunctionalSpec> for Functional {
    fn from(s: FunctionalSpec) -> Self {
        match s {
            FunctionalSpec::TerminalState => Functional::TerminalState,
            FunctionalSpec::DiscountedSum { kappa } => Functional::DiscountedSum { kappa },
        }
    }
}

impl Functional {
    /// Evaluates on observation-time values spaced `obs_interval` apart.
    pub fn eval_observations(&self, obs_values: &[f64], obs_interval: f64) -> f64 {
        match self {
            Functional::TerminalState => *obs_values.last().expect("non-empty path"),
            Functional::DiscountedSum { kappa } => {
                let last = obs_values.len() - 1;
                obs_values
                    .iter()
                    .enumerate()
                    .map(|(k, x)| (-kappa * (last - k) as f64 * obs_interval).exp() * x)
                    .sum()
            }
            Functional::Custom(f) => f(obs_values, obs_interval),
        }
    }

    /// Evaluates directly on a full grid path of the given level.
    pub fn eval_path(&self, grid: &LevelGrid, values: &[f64]) -> f64 {
        match self {
            Functional::TerminalState => values[grid.n_steps()],
            _ => {
                let obs: Vec<f64> = (0..=grid.intervals).map(|k| values[grid.obs_node(k)]).collect();
                self.eval_observations(&obs, grid.obs_interval)
            }
        }
    }
}

pub fn eval_functional(f: &Functional, sample: &SmoothingSample) -> f64 {
    f.eval_path(&sample.grid, &sample.values)
}

/// Keeps the even-indexed coordinates `z_0, z_2, …, z_{M_l T}`.
pub fn thin_base(z: &[f64]) -> Result<Vec<f64>> {
    if z.len() < 3 || z.len().is_multiple_of(2) {
        return Err(Error::ContractViolation(format!(
            "thinning needs an odd number of at least 3 coordinates, got {}",
            z.len()
        )));
    }
    Ok(z.iter().step_by(2).copied().collect())
}

fn standard_normals(stream: StreamId, n: usize) -> Vec<f64> {
    let mut rng = stream.rng();
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// One sample `G^l(z)` with `z` drawn from `stream`.
pub fn draw_single(maps: &MapComposition, stream: StreamId) -> Result<SmoothingSample> {
    let mut x = standard_normals(stream, maps.len());
    maps.apply_in_place(&mut x)?;
    SmoothingSample::new(maps.grid(), x)
}

pub fn draw_coupled(fine: &MapComposition, coarse: &MapComposition, stream: StreamId) -> Result<CoupledSamplePair> {
    check_levels(fine, coarse)?;
    let mut zf = standard_normals(stream, fine.len());
    let mut zc = thin_base(&zf)?;
    fine.apply_in_place(&mut zf)?;
    coarse.apply_in_place(&mut zc)?;
    Ok(CoupledSamplePair {
        fine: SmoothingSample::new(fine.grid(), zf)?,
        coarse: SmoothingSample::new(coarse.grid(), zc)?,
        shared_seed: stream,
    })
}

fn check_levels(fine: &MapComposition, coarse: &MapComposition) -> Result<()> {
    if fine.level != coarse.level + 1 || fine.intervals != coarse.intervals {
        return Err(Error::ContractViolation(format!(
            "coupling needs adjacent levels on the same horizon, got {} and {}",
            fine.level, coarse.level
        )));
    }
    Ok(())
}

/// Functional values of i.i.d. samples and the number of map evaluations.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleDraws {
    pub level: u32,
    pub values: Vec<f64>,
    pub cost: u64,
}

impl SingleDraws {
    pub fn estimate(&self) -> f64 {
        mean(&self.values)
    }

    pub fn std_error(&self) -> f64 {
        (sample_variance(&self.values) / self.values.len() as f64).sqrt()
    }
}

/// `φ(G^l(z_i))` for stream indices in `range`; cost is `M_l·T` per sample.
pub fn sample_single_range(
    maps: &MapComposition,
    functional: &Functional,
    seed: u64,
    purpose: Purpose,
    range: Range<u64>,
) -> Result<SingleDraws> {
    let grid = maps.grid();
    let values = range
        .clone()
        .into_par_iter()
        .map(|i| {
            let mut x = standard_normals(StreamId::tagged(seed, purpose, maps.level, i), maps.len());
            maps.apply_in_place(&mut x)?;
            Ok(functional.eval_path(&grid, &x))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(SingleDraws {
        level: maps.level,
        cost: (range.end - range.start) * grid.n_steps() as u64,
        values,
    })
}

/// `n` i.i.d. samples; the estimator is the plain average of `φ`.
pub fn sample_single(maps: &MapComposition, n: usize, seed: u64, functional: &Functional) -> Result<SingleDraws> {
    sample_single_range(maps, functional, seed, Purpose::Single, 0..n as u64)
}

pub fn sample_single_paths(maps: &MapComposition, n: usize, seed: u64) -> Result<Vec<SmoothingSample>> {
    (0..n as u64)
        .into_par_iter()
        .map(|i| draw_single(maps, StreamId::tagged(seed, Purpose::Single, maps.level, i)))
        .collect()
}

/// Paired functional values of coupled samples.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledDraws {
    pub level: u32,
    pub fine: Vec<f64>,
    pub coarse: Vec<f64>,
    pub cost: u64,
}

impl CoupledDraws {
    pub fn increments(&self) -> Vec<f64> {
        self.fine.iter().zip(&self.coarse).map(|(f, c)| f - c).collect()
    }
}

/// Coupled draws for stream indices in `range`; cost is `(M_l + M_{l-1})·T`
/// per pair.
pub fn sample_coupled_range(
    fine: &MapComposition,
    coarse: &MapComposition,
    functional: &Functional,
    seed: u64,
    purpose: Purpose,
    range: Range<u64>,
) -> Result<CoupledDraws> {
    check_levels(fine, coarse)?;
    let (gf, gc) = (fine.grid(), coarse.grid());
    let pairs = range
        .clone()
        .into_par_iter()
        .map(|i| {
            let mut zf = standard_normals(StreamId::tagged(seed, purpose, fine.level, i), fine.len());
            let mut zc = thin_base(&zf)?;
            fine.apply_in_place(&mut zf)?;
            coarse.apply_in_place(&mut zc)?;
            Ok((functional.eval_path(&gf, &zf), functional.eval_path(&gc, &zc)))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    let (f, c) = pairs.into_iter().unzip();
    Ok(CoupledDraws {
        level: fine.level,
        fine: f,
        coarse: c,
        cost: (range.end - range.start) * (gf.n_steps() + gc.n_steps()) as u64,
    })
}

pub fn sample_coupled(
    fine: &MapComposition,
    coarse: &MapComposition,
    n: usize,
    seed: u64,
) -> Result<Vec<CoupledSamplePair>> {
    check_levels(fine, coarse)?;
    (0..n as u64)
        .into_par_iter()
        .map(|i| draw_coupled(fine, coarse, StreamId::tagged(seed, Purpose::Coupled, fine.level, i)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kalman::{exact_filter_map, exact_level_maps, filter_path, proxy_between, LinearGaussianParams};
    use crate::models::{make_linear_gaussian, ObservationRecord};
    use crate::stats::{ks_normal, ks_two_sample, linear_fit};
    use crate::transport::{BasisKind, BasisSpec, TriangularMap};

    fn identity_maps(level: u32, intervals: usize) -> MapComposition {
        let s1 = BasisSpec { kind: BasisKind::HermiteFunction, order: 4, prefix_dim: 0 };
        let s2 = BasisSpec { kind: BasisKind::HermiteFunction, order: 4, prefix_dim: 1 };
        let n = (1usize << level) * intervals;
        MapComposition::new(level, intervals, 1.0, (0..n).map(|t| TriangularMap::identity(level, t, s1, s2)).collect()).unwrap()
    }

    fn test_obs() -> ObservationRecord {
        ObservationRecord {
            times: vec![0.0, 1.0, 2.0, 3.0, 4.0],
            values: vec![0.3, -0.4, 0.8, 0.1, -0.6],
        }
    }

    #[test]
    fn thinning_examples() {
        assert_eq!(thin_base(&[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 3.0]);
        assert_eq!(thin_base(&[0.0, 1.0, 2.0, 3.0, 4.0]).unwrap(), vec![0.0, 2.0, 4.0]);
        assert!(matches!(thin_base(&[1.0, 2.0]), Err(Error::ContractViolation(_))));
        let mut rng = StreamId::new(5, 0, 0).rng();
        let z: Vec<f64> = (0..20_001).map(|_| rng.sample(StandardNormal)).collect();
        assert!(ks_normal(&thin_base(&z).unwrap(), 0.0, 1.0).p_value > 0.01);
    }

    #[test]
    fn functional_examples() {
        let grid = LevelGrid::new(2, 1, 1.0);
        let s = SmoothingSample::new(grid, vec![1.0, 5.0, 5.0, 5.0, 1.7]).unwrap();
        assert_eq!(eval_functional(&Functional::TerminalState, &s), 1.7);
        let s = SmoothingSample::new(grid, vec![1.0, 9.0, 9.0, 9.0, 1.0]).unwrap();
        let d = eval_functional(&Functional::DiscountedSum { kappa: 2.0 }, &s);
        assert!((d - ((-2f64).exp() + 1.0)).abs() < 1e-15);
        let coarse = SmoothingSample::new(LevelGrid::new(0, 1, 1.0), vec![1.0, 1.0]).unwrap();
        assert_eq!(eval_functional(&Functional::DiscountedSum { kappa: 2.0 }, &coarse), d);
        let custom = Functional::Custom(Arc::new(|v: &[f64], _| v.iter().sum()));
        assert_eq!(eval_functional(&custom, &coarse), 2.0);
        assert!(FunctionalSpec::DiscountedSum { kappa: 0.0 }.validate().is_err());
    }

    #[test]
    fn identity_maps_give_standard_normal_terminal_state() {
        let maps = identity_maps(2, 4);
        let n = 20_000;
        let d = sample_single(&maps, n, 1, &Functional::TerminalState).unwrap();
        assert!(d.estimate().abs() < 3.0 / (n as f64).sqrt());
        assert_eq!(d.cost, n as u64 * 16);
        let a = draw_single(&maps, StreamId::new(4, 2, 0)).unwrap();
        let b = draw_single(&maps, StreamId::new(4, 2, 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn coupled_coarse_marginal_matches_single_level() {
        let (m, om) = make_linear_gaussian();
        let p = LinearGaussianParams::from_models(&m, &om).unwrap();
        let obs = test_obs();
        let fine = exact_level_maps(&p, &obs, 2, BasisKind::HermiteFunction, 4).unwrap();
        let coarse = exact_level_maps(&p, &obs, 1, BasisKind::HermiteFunction, 4).unwrap();
        let f = Functional::TerminalState;
        let pairs = sample_coupled_range(&fine, &coarse, &f, 11, Purpose::Coupled, 0..10_000).unwrap();
        let single = sample_single(&coarse, 10_000, 12, &f).unwrap();
        assert!(ks_two_sample(&pairs.coarse, &single.values).p_value > 0.01);
        assert_eq!(pairs.cost, 10_000 * (16 + 8));
        assert!(sample_coupled(&fine, &identity_maps(0, 4), 1, 0).is_err());
        let one = sample_coupled(&fine, &coarse, 2, 3).unwrap();
        assert_eq!(one[0].shared_seed, StreamId::tagged(3, Purpose::Coupled, 2, 0));
        assert_eq!(one[0], draw_coupled(&fine, &coarse, one[0].shared_seed).unwrap());
    }

    #[test]
    fn exact_terminal_coupling_has_second_order_variance() {
        let (m, om) = make_linear_gaussian();
        let p = LinearGaussianParams::from_models(&m, &om).unwrap();
        let obs = test_obs();
        let states: Vec<_> = (1..=8).map(|l| filter_path(&p, &obs, l)[4]).collect();
        let mut rng = StreamId::new(21, 0, 0).rng();
        let z: Vec<f64> = (0..10_000).map(|_| rng.sample(StandardNormal)).collect();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for l in 2..=8usize {
            let (fm, cm) = (exact_filter_map(&states[l - 1]), exact_filter_map(&states[l - 2]));
            let d: Vec<f64> = z.iter().map(|z| fm.apply(*z) - cm.apply(*z)).collect();
            let second_moment = d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64;
            let ratio = second_moment / proxy_between(&states[l - 1], &states[l - 2]);
            assert!((0.5..=2.0).contains(&ratio), "l={l} ratio {ratio}");
            xs.push(-(l as f64));
            ys.push(sample_variance(&d).log2());
        }
        let (slope, _, _) = linear_fit(&xs, &ys);
        assert!((slope - 2.0).abs() <= 0.3, "slope {slope}");
    }
}
