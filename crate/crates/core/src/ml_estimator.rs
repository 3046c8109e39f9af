//! Telescoping multilevel estimator, sample allocation and rate fits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::linear_fit;

/// Running sums of one level's samples (level 0: `φ(X⁰)`, level `l ≥ 1`:
/// `φ(X^l) − φ(X^{l−})`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    pub level: u32,
    pub n_samples: u64,
    pub sum: f64,
    pub sum_sq: f64,
    pub cost_units: u64,
}

impl LevelStats {
    pub fn new(level: u32) -> Self {
        Self {
            level,
            n_samples: 0,
            sum: 0.0,
            sum_sq: 0.0,
            cost_units: 0,
        }
    }

    pub fn from_values(level: u32, values: &[f64], cost_units: u64) -> Self {
        let mut s = Self::new(level);
        s.extend(values, cost_units);
        s
    }

    pub fn extend(&mut self, values: &[f64], cost_units: u64) {
        for v in values {
            self.sum += v;
            self.sum_sq += v * v;
        }
        self.n_samples += values.len() as u64;
        self.cost_units += cost_units;
    }

    pub fn merge(&mut self, other: &LevelStats) -> Result<()> {
        if other.level != self.level {
            return Err(Error::ContractViolation(format!(
                "cannot merge level {} into level {}",
                other.level, self.level
            )));
        }
        self.n_samples += other.n_samples;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
        self.cost_units += other.cost_units;
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        self.sum / self.n_samples as f64
    }

    /// Unbiased sample variance `V_l`; zero below two samples.
    pub fn variance_estimate(&self) -> f64 {
        if self.n_samples < 2 {
            return 0.0;
        }
        let n = self.n_samples as f64;
        ((self.sum_sq - self.sum * self.sum / n) / (n - 1.0)).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultilevelEstimate {
    pub per_level: Vec<LevelStats>,
    pub value: f64,
    /// `Σ_l V_l / N_l`.
    pub total_variance: f64,
    pub total_cost: u64,
    /// `|mean increment at the finest level|` (zero for a single level).
    pub bias_proxy: f64,
}

/// Combines per-level statistics, ordered `0..=L`, into the telescoped sum.
pub fn telescoped_from_stats(per_level: Vec<LevelStats>) -> Result<MultilevelEstimate> {
    if per_level.is_empty() {
        return Err(Error::ContractViolation("no levels to telescope".into()));
    }
    for (l, s) in per_level.iter().enumerate() {
        if s.level as usize != l {
            return Err(Error::ContractViolation(format!("level {l} is labelled {}", s.level)));
        }
        if s.n_samples == 0 {
            return Err(Error::ContractViolation(format!("level {l} has no samples")));
        }
    }
    let value = per_level.iter().map(|s| s.mean()).sum();
    let total_variance = per_level.iter().map(|s| s.variance_estimate() / s.n_samples as f64).sum();
    let total_cost = per_level.iter().map(|s| s.cost_units).sum();
    let bias_proxy = if per_level.len() > 1 {
        per_level.last().expect("non-empty").mean().abs()
    } else {
        0.0
    };
    Ok(MultilevelEstimate {
        per_level,
        value,
        total_variance,
        total_cost,
        bias_proxy,
    })
}

/// Telescoped estimate from level-0 values and per-level increments
/// `φ(X^l) − φ(X^{l−})`; costs are given per level.
pub fn telescoped_estimate(level0: &[f64], increments: &[Vec<f64>], costs: &[u64]) -> Result<MultilevelEstimate> {
    if costs.len() != increments.len() + 1 {
        return Err(Error::ContractViolation("one cost per level expected".into()));
    }
    let mut stats = vec![LevelStats::from_values(0, level0, costs[0])];
    for (i, inc) in increments.iter().enumerate() {
        stats.push(LevelStats::from_values(i as u32 + 1, inc, costs[i + 1]));
    }
    telescoped_from_stats(stats)
}

/// `N_l = max(1, round(N_1·2^{−(β+ζ)(l−1)/2}))` for `l = 1..=L`, rounding
/// half up.
pub fn allocate(n1: u64, beta: f64, zeta: f64, levels: u32) -> Vec<u64> {
    (1..=levels)
        .map(|l| {
            let v = n1 as f64 * (-(beta + zeta) * (l as f64 - 1.0) / 2.0).exp2();
            ((v + 0.5).floor() as u64).max(1)
        })
        .collect()
}

/// `L = ⌈c·(−log₂ ε)/α⌉` with proportionality constant `c`.
pub fn choose_l_with(alpha: f64, epsilon: f64, constant: f64) -> Result<u32> {
    if !(epsilon > 0.0 && epsilon < 1.0) || !(alpha >= 1.0) || !(constant > 0.0) {
        return Err(Error::Config("choose_L needs ε in (0,1), α ≥ 1 and a positive constant".into()));
    }
    let raw = constant * -epsilon.log2() / alpha;
    // Guard against round-off just above an integer.
    Ok((raw - 1e-12).ceil().max(0.0) as u32)
}

pub fn choose_l(alpha: f64, epsilon: f64) -> Result<u32> {
    choose_l_with(alpha, epsilon, 1.0)
}

/// `N_1 = N_0·√(V_1 C_0 / (V_0 C_1))`, the cost-optimal ratio between the
/// first two levels, at least 2.
pub fn pilot_n1(n0: u64, v0: f64, v1: f64, c0: f64, c1: f64) -> Result<u64> {
    if !(v0 > 0.0 && v1 >= 0.0 && c0 > 0.0 && c1 > 0.0) {
        return Err(Error::Numerical("pilot variances or costs are not positive".into()));
    }
    Ok(((n0 as f64 * (v1 * c0 / (v0 * c1)).sqrt()).round() as u64).max(2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Least squares of `log₂ values` against `log₂ h`.
pub fn rate_fit(h: &[f64], values: &[f64]) -> Result<RateFit> {
    if h.len() != values.len() || h.len() < 3 {
        return Err(Error::ContractViolation("rate fit needs at least 3 matched points".into()));
    }
    if h.iter().chain(values).any(|v| !(*v > 0.0)) {
        return Err(Error::ContractViolation("rate fit needs positive values".into()));
    }
    let xs: Vec<f64> = h.iter().map(|v| v.log2()).collect();
    let ys: Vec<f64> = values.iter().map(|v| v.log2()).collect();
    let (slope, intercept, r2) = linear_fit(&xs, &ys);
    Ok(RateFit { slope, intercept, r2 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MseDecomposition {
    pub variance_term: f64,
    pub bias_sq_term: f64,
    pub mse: f64,
}

pub fn mse_decompose(estimate: &MultilevelEstimate, oracle: f64) -> MseDecomposition {
    let bias_sq = (estimate.value - oracle).powi(2);
    MseDecomposition {
        variance_term: estimate.total_variance,
        bias_sq_term: bias_sq,
        mse: estimate.total_variance + bias_sq,
    }
}

/// Mean squared error of replicate estimates against an oracle value.
pub fn replicate_mse(estimates: &[f64], oracle: f64) -> f64 {
    estimates.iter().map(|e| (e - oracle).powi(2)).sum::<f64>() / estimates.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamId;
    use crate::stats::{mean, sample_variance};
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn allocation_examples() {
        assert_eq!(allocate(1024, 2.0, 1.0, 3)[2], 128);
        assert_eq!(allocate(1000, 2.0, 1.0, 1), vec![1000]);
        assert_eq!(allocate(1000, 2.0, 1.0, 2)[1], 354);
        let a = allocate(5000, 2.0, 1.0, 12);
        assert!(a.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(*a.last().unwrap(), 1);
    }

    #[test]
    fn choose_l_examples() {
        assert_eq!(choose_l(1.0, 2f64.powi(-4)).unwrap(), 4);
        assert_eq!(choose_l(1.0, 0.1).unwrap(), 4);
        assert_eq!(choose_l(2.0, 2f64.powi(-4)).unwrap(), 2);
        assert!(choose_l(1.0, 1.5).is_err());
        assert!(choose_l(0.5, 0.1).is_err());
    }

    #[test]
    fn telescoping_examples() {
        let l0 = [1.0, 2.0, 3.0, 6.0];
        let e = telescoped_estimate(&l0, &[], &[4]).unwrap();
        assert_eq!(e.value, 3.0);
        assert_eq!(e.bias_proxy, 0.0);
        let e = telescoped_estimate(&l0, &[vec![0.0; 3], vec![0.0; 2]], &[4, 9, 12]).unwrap();
        assert_eq!(e.value, 3.0);
        assert_eq!(e.total_cost, 25);
        assert!((e.total_variance - sample_variance(&l0) / 4.0).abs() < 1e-15);
        assert!(telescoped_estimate(&l0, &[vec![]], &[1, 1]).is_err());
    }

    #[test]
    fn stats_merge_is_associative() {
        let a = LevelStats::from_values(2, &[0.1, 0.4], 10);
        let b = LevelStats::from_values(2, &[-0.3], 5);
        let c = LevelStats::from_values(2, &[0.2, 0.2, 0.9], 15);
        let mut ab = a;
        ab.merge(&b).unwrap();
        ab.merge(&c).unwrap();
        let mut bc = b;
        bc.merge(&c).unwrap();
        let mut a_bc = a;
        a_bc.merge(&bc).unwrap();
        assert_eq!(ab.n_samples, a_bc.n_samples);
        assert!((ab.variance_estimate() - a_bc.variance_estimate()).abs() < 1e-15);
        let all = [0.1, 0.4, -0.3, 0.2, 0.2, 0.9];
        assert!((ab.variance_estimate() - sample_variance(&all)).abs() < 1e-14);
        assert!(ab.merge(&LevelStats::new(1)).is_err());
    }

    #[test]
    fn rate_fit_examples() {
        let h: Vec<f64> = (1..=6).map(|l| (-(l as f64)).exp2()).collect();
        let v: Vec<f64> = h.iter().map(|h| h * h).collect();
        let f = rate_fit(&h, &v).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12 && (f.r2 - 1.0).abs() < 1e-12);
        let c: Vec<f64> = h.iter().map(|h| 3.0 / h).collect();
        assert!((rate_fit(&h, &c).unwrap().slope + 1.0).abs() < 1e-12);
        let mut rng = StreamId::new(8, 0, 0).rng();
        let j: Vec<f64> = v.iter().map(|v| v * (0.1 * rng.sample::<f64, _>(StandardNormal)).exp()).collect();
        let s = rate_fit(&h, &j).unwrap().slope;
        assert!((1.9..=2.1).contains(&s), "{s}");
        assert!(rate_fit(&h, &[0.0; 6]).is_err());
        assert!(rate_fit(&h[..2], &v[..2]).is_err());
    }

    #[test]
    fn mse_decomposition() {
        let det = telescoped_estimate(&[2.0, 2.0], &[], &[2]).unwrap();
        let d = mse_decompose(&det, 1.5);
        assert_eq!(d.mse, d.bias_sq_term);
        assert_eq!(d.bias_sq_term, 0.25);
        // Unbiased estimator: replicate MSE ≈ reported variance.
        let mut rng = StreamId::new(9, 0, 0).rng();
        let mut ests = Vec::new();
        let mut vars = Vec::new();
        for _ in 0..50 {
            let xs: Vec<f64> = (0..200).map(|_| rng.sample(StandardNormal)).collect();
            let e = telescoped_estimate(&xs, &[], &[200]).unwrap();
            let d = mse_decompose(&e, 0.0);
            assert!(d.variance_term >= 0.0 && d.bias_sq_term >= 0.0);
            ests.push(e.value);
            vars.push(e.total_variance);
        }
        let ratio = replicate_mse(&ests, 0.0) / mean(&vars);
        assert!((0.7..=1.3).contains(&ratio), "{ratio}");
    }

    #[test]
    fn pilot_rule() {
        assert_eq!(pilot_n1(1000, 1.0, 0.01, 4.0, 12.0).unwrap(), 58);
        assert!(pilot_n1(1000, 0.0, 0.01, 4.0, 12.0).is_err());
    }
}
