//! Scalar SDE models, observation likelihoods and the three benchmark
//! problems.
//!
//! Internally every model is expressed in *interval units*: one unit of time
//! is one observation interval. For a physical observation spacing `Δ` the
//! rescaled coefficients are `Δ·a(x)` and `√Δ·b(x)`, so that a level-`l` grid
//! always has `2^l` Euler steps between consecutive observations.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::discretization::{simulate_path, LevelGrid};
use crate::error::{Error, Result};
use crate::rng::StreamId;

/// Level used to simulate synthetic ground-truth paths.
pub const TRUTH_LEVEL: u32 = 10;

/// Value of a scalar function together with its first two derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

impl Jet {
    pub fn new(value: f64, d1: f64, d2: f64) -> Self {
        Self { value, d1, d2 }
    }

    fn scale(self, c: f64) -> Self {
        Self::new(c * self.value, c * self.d1, c * self.d2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Drift {
    /// `a(x) = slope · x`
    Linear { slope: f64 },
    /// `a(x) = ½ d/dx log S_ν(x) = -(ν+1)x / (2(ν+x²))`, Student-t Langevin drift.
    StudentLangevin { nu: f64 },
    /// `a(x) = θ(μ - x)`
    MeanReverting { theta: f64, mu: f64 },
}

impl Drift {
    pub fn eval(&self, x: f64) -> f64 {
        self.jet(x).value
    }

    pub fn jet(&self, x: f64) -> Jet {
        match *self {
            Drift::Linear { slope } => Jet::new(slope * x, slope, 0.0),
            Drift::StudentLangevin { nu } => {
                let s = nu + x * x;
                let value = -(nu + 1.0) * x / (2.0 * s);
                let d1 = -(nu + 1.0) * (nu - x * x) / (2.0 * s * s);
                let d2 = (nu + 1.0) * x * (3.0 * nu - x * x) / (s * s * s);
                Jet::new(value, d1, d2)
            }
            Drift::MeanReverting { theta, mu } => Jet::new(theta * (mu - x), -theta, 0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Diffusion {
    Constant { value: f64 },
    /// `b(x) = scale / √(1 + x²)`
    InverseSqrt { scale: f64 },
}

impl Diffusion {
    pub fn eval(&self, x: f64) -> f64 {
        self.jet(x).value
    }

    pub fn jet(&self, x: f64) -> Jet {
        match *self {
            Diffusion::Constant { value } => Jet::new(value, 0.0, 0.0),
            Diffusion::InverseSqrt { scale } => {
                let s = 1.0 + x * x;
                let r = s.sqrt();
                Jet::new(
                    scale / r,
                    -scale * x / (s * r),
                    scale * (2.0 * x * x - 1.0) / (s * s * r),
                )
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialLaw {
    PointMass { x0: f64 },
    Gaussian { mean: f64, std: f64 },
}

impl InitialLaw {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            InitialLaw::PointMass { x0 } => x0,
            InitialLaw::Gaussian { mean, std } => {
                let z: f64 = rng.sample(StandardNormal);
                mean + std * z
            }
        }
    }

    /// Log-density and derivatives. Undefined for a point mass.
    pub fn log_density_jet(&self, x: f64) -> Option<Jet> {
        match *self {
            InitialLaw::PointMass { .. } => None,
            InitialLaw::Gaussian { mean, std } => Some(normal_log_density_jet(x, mean, std * std)),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            InitialLaw::PointMass { x0 } => x0,
            InitialLaw::Gaussian { mean, .. } => mean,
        }
    }

    pub fn std(&self) -> f64 {
        match *self {
            InitialLaw::PointMass { .. } => 0.0,
            InitialLaw::Gaussian { std, .. } => std,
        }
    }
}

/// `log N(x; mean, var)` with derivatives in `x`.
pub fn normal_log_density_jet(x: f64, mean: f64, var: f64) -> Jet {
    let r = x - mean;
    Jet::new(
        -0.5 * (2.0 * std::f64::consts::PI * var).ln() - 0.5 * r * r / var,
        -r / var,
        -1.0 / var,
    )
}

pub fn normal_log_density(x: f64, mean: f64, var: f64) -> f64 {
    let r = x - mean;
    -0.5 * (2.0 * std::f64::consts::PI * var).ln() - 0.5 * r * r / var
}

/// Continuous-time problem definition: `dX = a(X)dt + b(X)dW`, `X_0 ~ p_0`,
/// observed every `obs_interval` time units up to `horizon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdeModel {
    pub drift: Drift,
    pub diffusion: Diffusion,
    pub initial_law: InitialLaw,
    pub horizon: f64,
    pub obs_interval: f64,
}

impl SdeModel {
    pub fn dim(&self) -> usize {
        1
    }

    /// Number of observation intervals `T / Δ`.
    pub fn intervals(&self) -> usize {
        (self.horizon / self.obs_interval).round() as usize
    }

    pub fn observation_count(&self) -> usize {
        self.intervals() + 1
    }

    /// Drift in interval units, `Δ·a(x)`.
    pub fn unit_drift(&self, x: f64) -> Jet {
        self.drift.jet(x).scale(self.obs_interval)
    }

    /// Diffusion in interval units, `√Δ·b(x)`.
    pub fn unit_diffusion(&self, x: f64) -> Jet {
        self.diffusion.jet(x).scale(self.obs_interval.sqrt())
    }

    /// Spot-checks the model on a bounded grid: finite coefficients and a
    /// strictly positive `b(x)²`.
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.obs_interval > 0.0) {
            return Err(Error::Config("horizon and obs_interval must be positive".into()));
        }
        let n = self.horizon / self.obs_interval;
        if (n - n.round()).abs() > 1e-9 || n.round() < 1.0 {
            return Err(Error::Config(format!(
                "horizon {} is not a positive multiple of obs_interval {}",
                self.horizon, self.obs_interval
            )));
        }
        for i in 0..=200 {
            let x = -10.0 + 0.1 * i as f64;
            let a = self.drift.eval(x);
            let b = self.diffusion.eval(x);
            if !a.is_finite() || !b.is_finite() {
                return Err(Error::Numerical(format!("non-finite coefficients at x = {x}")));
            }
            if b * b <= 0.0 {
                return Err(Error::Numerical(format!("b(x)b(x)^T not positive definite at x = {x}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObservationModel {
    /// `Y | X = x ~ N(x, τ²)`
    LinearGaussian { tau: f64 },
    /// `Y | X = x ~ N(0, τ² e^x)`
    ExpVariance { tau: f64 },
}

impl ObservationModel {
    pub fn obs_dim(&self) -> usize {
        1
    }

    pub fn log_likelihood(&self, x: f64, y: f64) -> f64 {
        match *self {
            ObservationModel::LinearGaussian { tau } => normal_log_density(y, x, tau * tau),
            ObservationModel::ExpVariance { tau } => normal_log_density(y, 0.0, tau * tau * x.exp()),
        }
    }

    /// `log ℓ(x, y)` with derivatives in `x`.
    pub fn log_likelihood_jet(&self, x: f64, y: f64) -> Jet {
        match *self {
            ObservationModel::LinearGaussian { tau } => normal_log_density_jet(x, y, tau * tau),
            ObservationModel::ExpVariance { tau } => {
                let t2 = tau * tau;
                let q = y * y * (-x).exp() / (2.0 * t2);
                Jet::new(
                    -0.5 * (2.0 * std::f64::consts::PI * t2).ln() - 0.5 * x - q,
                    -0.5 + q,
                    -q,
                )
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> f64 {
        let v: f64 = rng.sample(StandardNormal);
        match *self {
            ObservationModel::LinearGaussian { tau } => x + tau * v,
            ObservationModel::ExpVariance { tau } => tau * (0.5 * x).exp() * v,
        }
    }
}

/// Observations at multiples of the observation interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl ObservationRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn validate(&self, model: &SdeModel) -> Result<()> {
        if self.times.len() != self.values.len() {
            return Err(Error::ContractViolation(
                "observation times and values differ in length".into(),
            ));
        }
        let mut prev = f64::NEG_INFINITY;
        for &t in &self.times {
            if !(t > prev) {
                return Err(Error::ContractViolation("observation times not ascending".into()));
            }
            if t < -1e-12 || t > model.horizon + 1e-9 {
                return Err(Error::ContractViolation(format!(
                    "observation time {t} outside [0, {}]",
                    model.horizon
                )));
            }
            let k = t / model.obs_interval;
            if (k - k.round()).abs() > 1e-9 {
                return Err(Error::ContractViolation(format!(
                    "observation time {t} is not a multiple of {}",
                    model.obs_interval
                )));
            }
            prev = t;
        }
        Ok(())
    }

    /// Observation at the `k`-th observation time `k·Δ`, if recorded.
    pub fn value_at(&self, k: usize, obs_interval: f64) -> Option<f64> {
        let target = k as f64 * obs_interval;
        self.times
            .iter()
            .position(|&t| (t - target).abs() <= 1e-9 * obs_interval.max(1.0))
            .map(|i| self.values[i])
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("time,value\n");
        for (t, y) in self.times.iter().zip(&self.values) {
            out.push_str(&format!("{},{}\n", crate::harness::fmt_f64(*t), crate::harness::fmt_f64(*y)));
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (row, line) in text.lines().enumerate() {
            if row == 0 {
                if line.trim() != "time,value" {
                    return Err(Error::Parse {
                        row: 1,
                        message: format!("expected header `time,value`, found `{line}`"),
                    });
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let mut next = |name: &str| -> Result<f64> {
                fields
                    .next()
                    .and_then(|f| f.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::Parse {
                        row: row + 1,
                        message: format!("invalid {name}"),
                    })
            };
            times.push(next("time")?);
            values.push(next("value")?);
        }
        Ok(Self { times, values })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    LinearGaussian,
    Langevin,
    NonlinearDiffusion,
}

impl ModelKind {
    pub fn build(self) -> (SdeModel, ObservationModel) {
        match self {
            ModelKind::LinearGaussian => make_linear_gaussian(),
            ModelKind::Langevin => make_langevin(),
            ModelKind::NonlinearDiffusion => make_nonlinear_diffusion(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::LinearGaussian => "linear_gaussian",
            ModelKind::Langevin => "langevin",
            ModelKind::NonlinearDiffusion => "nonlinear_diffusion",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear_gaussian" => Ok(ModelKind::LinearGaussian),
            "langevin" => Ok(ModelKind::Langevin),
            "nonlinear_diffusion" => Ok(ModelKind::NonlinearDiffusion),
            other => Err(Error::Config(format!("unknown model `{other}`"))),
        }
    }
}

const STANDARD_INITIAL: InitialLaw = InitialLaw::Gaussian { mean: 0.0, std: 1.0 };

/// `a = -0.1`, `b = 1`, `τ = 0.25`, `p_0 = N(0, 1)`, `T = 4`.
pub fn make_linear_gaussian() -> (SdeModel, ObservationModel) {
    (
        SdeModel {
            drift: Drift::Linear { slope: -0.1 },
            diffusion: Diffusion::Constant { value: 1.0 },
            initial_law: STANDARD_INITIAL,
            horizon: 4.0,
            obs_interval: 1.0,
        },
        ObservationModel::LinearGaussian { tau: 0.25 },
    )
}

/// Student-t (ν = 10) Langevin dynamics with `b = 1`, observed through
/// `N(0, e^x)`, `T = 4`.
pub fn make_langevin() -> (SdeModel, ObservationModel) {
    (
        SdeModel {
            drift: Drift::StudentLangevin { nu: 10.0 },
            diffusion: Diffusion::Constant { value: 1.0 },
            initial_law: STANDARD_INITIAL,
            horizon: 4.0,
            obs_interval: 1.0,
        },
        ObservationModel::ExpVariance { tau: 1.0 },
    )
}

/// `dX = (1 - X)dt + (1 + X²)^{-1/2} dW`, observed every 0.5 through
/// `N(x, 1)`, `T = 2`.
pub fn make_nonlinear_diffusion() -> (SdeModel, ObservationModel) {
    (
        SdeModel {
            drift: Drift::MeanReverting { theta: 1.0, mu: 1.0 },
            diffusion: Diffusion::InverseSqrt { scale: 1.0 },
            initial_law: STANDARD_INITIAL,
            horizon: 2.0,
            obs_interval: 0.5,
        },
        ObservationModel::LinearGaussian { tau: 1.0 },
    )
}

/// Simulates a reference path at [`TRUTH_LEVEL`] and draws one observation per
/// observation time. A pure function of `(model, obs_model, seed)`.
pub fn simulate_truth(
    model: &SdeModel,
    obs_model: &ObservationModel,
    seed: u64,
) -> Result<(Vec<f64>, ObservationRecord)> {
    let grid = LevelGrid::for_model(model, TRUTH_LEVEL);
    let mut rng = StreamId::new(seed, TRUTH_LEVEL, 0).rng();
    let x0 = model.initial_law.sample(&mut rng);
    let path = simulate_path(model, &grid, x0, &mut rng)?.values;
    let mut obs_rng = StreamId::new(seed, TRUTH_LEVEL, 1).rng();
    let mut times = Vec::with_capacity(model.observation_count());
    let mut values = Vec::with_capacity(model.observation_count());
    for k in 0..model.observation_count() {
        times.push(k as f64 * model.obs_interval);
        values.push(obs_model.sample(path[grid.obs_node(k)], &mut obs_rng));
    }
    Ok((path, ObservationRecord { times, values }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn fd_check(f: impl Fn(f64) -> Jet, x: f64) {
        let e = 1e-5;
        let j = f(x);
        let d1 = (f(x + e).value - f(x - e).value) / (2.0 * e);
        let d2 = (f(x + e).d1 - f(x - e).d1) / (2.0 * e);
        assert_relative_eq!(j.d1, d1, epsilon = 1e-7, max_relative = 1e-6);
        assert_relative_eq!(j.d2, d2, epsilon = 1e-7, max_relative = 1e-6);
    }

    #[test]
    fn linear_gaussian_factory() {
        let (m, o) = make_linear_gaussian();
        assert_relative_eq!(m.drift.eval(2.0), -0.2);
        assert_eq!(m.diffusion.eval(123.0), 1.0);
        let expected = (1.0 / (0.25 * (2.0 * std::f64::consts::PI).sqrt())).ln();
        assert_relative_eq!(o.log_likelihood(0.0, 0.0), expected, epsilon = 1e-14);
        assert_eq!(m.intervals(), 4);
        assert_eq!(m.dim(), 1);
    }

    #[test]
    fn langevin_factory() {
        let (m, o) = make_langevin();
        assert_eq!(m.drift.eval(0.0), 0.0);
        assert_relative_eq!(m.drift.eval(1.0), -0.5, epsilon = 1e-15);
        let std_normal = -0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5;
        assert_relative_eq!(o.log_likelihood(0.0, 1.0), std_normal, epsilon = 1e-14);
    }

    #[test]
    fn langevin_drift_bounded() {
        let (m, _) = make_langevin();
        let nu: f64 = 10.0;
        let bound = (nu + 1.0) / (4.0 * nu.sqrt());
        for i in 0..=4000 {
            let x = -100.0 + 0.05 * i as f64;
            assert!(m.drift.eval(x).abs() <= bound + 1e-12);
        }
        assert_relative_eq!(m.drift.eval(nu.sqrt()).abs(), bound, epsilon = 1e-12);
    }

    #[test]
    fn nonlinear_diffusion_factory() {
        let (m, _) = make_nonlinear_diffusion();
        assert_eq!(m.drift.eval(1.0), 0.0);
        assert_eq!(m.diffusion.eval(0.0), 1.0);
        assert_relative_eq!(m.diffusion.eval(1.0), 1.0 / 2f64.sqrt(), epsilon = 1e-15);
        assert_eq!(m.intervals(), 4);
        assert_relative_eq!(m.unit_drift(0.0).value, 0.5);
        assert_relative_eq!(m.unit_diffusion(0.0).value, 0.5f64.sqrt());
    }

    #[test]
    fn coefficient_derivatives_match_finite_differences() {
        for &x in &[-2.3, -0.4, 0.0, 0.7, 3.1] {
            fd_check(|x| Drift::StudentLangevin { nu: 10.0 }.jet(x), x);
            fd_check(|x| Drift::MeanReverting { theta: 1.0, mu: 1.0 }.jet(x), x);
            fd_check(|x| Diffusion::InverseSqrt { scale: 1.0 }.jet(x), x);
            fd_check(|x| ObservationModel::ExpVariance { tau: 1.0 }.log_likelihood_jet(x, 0.8), x);
            fd_check(|x| ObservationModel::LinearGaussian { tau: 0.25 }.log_likelihood_jet(x, 0.8), x);
        }
    }

    #[test]
    fn all_factories_valid_and_likelihoods_normalised() {
        for kind in [ModelKind::LinearGaussian, ModelKind::Langevin, ModelKind::NonlinearDiffusion] {
            let (m, o) = kind.build();
            m.validate().unwrap();
            assert_eq!(m.dim(), 1);
            assert_eq!(kind.name().parse::<ModelKind>().unwrap(), kind);
            for &x in &[-2.0, -0.5, 0.0, 1.0, 2.5] {
                // Trapezoid over a wide window; the integrand is Gaussian in y.
                let (lo, hi, n) = (-60.0, 60.0, 240_000);
                let dy = (hi - lo) / n as f64;
                let mut total = 0.0;
                for i in 0..=n {
                    let y = lo + dy * i as f64;
                    let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                    total += w * o.log_likelihood(x, y).exp();
                }
                assert!((total * dy - 1.0).abs() < 1e-6, "{kind} at x={x}: {}", total * dy);
            }
        }
    }

    #[test]
    fn truth_simulation_is_deterministic_and_counts_observations() {
        let (m, o) = make_linear_gaussian();
        let (p1, r1) = simulate_truth(&m, &o, 5).unwrap();
        let (p2, r2) = simulate_truth(&m, &o, 5).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(r1, r2);
        assert_eq!(r1.len(), 5);
        assert_eq!(r1.times, vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(p1.len(), 4 * 1024 + 1);
        r1.validate(&m).unwrap();
        let (_, r3) = simulate_truth(&m, &o, 6).unwrap();
        assert_ne!(r1.values, r3.values);
    }

    #[test]
    fn truth_with_zero_diffusion_follows_linear_ode() {
        let (mut m, o) = make_linear_gaussian();
        m.diffusion = Diffusion::Constant { value: 0.0 };
        m.initial_law = InitialLaw::PointMass { x0: 1.5 };
        let (path, _) = simulate_truth(&m, &o, 1).unwrap();
        let exact = 1.5 * (-0.1f64 * 4.0).exp();
        assert!((path.last().unwrap() - exact).abs() < 1e-3);
    }

    #[test]
    fn observation_record_csv_roundtrip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let rec = ObservationRecord {
            times: vec![0.0, 0.5, 1.0],
            values: vec![0.1, -0.3333333333333333, 2.0e-17],
        };
        let p = dir.path().join("obs.csv");
        rec.write_csv(&p).unwrap();
        assert_eq!(ObservationRecord::read_csv(&p).unwrap(), rec);
        std::fs::write(&p, "time,value\n0,1\n1,oops\n").unwrap();
        match ObservationRecord::read_csv(&p) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("unexpected {other:?}"),
        }
        let (m, _) = make_nonlinear_diffusion();
        assert!(rec.validate(&m).is_ok());
        assert_eq!(rec.value_at(1, 0.5), Some(-0.3333333333333333));
        let bad = ObservationRecord { times: vec![0.25], values: vec![1.0] };
        assert!(bad.validate(&m).is_err());
    }
}
