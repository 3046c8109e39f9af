//! Euler–Maruyama transition kernels and the coupled fine/coarse path
//! simulation used by the multilevel particle filter.
//!
//! Times are in interval units (see [`crate::models`]). Cost is counted in
//! Euler steps.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{normal_log_density, SdeModel};

/// Time grid `{0, h_l, 2h_l, …, T}` of discretization level `l`, with
/// `h_l = 2^{-l}` and `M_l = 2^l` steps per observation interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelGrid {
    pub level: u32,
    pub intervals: usize,
    /// Physical length of one observation interval.
    pub obs_interval: f64,
}

impl LevelGrid {
    pub fn new(level: u32, intervals: usize, obs_interval: f64) -> Self {
        Self {
            level,
            intervals,
            obs_interval,
        }
    }

    pub fn for_model(model: &SdeModel, level: u32) -> Self {
        Self::new(level, model.intervals(), model.obs_interval)
    }

    pub fn step(&self) -> f64 {
        (-(self.level as f64)).exp2()
    }

    pub fn steps_per_obs(&self) -> usize {
        1usize << self.level
    }

    pub fn n_steps(&self) -> usize {
        self.steps_per_obs() * self.intervals
    }

    /// Number of grid nodes, `M_l·T + 1`.
    pub fn len(&self) -> usize {
        self.n_steps() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Node times in interval units.
    pub fn times(&self) -> Vec<f64> {
        let h = self.step();
        (0..self.len()).map(|i| i as f64 * h).collect()
    }

    /// Grid index of the `k`-th observation time.
    pub fn obs_node(&self, k: usize) -> usize {
        k * self.steps_per_obs()
    }

    pub fn is_obs_node(&self, i: usize) -> bool {
        i.is_multiple_of(self.steps_per_obs())
    }

    pub fn coarser(&self) -> Option<Self> {
        self.level.checked_sub(1).map(|l| Self { level: l, ..*self })
    }
}

/// A simulated path together with the number of Euler steps spent on it.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub values: Vec<f64>,
    pub cost: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledPath {
    pub fine: Vec<f64>,
    pub coarse: Vec<f64>,
    pub cost: u64,
}

/// One Euler–Maruyama step `x + h·a(x) + √h·b(x)·u` in interval units.
pub fn euler_step(model: &SdeModel, x: f64, h: f64, u: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::ContractViolation(format!("step size must be positive, got {h}")));
    }
    let next = x + h * model.unit_drift(x).value + h.sqrt() * model.unit_diffusion(x).value * u;
    if next.is_finite() {
        Ok(next)
    } else {
        Err(Error::Numerical(format!("Euler step from x = {x} produced {next}")))
    }
}

/// `log K^l(x, x_next)`, the Gaussian density with mean `x + h_l a(x)` and
/// variance `h_l b(x)²`.
pub fn kernel_logpdf(model: &SdeModel, level: u32, x: f64, x_next: f64) -> Result<f64> {
    let h = (-(level as f64)).exp2();
    let mean = x + h * model.unit_drift(x).value;
    let b = model.unit_diffusion(x).value;
    let var = h * b * b;
    if !(var > 0.0) || !var.is_finite() {
        return Err(Error::Numerical(format!("singular transition covariance at x = {x}")));
    }
    Ok(normal_log_density(x_next, mean, var))
}

/// Iterates the Euler kernel over the whole grid starting from `x0`.
pub fn simulate_path<R: Rng + ?Sized>(
    model: &SdeModel,
    grid: &LevelGrid,
    x0: f64,
    rng: &mut R,
) -> Result<Path> {
    let h = grid.step();
    let mut values = Vec::with_capacity(grid.len());
    values.push(x0);
    let mut x = x0;
    for _ in 0..grid.n_steps() {
        let u: f64 = rng.sample(StandardNormal);
        x = euler_step(model, x, h, u)?;
        values.push(x);
    }
    Ok(Path {
        values,
        cost: grid.n_steps() as u64,
    })
}

/// Fine path at level `l` and coarse path at level `l-1` driven by the same
/// Brownian increments: each coarse step uses `√h_l·(u_t + u_{t+h_l})`, which
/// has exactly the variance `h_{l-1}` of a coarse Brownian increment.
pub fn simulate_coupled_pair<R: Rng + ?Sized>(
    model: &SdeModel,
    level: u32,
    x0_fine: f64,
    x0_coarse: f64,
    rng: &mut R,
) -> Result<CoupledPath> {
    if level == 0 {
        return Err(Error::ContractViolation("coupled simulation needs level >= 1".into()));
    }
    let fine_grid = LevelGrid::for_model(model, level);
    let hf = fine_grid.step();
    let hc = 2.0 * hf;
    let coarse_steps = fine_grid.n_steps() / 2;
    let mut fine = Vec::with_capacity(fine_grid.len());
    let mut coarse = Vec::with_capacity(coarse_steps + 1);
    let (mut xf, mut xc) = (x0_fine, x0_coarse);
    fine.push(xf);
    coarse.push(xc);
    for _ in 0..coarse_steps {
        let u1: f64 = rng.sample(StandardNormal);
        let u2: f64 = rng.sample(StandardNormal);
        xf = euler_step(model, xf, hf, u1)?;
        fine.push(xf);
        xf = euler_step(model, xf, hf, u2)?;
        fine.push(xf);
        xc = euler_step(model, xc, hc, (u1 + u2) / std::f64::consts::SQRT_2)?;
        coarse.push(xc);
    }
    Ok(CoupledPath {
        fine,
        coarse,
        cost: (fine_grid.n_steps() + coarse_steps) as u64,
    })
}

/// Advances a single state over one observation interval at `level`.
pub fn advance_interval<R: Rng + ?Sized>(
    model: &SdeModel,
    level: u32,
    x: f64,
    rng: &mut R,
) -> Result<f64> {
    let h = (-(level as f64)).exp2();
    let mut x = x;
    for _ in 0..(1usize << level) {
        let u: f64 = rng.sample(StandardNormal);
        x = euler_step(model, x, h, u)?;
    }
    Ok(x)
}

/// Coupled version of [`advance_interval`]: returns the fine (level `l`) and
/// coarse (level `l-1`) endpoints after one observation interval.
pub fn advance_interval_coupled<R: Rng + ?Sized>(
    model: &SdeModel,
    level: u32,
    x_fine: f64,
    x_coarse: f64,
    rng: &mut R,
) -> Result<(f64, f64)> {
    if level == 0 {
        return Err(Error::ContractViolation("coupled simulation needs level >= 1".into()));
    }
    let hf = (-(level as f64)).exp2();
    let hc = 2.0 * hf;
    let (mut xf, mut xc) = (x_fine, x_coarse);
    for _ in 0..(1usize << (level - 1)) {
        let u1: f64 = rng.sample(StandardNormal);
        let u2: f64 = rng.sample(StandardNormal);
        xf = euler_step(model, xf, hf, u1)?;
        xf = euler_step(model, xf, hf, u2)?;
        xc = euler_step(model, xc, hc, (u1 + u2) / std::f64::consts::SQRT_2)?;
    }
    Ok((xf, xc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{make_linear_gaussian, make_nonlinear_diffusion, Diffusion, Drift};
    use crate::rng::StreamId;
    use approx::assert_relative_eq;

    fn brownian_model(horizon: f64) -> SdeModel {
        let (mut m, _) = make_linear_gaussian();
        m.drift = Drift::Linear { slope: 0.0 };
        m.horizon = horizon;
        m
    }

    #[test]
    fn grid_invariants() {
        for level in 0..6 {
            let g = LevelGrid::new(level, 4, 1.0);
            assert_relative_eq!(g.step() * g.steps_per_obs() as f64, 1.0);
            assert_eq!(g.len(), g.steps_per_obs() * 4 + 1);
            assert_eq!(g.times().len(), g.len());
            assert_eq!(*g.times().last().unwrap(), 4.0);
        }
    }

    #[test]
    fn euler_step_examples() {
        let (m, _) = make_linear_gaussian();
        assert_relative_eq!(euler_step(&m, 1.0, 1.0, 0.0).unwrap(), 0.9, epsilon = 1e-15);
        let bm = brownian_model(4.0);
        assert_eq!(euler_step(&bm, 0.37, 0.3, 0.0).unwrap(), 0.37);
        assert_relative_eq!(euler_step(&bm, 0.0, 0.25, 2.0).unwrap(), 1.0);
        assert!(euler_step(&bm, 0.0, 0.0, 1.0).is_err());
        assert!(matches!(euler_step(&bm, f64::MAX, 1.0, f64::MAX), Err(Error::Numerical(_))));
    }

    #[test]
    fn kernel_logpdf_examples() {
        let bm = brownian_model(4.0);
        assert_relative_eq!(
            kernel_logpdf(&bm, 0, 0.0, 0.0).unwrap(),
            -0.5 * (2.0 * std::f64::consts::PI).ln(),
            epsilon = 1e-15
        );
        for &(x, y) in &[(0.3, 1.1), (-2.0, 0.5)] {
            assert_relative_eq!(
                kernel_logpdf(&bm, 2, x, y).unwrap(),
                kernel_logpdf(&bm, 2, 0.0, y - x).unwrap(),
                epsilon = 1e-14
            );
        }
        let (m, _) = make_linear_gaussian();
        assert_relative_eq!(
            kernel_logpdf(&m, 1, 1.0, 0.95).unwrap(),
            normal_log_density(0.95, 0.95, 0.5),
            epsilon = 1e-14
        );
        let mut degenerate = m.clone();
        degenerate.diffusion = Diffusion::Constant { value: 0.0 };
        assert!(matches!(kernel_logpdf(&degenerate, 0, 0.0, 0.0), Err(Error::Numerical(_))));
    }

    #[test]
    fn simulate_path_counts_and_is_reproducible() {
        let (m, _) = make_linear_gaussian();
        let g = LevelGrid::for_model(&m, 0);
        let p = simulate_path(&m, &g, 0.0, &mut StreamId::new(1, 0, 0).rng()).unwrap();
        assert_eq!(p.values.len(), 5);
        assert_eq!(p.cost, 4);
        let p2 = simulate_path(&m, &g, 0.0, &mut StreamId::new(1, 0, 0).rng()).unwrap();
        assert_eq!(p, p2);
    }

    #[test]
    fn zero_noise_path_converges_to_ode() {
        let (mut m, _) = make_linear_gaussian();
        m.diffusion = Diffusion::Constant { value: 0.0 };
        let g = LevelGrid::for_model(&m, 10);
        let p = simulate_path(&m, &g, 2.0, &mut StreamId::new(1, 0, 0).rng()).unwrap();
        assert!((p.values.last().unwrap() - 2.0 * (-0.4f64).exp()).abs() < 1e-2);
    }

    #[test]
    fn coupled_pair_telescopes_for_brownian_motion() {
        let bm = brownian_model(2.0);
        for level in 1..5 {
            let mut rng = StreamId::new(3, level, 9).rng();
            let cp = simulate_coupled_pair(&bm, level, 0.0, 0.0, &mut rng).unwrap();
            let g = LevelGrid::for_model(&bm, level);
            assert_eq!(cp.fine.len(), g.len());
            assert_eq!(cp.coarse.len(), g.coarser().unwrap().len());
            assert_relative_eq!(cp.fine.last().unwrap(), cp.coarse.last().unwrap(), epsilon = 1e-12);
            // Coarse nodes coincide with every other fine node.
            for (j, c) in cp.coarse.iter().enumerate() {
                assert_relative_eq!(*c, cp.fine[2 * j], epsilon = 1e-12);
            }
            assert_eq!(cp.cost, (g.n_steps() + g.n_steps() / 2) as u64);
        }
        let one = brownian_model(1.0);
        let cp = simulate_coupled_pair(&one, 1, 0.0, 0.0, &mut StreamId::new(0, 1, 0).rng()).unwrap();
        assert_eq!((cp.fine.len(), cp.coarse.len()), (3, 2));
        assert!(simulate_coupled_pair(&one, 0, 0.0, 0.0, &mut StreamId::new(0, 1, 0).rng()).is_err());
    }

    #[test]
    fn coupled_coarse_marginal_matches_independent_coarse_level() {
        let (m, _) = make_nonlinear_diffusion();
        let level = 2;
        let n = 100_000;
        let coarse_grid = LevelGrid::for_model(&m, level - 1);
        let (mut s1, mut s2, mut q1, mut q2) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            let mut rng = StreamId::new(17, level, i).rng();
            let cp = simulate_coupled_pair(&m, level, 0.5, 0.5, &mut rng).unwrap();
            let c = *cp.coarse.last().unwrap();
            s1 += c;
            q1 += c * c;
            let mut rng = StreamId::new(18, level - 1, i).rng();
            let p = simulate_path(&m, &coarse_grid, 0.5, &mut rng).unwrap();
            let x = *p.values.last().unwrap();
            s2 += x;
            q2 += x * x;
        }
        let nf = n as f64;
        let (m1, m2) = (s1 / nf, s2 / nf);
        let (v1, v2) = (q1 / nf - m1 * m1, q2 / nf - m2 * m2);
        let se_mean = ((v1 + v2) / nf).sqrt();
        assert!((m1 - m2).abs() < 3.0 * se_mean, "means {m1} vs {m2}");
        // Var of a sample variance of near-Gaussian data is about 2σ⁴/n.
        let se_var = (2.0 * (v1 * v1 + v2 * v2) / nf).sqrt();
        assert!((v1 - v2).abs() < 3.0 * se_var, "vars {v1} vs {v2}");
    }

    #[test]
    fn interval_advance_matches_path_simulation() {
        let (m, _) = make_linear_gaussian();
        let mut r1 = StreamId::new(4, 3, 2).rng();
        let mut r2 = StreamId::new(4, 3, 2).rng();
        let one = SdeModel { horizon: 1.0, ..m.clone() };
        let g = LevelGrid::for_model(&one, 3);
        let p = simulate_path(&one, &g, 0.4, &mut r1).unwrap();
        assert_eq!(*p.values.last().unwrap(), advance_interval(&m, 3, 0.4, &mut r2).unwrap());

        let mut r1 = StreamId::new(4, 3, 5).rng();
        let mut r2 = StreamId::new(4, 3, 5).rng();
        let cp = simulate_coupled_pair(&one, 3, 0.1, -0.2, &mut r1).unwrap();
        let (f, c) = advance_interval_coupled(&m, 3, 0.1, -0.2, &mut r2).unwrap();
        assert_eq!((*cp.fine.last().unwrap(), *cp.coarse.last().unwrap()), (f, c));
    }
}
