//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coupled_sampler::FunctionalSpec;
use crate::error::{Error, Result};
use crate::models::ModelKind;
use crate::reference::GridSpec;
use crate::transport::{BasisKind, FitOptions, TolSchedule, MAX_FAST_ORDER};

/// Where the pair maps of each level come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapSource {
    /// Fit by KL minimisation.
    Fitted,
    /// Exact affine maps from the Kalman recursions (linear-Gaussian only).
    Exact,
}

pub const DESK_N0_BATCHES: u64 = 1 << 8;
pub const PAPER_N0_BATCHES: u64 = 1 << 13;
pub const DESK_REPLICATES: usize = 20;
pub const PAPER_REPLICATES: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    /// Finest level `L`.
    pub levels: u32,
    /// Map order `o_m`.
    pub order: usize,
    pub quad_order: usize,
    pub basis: BasisKind,
    pub tol: TolSchedule,
    pub max_iter: usize,
    pub maps: MapSource,
    /// Directory of previously written `maps_level_<l>.json` files.
    pub maps_dir: Option<PathBuf>,
    pub functional: FunctionalSpec,
    /// Level-0 sample size, in batches.
    pub n0_batches: u64,
    pub batch_size: u64,
    /// Pilot size for the level-1 sample size rule.
    pub pilot: u64,
    /// Coupled pairs per level for rate and comparison runs.
    pub pairs_per_level: u64,
    pub mlpf_particles: u64,
    pub beta: f64,
    pub zeta: f64,
    pub replicates: usize,
    pub seed: u64,
    /// Seed of the simulated observation record.
    pub obs_seed: u64,
    /// Observation CSV (`time,value`); simulated when absent.
    pub observations: Option<PathBuf>,
    pub reference_level: u32,
    pub reference_grid: GridSpec,
    pub output_dir: PathBuf,
    /// Adds wall-clock columns including map construction to the MSE table.
    pub combined_cost: bool,
    /// Rounds hidden from the MSE plot; stored data is unaffected.
    pub plot_skip: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::LinearGaussian,
            levels: 4,
            order: 4,
            quad_order: 10,
            basis: BasisKind::HermiteFunction,
            tol: TolSchedule::Constant { tol: 1e-4 },
            max_iter: 200,
            maps: MapSource::Fitted,
            maps_dir: None,
            functional: FunctionalSpec::TerminalState,
            n0_batches: DESK_N0_BATCHES,
            batch_size: 1000,
            pilot: 10_000,
            pairs_per_level: 10_000,
            mlpf_particles: 10_000,
            beta: 2.0,
            zeta: 1.0,
            replicates: DESK_REPLICATES,
            seed: 1,
            obs_seed: 2024,
            observations: None,
            reference_level: 10,
            reference_grid: GridSpec::default(),
            output_dir: PathBuf::from("out"),
            combined_cost: false,
            plot_skip: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Full-size sample counts and replicate number.
    pub fn paper_scale(&mut self) {
        self.n0_batches = PAPER_N0_BATCHES;
        self.replicates = PAPER_REPLICATES;
    }

    /// Level-0 sample count `N_0`.
    pub fn n0(&self) -> u64 {
        self.n0_batches * self.batch_size
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            basis: self.basis,
            order: self.order,
            quad_order: self.quad_order,
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml_string().as_bytes()))
    }

    /// Numeric fields must be positive; `n0_batches = 0` is allowed and
    /// yields an empty budget.
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("{what} must be positive")));
        if self.order == 0 {
            return bad("order");
        }
        if self.order > MAX_FAST_ORDER {
            return Err(Error::Config(format!("order must not exceed {MAX_FAST_ORDER}")));
        }
        if self.quad_order == 0 {
            return bad("quad_order");
        }
        if self.max_iter == 0 {
            return bad("max_iter");
        }
        if self.batch_size == 0 {
            return bad("batch_size");
        }
        if self.pilot < 2 {
            return Err(Error::Config("pilot needs at least 2 samples".into()));
        }
        if self.pairs_per_level < 2 {
            return Err(Error::Config("pairs_per_level needs at least 2 pairs".into()));
        }
        if self.mlpf_particles < 2 {
            return Err(Error::Config("mlpf_particles needs at least 2 particles".into()));
        }
        if !(self.beta > 0.0) || !(self.zeta > 0.0) {
            return bad("beta and zeta");
        }
        if self.replicates == 0 {
            return bad("replicates");
        }
        if let TolSchedule::Constant { tol } = self.tol {
            if !(tol > 0.0) {
                return bad("tol");
            }
        }
        if self.levels > 16 || self.reference_level > 16 {
            return Err(Error::Config("levels above 16 are not supported".into()));
        }
        let g = &self.reference_grid;
        if !(g.hi > g.lo) || g.points < 3 {
            return Err(Error::Config("reference grid needs hi > lo and at least 3 points".into()));
        }
        self.functional.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let cfg = ExperimentConfig::from_toml_str(
            r#"
model = "langevin"
levels = 3
tol = { kind = "per_level" }
functional = { kind = "discounted_sum", kappa = 2.0 }
"#,
        )
        .unwrap();
        assert_eq!(cfg.model, ModelKind::Langevin);
        assert_eq!(cfg.levels, 3);
        assert_eq!(cfg.tol.tol(2), 1e-3);
        assert_eq!(cfg.n0(), 256_000);
        assert_eq!(cfg.replicates, 20);
        let mut big = cfg.clone();
        big.paper_scale();
        assert_eq!((big.n0(), big.replicates), (8192 * 1000, 50));
        assert_ne!(big.hash(), cfg.hash());
        assert_eq!(ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);
    }

    #[test]
    fn invalid_configs_are_config_errors() {
        for text in [
            "order = 0",
            "batch_size = 0",
            "replicates = 0",
            "functional = { kind = \"discounted_sum\", kappa = -1.0 }",
            "tol = { kind = \"constant\", tol = 0.0 }",
            "model = \"heston\"",
            "unknown_key = 1",
            "levels = \"four\"",
        ] {
            let err = ExperimentConfig::from_toml_str(text).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text}: {err}");
        }
        assert!(ExperimentConfig::from_toml_str("n0_batches = 0").is_ok());
    }
}
