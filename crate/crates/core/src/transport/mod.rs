//! Monotone triangular transport maps for pairs of consecutive grid nodes and
//! their composition into a sampler of the discretised smoother.
//!
//! Each pair map works in permuted coordinates `(w₁, w₂) = (z_{t+h}, z_t)`:
//! the first component `T₁(w₁)` is the filter map of `x_{t+h}`, the second
//! `T₂(w₁, w₂)` produces `x_t`.

pub mod basis;
pub mod component;
pub mod fit;
pub mod objective;
pub mod quadrature;
pub mod target;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::discretization::LevelGrid;
use crate::error::{Error, Result};

pub use basis::{BasisKind, BasisSpec, MAX_FAST_ORDER};
pub use component::MonotoneComponent;
pub use fit::{build_level_maps, build_levels, fit_pair_map, FitOptions, FitReport, PairFit, TolSchedule};
pub use objective::{kl_objective, KlObjective};
pub use quadrature::QuadratureRule;
pub use target::{build_pair_target, PairTarget, TargetKind};

/// Format version of serialised map files.
pub const MAP_FORMAT_VERSION: u32 = 1;

/// Pair map `M_t`; `components()[0]` is the filter component.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangularMap {
    pub level: u32,
    pub t_index: usize,
    filter: MonotoneComponent,
    joint: MonotoneComponent,
}

impl TriangularMap {
    pub fn new(level: u32, t_index: usize, filter: MonotoneComponent, joint: MonotoneComponent) -> Result<Self> {
        if filter.spec().prefix_dim != 0 || joint.spec().prefix_dim != 1 {
            return Err(Error::ContractViolation("pair map components must have indices 1 and 2".into()));
        }
        Ok(Self {
            level,
            t_index,
            filter,
            joint,
        })
    }

    pub fn identity(level: u32, t_index: usize, s1: BasisSpec, s2: BasisSpec) -> Self {
        Self::new(level, t_index, MonotoneComponent::identity(s1), MonotoneComponent::identity(s2))
            .expect("identity components")
    }

    /// `x_{t+h} = m2 + s2·z_{t+h}`, `x_t = m1 + c·z_{t+h} + s1·z_t`.
    #[allow(clippy::too_many_arguments)]
    pub fn affine(
        level: u32,
        t_index: usize,
        kind: BasisKind,
        order: usize,
        m2: f64,
        s2: f64,
        m1: f64,
        c: f64,
        s1: f64,
    ) -> Result<Self> {
        let spec1 = BasisSpec { kind, order, prefix_dim: 0 };
        let spec2 = BasisSpec { kind, order, prefix_dim: 1 };
        Self::new(
            level,
            t_index,
            MonotoneComponent::affine(spec1, m2, &[], s2)?,
            MonotoneComponent::affine(spec2, m1, &[c], s1)?,
        )
    }

    /// Permutation reversing the pair `(x_t, x_{t+h})`.
    pub fn permutation(&self) -> [usize; 2] {
        [2, 1]
    }

    pub fn components(&self) -> [&MonotoneComponent; 2] {
        [&self.filter, &self.joint]
    }

    pub fn filter_component(&self) -> &MonotoneComponent {
        &self.filter
    }

    /// All coefficients stacked as `[a₁, b₁, a₂, b₂]`.
    pub fn coefficients(&self) -> Vec<f64> {
        let mut v = self.filter.a_coeffs().to_vec();
        v.extend_from_slice(self.filter.b_coeffs());
        v.extend_from_slice(self.joint.a_coeffs());
        v.extend_from_slice(self.joint.b_coeffs());
        v
    }

    /// The map in permuted coordinates, `(T₁(w₁), T₂(w₁, w₂))`.
    pub fn eval_permuted(&self, w: [f64; 2]) -> [f64; 2] {
        [self.filter.eval(&w[..1]), self.joint.eval(&w)]
    }

    pub fn partials_permuted(&self, w: [f64; 2]) -> [f64; 2] {
        [self.filter.partial(&w[..1]), self.joint.partial(&w)]
    }

    /// `(x_t, x_{t+h}) = (M¹(z_t, z_{t+h}), M²(z_{t+h}))`.
    pub fn apply_pair(&self, z_t: f64, z_next: f64) -> (f64, f64) {
        let [x_next, x_t] = self.eval_permuted([z_next, z_t]);
        (x_t, x_next)
    }

    /// `M²(z)`, pushing the reference law to the filter at `t + h`.
    pub fn filter_map(&self, z: f64) -> f64 {
        self.filter.eval(&[z])
    }
}

/// All pair maps of one level, ordered by `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct MapComposition {
    pub level: u32,
    pub intervals: usize,
    pub obs_interval: f64,
    pub maps: Vec<TriangularMap>,
}

impl MapComposition {
    pub fn new(level: u32, intervals: usize, obs_interval: f64, maps: Vec<TriangularMap>) -> Result<Self> {
        let expected = (1usize << level) * intervals;
        if maps.len() != expected {
            return Err(Error::ContractViolation(format!(
                "level {level} needs {expected} maps, got {}",
                maps.len()
            )));
        }
        for (t, m) in maps.iter().enumerate() {
            if m.level != level || m.t_index != t {
                return Err(Error::ContractViolation(format!(
                    "map {t} is labelled (level {}, t {})",
                    m.level, m.t_index
                )));
            }
        }
        Ok(Self {
            level,
            intervals,
            obs_interval,
            maps,
        })
    }

    pub fn grid(&self) -> LevelGrid {
        LevelGrid::new(self.level, self.intervals, self.obs_interval)
    }

    /// Input and output length `M_l·T + 1`.
    pub fn len(&self) -> usize {
        self.maps.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Applies `G_{T-h}` first and `G_0` last, in place.
    pub fn apply_in_place(&self, x: &mut [f64]) -> Result<()> {
        if x.len() != self.len() {
            return Err(Error::ContractViolation(format!(
                "composition at level {} takes {} coordinates, got {}",
                self.level,
                self.len(),
                x.len()
            )));
        }
        for (t, m) in self.maps.iter().enumerate().rev() {
            let (a, b) = m.apply_pair(x[t], x[t + 1]);
            x[t] = a;
            x[t + 1] = b;
        }
        Ok(())
    }

    pub fn apply(&self, z: &[f64]) -> Result<Vec<f64>> {
        let mut x = z.to_vec();
        self.apply_in_place(&mut x)?;
        Ok(x)
    }

    /// Terminal filter map `M²_{T-h}`.
    pub fn terminal_filter(&self) -> &TriangularMap {
        self.maps.last().expect("non-empty composition")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentDocument {
    pub index: usize,
    pub a_coeffs: Vec<f64>,
    pub b_coeffs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapDocument {
    pub level: u32,
    pub t: usize,
    pub o_m: usize,
    pub basis_spec: BasisKind,
    pub components: Vec<ComponentDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelMapsDocument {
    pub version: u32,
    pub level: u32,
    pub intervals: usize,
    pub obs_interval: f64,
    pub maps: Vec<MapDocument>,
}

impl From<&TriangularMap> for MapDocument {
    fn from(m: &TriangularMap) -> Self {
        let s = m.filter.spec();
        MapDocument {
            level: m.level,
            t: m.t_index,
            o_m: s.order,
            basis_spec: s.kind,
            components: m
                .components()
                .iter()
                .map(|c| ComponentDocument {
                    index: c.index(),
                    a_coeffs: c.a_coeffs().to_vec(),
                    b_coeffs: c.b_coeffs().to_vec(),
                })
                .collect(),
        }
    }
}

impl TryFrom<&MapDocument> for TriangularMap {
    type Error = Error;

    fn try_from(d: &MapDocument) -> Result<Self> {
        if d.components.len() != 2 {
            return Err(Error::Config(format!("map (level {}, t {}) needs two components", d.level, d.t)));
        }
        let mut comps = Vec::with_capacity(2);
        for (i, c) in d.components.iter().enumerate() {
            if c.index != i + 1 {
                return Err(Error::Config(format!("unexpected component index {}", c.index)));
            }
            let spec = BasisSpec { kind: d.basis_spec, order: d.o_m, prefix_dim: i };
            comps.push(
                MonotoneComponent::new(spec, c.a_coeffs.clone(), c.b_coeffs.clone())
                    .map_err(|e| Error::Config(e.to_string()))?,
            );
        }
        let joint = comps.pop().expect("two components");
        let filter = comps.pop().expect("two components");
        TriangularMap::new(d.level, d.t, filter, joint)
    }
}

impl MapComposition {
    pub fn to_document(&self) -> LevelMapsDocument {
        LevelMapsDocument {
            version: MAP_FORMAT_VERSION,
            level: self.level,
            intervals: self.intervals,
            obs_interval: self.obs_interval,
            maps: self.maps.iter().map(MapDocument::from).collect(),
        }
    }

    pub fn from_document(d: &LevelMapsDocument) -> Result<Self> {
        if d.version != MAP_FORMAT_VERSION {
            return Err(Error::Config(format!("unsupported map format version {}", d.version)));
        }
        let maps = d.maps.iter().map(TriangularMap::try_from).collect::<Result<Vec<_>>>()?;
        Self::new(d.level, d.intervals, d.obs_interval, maps)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.to_document())?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let doc: LevelMapsDocument = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_document(&doc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn specs() -> (BasisSpec, BasisSpec) {
        (
            BasisSpec { kind: BasisKind::HermiteFunction, order: 4, prefix_dim: 0 },
            BasisSpec { kind: BasisKind::HermiteFunction, order: 4, prefix_dim: 1 },
        )
    }

    fn sample_map(level: u32, t: usize) -> TriangularMap {
        let (s1, s2) = specs();
        let c1 = MonotoneComponent::new(s1, vec![0.3], vec![0.9, 0.1, 0.0, -0.1, 0.05]).unwrap();
        let b2: Vec<f64> = (0..15).map(|k| if k == 0 { 1.1 } else { 0.02 * k as f64 }).collect();
        let c2 = MonotoneComponent::new(s2, vec![0.1, 0.4, 0.0, 0.1, 0.0], b2).unwrap();
        TriangularMap::new(level, t, c1, c2).unwrap()
    }

    #[test]
    fn identity_composition_is_identity() {
        let (s1, s2) = specs();
        let maps = (0..8).map(|t| TriangularMap::identity(1, t, s1, s2)).collect();
        let g = MapComposition::new(1, 4, 1.0, maps).unwrap();
        let z: Vec<f64> = (0..9).map(|i| 0.3 * i as f64 - 1.0).collect();
        let x = g.apply(&z).unwrap();
        for (a, b) in x.iter().zip(&z) {
            assert!((a - b).abs() < 1e-13);
        }
        assert!(matches!(g.apply(&z[..8]), Err(Error::ContractViolation(_))));
        assert!(MapComposition::new(1, 4, 1.0, vec![]).is_err());
    }

    #[test]
    fn single_map_composition() {
        let m = sample_map(0, 0);
        let g = MapComposition::new(0, 1, 1.0, vec![m.clone()]).unwrap();
        let x = g.apply(&[0.4, -0.7]).unwrap();
        assert_eq!(x[1], m.filter_component().eval(&[-0.7]));
        assert_eq!(x[0], m.components()[1].eval(&[-0.7, 0.4]));
    }

    #[test]
    fn composition_order_is_last_map_first() {
        let maps: Vec<_> = (0..2).map(|t| sample_map(0, t)).collect();
        let g = MapComposition::new(0, 2, 1.0, maps.clone()).unwrap();
        let z = [0.2, -0.5, 1.1];
        let x = g.apply(&z).unwrap();
        let (x1_ref, x2) = maps[1].apply_pair(z[1], z[2]);
        let (x0, x1) = maps[0].apply_pair(z[0], x1_ref);
        assert_eq!(x, vec![x0, x1, x2]);
    }

    #[test]
    fn triangularity_in_permuted_coordinates() {
        let m = sample_map(0, 0);
        let a = m.eval_permuted([0.3, -1.0]);
        let b = m.eval_permuted([0.3, 2.5]);
        assert_eq!(a[0], b[0]);
        assert_ne!(a[1], b[1]);
        assert_eq!(m.permutation(), [2, 1]);
    }

    #[test]
    fn json_roundtrip() {
        let maps = (0..4).map(|t| sample_map(0, t)).collect();
        let g = MapComposition::new(0, 4, 1.0, maps).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("maps.json");
        g.save_json(&p).unwrap();
        assert_eq!(MapComposition::load_json(&p).unwrap(), g);
        let mut doc = g.to_document();
        doc.version = 99;
        assert!(matches!(MapComposition::from_document(&doc), Err(Error::Config(_))));
    }
}
