//! Experiment configuration files (TOML).
//!
//! ```toml
//! seed = 7
//! map = { kind = "linear", domains = [[0.0, 0.5], [0.5, 1.0]] }
//! potential = { kind = "indicator", prefix = "1" }
//!
//! [spectrum]
//! grid = { start = 0.1, stop = 0.9, count = 9 }
//!
//! [irregular]
//! mu = { bernoulli = [0.5, 0.5] }
//! nu = { bernoulli = [0.9, 0.1] }
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::interval_maps::{BranchMap, MapDescriptor};
use crate::measures::MeasureDescriptor;
use crate::moran::DEFAULT_HARVEST_BUDGET;
use crate::potentials::{Potential, PotentialDescriptor};
use crate::spectrum::SpectrumConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root seed; every stochastic task derives its seed from it.
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub map: MapDescriptor,
    pub potential: Option<PotentialDescriptor>,
    pub spectrum: Option<SpectrumSection>,
    pub irregular: Option<IrregularSection>,
    pub boxdim: Option<BoxdimSection>,
}

/// `count` evenly spaced values from `start` to `stop` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

impl Grid {
    pub fn values(&self) -> Vec<f64> {
        match self.count {
            0 => Vec::new(),
            1 => vec![self.start],
            n => (0..n)
                .map(|k| self.start + (self.stop - self.start) * k as f64 / (n - 1) as f64)
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumSection {
    /// Explicit α values, evaluated before the grid.
    pub alphas: Vec<f64>,
    pub grid: Option<Grid>,
    /// Report the hyperbolic dimension (the unconstrained supremum) instead.
    pub sup: bool,
    pub solver: SpectrumConfig,
}

impl SpectrumSection {
    pub fn alpha_values(&self) -> Vec<f64> {
        let mut out = self.alphas.clone();
        if let Some(g) = &self.grid {
            out.extend(g.values());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IrregularSection {
    pub mu: MeasureDescriptor,
    pub nu: MeasureDescriptor,
    #[serde(default = "defaults::stages")]
    pub stages: usize,
    #[serde(default = "defaults::base_length")]
    pub base_length: usize,
    #[serde(default = "defaults::growth")]
    pub growth: f64,
    #[serde(default = "defaults::eps0")]
    pub eps0: f64,
    #[serde(default = "defaults::delta")]
    pub delta: f64,
    #[serde(default = "defaults::harvest_budget")]
    pub harvest_budget: usize,
    /// Points for local-dimension estimates.
    #[serde(default = "defaults::points")]
    pub points: usize,
    /// Words whose oscillation profile is recorded.
    #[serde(default = "defaults::profiles")]
    pub profiles: usize,
    /// Size of the generated point cloud for box counting.
    #[serde(default = "defaults::cloud")]
    pub cloud: usize,
    /// Symbols per cloud point.
    #[serde(default = "defaults::cloud_depth")]
    pub cloud_depth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxdimSection {
    #[serde(default = "defaults::depth")]
    pub depth: usize,
    #[serde(default = "defaults::attractor_budget")]
    pub budget: usize,
    #[serde(default)]
    pub scales: Option<ScaleGrid>,
}

impl Default for BoxdimSection {
    fn default() -> Self {
        BoxdimSection {
            depth: defaults::depth(),
            budget: defaults::attractor_budget(),
            scales: None,
        }
    }
}

/// Scales `start·ratio^k`, `k < count`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaleGrid {
    pub start: f64,
    pub ratio: f64,
    pub count: usize,
}

mod defaults {
    pub fn stages() -> usize {
        6
    }
    pub fn base_length() -> usize {
        10
    }
    pub fn growth() -> f64 {
        4.0
    }
    pub fn eps0() -> f64 {
        0.4
    }
    pub fn delta() -> f64 {
        0.1
    }
    pub fn harvest_budget() -> usize {
        super::DEFAULT_HARVEST_BUDGET
    }
    pub fn points() -> usize {
        50
    }
    pub fn profiles() -> usize {
        4
    }
    pub fn cloud() -> usize {
        10_000
    }
    pub fn cloud_depth() -> usize {
        64
    }
    pub fn depth() -> usize {
        10
    }
    pub fn attractor_budget() -> usize {
        crate::dimension::ATTRACTOR_BUDGET
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| invalid(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn build_map(&self) -> Result<BranchMap> {
        self.map.build()
    }

    /// The configured potential, if any.
    pub fn build_potential(&self, map: &BranchMap) -> Result<Option<Potential>> {
        self.potential.as_ref().map(|p| p.build(map)).transpose()
    }

    pub fn require_potential(&self, map: &BranchMap) -> Result<Potential> {
        self.build_potential(map)?
            .ok_or_else(|| invalid("this command needs a potential"))
    }

    pub fn require_seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| {
            invalid("a seed is mandatory for stochastic commands (config `seed` or --seed)")
        })
    }

    pub fn require_irregular(&self) -> Result<&IrregularSection> {
        self.irregular
            .as_ref()
            .ok_or_else(|| invalid("missing [irregular] section"))
    }
}

/// Seed of the `index`-th instance of `task` under `root` (SplitMix64
/// finalizer). Tasks: 1 harvest, 2 local-dimension points, 3 cloud points,
/// 4 profile words.
pub fn task_seed(root: u64, task: u64, index: u64) -> u64 {
    let mut z = root
        .wrapping_add(task.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        invalid(format!("config: {e}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const REFERENCE: &str = r#"
seed = 3
map = { kind = "linear", domains = [[0.0, 0.5], [0.5, 1.0]] }
potential = { kind = "indicator", prefix = "1" }

[spectrum]
grid = { start = 0.1, stop = 0.9, count = 9 }
solver = { starts = 8 }

[irregular]
mu = { bernoulli = [0.5, 0.5] }
nu = { bernoulli = [0.9, 0.1] }
stages = 4

[boxdim]
depth = 8
"#;

    #[test]
    fn parses_reference_config() {
        let cfg = ExperimentConfig::from_toml(REFERENCE).unwrap();
        assert_eq!(cfg.seed, Some(3));
        let map = cfg.build_map().unwrap();
        assert_eq!(map.branch_count(), 2);
        assert!(cfg.require_potential(&map).is_ok());
        let spec = cfg.spectrum.as_ref().unwrap();
        assert_eq!(spec.alpha_values().len(), 9);
        assert!((spec.alpha_values()[8] - 0.9).abs() < 1e-12);
        assert_eq!(spec.solver.starts, 8);
        assert_eq!(spec.solver.order, 1);
        let irr = cfg.require_irregular().unwrap();
        assert_eq!((irr.stages, irr.base_length, irr.points), (4, 10, 50));
        assert_eq!(cfg.boxdim.as_ref().unwrap().depth, 8);
    }

    #[test]
    fn rejects_unknown_keys_and_missing_map() {
        assert!(ExperimentConfig::from_toml("map = { kind = \"farey\" }\nbogus = 1").is_err());
        assert!(ExperimentConfig::from_toml("seed = 1").is_err());
        let cfg = ExperimentConfig::from_toml("map = { kind = \"farey\" }").unwrap();
        assert!(cfg.require_seed().is_err());
        assert!(cfg.require_irregular().is_err());
    }

    #[test]
    fn grids() {
        assert!(Grid {
            start: 0.0,
            stop: 1.0,
            count: 0
        }
        .values()
        .is_empty());
        assert_eq!(
            Grid {
                start: 0.3,
                stop: 1.0,
                count: 1
            }
            .values(),
            vec![0.3]
        );
    }

    #[test]
    fn task_seeds_differ() {
        let a = task_seed(1, 2, 0);
        assert_ne!(a, task_seed(1, 2, 1));
        assert_ne!(a, task_seed(1, 3, 0));
        assert_ne!(a, task_seed(2, 2, 0));
        assert_eq!(a, task_seed(1, 2, 0));
    }
}
