//! Run configuration files (TOML). Every field is checked before any
//! computation starts; unknown keys are rejected by the parser.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::LambdaSpec;
use crate::error::{Error, Result};
use crate::kernels::Bins;
use crate::pointsets::ConfigSpec;
use crate::scattering::{PotentialProfile, ScatteringMap};
use crate::transport::{PhaseDensity, TestSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    FreePath,
    KernelEstimate,
    ScatterMap,
    Simulate,
    LimitSample,
    Transport,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MapSpec {
    #[default]
    HardSphere,
    MuffinTin {
        alpha: f64,
    },
    LinearWall {
        slope: f64,
    },
    /// Two-column CSV of r, W(r).
    Table {
        path: PathBuf,
    },
}

impl MapSpec {
    pub fn build(&self) -> Result<ScatteringMap> {
        match self {
            MapSpec::HardSphere => Ok(ScatteringMap::hard_sphere()),
            MapSpec::MuffinTin { alpha } => ScatteringMap::potential(PotentialProfile::muffin_tin(*alpha)?),
            MapSpec::LinearWall { slope } => ScatteringMap::potential(PotentialProfile::linear_wall(*slope)?),
            MapSpec::Table { path } => ScatteringMap::potential(PotentialProfile::from_csv(path)?),
        }
    }
}

/// Settings of the limit-sample experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitSettings {
    /// Collisions per sampled path.
    pub n_steps: usize,
    /// Paths written to the CSV export.
    #[serde(default = "default_export")]
    pub export_paths: usize,
    /// Time grid spacing of the CSV export.
    #[serde(default = "default_dt")]
    pub dt: f64,
}

fn default_export() -> usize {
    10
}

fn default_dt() -> f64 {
    0.05
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransportSettings {
    pub f0: PhaseDensity,
    pub times: Vec<f64>,
    pub sets: Vec<TestSet>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub configuration: ConfigSpec,
    #[serde(default)]
    pub map: MapSpec,
    pub rho: f64,
    pub dimension: usize,
    pub n_samples: usize,
    pub seed: u64,
    #[serde(default)]
    pub bins: Option<Bins>,
    pub output: PathBuf,
    /// Worker threads; 0 or absent means the environment default.
    #[serde(default)]
    pub threads: Option<usize>,
    /// Λ for macroscopic starts; unit cube by default.
    #[serde(default)]
    pub lambda: Option<LambdaSpec>,
    /// Collisions per trajectory (simulate, kernel-estimate).
    #[serde(default)]
    pub n_collisions: Option<usize>,
    #[serde(default)]
    pub limit: Option<LimitSettings>,
    #[serde(default)]
    pub transport: Option<TransportSettings>,
}

fn config_dim(spec: &ConfigSpec) -> Option<usize> {
    match spec {
        ConfigSpec::Poisson { dim, .. } | ConfigSpec::Cubic { dim } => Some(*dim),
        ConfigSpec::Lattice { basis } | ConfigSpec::PeriodicUnion { basis, .. } => Some(basis.len()),
        ConfigSpec::CutAndProject { dim, .. } => Some(*dim),
        ConfigSpec::Honeycomb | ConfigSpec::Z4Toy | ConfigSpec::AmmannBeenker => Some(2),
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let key = e.span().map(|s| text[s].trim().to_string()).unwrap_or_default();
            Error::config(key, e.message().trim().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let text = std::fs::read_to_string(path)?;
        let cfg = Self::from_toml(&text)?;
        Ok((cfg, text))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::config("rho", format!("{} must lie in (0, 1)", self.rho)));
        }
        if !(2..=3).contains(&self.dimension) {
            return Err(Error::config("dimension", format!("{} must be 2 or 3", self.dimension)));
        }
        if config_dim(&self.configuration) != Some(self.dimension) {
            return Err(Error::config("configuration", "dimension does not match `dimension`"));
        }
        if self.n_samples == 0 {
            return Err(Error::config("n_samples", "must be positive"));
        }
        if let Some(b) = &self.bins {
            b.validate(self.dimension).map_err(|e| Error::config("bins", e.to_string()))?;
        }
        if let Some(LambdaSpec::UniformCube { side }) = &self.lambda {
            if !(*side > 0.0) {
                return Err(Error::config("lambda.side", "must be positive"));
            }
        }
        if let Some(LambdaSpec::PointMass { q }) = &self.lambda {
            if q.len() != self.dimension {
                return Err(Error::config("lambda.q", "wrong dimension"));
            }
        }
        if self.n_collisions == Some(0) {
            return Err(Error::config("n_collisions", "must be positive"));
        }
        match self.experiment {
            Experiment::LimitSample => {
                let l = self.limit.as_ref().ok_or_else(|| Error::config("limit", "required for limit-sample"))?;
                if l.n_steps == 0 || !(l.dt > 0.0) {
                    return Err(Error::config("limit", "n_steps and dt must be positive"));
                }
            }
            Experiment::Transport => {
                let t = self.transport.as_ref().ok_or_else(|| Error::config("transport", "required for transport"))?;
                t.f0.validate().map_err(|e| Error::config("transport.f0", e.to_string()))?;
                if t.f0.dim() != self.dimension {
                    return Err(Error::config("transport.f0", "wrong dimension"));
                }
                if t.times.is_empty() || t.times.iter().any(|x| !(*x >= 0.0)) {
                    return Err(Error::config("transport.times", "need non-negative times"));
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn lambda(&self) -> LambdaSpec {
        self.lambda.clone().unwrap_or(LambdaSpec::UniformCube { side: 1.0 })
    }
}

/// Hex SHA-256 of the config text.
pub fn config_hash(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
experiment = "free-path"
rho = 0.005
dimension = 2
n_samples = 1000
seed = 1
output = "out"

[configuration]
family = "poisson"
intensity = 1.0
seed = 7
dim = 2
"#;

    #[test]
    fn parses_minimal_config() {
        let c = RunConfig::from_toml(BASE).unwrap();
        assert_eq!(c.experiment, Experiment::FreePath);
        assert_eq!(c.map, MapSpec::HardSphere);
    }

    #[test]
    fn negative_rho_names_key() {
        let text = BASE.replace("rho = 0.005", "rho = -1");
        let err = RunConfig::from_toml(&text).unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "rho"), "{err}");
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = BASE.replace("seed = 1\n", "seed = 1\nsede = 2\n");
        assert!(matches!(RunConfig::from_toml(&text), Err(Error::Config { .. })));
        let text = BASE.replace("dim = 2\n", "dim = 2\ncolour = 3\n");
        assert!(RunConfig::from_toml(&text).is_err());
    }

    #[test]
    fn dimension_must_match_configuration() {
        let text = BASE.replace("dimension = 2", "dimension = 3");
        assert!(RunConfig::from_toml(&text).is_err());
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(config_hash("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
