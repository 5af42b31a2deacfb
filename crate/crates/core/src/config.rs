//! Run configuration read from JSON documents.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adaptive::{MlBackend, RetrainPolicy, StagnationConfig};
use crate::error::{Error, Result};
use crate::hapod::HapodConfig;
use crate::model::ParameterBox;
use crate::optimize::NelderMeadConfig;
use crate::problems::{HeatTestConfig, ProblemConfig};

/// Fixed tolerance, or stagnation-driven tolerance adaptation (optimization only).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ToleranceConfig {
    Fixed { epsilon: f64 },
    Adaptive(StagnationConfig),
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        ToleranceConfig::Fixed { epsilon: 1e-3 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizeSettings {
    /// Parameter whose full-order output is the target; `None` means the box center.
    pub reference: Option<Vec<f64>>,
    pub nelder_mead: NelderMeadConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloSettings {
    pub samples: usize,
    /// Queries re-checked against fresh full-order solves (spread evenly over the run).
    pub audit: usize,
}

impl Default for MonteCarloSettings {
    fn default() -> Self {
        Self { samples: 300, audit: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateSettings {
    /// Parameters the reduced basis is built from.
    pub training: usize,
    pub samples: usize,
}

impl Default for ValidateSettings {
    fn default() -> Self {
        Self { training: 3, samples: 20 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    #[serde(default)]
    pub tolerance: ToleranceConfig,
    #[serde(default)]
    pub ml: MlBackend,
    #[serde(default)]
    pub retrain: RetrainPolicy,
    #[serde(default)]
    pub hapod: HapodConfig,
    /// Seeds parameter sampling and network initialization.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub optimize: OptimizeSettings,
    #[serde(default)]
    pub monte_carlo: MonteCarloSettings,
    #[serde(default)]
    pub validate: ValidateSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            problem: ProblemConfig::HeatTest(HeatTestConfig::default()),
            tolerance: ToleranceConfig::default(),
            ml: MlBackend::default(),
            retrain: RetrainPolicy::default(),
            hapod: HapodConfig::default(),
            seed: 0,
            output_dir: None,
            optimize: OptimizeSettings::default(),
            monte_carlo: MonteCarloSettings::default(),
            validate: ValidateSettings::default(),
        }
    }
}

impl RunConfig {
    /// Parses JSON; errors name the offending field path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_json(&text)
    }

    /// Fixed tolerance, or the starting tolerance of an adaptive run if given explicitly.
    pub fn fixed_epsilon(&self) -> Option<f64> {
        match &self.tolerance {
            ToleranceConfig::Fixed { epsilon } => Some(*epsilon),
            ToleranceConfig::Adaptive(s) => s.initial_epsilon,
        }
    }

    /// Seed applied to network initialization.
    pub fn seeded_backend(&self) -> MlBackend {
        let mut backend = self.ml.clone();
        if let MlBackend::Mlp { config } = &mut backend {
            config.train.seed = self.seed;
        }
        backend
    }
}

/// Default optimizer start: `(2, 10.5)` for the reactive flow, otherwise the point at a
/// quarter of each parameter range.
pub fn default_initial_guess(problem: &ProblemConfig, bounds: &ParameterBox) -> Vec<f64> {
    match problem {
        ProblemConfig::ReactiveFlow(_) if bounds.dim() == 2 => bounds.clip(&[2.0, 10.5]),
        _ => bounds.lower.iter().zip(&bounds.upper).map(|(l, u)| l + 0.25 * (u - l)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_document_uses_defaults() {
        let c = RunConfig::from_json(r#"{"problem": {"kind": "heat_test"}}"#).unwrap();
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn round_trip() {
        let mut c = RunConfig::default();
        c.tolerance = ToleranceConfig::Adaptive(StagnationConfig { n_av: Some(6), ..Default::default() });
        c.retrain = RetrainPolicy::Batch { size: 200 };
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), c);
    }

    #[test]
    fn errors_point_at_the_field() {
        let err = RunConfig::from_json(r#"{"problem": {"kind": "heat_test"}, "monte_carlo": {"samples": "many"}}"#)
            .unwrap_err();
        match err {
            Error::Config { path, .. } => assert_eq!(path, "monte_carlo.samples"),
            e => panic!("unexpected {e:?}"),
        }
        // tagged variants are buffered, so the path stops at the enum
        let err = RunConfig::from_json(r#"{"problem": {"kind": "heat_test", "nx": "eight"}}"#).unwrap_err();
        assert!(matches!(err, Error::Config { ref path, .. } if path == "problem"), "{err:?}");
        let err = RunConfig::from_json(r#"{"problem": {"kind": "heat_test"}, "tolerance": {"kind": "fixed", "eps": 1}}"#)
            .unwrap_err();
        assert!(matches!(err, Error::Config { ref path, .. } if path.starts_with("tolerance")), "{err:?}");
    }

    #[test]
    fn seed_reaches_network_training() {
        let c = RunConfig {
            seed: 42,
            ml: MlBackend::Mlp { config: Default::default() },
            ..Default::default()
        };
        match c.seeded_backend() {
            MlBackend::Mlp { config } => assert_eq!(config.train.seed, 42),
            _ => unreachable!(),
        }
    }
}
