use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use softlimb::cosserat::{LimbGeometry, MaterialProperties, SolverOptions};
use softlimb::dataset::GeneratorConfig;
use softlimb::ffnn::FfnnConfig;
use softlimb::kt::KtConfig;
use softlimb::training::TrainConfig;
use softlimb::{Error, Result};

/// Everything a pipeline run depends on. Key names carry their units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToolkitConfig {
    /// Root of every random stream (dataset, split, init, shuffle).
    pub seed: u64,
    pub limb: LimbGeometry,
    pub material: MaterialProperties,
    pub solver: SolverOptions,
    pub dataset: GeneratorConfig,
    pub split: SplitConfig,
    pub kt: KtConfig,
    pub ffnn: FfnnConfig,
    pub train: TrainingConfigs,
    pub eval: EvalConfig,
    pub paths: PathsConfig,
}

impl Default for ToolkitConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            limb: LimbGeometry::default(),
            material: MaterialProperties::default(),
            solver: SolverOptions::default(),
            dataset: GeneratorConfig::default(),
            split: SplitConfig::default(),
            kt: KtConfig::default(),
            ffnn: FfnnConfig::default(),
            train: TrainingConfigs::default(),
            eval: EvalConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub train_fraction: f64,
    /// Steps between window starts; defaults to the window length.
    pub stride: Option<usize>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            stride: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfigs {
    pub kt: TrainConfig,
    pub ffnn: TrainConfig,
}

impl Default for TrainingConfigs {
    fn default() -> Self {
        Self {
            kt: TrainConfig::kt(),
            ffnn: TrainConfig::ffnn(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub timing_iterations: usize,
    pub timing_warmup: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            timing_iterations: 1000,
            timing_warmup: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub data: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            data: "episodes.jsonl".into(),
            out_dir: "runs".into(),
        }
    }
}

impl ToolkitConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let config: Self =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let as_config = |e: Error| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        };
        self.limb.validate().map_err(as_config)?;
        self.material.validate().map_err(as_config)?;
        self.solver.validate().map_err(as_config)?;
        self.dataset.validate()?;
        self.kt.validate()?;
        self.ffnn.validate()?;
        self.train.kt.validate()?;
        self.train.ffnn.validate()?;
        let f = self.split.train_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Config(format!(
                "split.train_fraction {f} must lie in (0, 1)"
            )));
        }
        if self.split.stride == Some(0) {
            return Err(Error::Config("split.stride must be positive".into()));
        }
        if self.eval.timing_iterations == 0 {
            return Err(Error::Config(
                "eval.timing_iterations must be positive".into(),
            ));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, embedded in every artifact.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("plain data serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn window(&self) -> usize {
        self.kt.sequence_length
    }

    pub fn stride(&self) -> usize {
        self.split.stride.unwrap_or(self.window())
    }
}
