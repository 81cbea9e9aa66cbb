//! Run configuration: one TOML file with a section per stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{CamConfig, RiseConfig};
use crate::data::PhantomConfig;
use crate::losses::LossWeights;
use crate::metrics::EvalSettings;
use crate::models::{ClassifierSpec, DiscriminatorSpec, GeneratorSpec};
use crate::training::TrainConfig;
use crate::{seed, Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Classifier checkpoint consumed by the GAN stage and by evaluation.
    pub classifier_checkpoint: Option<PathBuf>,
    pub generator_checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainerOptions {
    /// Organ/background masked reconstruction instead of plain L1.
    pub use_masks: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; when set it replaces the per-section seeds with stable derivations.
    pub seed: Option<u64>,
    pub data: PhantomConfig,
    pub training: TrainConfig,
    pub losses: LossWeights,
    pub classifier: ClassifierSpec,
    pub generator: GeneratorSpec,
    pub discriminator: DiscriminatorSpec,
    pub explainer: ExplainerOptions,
    pub evaluation: EvalSettings,
    pub rise: RiseConfig,
    pub cam: CamConfig,
    pub paths: Paths,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut config: Self = toml::from_str(text).map_err(|e| Error::config("config", e.to_string()))?;
        config.apply_seed();
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config { field, reason } => Error::Config { field, reason: format!("{}: {reason}", path.display()) },
            other => other,
        })
    }

    /// Effective configuration with every default spelled out.
    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_toml_string()).map_err(|e| Error::io(path, e))
    }

    pub fn set_seed(&mut self, value: u64) {
        self.seed = Some(value);
        self.apply_seed();
    }

    fn apply_seed(&mut self) {
        if let Some(s) = self.seed {
            self.data.seed = seed::derive(s, "data");
            self.training.seed = seed::derive(s, "training");
            self.rise.seed = seed::derive(s, "rise");
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.training.validate()?;
        self.losses.validate()?;
        self.classifier.validate()?;
        self.generator.validate()?;
        self.discriminator.validate()?;
        self.rise.validate()?;
        let size = self.data.image_size;
        for (field, s) in [
            ("classifier.input_size", self.classifier.input_size),
            ("generator.input_size", self.generator.input_size),
            ("discriminator.input_size", self.discriminator.input_size),
        ] {
            if s != size {
                return Err(Error::config(field, format!("{s} differs from data.image_size = {size}")));
            }
        }
        if self.discriminator.conditional != (self.generator.n_conditions == 2) {
            return Err(Error::config(
                "discriminator.conditional",
                "must be true exactly when generator.n_conditions = 2",
            ));
        }
        self.evaluation.validate()?;
        Ok(())
    }
}
