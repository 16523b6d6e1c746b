//! The run configuration document (TOML). Every section is optional and
//! unknown keys are rejected.

use std::path::Path;

use mogen::dataset::Corpus;
use mogen::latent::SelectKOptions;
use mogen::metrics::{ClassifierConfig, CustomizationProtocol, EvalProtocol};
use mogen::model::ModelConfig;
use mogen::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Desk,
    Reference,
}

/// Layer sizes: a preset sized to the corpus, optionally replaced by an
/// explicit `[model]` table.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub preset: Preset,
    /// Model-initialization seed.
    pub seed: u64,
    pub explicit: Option<ModelConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModesSection {
    pub seed: u64,
    pub k_min: usize,
    pub k_max: usize,
    pub ratio: f64,
    pub min_members: usize,
}

impl Default for ModesSection {
    fn default() -> Self {
        let o = SelectKOptions::default();
        Self {
            seed: 0,
            k_min: o.k_min,
            k_max: o.k_max,
            ratio: o.ratio,
            min_members: o.min_members,
        }
    }
}

impl ModesSection {
    pub fn select_k(&self) -> SelectKOptions {
        SelectKOptions {
            k_min: self.k_min,
            k_max: self.k_max,
            ratio: self.ratio,
            min_members: self.min_members,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelSection,
    pub train: TrainConfig,
    pub modes: ModesSection,
    pub classifier: ClassifierConfig,
    pub eval: EvalProtocol,
    pub customization: CustomizationProtocol,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> CliResult<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    /// Model configuration for `corpus`, with endpoint conditioning taken
    /// from the training ablation flags.
    pub fn model_config(&self, corpus: &Corpus) -> CliResult<ModelConfig> {
        let skeleton = &corpus.manifest.skeleton;
        let cfg = match &self.model.explicit {
            Some(c) => c.clone(),
            None => {
                let args = (skeleton.joints(), skeleton.root, self.train.window, corpus.num_categories());
                let mut c = match self.model.preset {
                    Preset::Desk => ModelConfig::desk(args.0, args.1, args.2, args.3),
                    Preset::Reference => ModelConfig::reference(args.0, args.1, args.2, args.3),
                };
                c.endpoint_conditioning = !self.train.ablation.no_endpoint;
                c
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
