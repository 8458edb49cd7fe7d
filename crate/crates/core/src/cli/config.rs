//! Config-file layering: built-in defaults, then the TOML file, then flags.

use crate::dualnet::ModelConfig;
use crate::synthform::CorpusConfig;
use anyhow::Context;
use clap::ValueEnum;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use toml::{Table, Value};

/// Named starting points for the model configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelPreset {
    /// Width 128, 16 x 8 grid, six fusion layers.
    Default,
    /// Width 128, 16 x 8 grid, two fusion layers; trains in minutes.
    Small,
    /// Width 768 with the 32 x 24 grid.
    Large,
    /// Width 8, for smoke tests.
    Tiny,
}

impl ModelPreset {
    pub fn config(self) -> ModelConfig {
        match self {
            ModelPreset::Default => ModelConfig::default(),
            ModelPreset::Small => ModelConfig::small(),
            ModelPreset::Large => ModelConfig::large(),
            ModelPreset::Tiny => ModelConfig::tiny(),
        }
    }
}

/// Contents of a `--config` file. Tables are kept raw so that they can be
/// layered over whichever base the command starts from.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFile {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub preset: Option<ModelPreset>,
    pub corpus: Option<Table>,
    pub model: Option<Table>,
}

/// Recursively overlays `over` onto `base`; tables merge, other values replace.
pub fn merge_toml(base: &mut Table, over: &Table) {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge_toml(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

fn layered<T: Serialize + DeserializeOwned>(base: &T, over: Option<&Table>, what: &str) -> anyhow::Result<T> {
    let Some(over) = over else {
        return Ok(toml::from_str(&toml::to_string(base)?)?);
    };
    let mut table: Table = toml::from_str(&toml::to_string(base)?).with_context(|| format!("encoding default {what}"))?;
    merge_toml(&mut table, over);
    T::deserialize(Value::Table(table)).with_context(|| format!("invalid [{what}] table"))
}

impl RunFile {
    pub fn load(path: &Path) -> anyhow::Result<RunFile> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn corpus_config(&self) -> anyhow::Result<CorpusConfig> {
        layered(&CorpusConfig::default(), self.corpus.as_ref(), "corpus")
    }

    /// The model config starting from `preset` (flag), else the file's
    /// preset, else the default.
    pub fn model_config(&self, preset: Option<ModelPreset>) -> anyhow::Result<ModelConfig> {
        let base = preset.or(self.preset).unwrap_or(ModelPreset::Default).config();
        layered(&base, self.model.as_ref(), "model")
    }
}
