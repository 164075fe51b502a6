//! Run configuration: one JSON document covering dataset, model, and
//! training, with dotted-path `key=value` overrides layered on top.

use crate::data::DatasetConfig;
use crate::error::{Error, Result};
use crate::models::{CondMode, ModelConfig};
use crate::train::TrainConfig;
use std::path::Path;

/// What the `train` command trains. Recorded in the config echo so a run is
/// reproducible from its output directory alone.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    /// Fully conditioned GAN: the generator maps (class, view, transform)
    /// to an image + mask, no noise input.
    #[default]
    GanAbs,
    /// Class-conditioned GAN with a noise input and rgb-only images.
    GanPartial,
    /// Supervised baseline: the fully conditioned generator fitted to the
    /// renderer with masked mean squared error.
    L2,
}

impl RunMode {
    /// The conditioning regime the mode implies for the networks.
    pub fn cond_mode(self) -> CondMode {
        match self {
            RunMode::GanAbs | RunMode::L2 => CondMode::Absolute,
            RunMode::GanPartial => CondMode::Partial,
        }
    }
}

/// Everything a run needs. Any subset may appear in the file; the rest keeps
/// its defaults. Unknown keys are rejected so typos fail loudly.
#[derive(Clone, Debug, PartialEq, Default, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub mode: RunMode,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.model.validate()?;
        self.train.validate()
    }

    /// Force the conditioning regime implied by `mode` onto the train config,
    /// making `mode` the single source of truth for which networks exist.
    /// Class-only conditioning has no view or transform negatives, so their
    /// weights drop to zero rather than failing validation.
    pub fn normalized(mut self) -> Self {
        self.train.mode = self.mode.cond_mode();
        if self.mode == RunMode::GanPartial {
            self.train.weights.gamma_v = 0.0;
            self.train.weights.gamma_t = 0.0;
        }
        self
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&text)?;
        Ok(cfg)
    }

    /// Apply `key=value` overrides addressed by dotted path, e.g.
    /// `train.cadence=5` or `dataset.img_size=16`. Values parse as JSON
    /// first (numbers, booleans) and fall back to strings, so enum variants
    /// need no quoting. The result re-validates the full schema, so unknown
    /// paths and type errors are caught.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut doc = serde_json::to_value(self)?;
        for entry in overrides {
            let (path, raw) = entry.split_once('=').ok_or_else(|| {
                Error::config(format!("override '{entry}' is not key=value"))
            })?;
            let value: serde_json::Value = serde_json::from_str(raw)
                .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
            set_path(&mut doc, path, value)?;
        }
        let cfg: RunConfig = serde_json::from_value(doc)?;
        Ok(cfg)
    }

    /// Write the fully resolved configuration next to a run's artifacts, so
    /// the run can be reproduced from its output directory alone.
    pub fn write_effective(&self, dir: &Path) -> Result<std::path::PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("config.json");
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(&path, text)?;
        Ok(path)
    }
}

fn set_path(doc: &mut serde_json::Value, path: &str, value: serde_json::Value) -> Result<()> {
    let mut node = doc;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let map = node.as_object_mut().ok_or_else(|| {
            Error::config(format!("override path '{path}' descends into a non-object"))
        })?;
        if i + 1 == parts.len() {
            if !map.contains_key(*part) {
                return Err(Error::config(format!(
                    "override path '{path}' names no config field"
                )));
            }
            map.insert((*part).to_string(), value);
            return Ok(());
        }
        node = map.get_mut(*part).ok_or_else(|| {
            Error::config(format!("override path '{path}' names no config field"))
        })?;
    }
    Err(Error::config(format!("empty override path '{path}'")))
}
