//! Run configuration: a JSON document whose keys all have defaults, plus the
//! command-line overrides applied on top of it.

use std::fs;
use std::path::{Path, PathBuf};

use diffnet_core::data::{ColumnSpec, PreprocessConfig, SplitConfig};
use diffnet_core::eval::EvalConfig;
use diffnet_core::model::ModelConfig;
use diffnet_core::synthetic::SyntheticConfig;
use diffnet_core::train::TrainConfig;
use diffnet_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Where the interaction and social data come from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub ratings: Option<PathBuf>,
    pub links: Option<PathBuf>,
    pub user_features: Option<PathBuf>,
    pub item_features: Option<PathBuf>,
    pub rating_columns: ColumnSpec,
    pub link_columns: ColumnSpec,
    pub preprocess: PreprocessConfig,
    /// Rescale feature columns to zero mean and unit variance.
    pub standardize_features: bool,
    /// Draw a planted-preference graph instead of reading files.
    pub synthetic: Option<SyntheticConfig>,
    pub split: SplitConfig,
}

/// Evaluation settings; the seed comes from [`Seeds::eval`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    pub cutoffs: Vec<usize>,
    pub negatives: usize,
    pub repeats: usize,
    pub all_items: bool,
    /// Upper bounds of the training-count groups (`8,16,32,64`); empty for none.
    pub groups: Vec<usize>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        let base = EvalConfig::default();
        EvalSettings {
            cutoffs: base.cutoffs,
            negatives: base.negatives,
            repeats: base.repeats,
            all_items: base.all_items,
            groups: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Seeds {
    /// Synthetic generation and the train/validation/test split.
    pub data: u64,
    pub init: u64,
    /// Negative resampling and validation candidates.
    pub train: u64,
    pub eval: u64,
}

impl Seeds {
    pub fn from_base(seed: u64) -> Self {
        Seeds {
            data: seed,
            init: seed.wrapping_add(1),
            train: seed.wrapping_add(2),
            eval: seed.wrapping_add(3),
        }
    }
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds::from_base(0)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalSettings,
    pub seeds: Seeds,
    pub workdir: PathBuf,
}

impl RunConfig {
    /// Reads a configuration, or the configuration embedded in an experiment
    /// record (any JSON object with a `config` key).
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let value = match value.get("config") {
            Some(inner) if value.get("report").is_some() => inner.clone(),
            _ => value,
        };
        serde_json::from_value(value).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            cutoffs: self.eval.cutoffs.clone(),
            negatives: self.eval.negatives,
            all_items: self.eval.all_items,
            repeats: self.eval.repeats,
            seed: self.seeds.eval,
            ..EvalConfig::default()
        }
    }

    /// Training settings with the train seed filled in.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seeds.train,
            ..self.train.clone()
        }
    }

    /// Checks everything that can be checked before touching data.
    pub fn validate(&self) -> Result<()> {
        self.model.normalized()?;
        self.train_config().validate()?;
        if self.eval.cutoffs.is_empty() || self.eval.cutoffs.contains(&0) || self.eval.repeats == 0 {
            return Err(Error::Config("evaluation needs positive cutoffs and at least one repeat".into()));
        }
        if self.eval.groups.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!("group bounds must increase: {:?}", self.eval.groups)));
        }
        let d = &self.data;
        if d.synthetic.is_none() && (d.ratings.is_none() || d.links.is_none()) {
            return Err(Error::Config("set data.ratings and data.links, or data.synthetic".into()));
        }
        if d.synthetic.is_some() && (self.model.use_user_features || self.model.use_item_features) {
            return Err(Error::Config("synthetic data has no features".into()));
        }
        if self.model.use_user_features && d.user_features.is_none() {
            return Err(Error::Config("model.use_user_features needs data.user_features".into()));
        }
        if self.model.use_item_features && d.item_features.is_none() {
            return Err(Error::Config("model.use_item_features needs data.item_features".into()));
        }
        for path in [&d.ratings, &d.links, &d.user_features, &d.item_features].into_iter().flatten() {
            if d.synthetic.is_none() && !path.is_file() {
                return Err(Error::Config(format!("input file not found: {}", path.display())));
            }
        }
        Ok(())
    }
}
