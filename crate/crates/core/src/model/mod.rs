//! Layer-wise influence and interest diffusion over the user-item-user graph.

mod checkpoint;
mod config;
mod forward;
mod layout;
mod matrix;
mod plan;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};
pub use config::{AttentionMode, GammaInput, ModelConfig, Variant};
pub use forward::{AttentionRows, BatchLoss, DiffusionState, LayerAttention};
pub use layout::{AffineIds, Dims, LayerMlps, MlpIds, ParamLayout, INIT_STD};
pub use plan::DiffusionPlan;

use crate::compute::{GradientBundle, Objective, ParameterSet};
use crate::data::{HeteroGraph, Triple};
use crate::error::{Error, Result};

/// A configured architecture bound to fixed graph sizes.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ModelConfig,
    dims: Dims,
    layout: ParamLayout,
}

impl Model {
    pub fn new(config: &ModelConfig, dims: Dims) -> Result<Self> {
        let config = config.normalized()?;
        let layout = ParamLayout::new(&config, &dims)?;
        Ok(Model {
            config,
            dims,
            layout,
        })
    }

    /// Sizes taken from `graph`, including feature widths when the matching
    /// flag is on.
    pub fn for_graph(config: &ModelConfig, graph: &HeteroGraph) -> Result<Self> {
        let width = |enabled: bool, features: Option<&crate::compute::Tensor>, side: &str| {
            if !enabled {
                return Ok(0);
            }
            features
                .map(|f| f.cols())
                .ok_or_else(|| Error::Config(format!("{side} features enabled but none were loaded")))
        };
        let dims = Dims {
            users: graph.num_users(),
            items: graph.num_items(),
            user_features: width(config.use_user_features, graph.user_features(), "user")?,
            item_features: width(config.use_item_features, graph.item_features(), "item")?,
        };
        Model::new(config, dims)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    /// Gaussian weights with standard deviation [`INIT_STD`], zero biases.
    pub fn init_parameters(&self, seed: u64) -> ParameterSet {
        self.layout.init(seed, INIT_STD)
    }
}

/// The regularized batch loss as an [`Objective`] for gradient audits.
pub struct BatchObjective<'a> {
    pub model: &'a Model,
    pub plan: &'a DiffusionPlan,
    pub triples: &'a [Triple],
    pub lambda: f64,
}

impl Objective for BatchObjective<'_> {
    fn loss(&self, params: &ParameterSet) -> Result<f64> {
        Ok(self.model.batch_loss(self.plan, params, self.triples, self.lambda)?.0.total)
    }

    fn loss_and_grad(&self, params: &ParameterSet) -> Result<(f64, GradientBundle)> {
        let (loss, grads) = self.model.batch_loss(self.plan, params, self.triples, self.lambda)?;
        Ok((loss.total, grads))
    }
}
