use serde::{Deserialize, Serialize};

use crate::compute::Activation;
use crate::error::{Error, Result};

/// How neighbor or branch weights are produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionMode {
    /// Uniform weights over the non-empty support.
    Avg,
    /// Scored by a two-layer perceptron, then exponentially normalized.
    Att,
}

/// Which architecture the forward pass runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Influence and interest diffusion with multi-level attention.
    DiffNetPP,
    /// Social-only diffusion: mean pooling over followees plus a per-layer
    /// affine transform; item representations stay at layer 0.
    DiffNet,
    /// No diffusion; plain inner product of the layer-0 representations.
    Bpr,
}

/// Aggregates fed to the graph-level scorer next to the user's own embedding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GammaInput {
    /// The aggregates the weights are about to combine (same layer).
    Current,
    /// The aggregates of the preceding layer (zero before the first layer).
    Previous,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Embedding width.
    pub dim: usize,
    /// Number of diffusion layers.
    pub depth: usize,
    /// Hidden width of the attention perceptrons; `None` means `dim`.
    pub hidden: Option<usize>,
    pub use_user_features: bool,
    pub use_item_features: bool,
    pub node_attention: AttentionMode,
    pub graph_attention: AttentionMode,
    pub variant: Variant,
    /// One set of attention perceptrons shared by every layer.
    pub share_attention: bool,
    pub gamma_input: GammaInput,
    pub mlp_activation: Activation,
    pub fusion_activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 64,
            depth: 2,
            hidden: None,
            use_user_features: false,
            use_item_features: false,
            node_attention: AttentionMode::Att,
            graph_attention: AttentionMode::Att,
            variant: Variant::DiffNetPP,
            share_attention: false,
            gamma_input: GammaInput::Current,
            mlp_activation: Activation::LeakyRelu { slope: 0.01 },
            fusion_activation: Activation::Identity,
        }
    }
}

impl ModelConfig {
    pub fn hidden_width(&self) -> usize {
        self.hidden.unwrap_or(self.dim)
    }

    /// Validated copy with variant-implied settings applied (BPR runs no layers).
    pub fn normalized(&self) -> Result<ModelConfig> {
        if self.dim == 0 {
            return Err(Error::Config("embedding width must be positive".into()));
        }
        if self.hidden_width() == 0 {
            return Err(Error::Config("attention hidden width must be positive".into()));
        }
        let mut out = self.clone();
        if out.variant == Variant::Bpr {
            out.depth = 0;
        }
        Ok(out)
    }

    pub fn uses_node_mlps(&self) -> bool {
        self.variant == Variant::DiffNetPP && self.node_attention == AttentionMode::Att
    }

    pub fn uses_graph_mlp(&self) -> bool {
        self.variant == Variant::DiffNetPP && self.graph_attention == AttentionMode::Att
    }
}
