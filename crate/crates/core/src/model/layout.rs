use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::compute::{ParamId, ParameterSet, Tensor};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Variant};

/// Standard deviation of the Gaussian used for every weight array.
pub const INIT_STD: f64 = 0.01;

/// Sizes that fix every parameter shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub users: usize,
    pub items: usize,
    /// User feature width (0 when unused).
    pub user_features: usize,
    /// Item feature width (0 when unused).
    pub item_features: usize,
}

/// Two-layer perceptron `[x, y] -> 1`: `w1` is `2D x H`, `b1` `1 x H`,
/// `w2` `H x 1`, `b2` `1 x 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MlpIds {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

/// Attention perceptrons used by one layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct LayerMlps {
    /// Item side: scores `[v_i, u_a]` over an item's raters.
    pub item: Option<MlpIds>,
    /// Social side: scores `[u_a, u_b]` over the followees of `a`.
    pub social: Option<MlpIds>,
    /// Interest side: scores `[u_a, v_i]` over the items of `a`.
    pub interest: Option<MlpIds>,
    /// Graph level: scores `[u_a, aggregate]` for both branches.
    pub graph: Option<MlpIds>,
}

/// Per-layer affine map of the social-only variant: `[pooled, own] -> D`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AffineIds {
    pub weight: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
struct ArraySpec {
    name: String,
    rows: usize,
    cols: usize,
    bias: bool,
}

/// Where each model array lives inside a [`ParameterSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamLayout {
    pub user_embedding: ParamId,
    pub item_embedding: ParamId,
    pub user_fusion: Option<ParamId>,
    pub item_fusion: Option<ParamId>,
    mlps: Vec<LayerMlps>,
    shared: bool,
    pub social_transforms: Vec<AffineIds>,
    specs: Vec<ArraySpec>,
}

impl ParamLayout {
    pub fn new(config: &ModelConfig, dims: &Dims) -> Result<Self> {
        let d = config.dim;
        let h = config.hidden_width();
        let mut specs = Vec::new();
        let mut add = |name: String, rows: usize, cols: usize, bias: bool| {
            specs.push(ArraySpec {
                name,
                rows,
                cols,
                bias,
            });
            ParamId(specs.len() - 1)
        };

        let user_embedding = add("user_embedding".into(), dims.users, d, false);
        let item_embedding = add("item_embedding".into(), dims.items, d, false);
        let user_fusion = if config.use_user_features {
            if dims.user_features == 0 {
                return Err(Error::Config("user features enabled but width is 0".into()));
            }
            Some(add("user_feature_transform".into(), dims.user_features, d, false))
        } else {
            None
        };
        let item_fusion = if config.use_item_features {
            if dims.item_features == 0 {
                return Err(Error::Config("item features enabled but width is 0".into()));
            }
            Some(add("item_feature_transform".into(), dims.item_features, d, false))
        } else {
            None
        };

        let mut mlps = Vec::new();
        let mut social_transforms = Vec::new();
        match config.variant {
            Variant::DiffNetPP => {
                let sets = if config.share_attention {
                    usize::from(config.depth > 0)
                } else {
                    config.depth
                };
                for k in 0..sets {
                    let prefix = if config.share_attention {
                        "shared".to_string()
                    } else {
                        format!("layer{k}")
                    };
                    let mut mlp = |role: &str| {
                        let base = format!("{prefix}.{role}_attention");
                        MlpIds {
                            w1: add(format!("{base}.w1"), 2 * d, h, false),
                            b1: add(format!("{base}.b1"), 1, h, true),
                            w2: add(format!("{base}.w2"), h, 1, false),
                            b2: add(format!("{base}.b2"), 1, 1, true),
                        }
                    };
                    let mut layer = LayerMlps::default();
                    if config.uses_node_mlps() {
                        layer.item = Some(mlp("item"));
                        layer.social = Some(mlp("social"));
                        layer.interest = Some(mlp("interest"));
                    }
                    if config.uses_graph_mlp() {
                        layer.graph = Some(mlp("graph"));
                    }
                    mlps.push(layer);
                }
            }
            Variant::DiffNet => {
                for k in 0..config.depth {
                    social_transforms.push(AffineIds {
                        weight: add(format!("layer{k}.social_transform.w"), 2 * d, d, false),
                        bias: add(format!("layer{k}.social_transform.b"), 1, d, true),
                    });
                }
            }
            Variant::Bpr => {}
        }

        Ok(ParamLayout {
            user_embedding,
            item_embedding,
            user_fusion,
            item_fusion,
            mlps,
            shared: config.share_attention,
            social_transforms,
            specs,
        })
    }

    /// Attention perceptrons of layer `k` (counting from 0).
    pub fn mlps(&self, k: usize) -> LayerMlps {
        if self.mlps.is_empty() {
            LayerMlps::default()
        } else if self.shared {
            self.mlps[0]
        } else {
            self.mlps[k]
        }
    }

    pub fn array_count(&self) -> usize {
        self.specs.len()
    }

    /// Draws every weight array from `Normal(0, std^2)` in declaration order;
    /// biases start at zero.
    pub fn init(&self, seed: u64, std: f64) -> ParameterSet {
        self.draw(seed, std, false)
    }

    /// Like [`ParamLayout::init`] but biases are drawn too, giving a generic
    /// point for gradient audits.
    pub fn init_dense(&self, seed: u64, std: f64) -> ParameterSet {
        self.draw(seed, std, true)
    }

    fn draw(&self, seed: u64, std: f64, biases: bool) -> ParameterSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, std).expect("standard deviation is finite and non-negative");
        let mut params = ParameterSet::new();
        for spec in &self.specs {
            let mut t = Tensor::zeros(spec.rows, spec.cols);
            if biases || !spec.bias {
                t.as_mut_slice()
                    .iter_mut()
                    .for_each(|v| *v = normal.sample(&mut rng));
            }
            params.push(spec.name.clone(), t);
        }
        params
    }

    /// Checks names and shapes of a parameter set against this layout.
    pub fn check(&self, params: &ParameterSet) -> Result<()> {
        if params.len() != self.specs.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter arrays, found {}",
                self.specs.len(),
                params.len()
            )));
        }
        for ((_, name, t), spec) in params.iter().zip(&self.specs) {
            if name != spec.name || t.shape() != [spec.rows, spec.cols] {
                return Err(Error::Checkpoint(format!(
                    "array {name} {:?} does not match expected {} [{}, {}]",
                    t.shape(),
                    spec.name,
                    spec.rows,
                    spec.cols
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AttentionMode;

    fn dims() -> Dims {
        Dims {
            users: 5,
            items: 7,
            user_features: 0,
            item_features: 0,
        }
    }

    #[test]
    fn avg_modes_allocate_no_perceptrons() {
        let cfg = ModelConfig {
            dim: 4,
            depth: 2,
            node_attention: AttentionMode::Avg,
            graph_attention: AttentionMode::Avg,
            ..ModelConfig::default()
        };
        let layout = ParamLayout::new(&cfg, &dims()).unwrap();
        assert_eq!(layout.array_count(), 2);
        assert_eq!(layout.mlps(1), LayerMlps::default());
    }

    #[test]
    fn per_layer_and_shared_perceptrons() {
        let cfg = ModelConfig {
            dim: 4,
            depth: 3,
            ..ModelConfig::default()
        };
        let layout = ParamLayout::new(&cfg, &dims()).unwrap();
        assert_eq!(layout.array_count(), 2 + 3 * 4 * 4);
        assert_ne!(layout.mlps(0).item, layout.mlps(2).item);

        let shared = ModelConfig {
            share_attention: true,
            ..cfg
        };
        let layout = ParamLayout::new(&shared, &dims()).unwrap();
        assert_eq!(layout.array_count(), 2 + 4 * 4);
        assert_eq!(layout.mlps(0).item, layout.mlps(2).item);
    }

    #[test]
    fn init_is_seeded_gaussian_with_zero_biases() {
        let cfg = ModelConfig {
            dim: 8,
            depth: 1,
            ..ModelConfig::default()
        };
        let layout = ParamLayout::new(&cfg, &dims()).unwrap();
        let a = layout.init(17, INIT_STD);
        assert_eq!(a, layout.init(17, INIT_STD));
        assert_ne!(a, layout.init(18, INIT_STD));
        let b1 = a.id_of("layer0.item_attention.b1").unwrap();
        assert!(a.get(b1).as_slice().iter().all(|v| *v == 0.0));
        layout.check(&a).unwrap();

        let dense = layout.init_dense(17, INIT_STD);
        layout.check(&dense).unwrap();
        assert!(dense.get(b1).as_slice().iter().all(|v| *v != 0.0));
    }

    #[test]
    fn init_statistics_match_target_distribution() {
        let d = Dims {
            users: 100_000,
            items: 1,
            user_features: 0,
            item_features: 0,
        };
        let cfg = ModelConfig {
            dim: 1,
            depth: 0,
            variant: Variant::Bpr,
            ..ModelConfig::default()
        };
        let params = ParamLayout::new(&cfg, &d).unwrap().init(3, INIT_STD);
        let draws = params.arrays()[0].as_slice();
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let std = (draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(mean.abs() < 0.001, "mean {mean}");
        assert!((0.0095..0.0105).contains(&std), "std {std}");
    }

    #[test]
    fn feature_flag_without_width_is_rejected() {
        let cfg = ModelConfig {
            use_user_features: true,
            ..ModelConfig::default()
        };
        assert!(ParamLayout::new(&cfg, &dims()).is_err());
    }
}
