use serde::{Deserialize, Serialize};

use crate::data::HeteroGraph;
use crate::model::DiffusionState;

/// Graph-level weight statistics of one layer over users with both a followee
/// and a training item.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerGammaStats {
    /// Layer index `k` of the representation these weights produced (1-based).
    pub layer: usize,
    pub users: usize,
    pub social_mean: f64,
    pub interest_mean: f64,
    pub social_variance: f64,
    pub interest_variance: f64,
    /// Users without followees (social weight forced to 0).
    pub social_empty: usize,
    /// Users without training items (interest weight forced to 0).
    pub interest_empty: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionStats {
    pub layers: Vec<LayerGammaStats>,
}

fn mean_var(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (mean, values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n)
}

/// Per-layer means and population variances of the social and interest
/// weights. `graph` must be the graph the state was diffused over; layers
/// without graph-level weights are skipped.
pub fn attention_stats(state: &DiffusionState, graph: &HeteroGraph) -> AttentionStats {
    let m = graph.num_users();
    let has_social: Vec<bool> = (0..m).map(|u| !graph.followees(u).is_empty()).collect();
    let has_items: Vec<bool> = (0..m).map(|u| !graph.user_items(u).is_empty()).collect();
    let layers = state
        .attention
        .iter()
        .enumerate()
        .filter_map(|(k, layer)| {
            let gamma = layer.graph.as_ref()?;
            let both: Vec<usize> = (0..m).filter(|&u| has_social[u] && has_items[u]).collect();
            let (social_mean, social_variance) = mean_var(&both.iter().map(|&u| gamma.get(u, 0)).collect::<Vec<_>>());
            let (interest_mean, interest_variance) = mean_var(&both.iter().map(|&u| gamma.get(u, 1)).collect::<Vec<_>>());
            Some(LayerGammaStats {
                layer: k + 1,
                users: both.len(),
                social_mean,
                interest_mean,
                social_variance,
                interest_variance,
                social_empty: has_social.iter().filter(|h| !**h).count(),
                interest_empty: has_items.iter().filter(|h| !**h).count(),
            })
        })
        .collect();
    AttentionStats { layers }
}
