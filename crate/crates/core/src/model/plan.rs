use std::sync::Arc;

use crate::compute::{Index, Tensor};
use crate::data::HeteroGraph;

/// Edge lists and constant weights the forward pass needs, precomputed once
/// per graph.
#[derive(Clone, Debug)]
pub struct DiffusionPlan {
    pub(crate) users: usize,
    pub(crate) items: usize,
    /// Interaction edges in `(user, item)` order.
    pub(crate) inter_user: Index,
    pub(crate) inter_item: Index,
    /// Social edges `(follower, followee)` in follower order.
    pub(crate) social_src: Index,
    pub(crate) social_dst: Index,
    /// Uniform weights `1 / |R_i|`, `1 / |R_a|` and `1 / |S_a|` per edge.
    pub(crate) eta_avg: Tensor,
    pub(crate) beta_avg: Tensor,
    pub(crate) alpha_avg: Tensor,
    /// Users with at least one followee / at least one item: one graph-level
    /// entry each, social entries first.
    pub(crate) gamma_social: Index,
    pub(crate) gamma_interest: Index,
    pub(crate) gamma_segments: Index,
    pub(crate) gamma_avg: Tensor,
    pub(crate) user_features: Option<Tensor>,
    pub(crate) item_features: Option<Tensor>,
}

fn index(v: Vec<usize>) -> Index {
    Arc::from(v)
}

fn inverse_degree(targets: &[usize], n: usize) -> Tensor {
    let mut degree = vec![0usize; n];
    for &t in targets {
        degree[t] += 1;
    }
    Tensor::column(targets.iter().map(|&t| 1.0 / degree[t] as f64).collect())
}

impl DiffusionPlan {
    pub fn new(graph: &HeteroGraph) -> Self {
        let (m, n) = (graph.num_users(), graph.num_items());
        let inter_user: Vec<usize> = graph.interactions().iter().map(|p| p.0 as usize).collect();
        let inter_item: Vec<usize> = graph.interactions().iter().map(|p| p.1 as usize).collect();
        let social_src: Vec<usize> = graph.links().iter().map(|p| p.0 as usize).collect();
        let social_dst: Vec<usize> = graph.links().iter().map(|p| p.1 as usize).collect();

        let gamma_social: Vec<usize> = (0..m).filter(|&u| !graph.followees(u).is_empty()).collect();
        let gamma_interest: Vec<usize> =
            (0..m).filter(|&u| !graph.user_items(u).is_empty()).collect();
        let gamma_segments: Vec<usize> =
            gamma_social.iter().chain(&gamma_interest).copied().collect();
        let gamma_avg = inverse_degree(&gamma_segments, m);

        DiffusionPlan {
            users: m,
            items: n,
            eta_avg: inverse_degree(&inter_item, n),
            beta_avg: inverse_degree(&inter_user, m),
            alpha_avg: inverse_degree(&social_src, m),
            inter_user: index(inter_user),
            inter_item: index(inter_item),
            social_src: index(social_src),
            social_dst: index(social_dst),
            gamma_social: index(gamma_social),
            gamma_interest: index(gamma_interest),
            gamma_segments: index(gamma_segments),
            gamma_avg,
            user_features: graph.user_features().cloned(),
            item_features: graph.item_features().cloned(),
        }
    }

    pub fn num_users(&self) -> usize {
        self.users
    }

    pub fn num_items(&self) -> usize {
        self.items
    }

    pub fn num_interactions(&self) -> usize {
        self.inter_user.len()
    }

    pub fn num_links(&self) -> usize {
        self.social_src.len()
    }
}
