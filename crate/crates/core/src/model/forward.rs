use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::compute::{Index, ParamId, ParameterSet, Tape, Tensor, Var};
use crate::data::Triple;
use crate::error::{Error, Result};
use crate::model::{DiffusionPlan, GammaInput, MlpIds, Model, Variant};

/// Normalized weights of one attention level, grouped by the node that owns
/// the distribution: `rows[x]` lists `(neighbor, weight)` in neighbor order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionRows {
    pub rows: Vec<Vec<(u32, f64)>>,
}

impl AttentionRows {
    fn group(owner: &[usize], other: &[usize], weights: &[f64], n: usize) -> Self {
        let mut rows = vec![Vec::new(); n];
        for ((&o, &t), &w) in owner.iter().zip(other).zip(weights) {
            rows[o].push((t as u32, w));
        }
        for r in rows.iter_mut() {
            r.sort_by_key(|e| e.0);
        }
        AttentionRows { rows }
    }

    pub fn row(&self, owner: usize) -> &[(u32, f64)] {
        &self.rows[owner]
    }

    pub fn weight(&self, owner: usize, neighbor: u32) -> Option<f64> {
        let row = &self.rows[owner];
        row.binary_search_by_key(&neighbor, |e| e.0).ok().map(|k| row[k].1)
    }
}

/// Attention produced while computing layer `k + 1` from layer `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerAttention {
    /// Per item, over the users that rated it.
    pub item: Option<AttentionRows>,
    /// Per user, over its followees.
    pub social: Option<AttentionRows>,
    /// Per user, over its items.
    pub interest: Option<AttentionRows>,
    /// Per user, `[social, interest]` branch weights (`M x 2`).
    pub graph: Option<Tensor>,
}

/// Every layer's representations plus the attention that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionState {
    pub users: Vec<Tensor>,
    pub items: Vec<Tensor>,
    pub attention: Vec<LayerAttention>,
    user_repr: Tensor,
    item_repr: Tensor,
}

fn concat_columns(layers: &[Tensor]) -> Tensor {
    let rows = layers[0].rows();
    let width: usize = layers.iter().map(Tensor::cols).sum();
    let mut out = Tensor::zeros(rows, width);
    for r in 0..rows {
        let mut offset = 0;
        for t in layers {
            out.row_mut(r)[offset..offset + t.cols()].copy_from_slice(t.row(r));
            offset += t.cols();
        }
    }
    out
}

impl DiffusionState {
    pub(crate) fn new(users: Vec<Tensor>, items: Vec<Tensor>, attention: Vec<LayerAttention>) -> Self {
        let user_repr = concat_columns(&users);
        let item_repr = concat_columns(&items);
        DiffusionState {
            users,
            items,
            attention,
            user_repr,
            item_repr,
        }
    }

    pub fn depth(&self) -> usize {
        self.users.len() - 1
    }

    pub fn num_users(&self) -> usize {
        self.user_repr.rows()
    }

    pub fn num_items(&self) -> usize {
        self.item_repr.rows()
    }

    /// Sum over layers of the user/item inner products.
    pub fn score(&self, user: u32, item: u32) -> f64 {
        let a = self.user_repr.row(user as usize);
        let b = self.item_repr.row(item as usize);
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    pub fn score_items(&self, user: u32, items: &[u32]) -> Vec<f64> {
        items.iter().map(|&i| self.score(user, i)).collect()
    }

    /// Largest absolute difference across every layer representation.
    pub fn max_abs_diff(&self, other: &DiffusionState) -> f64 {
        self.users
            .iter()
            .zip(&other.users)
            .chain(self.items.iter().zip(&other.items))
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, Default)]
struct LayerVars {
    item: Option<Var>,
    social: Option<Var>,
    interest: Option<Var>,
    graph: Option<Var>,
}

/// Handles of one recorded forward pass.
pub(crate) struct Recorded {
    pub users: Vec<Var>,
    pub items: Vec<Var>,
    layers: Vec<LayerVars>,
    pub params: Vec<Var>,
}

/// Loss value and its parts for one batch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchLoss {
    pub total: f64,
    pub ranking: f64,
    pub regularization: f64,
}

struct Recorder<'a> {
    model: &'a Model,
    plan: &'a DiffusionPlan,
    pv: Vec<Var>,
}

impl Recorder<'_> {
    fn p(&self, id: ParamId) -> Var {
        self.pv[id.index()]
    }

    /// Applies the perceptron tail to a pre-activation `E x H` block.
    fn tail(&self, tape: &mut Tape, pre: Var, m: &MlpIds) -> Result<Var> {
        let pre = tape.add_bias(pre, self.p(m.b1))?;
        let h = tape.activation(pre, self.model.config().mlp_activation)?;
        let s = tape.matmul(h, self.p(m.w2))?;
        tape.add_bias(s, self.p(m.b2))
    }

    /// Scores `[left[li[e]], right[ri[e]]]` for every edge `e`. The first
    /// weight matrix is split by rows so both halves act on node tables before
    /// the gather.
    fn edge_scores(
        &self,
        tape: &mut Tape,
        m: &MlpIds,
        left: Var,
        li: &Index,
        right: Var,
        ri: &Index,
    ) -> Result<Var> {
        let d = self.model.config().dim;
        let w1 = self.p(m.w1);
        let top = tape.row_slice(w1, 0, d)?;
        let bottom = tape.row_slice(w1, d, d)?;
        let hl = tape.matmul(left, top)?;
        let hr = tape.matmul(right, bottom)?;
        let gl = tape.row_gather(hl, li)?;
        let gr = tape.row_gather(hr, ri)?;
        let pre = tape.add(gl, gr)?;
        self.tail(tape, pre, m)
    }

    /// `sum_e w[e] * source[gather[e]]` accumulated into `segments[e]`.
    fn weighted_sum(
        &self,
        tape: &mut Tape,
        source: Var,
        gather: &Index,
        weights: Var,
        segments: &Index,
        n: usize,
    ) -> Result<Var> {
        let rows = tape.row_gather(source, gather)?;
        let scaled = tape.scale_rows(rows, weights)?;
        tape.segment_sum(scaled, segments, n)
    }

    fn neighbor_weights(
        &self,
        tape: &mut Tape,
        mlp: Option<MlpIds>,
        owner: (Var, &Index),
        other: (Var, &Index),
        n: usize,
        uniform: &Tensor,
    ) -> Result<Var> {
        match mlp {
            Some(m) => {
                let s = self.edge_scores(tape, &m, owner.0, owner.1, other.0, other.1)?;
                tape.exp_normalize(s, owner.1, n)
            }
            None => tape.constant(uniform.clone()),
        }
    }

    fn fuse(&self, tape: &mut Tape, emb: ParamId, fusion: Option<ParamId>, features: Option<&Tensor>) -> Result<Var> {
        let base = self.p(emb);
        let Some(w) = fusion else { return Ok(base) };
        let x = features.ok_or_else(|| Error::Config("feature fusion enabled but the graph has no features".into()))?;
        let x = tape.constant(x.clone())?;
        let xw = tape.matmul(x, self.p(w))?;
        let sum = tape.add(base, xw)?;
        tape.activation(sum, self.model.config().fusion_activation)
    }

    fn diffnetpp_layer(
        &self,
        tape: &mut Tape,
        k: usize,
        u: Var,
        v: Var,
        previous: &mut (Var, Var),
    ) -> Result<(Var, Var, LayerVars)> {
        let plan = self.plan;
        let (m, n) = (plan.users, plan.items);
        let mlps = self.model.layout().mlps(k);

        let eta = self.neighbor_weights(tape, mlps.item, (v, &plan.inter_item), (u, &plan.inter_user), n, &plan.eta_avg)?;
        let v_agg = self.weighted_sum(tape, u, &plan.inter_user, eta, &plan.inter_item, n)?;
        let v_next = tape.add(v, v_agg)?;

        let alpha = self.neighbor_weights(tape, mlps.social, (u, &plan.social_src), (u, &plan.social_dst), m, &plan.alpha_avg)?;
        let p_tilde = self.weighted_sum(tape, u, &plan.social_dst, alpha, &plan.social_src, m)?;
        let beta = self.neighbor_weights(tape, mlps.interest, (u, &plan.inter_user), (v, &plan.inter_item), m, &plan.beta_avg)?;
        let q_tilde = self.weighted_sum(tape, v, &plan.inter_item, beta, &plan.inter_user, m)?;

        let (gp, gq) = match self.model.config().gamma_input {
            GammaInput::Current => (p_tilde, q_tilde),
            GammaInput::Previous => *previous,
        };
        *previous = (p_tilde, q_tilde);
        let (gs, gi) = (&plan.gamma_social, &plan.gamma_interest);
        let gamma = match mlps.graph {
            Some(mlp) => {
                let d = self.model.config().dim;
                let w1 = self.p(mlp.w1);
                let top = tape.row_slice(w1, 0, d)?;
                let bottom = tape.row_slice(w1, d, d)?;
                let hu = tape.matmul(u, top)?;
                let hp = tape.matmul(gp, bottom)?;
                let hq = tape.matmul(gq, bottom)?;
                let (a, b) = (tape.row_gather(hu, gs)?, tape.row_gather(hp, gs)?);
                let pre_s = tape.add(a, b)?;
                let (a, b) = (tape.row_gather(hu, gi)?, tape.row_gather(hq, gi)?);
                let pre_i = tape.add(a, b)?;
                let pre = tape.concat_rows(pre_s, pre_i)?;
                let s = self.tail(tape, pre, &mlp)?;
                tape.exp_normalize(s, &plan.gamma_segments, m)?
            }
            None => tape.constant(plan.gamma_avg.clone())?,
        };
        let g_s = tape.row_slice(gamma, 0, gs.len())?;
        let g_i = tape.row_slice(gamma, gs.len(), gi.len())?;
        let social = self.weighted_sum(tape, p_tilde, gs, g_s, gs, m)?;
        let interest = self.weighted_sum(tape, q_tilde, gi, g_i, gi, m)?;
        let u_next = tape.add(u, social)?;
        let u_next = tape.add(u_next, interest)?;
        let vars = LayerVars {
            item: Some(eta),
            social: Some(alpha),
            interest: Some(beta),
            graph: Some(gamma),
        };
        Ok((u_next, v_next, vars))
    }

    fn diffnet_layer(&self, tape: &mut Tape, k: usize, u: Var) -> Result<(Var, LayerVars)> {
        let plan = self.plan;
        let affine = self.model.layout().social_transforms[k];
        let alpha = tape.constant(plan.alpha_avg.clone())?;
        let pooled = self.weighted_sum(tape, u, &plan.social_dst, alpha, &plan.social_src, plan.users)?;
        let cat = tape.concat(pooled, u)?;
        let out = tape.matmul(cat, self.p(affine.weight))?;
        let u_next = tape.add_bias(out, self.p(affine.bias))?;
        Ok((
            u_next,
            LayerVars {
                social: Some(alpha),
                ..LayerVars::default()
            },
        ))
    }
}

impl Model {
    fn check_plan(&self, plan: &DiffusionPlan) -> Result<()> {
        let dims = self.dims();
        if plan.users != dims.users || plan.items != dims.items {
            return Err(Error::Data(format!(
                "graph has {} users and {} items, model expects {} and {}",
                plan.users, plan.items, dims.users, dims.items
            )));
        }
        Ok(())
    }

    /// Records the full forward pass on `tape`.
    pub(crate) fn record(&self, tape: &mut Tape, plan: &DiffusionPlan, params: &ParameterSet) -> Result<Recorded> {
        self.check_plan(plan)?;
        self.layout().check(params)?;
        let pv = params.ids().map(|id| tape.param(params, id)).collect::<Result<Vec<_>>>()?;
        let rec = Recorder { model: self, plan, pv };
        let layout = self.layout();
        let u0 = rec.fuse(tape, layout.user_embedding, layout.user_fusion, plan.user_features.as_ref())?;
        let v0 = rec.fuse(tape, layout.item_embedding, layout.item_fusion, plan.item_features.as_ref())?;

        let (mut users, mut items, mut layers) = (vec![u0], vec![v0], Vec::new());
        let zeros = tape.constant(Tensor::zeros(plan.users, self.config().dim))?;
        let mut previous = (zeros, zeros);
        for k in 0..self.config().depth {
            let (u, v) = (users[k], items[k]);
            let (u_next, v_next, vars) = match self.config().variant {
                Variant::DiffNetPP => rec.diffnetpp_layer(tape, k, u, v, &mut previous)?,
                Variant::DiffNet => {
                    let (u_next, vars) = rec.diffnet_layer(tape, k, u)?;
                    (u_next, v, vars)
                }
                Variant::Bpr => unreachable!("normalized configs run no layers"),
            };
            users.push(u_next);
            items.push(v_next);
            layers.push(vars);
        }
        Ok(Recorded {
            users,
            items,
            layers,
            params: rec.pv,
        })
    }

    /// All layer representations and attention weights for `plan`'s graph.
    pub fn forward_all(&self, plan: &DiffusionPlan, params: &ParameterSet) -> Result<DiffusionState> {
        let mut tape = Tape::new();
        let rec = self.record(&mut tape, plan, params)?;
        let users = rec.users.iter().map(|&v| tape.value(v).clone()).collect();
        let items = rec.items.iter().map(|&v| tape.value(v).clone()).collect();
        let (m, n) = (plan.users, plan.items);
        let weights = |v: Option<Var>| v.map(|v| tape.value(v).as_slice().to_vec());
        let attention = rec
            .layers
            .iter()
            .map(|l| {
                let item = weights(l.item).map(|w| AttentionRows::group(&plan.inter_item, &plan.inter_user, &w, n));
                let social = weights(l.social).map(|w| AttentionRows::group(&plan.social_src, &plan.social_dst, &w, m));
                let interest = weights(l.interest).map(|w| AttentionRows::group(&plan.inter_user, &plan.inter_item, &w, m));
                let graph = weights(l.graph).map(|w| graph_weights(plan, &w));
                LayerAttention {
                    item,
                    social,
                    interest,
                    graph,
                }
            })
            .collect();
        Ok(DiffusionState::new(users, items, attention))
    }

    /// Pairwise ranking loss of `triples` plus `lambda * ||params||^2`, with
    /// gradients. The diffusion is recomputed from scratch.
    pub fn batch_loss(
        &self,
        plan: &DiffusionPlan,
        params: &ParameterSet,
        triples: &[Triple],
        lambda: f64,
    ) -> Result<(BatchLoss, crate::compute::GradientBundle)> {
        let mut tape = Tape::new();
        let rec = self.record(&mut tape, plan, params)?;
        let mut ucat = rec.users[0];
        let mut vcat = rec.items[0];
        for k in 1..rec.users.len() {
            ucat = tape.concat(ucat, rec.users[k])?;
            vcat = tape.concat(vcat, rec.items[k])?;
        }
        let idx = |f: fn(&Triple) -> u32| -> Index { Arc::from(triples.iter().map(|t| f(t) as usize).collect::<Vec<_>>()) };
        let (iu, ip, ineg) = (idx(|t| t.user), idx(|t| t.pos), idx(|t| t.neg));
        let ub = tape.row_gather(ucat, &iu)?;
        let pb = tape.row_gather(vcat, &ip)?;
        let nb = tape.row_gather(vcat, &ineg)?;
        let sp = tape.row_dot(ub, pb)?;
        let sn = tape.row_dot(ub, nb)?;
        let diff = tape.sub(sp, sn)?;
        let per = tape.neg_log_sigmoid(diff)?;
        let ranking = tape.sum(per)?;

        let mut reg = None;
        for &p in &rec.params {
            let sq = tape.sum_squares(p)?;
            reg = Some(match reg {
                None => sq,
                Some(r) => tape.add(r, sq)?,
            });
        }
        let reg = match reg {
            Some(r) => tape.scale(r, lambda)?,
            None => tape.constant(Tensor::scalar(0.0))?,
        };
        let total = tape.add(ranking, reg)?;
        let loss = BatchLoss {
            total: tape.value(total).get(0, 0),
            ranking: tape.value(ranking).get(0, 0),
            regularization: tape.value(reg).get(0, 0),
        };
        let grads = tape.backward(total, params)?;
        Ok((loss, grads))
    }
}

/// Expands per-entry branch weights to an `M x 2` table; missing branches get
/// 0 and users with neither branch get `[0.5, 0.5]`.
fn graph_weights(plan: &DiffusionPlan, w: &[f64]) -> Tensor {
    let m = plan.users;
    let mut social = vec![None; m];
    let mut interest = vec![None; m];
    let ns = plan.gamma_social.len();
    for (e, &u) in plan.gamma_social.iter().enumerate() {
        social[u] = Some(w[e]);
    }
    for (e, &u) in plan.gamma_interest.iter().enumerate() {
        interest[u] = Some(w[ns + e]);
    }
    let mut out = Tensor::zeros(m, 2);
    for u in 0..m {
        let row = match (social[u], interest[u]) {
            (None, None) => [0.5, 0.5],
            (s, i) => [s.unwrap_or(0.0), i.unwrap_or(0.0)],
        };
        out.row_mut(u).copy_from_slice(&row);
    }
    out
}
