//! Dense matrix formulation of the forward pass, computed independently of
//! the tape as a cross-check.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, Axis};

use crate::compute::{Activation, ParamId, ParameterSet, Tensor};
use crate::data::HeteroGraph;
use crate::error::{Error, Result};
use crate::model::{
    AttentionMode, AttentionRows, DiffusionState, GammaInput, LayerAttention, MlpIds, Model, Variant,
};

fn nd(t: &Tensor) -> Array2<f64> {
    Array2::from_shape_vec((t.rows(), t.cols()), t.as_slice().to_vec()).expect("tensor shape is consistent")
}

fn tensor(a: &Array2<f64>) -> Tensor {
    Tensor::from_vec(a.nrows(), a.ncols(), a.iter().copied().collect()).expect("array shape is consistent")
}

struct DenseMlp {
    w1: Array2<f64>,
    b1: Array1<f64>,
    w2: Array1<f64>,
    b2: f64,
    act: Activation,
}

impl DenseMlp {
    fn new(params: &ParameterSet, ids: &MlpIds, act: Activation) -> Self {
        DenseMlp {
            w1: nd(params.get(ids.w1)),
            b1: Array1::from(params.get(ids.b1).as_slice().to_vec()),
            w2: Array1::from(params.get(ids.w2).as_slice().to_vec()),
            b2: params.get(ids.b2).get(0, 0),
            act,
        }
    }

    fn score(&self, x: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
        let z = concatenate![Axis(0), x, y];
        let h = z.dot(&self.w1) + &self.b1;
        h.mapv(|v| self.act.apply(v)).dot(&self.w2) + self.b2
    }
}

/// Row-wise exponential normalization restricted to `mask`; empty rows stay zero.
fn masked_softmax(scores: &Array2<f64>, mask: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(scores.raw_dim());
    for r in 0..scores.nrows() {
        let support: Vec<usize> = (0..scores.ncols()).filter(|&c| mask[[r, c]] != 0.0).collect();
        if support.is_empty() {
            continue;
        }
        let max = support.iter().map(|&c| scores[[r, c]]).fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = support.iter().map(|&c| (scores[[r, c]] - max).exp()).sum();
        for &c in &support {
            out[[r, c]] = (scores[[r, c]] - max).exp() / total;
        }
    }
    out
}

/// Scores every `(row, col)` pair on the mask; off-mask entries are zero.
fn pair_scores(
    mlp: &DenseMlp,
    left: &Array2<f64>,
    right: &Array2<f64>,
    mask: &Array2<f64>,
) -> Array2<f64> {
    Array2::from_shape_fn(mask.raw_dim(), |(r, c)| {
        if mask[[r, c]] != 0.0 {
            mlp.score(left.row(r), right.row(c))
        } else {
            0.0
        }
    })
}

fn row_normalized(mask: &Array2<f64>) -> Array2<f64> {
    let mut out = mask.clone();
    for mut row in out.rows_mut() {
        let total = row.sum();
        if total > 0.0 {
            row /= total;
        }
    }
    out
}

fn rows_of(weights: &Array2<f64>) -> AttentionRows {
    let rows = weights
        .rows()
        .into_iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .filter(|(_, w)| **w != 0.0)
                .map(|(c, &w)| (c as u32, w))
                .collect()
        })
        .collect();
    AttentionRows { rows }
}

fn rows_on_mask(weights: &Array2<f64>, mask: &Array2<f64>) -> AttentionRows {
    let rows = (0..mask.nrows())
        .map(|r| {
            (0..mask.ncols())
                .filter(|&c| mask[[r, c]] != 0.0)
                .map(|c| (c as u32, weights[[r, c]]))
                .collect()
        })
        .collect();
    AttentionRows { rows }
}

fn fused(
    params: &ParameterSet,
    emb: ParamId,
    fusion: Option<ParamId>,
    features: Option<&Tensor>,
    act: Activation,
) -> Result<Array2<f64>> {
    let base = nd(params.get(emb));
    match fusion {
        None => Ok(base),
        Some(w) => {
            let x = features.ok_or_else(|| Error::Config("feature fusion enabled but the graph has no features".into()))?;
            Ok((base + nd(x).dot(&nd(params.get(w)))).mapv(|v| act.apply(v)))
        }
    }
}

impl Model {
    /// Same result as [`Model::forward_all`], obtained from dense adjacency
    /// matrices and the block propagation matrix of each layer.
    pub fn forward_matrix(&self, graph: &HeteroGraph, params: &ParameterSet) -> Result<DiffusionState> {
        self.layout().check(params)?;
        let cfg = self.config();
        let (m, n) = (graph.num_users(), graph.num_items());
        if m != self.dims().users || n != self.dims().items {
            return Err(Error::Data("graph does not match model dimensions".into()));
        }
        let mut r = Array2::<f64>::zeros((m, n));
        for &(a, i) in graph.interactions() {
            r[[a as usize, i as usize]] = 1.0;
        }
        let mut sm = Array2::<f64>::zeros((m, m));
        for &(a, b) in graph.links() {
            sm[[a as usize, b as usize]] = 1.0;
        }
        let rt = r.t().to_owned();
        let layout = self.layout();
        let mut u = fused(params, layout.user_embedding, layout.user_fusion, graph.user_features(), cfg.fusion_activation)?;
        let mut v = fused(params, layout.item_embedding, layout.item_fusion, graph.item_features(), cfg.fusion_activation)?;
        let (mut users, mut items, mut attention) = (vec![tensor(&u)], vec![tensor(&v)], Vec::new());
        let mut previous = (Array2::zeros((m, cfg.dim)), Array2::zeros((m, cfg.dim)));

        for k in 0..cfg.depth {
            match cfg.variant {
                Variant::DiffNetPP => {
                    let mlps = layout.mlps(k);
                    let dense = |ids: Option<MlpIds>| ids.map(|ids| DenseMlp::new(params, &ids, cfg.mlp_activation));
                    let weights = |mlp: Option<DenseMlp>, left: &Array2<f64>, right: &Array2<f64>, mask: &Array2<f64>| match mlp {
                        Some(mlp) => masked_softmax(&pair_scores(&mlp, left, right, mask), mask),
                        None => row_normalized(mask),
                    };
                    let h = weights(dense(mlps.item), &v, &u, &rt);
                    let a = weights(dense(mlps.social), &u, &u, &sm);
                    let b = weights(dense(mlps.interest), &u, &v, &r);
                    let sa = &sm * &a;
                    let rb = &r * &b;
                    let p_tilde = sa.dot(&u);
                    let q_tilde = rb.dot(&v);
                    let (gp, gq) = match cfg.gamma_input {
                        GammaInput::Current => (p_tilde.clone(), q_tilde.clone()),
                        GammaInput::Previous => previous.clone(),
                    };

                    let graph_mlp = dense(mlps.graph);
                    let mut gamma = Array2::<f64>::zeros((m, 2));
                    for user in 0..m {
                        let has_s = sm.row(user).sum() > 0.0;
                        let has_r = r.row(user).sum() > 0.0;
                        let row = match (has_s, has_r) {
                            (true, true) => match (&graph_mlp, cfg.graph_attention) {
                                (Some(g), AttentionMode::Att) => {
                                    let s1 = g.score(u.row(user), gp.row(user));
                                    let s2 = g.score(u.row(user), gq.row(user));
                                    let mx = s1.max(s2);
                                    let (e1, e2) = ((s1 - mx).exp(), (s2 - mx).exp());
                                    [e1 / (e1 + e2), e2 / (e1 + e2)]
                                }
                                _ => [0.5, 0.5],
                            },
                            (true, false) => [1.0, 0.0],
                            (false, true) => [0.0, 1.0],
                            (false, false) => [0.5, 0.5],
                        };
                        gamma[[user, 0]] = row[0];
                        gamma[[user, 1]] = row[1];
                    }

                    let eye_m = Array2::<f64>::eye(m);
                    let eye_n = Array2::<f64>::eye(n);
                    let g1 = gamma.column(0).insert_axis(Axis(1)).to_owned();
                    let g2 = gamma.column(1).insert_axis(Axis(1)).to_owned();
                    let top_left = &eye_m + &(&sa * &g1);
                    let top_right = &rb * &g2;
                    let bottom_left = &rt * &h;
                    let top = concatenate![Axis(1), top_left, top_right];
                    let bottom = concatenate![Axis(1), bottom_left, eye_n];
                    let block = concatenate![Axis(0), top, bottom];
                    let stacked = concatenate![Axis(0), u, v];
                    let next = block.dot(&stacked);
                    u = next.slice(s![..m, ..]).to_owned();
                    v = next.slice(s![m.., ..]).to_owned();

                    attention.push(LayerAttention {
                        item: Some(rows_on_mask(&h, &rt)),
                        social: Some(rows_on_mask(&a, &sm)),
                        interest: Some(rows_on_mask(&b, &r)),
                        graph: Some(tensor(&gamma)),
                    });
                    previous = (p_tilde, q_tilde);
                }
                Variant::DiffNet => {
                    let affine = layout.social_transforms[k];
                    let pool = row_normalized(&sm);
                    let pooled = pool.dot(&u);
                    let w = nd(params.get(affine.weight));
                    let bias = Array1::from(params.get(affine.bias).as_slice().to_vec());
                    u = concatenate![Axis(1), pooled, u].dot(&w) + &bias;
                    attention.push(LayerAttention {
                        item: None,
                        social: Some(rows_of(&pool)),
                        interest: None,
                        graph: None,
                    });
                }
                Variant::Bpr => unreachable!("normalized configs run no layers"),
            }
            users.push(tensor(&u));
            items.push(tensor(&v));
        }
        Ok(DiffusionState::new(users, items, attention))
    }
}
