use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::attention::{attention_backward, attention_forward, AttentionTape, SparseBeta};
use super::params::{NetParams, INPUT_DIM};
use crate::error::{Error, Result};
use crate::geom::Correspondence;

pub const NORM_EPS: f64 = 1e-5;
const OUTPUT_NORM_FLOOR: f64 = 1e-12;

/// Intermediates of one block kept for the backward pass.
#[derive(Debug, Clone)]
struct BlockTape {
    input: Array2<f64>,
    normed: Array2<f64>,
    inv_std: Array1<f64>,
    pre_act: Array2<f64>,
    act: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    agg: Array2<f64>,
    attention: AttentionTape,
    hidden_pre: Array2<f64>,
    hidden: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct Tape {
    input: Array2<f64>,
    beta: SparseBeta,
    blocks: Vec<BlockTape>,
    norms: Array1<f64>,
    features: Array2<f64>,
}

impl Tape {
    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn into_features(self) -> Array2<f64> {
        self.features
    }
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: NetParams,
    /// Gradient with respect to the raw `[x, y]` input rows.
    pub input: Array2<f64>,
}

pub fn input_matrix(corrs: &[Correspondence]) -> Array2<f64> {
    Array2::from_shape_fn((corrs.len(), INPUT_DIM), |(i, c)| if c < 3 { corrs[i].x[c] } else { corrs[i].y[c - 3] })
}

fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

fn relu_mask(grad: &mut Array2<f64>, pre: &Array2<f64>) {
    grad.zip_mut_with(pre, |g, &p| {
        if p <= 0.0 {
            *g = 0.0;
        }
    });
}

pub fn forward(params: &NetParams, corrs: &[Correspondence], beta: &Array2<f64>) -> Result<Tape> {
    forward_input(params, input_matrix(corrs), beta)
}

/// Forward pass on a raw `N × 6` input matrix.
pub fn forward_input(params: &NetParams, input: Array2<f64>, beta: &Array2<f64>) -> Result<Tape> {
    let n = input.nrows();
    if input.ncols() != INPUT_DIM || beta.dim() != (n, n) {
        return Err(Error::ShapeMismatch(format!("input {:?}, beta {:?}", input.dim(), beta.dim())));
    }
    let beta = SparseBeta::from_dense(beta);
    let mut h = input.dot(&params.lift_w) + &params.lift_b;
    let mut blocks = Vec::with_capacity(params.blocks.len());
    for bp in &params.blocks {
        let z = h.dot(&bp.perc_w) + &bp.perc_b;
        let mean = z.mean_axis(Axis(0)).unwrap();
        let centered = z - &mean;
        let var = centered.mapv(|v| v * v).mean_axis(Axis(0)).unwrap();
        let inv_std = var.mapv(|v| 1.0 / (v + NORM_EPS).sqrt());
        let normed = centered * &inv_std;
        let pre_act = &normed * &bp.norm_scale + &bp.norm_shift;
        let act = relu(&pre_act);
        let q = act.dot(&bp.query);
        let k = act.dot(&bp.key);
        let v = act.dot(&bp.value);
        let (agg, attention) = attention_forward(&q, &k, &v, &beta);
        let hidden_pre = agg.dot(&bp.mlp_w1) + &bp.mlp_b1;
        let hidden = relu(&hidden_pre);
        let out = &act + &(hidden.dot(&bp.mlp_w2) + &bp.mlp_b2);
        blocks.push(BlockTape {
            input: std::mem::replace(&mut h, out),
            normed,
            inv_std,
            pre_act,
            act,
            q,
            k,
            v,
            agg,
            attention,
            hidden_pre,
            hidden,
        });
    }
    let norms = h.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    let d = h.ncols();
    let mut features = h;
    for (mut row, &norm) in features.outer_iter_mut().zip(norms.iter()) {
        if norm > OUTPUT_NORM_FLOOR {
            row /= norm;
        } else {
            // degenerate all-zero embedding (e.g. a single-row scene): fixed unit vector
            row.fill(1.0 / (d as f64).sqrt());
        }
    }
    Ok(Tape { input, beta, blocks, norms, features })
}

/// Unit-norm embeddings only.
pub fn embed(params: &NetParams, corrs: &[Correspondence], beta: &Array2<f64>) -> Result<Array2<f64>> {
    Ok(forward(params, corrs, beta)?.into_features())
}

/// Exact gradients of a scalar whose gradient with respect to the output
/// features is `upstream`.
pub fn backward(params: &NetParams, tape: &Tape, upstream: ArrayView2<f64>) -> Result<Gradients> {
    if upstream.dim() != tape.features.dim() {
        return Err(Error::ShapeMismatch(format!("upstream {:?}, features {:?}", upstream.dim(), tape.features.dim())));
    }
    let mut grads = params.zeros_like();
    let y = &tape.features;
    let radial = (y * &upstream).sum_axis(Axis(1));
    let mut d_h = &upstream - &(y * &radial.view().insert_axis(Axis(1)));
    for (mut row, &norm) in d_h.outer_iter_mut().zip(tape.norms.iter()) {
        if norm > OUTPUT_NORM_FLOOR {
            row /= norm;
        } else {
            row.fill(0.0);
        }
    }
    let n = y.nrows() as f64;

    for (bt, (bp, bg)) in tape.blocks.iter().zip(params.blocks.iter().zip(grads.blocks.iter_mut())).rev() {
        let d_out = d_h;
        bg.mlp_w2 = bt.hidden.t().dot(&d_out);
        bg.mlp_b2 = d_out.sum_axis(Axis(0));
        let mut d_hidden = d_out.dot(&bp.mlp_w2.t());
        relu_mask(&mut d_hidden, &bt.hidden_pre);
        bg.mlp_w1 = bt.agg.t().dot(&d_hidden);
        bg.mlp_b1 = d_hidden.sum_axis(Axis(0));
        let d_agg = d_hidden.dot(&bp.mlp_w1.t());
        let (d_q, d_k, d_v) = attention_backward(&bt.q, &bt.k, &bt.v, &bt.agg, &tape.beta, &bt.attention, &d_agg);
        bg.query = bt.act.t().dot(&d_q);
        bg.key = bt.act.t().dot(&d_k);
        bg.value = bt.act.t().dot(&d_v);
        let mut d_act = d_out;
        d_act += &d_q.dot(&bp.query.t());
        d_act += &d_k.dot(&bp.key.t());
        d_act += &d_v.dot(&bp.value.t());
        relu_mask(&mut d_act, &bt.pre_act);
        bg.norm_scale = (&d_act * &bt.normed).sum_axis(Axis(0));
        bg.norm_shift = d_act.sum_axis(Axis(0));
        let d_normed = d_act * &bp.norm_scale;
        let mean_g = d_normed.sum_axis(Axis(0)) / n;
        let mean_gn = (&d_normed * &bt.normed).sum_axis(Axis(0)) / n;
        let d_z = (d_normed - &mean_g - &(&bt.normed * &mean_gn)) * &bt.inv_std;
        bg.perc_w = bt.input.t().dot(&d_z);
        bg.perc_b = d_z.sum_axis(Axis(0));
        d_h = d_z.dot(&bp.perc_w.t());
    }
    grads.lift_w = tape.input.t().dot(&d_h);
    grads.lift_b = d_h.sum_axis(Axis(0));
    let input = d_h.dot(&params.lift_w.t());
    Ok(Gradients { params: grads, input })
}
