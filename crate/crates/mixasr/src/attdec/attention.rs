//! Location-aware additive attention: per-frame scores combine a content
//! term with a convolution over the previous step's weights, so the score
//! sees both what the decoder wants and where it looked last.

use crate::error::{Error, Result};
use crate::numerics::ops::{
    conv1d, conv1d_backward, softmax_backward, softmax_in_place,
};
use crate::numerics::Tensor;

/// Whether each stream gets its own attention parameter set or all streams
/// share one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionMode {
    Shared,
    Parallel,
}

/// What the attention score conditions on besides the previous weights:
/// the decoder's recurrent state or the previous context vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionConditioning {
    DecoderState,
    PrevContext,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionConfig {
    pub dim: usize,
    pub conv_filters: usize,
    pub conv_width: usize,
    pub mode: AttentionMode,
    pub conditioning: AttentionConditioning,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig {
            dim: 32,
            conv_filters: 4,
            conv_width: 5,
            mode: AttentionMode::Shared,
            conditioning: AttentionConditioning::DecoderState,
        }
    }
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.conv_width % 2 == 0 {
            return Err(Error::InvalidConfig(format!(
                "att_conv_width must be odd, got {}",
                self.conv_width
            )));
        }
        Ok(())
    }
}

/// One attention parameter set. `w_query` projects the conditioning vector,
/// `w_enc` the encoder frames, `w_loc` the convolved previous weights; the
/// scalar score is `score_v · tanh(sum + bias)`.
#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub w_query: Tensor,
    pub w_enc: Tensor,
    pub w_loc: Tensor,
    pub bias: Tensor,
    pub score_v: Tensor,
    pub loc_filters: Tensor,
}

impl AttentionParams {
    pub fn new(cfg: &AttentionConfig, query_dim: usize, enc_dim: usize) -> Self {
        AttentionParams {
            w_query: Tensor::zeros(&[cfg.dim, query_dim]),
            w_enc: Tensor::zeros(&[cfg.dim, enc_dim]),
            w_loc: Tensor::zeros(&[cfg.dim, cfg.conv_filters]),
            bias: Tensor::zeros(&[cfg.dim]),
            score_v: Tensor::zeros(&[cfg.dim]),
            loc_filters: Tensor::zeros(&[cfg.conv_filters, cfg.conv_width]),
        }
    }

    pub fn zeros_like(&self) -> Self {
        AttentionParams {
            w_query: self.w_query.zeros_like(),
            w_enc: self.w_enc.zeros_like(),
            w_loc: self.w_loc.zeros_like(),
            bias: self.bias.zeros_like(),
            score_v: self.score_v.zeros_like(),
            loc_filters: self.loc_filters.zeros_like(),
        }
    }
}

/// Attention weights over the encoder frames and the context they induce.
#[derive(Debug, Clone)]
pub struct AttentionState {
    pub weights: Vec<f64>,
    pub context: Vec<f64>,
}

impl AttentionState {
    /// Initial state: uniform weights, context the matching weighted sum.
    pub fn initial(g: &Tensor) -> Self {
        let t_len = g.rows();
        let weights = vec![1.0 / t_len as f64; t_len];
        let context = weighted_context(&weights, g);
        AttentionState { weights, context }
    }
}

fn weighted_context(weights: &[f64], g: &Tensor) -> Vec<f64> {
    let mut ctx = vec![0.0; g.cols()];
    for (t, w) in weights.iter().enumerate() {
        for (h, v) in g.row(t).iter().enumerate() {
            ctx[h] += w * v;
        }
    }
    ctx
}

pub struct AttStepCache {
    pub prev_weights: Vec<f64>,
    pub query: Vec<f64>,
    loc_feats: Tensor,
    tanh_u: Tensor,
    pub weights: Vec<f64>,
}

/// One attention step: weights over frames from scores, context as the
/// weighted sum of encoder frames.
pub fn attention_step(
    p: &AttentionParams,
    prev: &AttentionState,
    query: &[f64],
    g: &Tensor,
) -> (AttentionState, AttStepCache) {
    let t_len = g.rows();
    debug_assert_eq!(prev.weights.len(), t_len);
    let att_dim = p.bias.len();

    let loc_feats = conv1d(&p.loc_filters, &prev.weights);

    // Query projection is shared across frames.
    let mut q_proj = p.bias.data().to_vec();
    for a in 0..att_dim {
        let row = p.w_query.row(a);
        let mut acc = 0.0;
        for (i, qv) in query.iter().enumerate() {
            acc += row[i] * qv;
        }
        q_proj[a] += acc;
    }

    let mut tanh_u = Tensor::zeros(&[t_len, att_dim]);
    let mut scores = vec![0.0; t_len];
    for t in 0..t_len {
        let g_row = g.row(t);
        let l_row = loc_feats.row(t);
        let mut score = 0.0;
        let u_row = tanh_u.row_mut(t);
        for a in 0..att_dim {
            let we = p.w_enc.row(a);
            let wl = p.w_loc.row(a);
            let mut u = q_proj[a];
            for (h, gv) in g_row.iter().enumerate() {
                u += we[h] * gv;
            }
            for (k, lv) in l_row.iter().enumerate() {
                u += wl[k] * lv;
            }
            let tu = u.tanh();
            u_row[a] = tu;
            score += p.score_v.data()[a] * tu;
        }
        scores[t] = score;
    }

    softmax_in_place(&mut scores);
    let context = weighted_context(&scores, g);
    let state = AttentionState {
        weights: scores.clone(),
        context,
    };
    let cache = AttStepCache {
        prev_weights: prev.weights.clone(),
        query: query.to_vec(),
        loc_feats,
        tanh_u,
        weights: scores,
    };
    (state, cache)
}

/// Backward of one attention step. Accumulates parameter gradients and the
/// per-frame gradient into `d_g`; returns gradients w.r.t. the previous
/// weights and the query.
pub fn attention_step_backward(
    p: &AttentionParams,
    cache: &AttStepCache,
    g: &Tensor,
    d_weights: &[f64],
    d_context: &[f64],
    grads: &mut AttentionParams,
    d_g: &mut Tensor,
) -> (Vec<f64>, Vec<f64>) {
    let t_len = g.rows();
    let att_dim = p.bias.len();

    // Context is a weighted sum: split its gradient between weights and frames.
    let mut d_w_total = d_weights.to_vec();
    for t in 0..t_len {
        let g_row = g.row(t);
        let mut acc = 0.0;
        for (h, dc) in d_context.iter().enumerate() {
            acc += dc * g_row[h];
            d_g.row_mut(t)[h] += cache.weights[t] * dc;
        }
        d_w_total[t] += acc;
    }

    let d_scores = softmax_backward(&cache.weights, &d_w_total);

    let mut d_query = vec![0.0; cache.query.len()];
    let mut d_loc = cache.loc_feats.zeros_like();
    for t in 0..t_len {
        let ds = d_scores[t];
        if ds == 0.0 {
            continue;
        }
        let tu_row = cache.tanh_u.row(t);
        let g_row = g.row(t);
        let l_row = cache.loc_feats.row(t);
        for a in 0..att_dim {
            let tu = tu_row[a];
            grads.score_v.data_mut()[a] += ds * tu;
            let du = ds * p.score_v.data()[a] * (1.0 - tu * tu);
            if du == 0.0 {
                continue;
            }
            grads.bias.data_mut()[a] += du;
            let wq = p.w_query.row(a);
            let dwq = grads.w_query.row_mut(a);
            for (i, qv) in cache.query.iter().enumerate() {
                dwq[i] += du * qv;
                d_query[i] += wq[i] * du;
            }
            let we = p.w_enc.row(a);
            let dwe = grads.w_enc.row_mut(a);
            let dg_row = d_g.row_mut(t);
            for (h, gv) in g_row.iter().enumerate() {
                dwe[h] += du * gv;
                dg_row[h] += we[h] * du;
            }
            let wl = p.w_loc.row(a);
            let dwl = grads.w_loc.row_mut(a);
            let dl_row = d_loc.row_mut(t);
            for (k, lv) in l_row.iter().enumerate() {
                dwl[k] += du * lv;
                dl_row[k] += wl[k] * du;
            }
        }
    }

    let d_prev_weights =
        conv1d_backward(&p.loc_filters, &cache.prev_weights, &d_loc, &mut grads.loc_filters);
    (d_prev_weights, d_query)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;
    use crate::rng::Rng;

    fn cfg() -> AttentionConfig {
        AttentionConfig {
            dim: 3,
            conv_filters: 2,
            conv_width: 3,
            mode: AttentionMode::Shared,
            conditioning: AttentionConditioning::DecoderState,
        }
    }

    fn random_params(c: &AttentionConfig, qd: usize, ed: usize, seed: u64) -> AttentionParams {
        let mut p = AttentionParams::new(c, qd, ed);
        let mut rng = Rng::new(seed);
        for t in [
            &mut p.w_query,
            &mut p.w_enc,
            &mut p.w_loc,
            &mut p.bias,
            &mut p.score_v,
            &mut p.loc_filters,
        ] {
            for v in t.data_mut() {
                *v = rng.uniform(-0.5, 0.5);
            }
        }
        p
    }

    fn random_matrix(r: usize, c: usize, rng: &mut Rng) -> Tensor {
        let mut t = Tensor::zeros(&[r, c]);
        for v in t.data_mut() {
            *v = rng.uniform(-1.0, 1.0);
        }
        t
    }

    #[test]
    fn single_frame_forces_full_weight() {
        let c = cfg();
        let p = random_params(&c, 2, 3, 1);
        let mut rng = Rng::new(2);
        let g = random_matrix(1, 3, &mut rng);
        let prev = AttentionState::initial(&g);
        let (state, _) = attention_step(&p, &prev, &[0.3, -0.1], &g);
        assert_eq!(state.weights, vec![1.0]);
        for (h, v) in g.row(0).iter().enumerate() {
            assert_eq!(state.context[h], *v);
        }
    }

    #[test]
    fn zero_scores_give_uniform_weights() {
        let c = cfg();
        let p = AttentionParams::new(&c, 2, 3); // all-zero params
        let mut rng = Rng::new(3);
        let g = random_matrix(5, 3, &mut rng);
        let prev = AttentionState::initial(&g);
        let (state, _) = attention_step(&p, &prev, &[1.0, 2.0], &g);
        for w in &state.weights {
            assert!((w - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn weights_always_sum_to_one() {
        let c = cfg();
        let p = random_params(&c, 2, 3, 4);
        let mut rng = Rng::new(5);
        for _ in 0..50 {
            let t_len = 1 + rng.below(7) as usize;
            let g = random_matrix(t_len, 3, &mut rng);
            let mut state = AttentionState::initial(&g);
            let q: Vec<f64> = (0..2).map(|_| rng.uniform(-2.0, 2.0)).collect();
            for _ in 0..4 {
                let (next, _) = attention_step(&p, &state, &q, &g);
                let sum: f64 = next.weights.iter().sum();
                assert!((sum - 1.0).abs() < 1e-9);
                state = next;
            }
        }
    }

    #[test]
    fn step_gradient_matches_finite_differences() {
        let c = cfg();
        let (qd, ed, t_len) = (2, 3, 4);
        let template = random_params(&c, qd, ed, 6);
        let mut rng = Rng::new(7);
        let g0 = random_matrix(t_len, ed, &mut rng);
        let q0: Vec<f64> = (0..qd).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let prev_w: Vec<f64> = {
            let raw: Vec<f64> = (0..t_len).map(|_| rng.uniform(0.1, 1.0)).collect();
            let s: f64 = raw.iter().sum();
            raw.iter().map(|x| x / s).collect()
        };

        // Pack params + query + prev weights + G into one vector.
        let mut packed = Vec::new();
        for t in [
            &template.w_query,
            &template.w_enc,
            &template.w_loc,
            &template.bias,
            &template.score_v,
            &template.loc_filters,
        ] {
            packed.extend_from_slice(t.data());
        }
        packed.extend_from_slice(&q0);
        packed.extend_from_slice(&prev_w);
        packed.extend_from_slice(g0.data());

        let err = grad_check(
            |x| {
                let mut p = AttentionParams::new(&c, qd, ed);
                let mut off = 0;
                for t in [
                    &mut p.w_query,
                    &mut p.w_enc,
                    &mut p.w_loc,
                    &mut p.bias,
                    &mut p.score_v,
                    &mut p.loc_filters,
                ] {
                    let n = t.len();
                    t.data_mut().copy_from_slice(&x[off..off + n]);
                    off += n;
                }
                let query = x[off..off + qd].to_vec();
                off += qd;
                let pw = x[off..off + t_len].to_vec();
                off += t_len;
                let g = Tensor::from_vec(&[t_len, ed], x[off..].to_vec());
                let prev_ctx = vec![0.0; ed];
                let prev = AttentionState {
                    weights: pw,
                    context: prev_ctx,
                };
                let (state, cache) = attention_step(&p, &prev, &query, &g);
                // Loss touches both outputs.
                let loss: f64 = state.context.iter().map(|v| v * v).sum::<f64>()
                    + state.weights.iter().enumerate().map(|(i, w)| (i as f64 + 1.0) * w).sum::<f64>();
                let d_ctx: Vec<f64> = state.context.iter().map(|v| 2.0 * v).collect();
                let d_w: Vec<f64> = (0..t_len).map(|i| i as f64 + 1.0).collect();
                let mut grads = p.zeros_like();
                let mut d_g = g.zeros_like();
                let (d_pw, d_q) =
                    attention_step_backward(&p, &cache, &g, &d_w, &d_ctx, &mut grads, &mut d_g);
                let mut out = Vec::new();
                for t in [
                    &grads.w_query,
                    &grads.w_enc,
                    &grads.w_loc,
                    &grads.bias,
                    &grads.score_v,
                    &grads.loc_filters,
                ] {
                    out.extend_from_slice(t.data());
                }
                out.extend_from_slice(&d_q);
                out.extend_from_slice(&d_pw);
                out.extend_from_slice(d_g.data());
                (loss, out)
            },
            &packed,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "err {err}");
    }
}
