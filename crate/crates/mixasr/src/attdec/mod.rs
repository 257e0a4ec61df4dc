//! Per-stream attention decoder: attention step, recurrent state update,
//! output distribution, the teacher-forced sequence likelihood, and
//! scheduled sampling of the history tokens.
//!
//! Step order for output position n (1-based), with all inputs from n-1:
//! attention produces the new weights and context from the previous weights
//! and the conditioning vector; the recurrent cell consumes the previous
//! context and previous token; the output layer reads the new context, the
//! updated state and the previous token's embedding.

mod attention;

pub use attention::{
    attention_step, attention_step_backward, AttStepCache, AttentionConditioning,
    AttentionConfig, AttentionMode, AttentionParams, AttentionState,
};

use crate::data::{Vocabulary, SOS};
use crate::error::{Error, Result};
use crate::numerics::lstm::{
    lstm_step, lstm_step_backward, LstmParams, LstmState, LstmStepCache,
};
use crate::numerics::ops::{affine, affine_backward, log_softmax, softmax_xent_backward};
use crate::numerics::Tensor;
use crate::rng::Rng;

/// Decoder parameters: token embedding, one recurrent cell, and the output
/// layer over `[state; context; embedding]`.
#[derive(Debug, Clone)]
pub struct DecoderParams {
    pub embed: Tensor,
    pub cell: LstmParams,
    pub out_w: Tensor,
    pub out_b: Tensor,
}

impl DecoderParams {
    pub fn new(n_tokens: usize, embed_dim: usize, enc_dim: usize, hidden: usize, n_classes: usize) -> Self {
        DecoderParams {
            embed: Tensor::zeros(&[n_tokens, embed_dim]),
            cell: LstmParams::new(embed_dim + enc_dim, hidden),
            out_w: Tensor::zeros(&[n_classes, hidden + enc_dim + embed_dim]),
            out_b: Tensor::zeros(&[n_classes]),
        }
    }

    pub fn zeros_like(&self) -> Self {
        DecoderParams {
            embed: self.embed.zeros_like(),
            cell: self.cell.zeros_like(),
            out_w: self.out_w.zeros_like(),
            out_b: self.out_b.zeros_like(),
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.embed.cols()
    }

    pub fn hidden(&self) -> usize {
        self.cell.hidden_size()
    }

    pub fn enc_dim(&self) -> usize {
        self.cell.input_size() - self.embed_dim()
    }

    fn embed_row(&self, token: usize) -> Result<&[f64]> {
        if token >= self.embed.rows() {
            return Err(Error::UnknownToken(token));
        }
        Ok(self.embed.row(token))
    }
}

pub struct DecStepCache {
    lstm: LstmStepCache,
    token_prev: usize,
}

/// One recurrent step conditioned on the previous state, previous context
/// and previous token.
pub fn decoder_update(
    p: &DecoderParams,
    state: &LstmState,
    c_prev: &[f64],
    token_prev: usize,
) -> Result<(LstmState, DecStepCache)> {
    let emb = p.embed_row(token_prev)?;
    let mut x = Vec::with_capacity(emb.len() + c_prev.len());
    x.extend_from_slice(emb);
    x.extend_from_slice(c_prev);
    let (next, lstm) = lstm_step(&p.cell, &x, state);
    Ok((
        next,
        DecStepCache {
            lstm,
            token_prev,
        },
    ))
}

/// Log-probabilities over the output classes (symbols plus eos) from the
/// current context, the updated decoder state and the previous token.
pub fn output_dist(
    p: &DecoderParams,
    context: &[f64],
    state: &LstmState,
    token_prev: usize,
) -> Result<Vec<f64>> {
    let emb = p.embed_row(token_prev)?;
    let mut x = Vec::with_capacity(state.h.len() + context.len() + emb.len());
    x.extend_from_slice(&state.h);
    x.extend_from_slice(context);
    x.extend_from_slice(emb);
    Ok(log_softmax(&affine(&p.out_w, &p.out_b, &x)))
}

/// History selection policy for scheduled sampling: with probability `p`
/// the model's own previous prediction replaces the reference token.
#[derive(Debug, Clone)]
pub struct SamplingPolicy {
    pub p: f64,
    rng: Rng,
}

impl SamplingPolicy {
    pub fn new(p: f64, seed: u64) -> Self {
        SamplingPolicy {
            p,
            rng: Rng::new(seed),
        }
    }
}

/// Draw the next history token: the reference token on a 0 coin, the
/// model's prediction on a 1 coin. Degenerate probabilities skip the draw
/// so `p = 0` is exactly teacher forcing.
pub fn scheduled_history(r_prev: usize, y_prev: usize, policy: &mut SamplingPolicy) -> usize {
    if policy.p <= 0.0 {
        r_prev
    } else if policy.p >= 1.0 {
        y_prev
    } else if policy.rng.bernoulli(policy.p) {
        y_prev
    } else {
        r_prev
    }
}

struct TrainStep {
    att: AttStepCache,
    dec: DecStepCache,
    out_x: Vec<f64>,
    logprobs: Vec<f64>,
    target_class: usize,
}

/// Forward caches for one decoded stream.
pub struct DecodeTrainCache {
    steps: Vec<TrainStep>,
    /// History tokens actually fed, including the leading sos.
    pub history: Vec<usize>,
    initial_weights: Vec<f64>,
    conditioning: AttentionConditioning,
}

impl DecodeTrainCache {
    /// Attention weights as an `N × T'` matrix, one row per output step.
    pub fn attention_matrix(&self) -> Tensor {
        let n = self.steps.len();
        let t_len = self.initial_weights.len();
        let mut m = Tensor::zeros(&[n, t_len]);
        for (i, step) in self.steps.iter().enumerate() {
            m.row_mut(i).copy_from_slice(&step.att.weights);
        }
        m
    }

    pub fn step_logprobs(&self) -> Vec<&[f64]> {
        self.steps.iter().map(|s| s.logprobs.as_slice()).collect()
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Single forward core: `next_history(i, r_next, logprobs)` names the token
/// fed at step `i + 1`, so teacher forcing, scheduled sampling and history
/// replay share one code path bit for bit.
fn decode_train_impl(
    cfg: &AttentionConfig,
    attp: &AttentionParams,
    decp: &DecoderParams,
    vocab: &Vocabulary,
    g: &Tensor,
    reference: &[usize],
    mut next_history: impl FnMut(usize, usize, &[f64]) -> usize,
) -> Result<(f64, DecodeTrainCache)> {
    if g.rows() == 0 {
        return Err(Error::EmptyInput("decode_train stream"));
    }
    let mut targets: Vec<usize> = reference
        .iter()
        .map(|t| vocab.att_class(*t))
        .collect::<Result<_>>()?;
    targets.push(vocab.eos_att_class());

    let mut att_state = AttentionState::initial(g);
    let initial_weights = att_state.weights.clone();
    let mut dec_state = LstmState::zeros(decp.hidden());
    let mut history = vec![SOS];
    let mut steps = Vec::with_capacity(targets.len());
    let mut nll = 0.0;

    for (i, &target_class) in targets.iter().enumerate() {
        let token_prev = history[i];
        let query: &[f64] = match cfg.conditioning {
            AttentionConditioning::DecoderState => &dec_state.h,
            AttentionConditioning::PrevContext => &att_state.context,
        };
        let (att_new, att_cache) = attention_step(attp, &att_state, query, g);
        let (dec_new, dec_cache) = decoder_update(decp, &dec_state, &att_state.context, token_prev)?;

        let emb = decp.embed_row(token_prev)?;
        let mut out_x = Vec::with_capacity(dec_new.h.len() + att_new.context.len() + emb.len());
        out_x.extend_from_slice(&dec_new.h);
        out_x.extend_from_slice(&att_new.context);
        out_x.extend_from_slice(emb);
        let logprobs = log_softmax(&affine(&decp.out_w, &decp.out_b, &out_x));

        nll -= logprobs[target_class];

        if i + 1 < targets.len() {
            history.push(next_history(i, reference[i], &logprobs));
        }

        steps.push(TrainStep {
            att: att_cache,
            dec: dec_cache,
            out_x,
            logprobs,
            target_class,
        });
        att_state = att_new;
        dec_state = dec_new;
    }

    Ok((
        nll,
        DecodeTrainCache {
            steps,
            history,
            initial_weights,
            conditioning: cfg.conditioning,
        },
    ))
}

/// Teacher-forced / scheduled-sampling sequence negative log-likelihood of
/// `reference` (eos appended internally) given one encoder stream.
///
/// With `policy = None` or `p = 0` the history is exactly the reference.
/// Sampled histories are constants for the backward pass: no gradient flows
/// through the argmax that produced them.
pub fn decode_train(
    cfg: &AttentionConfig,
    attp: &AttentionParams,
    decp: &DecoderParams,
    vocab: &Vocabulary,
    g: &Tensor,
    reference: &[usize],
    mut policy: Option<&mut SamplingPolicy>,
) -> Result<(f64, DecodeTrainCache)> {
    decode_train_impl(cfg, attp, decp, vocab, g, reference, |_, r_next, logprobs| {
        match policy.as_deref_mut() {
            Some(pol) => {
                let y_next = vocab.token_of_att_class(argmax(logprobs));
                scheduled_history(r_next, y_next, pol)
            }
            None => r_next,
        }
    })
}

/// Teacher-forced negative log-likelihood (no sampling).
pub fn teacher_forced_nll(
    cfg: &AttentionConfig,
    attp: &AttentionParams,
    decp: &DecoderParams,
    vocab: &Vocabulary,
    g: &Tensor,
    reference: &[usize],
) -> Result<(f64, DecodeTrainCache)> {
    decode_train(cfg, attp, decp, vocab, g, reference, None)
}

/// Replay a recorded history verbatim (for inspecting sampled runs: the
/// loss still targets `reference`, only the fed tokens differ).
pub fn decode_train_with_history(
    cfg: &AttentionConfig,
    attp: &AttentionParams,
    decp: &DecoderParams,
    vocab: &Vocabulary,
    g: &Tensor,
    reference: &[usize],
    history: &[usize],
) -> Result<(f64, DecodeTrainCache)> {
    assert_eq!(history.len(), reference.len() + 1, "history covers sos + each step");
    assert_eq!(history[0], SOS);
    decode_train_impl(cfg, attp, decp, vocab, g, reference, |i, _, _| history[i + 1])
}

/// Backward through one decoded stream. `upstream` scales the loss;
/// parameter gradients accumulate into `att_grads` / `dec_grads`; returns
/// the gradient w.r.t. the encoder stream.
pub fn decode_train_backward(
    attp: &AttentionParams,
    decp: &DecoderParams,
    g: &Tensor,
    cache: &DecodeTrainCache,
    upstream: f64,
    att_grads: &mut AttentionParams,
    dec_grads: &mut DecoderParams,
) -> Tensor {
    let hidden = decp.hidden();
    let enc_dim = decp.enc_dim();
    let embed_dim = decp.embed_dim();
    let mut d_g = g.zeros_like();

    // Adjoints of the boundary quantities after the step being processed.
    let t_len = g.rows();
    let mut d_weights = vec![0.0; t_len];
    let mut d_ctx = vec![0.0; enc_dim];
    let mut d_eh = vec![0.0; hidden];
    let mut d_ec = vec![0.0; hidden];

    for step in cache.steps.iter().rev() {
        // Output layer.
        let d_logits = softmax_xent_backward(&step.logprobs, step.target_class, upstream);
        let d_out_x = affine_backward(
            &decp.out_w,
            &step.out_x,
            &d_logits,
            &mut dec_grads.out_w,
            &mut dec_grads.out_b,
        );
        for k in 0..hidden {
            d_eh[k] += d_out_x[k];
        }
        for h in 0..enc_dim {
            d_ctx[h] += d_out_x[hidden + h];
        }
        {
            let emb_grad = dec_grads.embed.row_mut(step.dec.token_prev);
            for e in 0..embed_dim {
                emb_grad[e] += d_out_x[hidden + enc_dim + e];
            }
        }

        // Recurrent cell: consumed [emb(token_prev); c_prev] and the
        // previous state.
        let (d_x, d_h_prev, d_c_prev) =
            lstm_step_backward(&decp.cell, &step.dec.lstm, &d_eh, &d_ec, &mut dec_grads.cell);
        {
            let emb_grad = dec_grads.embed.row_mut(step.dec.token_prev);
            for e in 0..embed_dim {
                emb_grad[e] += d_x[e];
            }
        }
        let mut d_ctx_prev: Vec<f64> = d_x[embed_dim..].to_vec();

        // Attention step: consumed the previous weights and the query.
        let (d_prev_weights, d_query) = attention_step_backward(
            attp,
            &step.att,
            g,
            &d_weights,
            &d_ctx,
            att_grads,
            &mut d_g,
        );

        let mut d_eh_prev = d_h_prev;
        match cache.conditioning {
            AttentionConditioning::DecoderState => {
                for (a, b) in d_eh_prev.iter_mut().zip(d_query.iter()) {
                    *a += b;
                }
            }
            AttentionConditioning::PrevContext => {
                for (a, b) in d_ctx_prev.iter_mut().zip(d_query.iter()) {
                    *a += b;
                }
            }
        }

        d_weights = d_prev_weights;
        d_ctx = d_ctx_prev;
        d_eh = d_eh_prev;
        d_ec = d_c_prev;
    }

    // Initial boundary: the uniform weights are constants, the zero decoder
    // state is a constant, but the initial context is the uniform-weighted
    // sum of the encoder frames.
    for t in 0..t_len {
        let w0 = cache.initial_weights[t];
        let row = d_g.row_mut(t);
        for (h, dc) in d_ctx.iter().enumerate() {
            row[h] += w0 * dc;
        }
    }
    d_g
}
