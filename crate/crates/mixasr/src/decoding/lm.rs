//! A tiny character-level recurrent language model over the output
//! vocabulary, trained on the corpus transcriptions and fused into the beam
//! search as a weighted additive log-score.

use crate::data::{Vocabulary, SOS};
use crate::error::{Error, Result};
use crate::numerics::lstm::{lstm_step, lstm_step_backward, LstmParams, LstmState, LstmStepCache};
use crate::numerics::ops::{affine, affine_backward, log_softmax, softmax_xent_backward};
use crate::numerics::Tensor;
use crate::rng::{derive_seed, Rng};
use crate::training::AdaDelta;

#[derive(Debug, Clone, PartialEq)]
pub struct LmConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            embed_dim: 8,
            hidden: 16,
            epochs: 20,
            seed: 1,
        }
    }
}

/// Single-recurrent-layer next-token model; output classes are the
/// vocabulary symbols plus eos.
#[derive(Debug, Clone)]
pub struct TinyLm {
    pub embed: Tensor,
    pub cell: LstmParams,
    pub out_w: Tensor,
    pub out_b: Tensor,
}

impl TinyLm {
    pub fn new(vocab: &Vocabulary, cfg: &LmConfig) -> Self {
        TinyLm {
            embed: Tensor::zeros(&[vocab.n_tokens(), cfg.embed_dim]),
            cell: LstmParams::new(cfg.embed_dim, cfg.hidden),
            out_w: Tensor::zeros(&[vocab.n_att_classes(), cfg.hidden]),
            out_b: Tensor::zeros(&[vocab.n_att_classes()]),
        }
    }

    pub fn zeros_like(&self) -> Self {
        TinyLm {
            embed: self.embed.zeros_like(),
            cell: self.cell.zeros_like(),
            out_w: self.out_w.zeros_like(),
            out_b: self.out_b.zeros_like(),
        }
    }

    pub fn start(&self) -> LstmState {
        LstmState::zeros(self.cell.hidden_size())
    }
}

pub fn lm_named_tensors(lm: &TinyLm) -> Vec<(String, &Tensor)> {
    vec![
        ("lm.embed".into(), &lm.embed),
        ("lm.cell.w_ih".into(), &lm.cell.w_ih),
        ("lm.cell.w_hh".into(), &lm.cell.w_hh),
        ("lm.cell.b".into(), &lm.cell.b),
        ("lm.out_w".into(), &lm.out_w),
        ("lm.out_b".into(), &lm.out_b),
    ]
}

pub fn lm_named_tensors_mut(lm: &mut TinyLm) -> Vec<(String, &mut Tensor)> {
    vec![
        ("lm.embed".into(), &mut lm.embed),
        ("lm.cell.w_ih".into(), &mut lm.cell.w_ih),
        ("lm.cell.w_hh".into(), &mut lm.cell.w_hh),
        ("lm.cell.b".into(), &mut lm.cell.b),
        ("lm.out_w".into(), &mut lm.out_w),
        ("lm.out_b".into(), &mut lm.out_b),
    ]
}

/// Feed one token; returns the log-distribution over the next output class
/// and the advanced state.
pub fn lm_step(lm: &TinyLm, state: &LstmState, token: usize) -> Result<(Vec<f64>, LstmState)> {
    if token >= lm.embed.rows() {
        return Err(Error::UnknownToken(token));
    }
    let (next, _) = lstm_step(&lm.cell, lm.embed.row(token), state);
    let logits = affine(&lm.out_w, &lm.out_b, &next.h);
    Ok((log_softmax(&logits), next))
}

struct LmStepCache {
    token: usize,
    lstm: LstmStepCache,
    h: Vec<f64>,
    logprobs: Vec<f64>,
    target: usize,
}

/// Teacher-forced negative log-likelihood of a token sequence (sos fed
/// first, eos the final target), with caches for training.
fn lm_forward(lm: &TinyLm, vocab: &Vocabulary, seq: &[usize]) -> Result<(f64, Vec<LmStepCache>)> {
    let mut history = vec![SOS];
    history.extend_from_slice(seq);
    let mut targets: Vec<usize> = seq
        .iter()
        .map(|t| vocab.att_class(*t))
        .collect::<Result<_>>()?;
    targets.push(vocab.eos_att_class());

    let mut state = lm.start();
    let mut nll = 0.0;
    let mut caches = Vec::with_capacity(targets.len());
    for (tok, target) in history.iter().zip(targets.iter()) {
        if *tok >= lm.embed.rows() {
            return Err(Error::UnknownToken(*tok));
        }
        let (next, lstm) = lstm_step(&lm.cell, lm.embed.row(*tok), &state);
        let logits = affine(&lm.out_w, &lm.out_b, &next.h);
        let logprobs = log_softmax(&logits);
        nll -= logprobs[*target];
        caches.push(LmStepCache {
            token: *tok,
            lstm,
            h: next.h.clone(),
            logprobs,
            target: *target,
        });
        state = next;
    }
    Ok((nll, caches))
}

/// Sequence negative log-likelihood (teacher forced), for perplexity.
pub fn lm_nll(lm: &TinyLm, vocab: &Vocabulary, seq: &[usize]) -> Result<f64> {
    Ok(lm_forward(lm, vocab, seq)?.0)
}

fn lm_backward(lm: &TinyLm, caches: &[LmStepCache], upstream: f64, grads: &mut TinyLm) {
    let hidden = lm.cell.hidden_size();
    let mut d_h = vec![0.0; hidden];
    let mut d_c = vec![0.0; hidden];
    for step in caches.iter().rev() {
        let d_logits = softmax_xent_backward(&step.logprobs, step.target, upstream);
        let d_out = affine_backward(&lm.out_w, &step.h, &d_logits, &mut grads.out_w, &mut grads.out_b);
        for k in 0..hidden {
            d_h[k] += d_out[k];
        }
        let (d_x, d_h_prev, d_c_prev) =
            lstm_step_backward(&lm.cell, &step.lstm, &d_h, &d_c, &mut grads.cell);
        let emb_grad = grads.embed.row_mut(step.token);
        for (e, v) in d_x.iter().enumerate() {
            emb_grad[e] += v;
        }
        d_h = d_h_prev;
        d_c = d_c_prev;
    }
}

/// Train the language model on transcripts with AdaDelta; deterministic
/// under the config seed.
pub fn train_lm(vocab: &Vocabulary, transcripts: &[Vec<usize>], cfg: &LmConfig) -> Result<TinyLm> {
    if transcripts.is_empty() {
        return Err(Error::EmptyInput("train_lm transcripts"));
    }
    let mut lm = TinyLm::new(vocab, cfg);
    let mut rng = Rng::new(derive_seed(cfg.seed, "lm-init", 0));
    for (_, t) in lm_named_tensors_mut(&mut lm) {
        for v in t.data_mut() {
            *v = rng.uniform(-0.1, 0.1);
        }
    }
    crate::model::set_forget_bias(&mut lm.cell, 1.0);

    let sizes: Vec<usize> = lm_named_tensors(&lm).iter().map(|(_, t)| t.len()).collect();
    let mut opt = AdaDelta::new(0.95, 1e-8, &sizes);
    let mut order: Vec<usize> = (0..transcripts.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut shuffle_rng = Rng::new(derive_seed(cfg.seed, "lm-shuffle", epoch as u64));
        shuffle_rng.shuffle(&mut order);
        for &i in &order {
            let seq = &transcripts[i];
            let (_, caches) = lm_forward(&lm, vocab, seq)?;
            let mut grads = lm.zeros_like();
            lm_backward(&lm, &caches, 1.0 / (seq.len() + 1) as f64, &mut grads);
            let grad_list = lm_named_tensors(&grads);
            let grad_refs: Vec<&Tensor> = grad_list.iter().map(|(_, t)| *t).collect();
            let mut param_list = lm_named_tensors_mut(&mut lm);
            let mut param_refs: Vec<&mut Tensor> =
                param_list.iter_mut().map(|(_, t)| &mut **t).collect();
            opt.step(&mut param_refs, &grad_refs)?;
        }
    }
    Ok(lm)
}
