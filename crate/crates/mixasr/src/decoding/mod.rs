//! Inference: label-synchronous joint CTC/attention beam search with
//! shallow language-model fusion, plus the evaluation scorer.
//!
//! Each stream is decoded independently. A hypothesis' joint score is
//! `(1-λ)·att + λ·ctc + γ·lm`, all cumulative log-probabilities; every
//! extension adds non-positive terms, so the search stops exactly when the
//! best finished hypothesis can no longer be beaten.

pub mod lm;
mod prefix;
pub mod score;

pub use lm::{lm_nll, lm_step, train_lm, LmConfig, TinyLm};
pub use prefix::{complete_logprob, prefix_extend, prefix_init, CtcPrefixState};
pub use score::{
    edit_distance, score_permutation_min, EditCounts, EvalReport, PermutationScore,
    UtteranceScore,
};

use crate::attdec::{attention_step, decoder_update, output_dist, AttentionConditioning, AttentionState};
use crate::ctc::{ctc_loss, CtcInput};
use crate::data::SOS;
use crate::encoder::StreamSet;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::lstm::LstmState;
use crate::numerics::Tensor;

/// How the CTC term enters the joint score: incrementally during the search
/// (prefix scoring) or as a full-sequence rescoring of the finished beam.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CtcScoring {
    Prefix,
    Rescore,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeConfig {
    pub beam_width: usize,
    /// CTC weight λ at decode time.
    pub ctc_weight: f64,
    /// Language-model weight γ.
    pub lm_weight: f64,
    /// Output length cap as a multiple of the stream frame count.
    pub max_len_factor: f64,
    pub ctc_scoring: CtcScoring,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam_width: 8,
            ctc_weight: 0.3,
            lm_weight: 1.0,
            max_len_factor: 1.5,
            ctc_scoring: CtcScoring::Prefix,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_width == 0 {
            return Err(Error::InvalidConfig("beam_width must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.ctc_weight) {
            return Err(Error::InvalidConfig(format!(
                "ctc_weight must lie in [0, 1], got {}",
                self.ctc_weight
            )));
        }
        if self.lm_weight < 0.0 {
            return Err(Error::InvalidConfig("lm_weight must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Best hypothesis for one stream.
#[derive(Debug, Clone)]
pub struct StreamDecode {
    pub tokens: Vec<usize>,
    pub joint_score: f64,
    pub att_score: f64,
    pub ctc_score: f64,
    pub lm_score: f64,
    /// Attention weights, one row per output step (eos step included).
    pub attention: Tensor,
}

struct Hyp {
    tokens: Vec<usize>,
    last_token: usize,
    att_score: f64,
    lm_score: f64,
    ctc: CtcPrefixState,
    att_state: AttentionState,
    dec_state: LstmState,
    lm_state: Option<LstmState>,
    lm_next: Option<Vec<f64>>,
    att_rows: Vec<Vec<f64>>,
    birth: usize,
}

struct Finished {
    tokens: Vec<usize>,
    att_score: f64,
    ctc_score: f64,
    lm_score: f64,
    joint: f64,
    att_rows: Vec<Vec<f64>>,
}

struct Candidate {
    parent: usize,
    class: usize,
    att_score: f64,
    lm_score: f64,
    ctc_state: Option<CtcPrefixState>,
    joint: f64,
    parent_birth: usize,
}

/// `w · x` that treats a zero weight as absent (a weight of 0 must not turn
/// a `-inf` component into NaN).
fn weighted(w: f64, x: f64) -> f64 {
    if w == 0.0 {
        0.0
    } else {
        w * x
    }
}

fn search_joint(cfg: &DecodeConfig, att: f64, ctc_prefix: f64, lm: f64) -> f64 {
    let ctc_term = match cfg.ctc_scoring {
        CtcScoring::Prefix => weighted(cfg.ctc_weight, ctc_prefix),
        CtcScoring::Rescore => 0.0,
    };
    weighted(1.0 - cfg.ctc_weight, att) + ctc_term + weighted(cfg.lm_weight, lm)
}

/// Decode a single encoder stream with the attention set of stream `s`.
pub fn decode_stream(
    model: &Model,
    g: &Tensor,
    s: usize,
    lm: Option<&TinyLm>,
    cfg: &DecodeConfig,
) -> Result<StreamDecode> {
    cfg.validate()?;
    if g.rows() == 0 {
        return Err(Error::EmptyInput("decode_stream"));
    }
    let vocab = &model.vocab;
    let attp = model.attention_params(s)?;
    let decp = &model.params.decoder;
    let n_classes = vocab.n_att_classes();
    let eos_class = vocab.eos_att_class();
    let use_lm = cfg.lm_weight > 0.0 && lm.is_some();

    let ctc_lp = model.ctc_logprobs(g);
    let max_steps = ((g.rows() as f64 * cfg.max_len_factor).ceil() as usize).max(1);

    let root = {
        let (lm_next, lm_state) = if use_lm {
            let (lp, st) = lm_step(lm.unwrap(), &lm.unwrap().start(), SOS)?;
            (Some(lp), Some(st))
        } else {
            (None, None)
        };
        Hyp {
            tokens: Vec::new(),
            last_token: SOS,
            att_score: 0.0,
            lm_score: 0.0,
            ctc: prefix_init(&ctc_lp),
            att_state: AttentionState::initial(g),
            dec_state: LstmState::zeros(decp.hidden()),
            lm_state,
            lm_next,
            att_rows: Vec::new(),
            birth: 0,
        }
    };

    let mut live = vec![root];
    let mut finished: Vec<Finished> = Vec::new();
    let mut births = 1usize;

    for step in 0..max_steps {
        let final_step = step + 1 == max_steps;
        // One decoder step per live hypothesis; children share it.
        let mut parent_steps = Vec::with_capacity(live.len());
        for hyp in &live {
            let query: &[f64] = match model.cfg.att.conditioning {
                AttentionConditioning::DecoderState => &hyp.dec_state.h,
                AttentionConditioning::PrevContext => &hyp.att_state.context,
            };
            let (att_new, _) = attention_step(attp, &hyp.att_state, query, g);
            let (dec_new, _) =
                decoder_update(decp, &hyp.dec_state, &hyp.att_state.context, hyp.last_token)?;
            let logprobs = output_dist(decp, &att_new.context, &dec_new, hyp.last_token)?;
            parent_steps.push((att_new, dec_new, logprobs));
        }

        // Candidates over all classes including eos; an eos candidate must
        // win a beam slot to enter the finished pool (so beam 1 degenerates
        // to the greedy argmax rollout). At the length cap, every live
        // hypothesis is force-finished instead.
        let mut candidates: Vec<Candidate> = Vec::new();
        for (idx, hyp) in live.iter().enumerate() {
            let (_, _, logprobs) = &parent_steps[idx];
            for class in 0..n_classes {
                let att_score = hyp.att_score + logprobs[class];
                let lm_score = hyp.lm_score
                    + if use_lm {
                        hyp.lm_next.as_ref().unwrap()[class]
                    } else {
                        0.0
                    };
                if class == eos_class {
                    let ctc_score = complete_logprob(&hyp.ctc);
                    let joint = search_joint(cfg, att_score, ctc_score, lm_score);
                    candidates.push(Candidate {
                        parent: idx,
                        class,
                        att_score,
                        lm_score,
                        ctc_state: None,
                        joint,
                        parent_birth: hyp.birth,
                    });
                } else if !final_step {
                    let (ctc_state, ctc_prefix) = match cfg.ctc_scoring {
                        CtcScoring::Prefix => {
                            let (_, st) = prefix_extend(&ctc_lp, &hyp.ctc, class + 1);
                            let lp = st.log_prefix;
                            (Some(st), lp)
                        }
                        CtcScoring::Rescore => (None, 0.0),
                    };
                    let joint = search_joint(cfg, att_score, ctc_prefix, lm_score);
                    candidates.push(Candidate {
                        parent: idx,
                        class,
                        att_score,
                        lm_score,
                        ctc_state,
                        joint,
                        parent_birth: hyp.birth,
                    });
                }
            }
        }

        // Deterministic ranking: score, then token index, then parent age.
        candidates.sort_by(|a, b| {
            b.joint
                .partial_cmp(&a.joint)
                .unwrap()
                .then(a.class.cmp(&b.class))
                .then(a.parent_birth.cmp(&b.parent_birth))
        });
        if !final_step {
            candidates.truncate(cfg.beam_width);
        }

        let mut next_live = Vec::with_capacity(candidates.len());
        for cand in candidates {
            let parent = &live[cand.parent];
            let (att_new, dec_new, _) = &parent_steps[cand.parent];
            if cand.class == eos_class {
                let mut att_rows = parent.att_rows.clone();
                att_rows.push(att_new.weights.clone());
                finished.push(Finished {
                    tokens: parent.tokens.clone(),
                    att_score: cand.att_score,
                    ctc_score: complete_logprob(&parent.ctc),
                    lm_score: cand.lm_score,
                    joint: cand.joint,
                    att_rows,
                });
                continue;
            }
            let token = vocab.token_of_att_class(cand.class);
            let mut tokens = parent.tokens.clone();
            tokens.push(token);
            let (lm_next, lm_state) = if use_lm {
                let (lp, st) = lm_step(lm.unwrap(), parent.lm_state.as_ref().unwrap(), token)?;
                (Some(lp), Some(st))
            } else {
                (None, None)
            };
            let mut att_rows = parent.att_rows.clone();
            att_rows.push(att_new.weights.clone());
            next_live.push(Hyp {
                tokens,
                last_token: token,
                att_score: cand.att_score,
                lm_score: cand.lm_score,
                ctc: cand.ctc_state.unwrap_or_else(|| parent.ctc.clone()),
                att_state: att_new.clone(),
                dec_state: dec_new.clone(),
                lm_state,
                lm_next,
                att_rows,
                birth: births,
            });
            births += 1;
        }
        live = next_live;

        if final_step || live.is_empty() {
            break;
        }

        // The best finished hypothesis cannot be beaten once it matches or
        // exceeds every live score (extensions only lower scores).
        if let Some(best_finished) = finished.iter().map(|f| f.joint).fold(None, fold_max) {
            let best_live = live.iter().map(|h| h.joint_for(cfg)).fold(None, fold_max);
            match best_live {
                Some(bl) if bl > best_finished => {}
                _ => break,
            }
        }
    }

    // Rescoring mode: add the full-sequence CTC term now.
    let finals: Vec<Finished> = match cfg.ctc_scoring {
        CtcScoring::Prefix => finished,
        CtcScoring::Rescore => finished
            .into_iter()
            .map(|mut f| {
                let classes: Vec<usize> = f
                    .tokens
                    .iter()
                    .map(|t| vocab.ctc_class(*t).expect("decoded token is a symbol"))
                    .collect();
                let (nll, _) = ctc_loss(CtcInput {
                    logprobs: &ctc_lp,
                    labels: &classes,
                });
                f.ctc_score = -nll;
                f.joint = weighted(1.0 - cfg.ctc_weight, f.att_score)
                    + weighted(cfg.ctc_weight, f.ctc_score)
                    + weighted(cfg.lm_weight, f.lm_score);
                f
            })
            .collect(),
    };

    let best = finals
        .into_iter()
        .reduce(|best, f| if f.joint > best.joint { f } else { best })
        .ok_or(Error::EmptyInput("no finished hypotheses"))?;

    let t_len = g.rows();
    let mut attention = Tensor::zeros(&[best.att_rows.len(), t_len]);
    for (i, row) in best.att_rows.iter().enumerate() {
        attention.row_mut(i).copy_from_slice(row);
    }
    Ok(StreamDecode {
        tokens: best.tokens,
        joint_score: best.joint,
        att_score: best.att_score,
        ctc_score: best.ctc_score,
        lm_score: best.lm_score,
        attention,
    })
}

fn fold_max(acc: Option<f64>, x: f64) -> Option<f64> {
    Some(match acc {
        Some(a) if a >= x => a,
        _ => x,
    })
}

impl Hyp {
    fn joint_for(&self, cfg: &DecodeConfig) -> f64 {
        search_joint(cfg, self.att_score, self.ctc.log_prefix, self.lm_score)
    }
}

/// Decode every stream of an encoded mixture.
pub fn beam_search(
    model: &Model,
    streams: &StreamSet,
    lm: Option<&TinyLm>,
    cfg: &DecodeConfig,
) -> Result<Vec<StreamDecode>> {
    streams
        .streams
        .iter()
        .enumerate()
        .map(|(s, g)| decode_stream(model, g, s, lm, cfg))
        .collect()
}

#[cfg(test)]
mod tests;
