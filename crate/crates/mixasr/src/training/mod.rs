//! Multi-task training: the permutation-assigned CTC + attention objective,
//! AdaDelta updates, and the epoch loop with dev-set tracking.

mod adadelta;
#[cfg(test)]
mod tests;

pub use adadelta::AdaDelta;

use std::time::Instant;

use crate::attdec::{decode_train, decode_train_backward, SamplingPolicy};
use crate::ctc::{ctc_greedy_decode, ctc_loss, ctc_nll, pit_assign, CtcInput, Permutation};
use crate::data::{CorpusSplit, MixtureSample};
use crate::decoding::score::score_permutation_min;
use crate::error::{Error, Result};
use crate::model::{named_tensors, named_tensors_mut, Model, ModelParams};
use crate::numerics::ops::{affine_backward, log_softmax_backward};
use crate::numerics::Tensor;
use crate::rng::{derive_seed, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Interpolation λ between the CTC and attention losses.
    pub lambda_mtl: f64,
    pub rho: f64,
    pub eps: f64,
    pub init_range: f64,
    /// Scheduled-sampling probability (0 is pure teacher forcing).
    pub ss_prob: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_mtl: 0.2,
            rho: 0.95,
            eps: 1e-8,
            init_range: 0.1,
            ss_prob: 0.2,
            epochs: 60,
            batch_size: 4,
            seed: 1,
            clip_norm: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda_mtl) {
            return Err(Error::InvalidConfig(format!(
                "lambda_mtl must lie in [0, 1], got {}",
                self.lambda_mtl
            )));
        }
        if !(0.0 < self.rho && self.rho < 1.0) {
            return Err(Error::InvalidConfig("rho must lie in (0, 1)".into()));
        }
        if self.eps <= 0.0 {
            return Err(Error::InvalidConfig("eps must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.ss_prob) {
            return Err(Error::InvalidConfig("ss_prob must lie in [0, 1]".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-sample loss breakdown and the assignment that produced it.
#[derive(Debug, Clone)]
pub struct MtlBreakdown {
    pub loss: f64,
    pub ctc_loss: f64,
    pub att_loss: f64,
    pub permutation: Permutation,
    /// CTC loss of every (stream, reference) pair, for diagnostics.
    pub loss_matrix: Vec<Vec<f64>>,
}

/// Multi-task loss of one mixture with gradients through both branches.
///
/// The assignment is recomputed here every call; its argmin is treated as a
/// constant for the backward pass. Returns an error when no assignment has
/// finite total CTC loss, so the caller can skip the sample.
pub fn mtl_loss(
    model: &Model,
    sample: &MixtureSample,
    lambda: f64,
    mut policy: Option<&mut SamplingPolicy>,
) -> Result<(MtlBreakdown, ModelParams)> {
    let vocab = &model.vocab;
    let n_streams = model.cfg.encoder.n_streams;
    if sample.references.len() != n_streams {
        return Err(Error::DimMismatch {
            context: "mtl_loss references",
            expected: n_streams,
            got: sample.references.len(),
        });
    }

    let (streams, enc_cache) =
        crate::encoder::encode(&model.cfg.encoder, &model.params.encoder, &sample.mixture)?;

    // Per-stream CTC log-probabilities.
    let logprobs: Vec<Tensor> = streams.streams.iter().map(|g| model.ctc_logprobs(g)).collect();
    let ref_classes: Vec<Vec<usize>> = sample
        .references
        .iter()
        .map(|r| vocab.ctc_classes(r))
        .collect::<Result<_>>()?;

    let loss_matrix: Vec<Vec<f64>> = logprobs
        .iter()
        .map(|lp| ref_classes.iter().map(|r| ctc_nll(lp, r)).collect())
        .collect();
    let permutation = pit_assign(&loss_matrix)?;
    if !permutation.total.is_finite() {
        return Err(Error::NonFiniteLoss(format!(
            "no feasible CTC assignment for sample {}",
            sample.id
        )));
    }

    let mut grads = model.params.zeros_like();
    let mut d_streams: Vec<Tensor> = streams.streams.iter().map(|g| g.zeros_like()).collect();

    // CTC branch under the chosen assignment, weight λ.
    let mut total_ctc = 0.0;
    for (s, lp) in logprobs.iter().enumerate() {
        let labels = &ref_classes[permutation.assignment[s]];
        let (nll, d_lp) = ctc_loss(CtcInput {
            logprobs: lp,
            labels,
        });
        total_ctc += nll;
        if lambda == 0.0 {
            continue;
        }
        let g = &streams.streams[s];
        for t in 0..lp.rows() {
            let mut d_row = d_lp.row(t).to_vec();
            for v in d_row.iter_mut() {
                *v *= lambda;
            }
            let d_logits = log_softmax_backward(lp.row(t), &d_row);
            let d_frame = affine_backward(
                &model.params.ctc_w,
                g.row(t),
                &d_logits,
                &mut grads.ctc_w,
                &mut grads.ctc_b,
            );
            for (h, v) in d_frame.iter().enumerate() {
                d_streams[s].row_mut(t)[h] += v;
            }
        }
    }

    // Attention branch under the same assignment, weight 1-λ.
    let mut total_att = 0.0;
    for (s, g) in streams.streams.iter().enumerate() {
        let reference = &sample.references[permutation.assignment[s]];
        let attp = model.attention_params(s)?;
        let (nll, cache) = decode_train(
            &model.cfg.att,
            attp,
            &model.params.decoder,
            vocab,
            g,
            reference,
            policy.as_deref_mut(),
        )?;
        total_att += nll;
        if lambda < 1.0 {
            // Fresh per-stream buffer summed afterwards, so tied parallel
            // sets and a shared set accumulate identically.
            let mut att_grads = attp.zeros_like();
            let d_g = decode_train_backward(
                attp,
                &model.params.decoder,
                g,
                &cache,
                1.0 - lambda,
                &mut att_grads,
                &mut grads.decoder,
            );
            let set = model.attention_set_index(s);
            add_attention_grads(&mut grads.attention[set], &att_grads);
            d_streams[s].add_assign(&d_g);
        }
    }

    crate::encoder::encode_backward(
        &model.cfg.encoder,
        &model.params.encoder,
        &enc_cache,
        &d_streams,
        &mut grads.encoder,
    );

    let loss = lambda * total_ctc + (1.0 - lambda) * total_att;
    Ok((
        MtlBreakdown {
            loss,
            ctc_loss: total_ctc,
            att_loss: total_att,
            permutation,
            loss_matrix,
        },
        grads,
    ))
}

/// One line of the training log.
#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub dev_ctc_cer: f64,
    pub wallclock_s: f64,
}

pub struct TrainOutcome {
    /// Parameters of the best-dev-loss epoch.
    pub best_params: ModelParams,
    pub best_epoch: usize,
    pub log: Vec<EpochRecord>,
    /// Samples skipped because no CTC assignment was feasible.
    pub skipped_samples: usize,
}

/// Average teacher-forced per-token loss over a split.
pub fn dataset_loss(model: &Model, samples: &[MixtureSample], lambda: f64) -> Result<f64> {
    let mut total = 0.0;
    let mut tokens = 0usize;
    for sample in samples {
        let (breakdown, _) = mtl_loss(model, sample, lambda, None)?;
        total += breakdown.loss;
        tokens += sample.n_reference_tokens();
    }
    Ok(total / tokens.max(1) as f64)
}

/// Permutation-minimum CER of greedy CTC decodes over a split.
pub fn dataset_greedy_ctc_cer(model: &Model, samples: &[MixtureSample]) -> Result<f64> {
    let mut distance = 0usize;
    let mut tokens = 0usize;
    for sample in samples {
        let streams = model.encode(&sample.mixture)?;
        let hyps: Vec<Vec<usize>> = streams
            .streams
            .iter()
            .map(|g| {
                ctc_greedy_decode(&model.ctc_logprobs(g))
                    .iter()
                    .map(|c| model.vocab.token_of_ctc_class(*c))
                    .collect()
            })
            .collect();
        let score = score_permutation_min(&hyps, &sample.references)?;
        distance += score.total_distance;
        tokens += score.total_ref_tokens;
    }
    Ok(distance as f64 / tokens.max(1) as f64)
}

fn clip_gradients(grads: &mut ModelParams, max_norm: f64) {
    let mut sq = 0.0;
    for (_, t) in named_tensors(grads) {
        for v in t.data() {
            sq += v * v;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for (_, t) in named_tensors_mut(grads) {
            t.scale(scale);
        }
    }
}

/// The epoch loop. Initializes the model (uniform, per the config), shuffles
/// the train split with a seeded generator, accumulates per-token-normalized
/// batch gradients, clips, applies AdaDelta, and logs dev metrics. The best
/// dev-loss parameters are kept.
///
/// Deterministic: identical config and corpus reproduce the loss trajectory
/// bit for bit.
pub fn train(model: &mut Model, corpus: &CorpusSplit, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if corpus.train.is_empty() || corpus.dev.is_empty() {
        return Err(Error::InvalidConfig("train and dev splits must be non-empty".into()));
    }
    model.init_uniform(cfg.init_range, cfg.seed);

    let sizes: Vec<usize> = named_tensors(&model.params).iter().map(|(_, t)| t.len()).collect();
    let mut opt = AdaDelta::new(cfg.rho, cfg.eps, &sizes);
    let mut policy = (cfg.ss_prob > 0.0).then(|| SamplingPolicy::new(cfg.ss_prob, derive_seed(cfg.seed, "ss", 0)));

    let mut order: Vec<usize> = (0..corpus.train.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut skipped_samples = 0usize;
    let started = Instant::now();

    for epoch in 0..cfg.epochs {
        let mut shuffle_rng = Rng::new(derive_seed(cfg.seed, "shuffle", epoch as u64));
        shuffle_rng.shuffle(&mut order);

        let mut epoch_loss = 0.0;
        let mut epoch_tokens = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let mut batch_grads = model.params.zeros_like();
            let mut batch_tokens = 0usize;
            for &i in batch {
                let sample = &corpus.train[i];
                match mtl_loss(model, sample, cfg.lambda_mtl, policy.as_mut()) {
                    Ok((breakdown, grads)) => {
                        epoch_loss += breakdown.loss;
                        batch_tokens += sample.n_reference_tokens();
                        accumulate(&mut batch_grads, &grads);
                    }
                    Err(Error::NonFiniteLoss(msg)) => {
                        eprintln!("warning: skipping sample {}: {msg}", sample.id);
                        skipped_samples += 1;
                    }
                    Err(e) => return Err(e),
                }
            }
            if batch_tokens == 0 {
                continue;
            }
            epoch_tokens += batch_tokens;
            let inv = 1.0 / batch_tokens as f64;
            for (_, t) in named_tensors_mut(&mut batch_grads) {
                t.scale(inv);
            }
            clip_gradients(&mut batch_grads, cfg.clip_norm);
            let grad_list = named_tensors(&batch_grads);
            let grad_refs: Vec<&Tensor> = grad_list.iter().map(|(_, t)| *t).collect();
            let mut param_list = named_tensors_mut(&mut model.params);
            let mut param_refs: Vec<&mut Tensor> =
                param_list.iter_mut().map(|(_, t)| &mut **t).collect();
            if let Err(e) = opt.step(&mut param_refs, &grad_refs) {
                eprintln!("warning: optimizer step rejected: {e}");
            }
        }

        let train_loss = epoch_loss / epoch_tokens.max(1) as f64;
        let dev_loss = dataset_loss(model, &corpus.dev, cfg.lambda_mtl)?;
        if !dev_loss.is_finite() {
            return Err(Error::Diverged(format!(
                "dev loss {dev_loss} at epoch {epoch}"
            )));
        }
        let dev_ctc_cer = dataset_greedy_ctc_cer(model, &corpus.dev)?;
        log.push(EpochRecord {
            epoch,
            train_loss,
            dev_loss,
            dev_ctc_cer,
            wallclock_s: started.elapsed().as_secs_f64(),
        });
        match &best {
            Some((loss, _, _)) if *loss <= dev_loss => {}
            _ => best = Some((dev_loss, epoch, model.params.clone())),
        }
    }

    let (_, best_epoch, best_params) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best_params,
        best_epoch,
        log,
        skipped_samples,
    })
}

fn accumulate(into: &mut ModelParams, from: &ModelParams) {
    let from_list = named_tensors(from);
    for ((_, dst), (_, src)) in named_tensors_mut(into).into_iter().zip(from_list) {
        dst.add_assign(src);
    }
}

fn add_attention_grads(into: &mut crate::attdec::AttentionParams, from: &crate::attdec::AttentionParams) {
    into.w_query.add_assign(&from.w_query);
    into.w_enc.add_assign(&from.w_enc);
    into.w_loc.add_assign(&from.w_loc);
    into.bias.add_assign(&from.bias);
    into.score_v.add_assign(&from.score_v);
    into.loc_filters.add_assign(&from.loc_filters);
}
