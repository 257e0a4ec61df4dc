use super::*;
use crate::attdec::{AttentionConfig, AttentionMode};
use crate::data::{build_corpus, DataConfig};
use crate::encoder::EncoderConfig;
use crate::model::ModelConfig;
use crate::numerics::grad_check;

fn tiny_model_cfg(mode: AttentionMode) -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            n_streams: 2,
            input_dim: 3,
            hidden: 2,
            proj: 2,
            subsample: 2,
        },
        att: AttentionConfig {
            dim: 2,
            conv_filters: 2,
            conv_width: 3,
            mode,
            conditioning: crate::attdec::AttentionConditioning::DecoderState,
        },
        embed_dim: 2,
        dec_hidden: 2,
    }
}

fn tiny_data_cfg() -> DataConfig {
    DataConfig {
        n_train: 6,
        n_dev: 2,
        n_eval: 2,
        vocab_size: 4,
        label_len_min: 1,
        label_len_max: 2,
        // Short tokens, but enough frames that a repeated label (which
        // needs a separating blank) stays feasible after subsampling.
        frames_per_token: 3,
        feat_dim: 3,
        noise_std: 0.1,
        gain_db_min: -3.0,
        gain_db_max: 3.0,
        seed: 5,
    }
}

fn tiny_setup(mode: AttentionMode, seed: u64) -> (Model, crate::data::CorpusSplit) {
    let corpus = build_corpus(&tiny_data_cfg()).unwrap();
    let mut model = Model::new(tiny_model_cfg(mode), corpus.vocab.clone()).unwrap();
    model.init_uniform(0.1, seed);
    (model, corpus)
}

fn flatten(p: &ModelParams) -> Vec<f64> {
    let mut out = Vec::new();
    for (_, t) in named_tensors(p) {
        out.extend_from_slice(t.data());
    }
    out
}

fn load_flat(model: &mut Model, x: &[f64]) {
    let mut off = 0;
    for (_, t) in named_tensors_mut(&mut model.params) {
        let n = t.len();
        t.data_mut().copy_from_slice(&x[off..off + n]);
        off += n;
    }
    assert_eq!(off, x.len());
}

#[test]
fn lambda_endpoints_are_exact() {
    let (model, corpus) = tiny_setup(AttentionMode::Shared, 1);
    let sample = &corpus.train[0];
    let (full, _) = mtl_loss(&model, sample, 1.0, None).unwrap();
    assert_eq!(full.loss, full.ctc_loss, "λ=1 is exactly the CTC sum");
    let (att, _) = mtl_loss(&model, sample, 0.0, None).unwrap();
    assert_eq!(att.loss, att.att_loss, "λ=0 is exactly the attention sum");
}

#[test]
fn loss_is_invariant_to_reference_order() {
    let (model, corpus) = tiny_setup(AttentionMode::Shared, 2);
    for sample in corpus.train.iter() {
        let (a, _) = mtl_loss(&model, sample, 0.2, None).unwrap();
        let mut swapped = sample.clone();
        swapped.references.reverse();
        let (b, _) = mtl_loss(&model, &swapped, 0.2, None).unwrap();
        assert_eq!(a.loss, b.loss, "swap must not change the loss at all");
        assert_eq!(a.ctc_loss, b.ctc_loss);
        assert_eq!(a.att_loss, b.att_loss);
    }
}

#[test]
fn mtl_gradient_matches_finite_differences() {
    // 2-frame-per-token toy; both endpoints and the default mixture.
    let (model, corpus) = tiny_setup(AttentionMode::Shared, 3);
    let sample = corpus.train[0].clone();
    for lambda in [0.0, 0.2, 1.0] {
        let x0 = flatten(&model.params);
        let mut probe = Model::new(tiny_model_cfg(AttentionMode::Shared), model.vocab.clone()).unwrap();
        let err = grad_check(
            |x| {
                load_flat(&mut probe, x);
                let (breakdown, grads) = mtl_loss(&probe, &sample, lambda, None).unwrap();
                (breakdown.loss, flatten(&grads))
            },
            &x0,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-3, "lambda {lambda}: err {err}");
    }
}

#[test]
fn parallel_attention_with_tied_sets_matches_shared_mode_bitwise() {
    let (shared, corpus) = tiny_setup(AttentionMode::Shared, 4);
    let mut parallel = Model::new(tiny_model_cfg(AttentionMode::Parallel), shared.vocab.clone()).unwrap();
    parallel.params.encoder = shared.params.encoder.clone();
    parallel.params.ctc_w = shared.params.ctc_w.clone();
    parallel.params.ctc_b = shared.params.ctc_b.clone();
    parallel.params.decoder = shared.params.decoder.clone();
    for set in parallel.params.attention.iter_mut() {
        *set = shared.params.attention[0].clone();
    }

    for sample in corpus.train.iter() {
        let (a, ga) = mtl_loss(&shared, sample, 0.2, None).unwrap();
        let (b, gb) = mtl_loss(&parallel, sample, 0.2, None).unwrap();
        assert_eq!(a.loss, b.loss, "tied parallel attention must be bitwise shared");
        // Per-set gradients sum to the shared-mode gradient.
        let shared_att = &ga.attention[0];
        let mut summed = gb.attention[0].clone();
        for (name_idx, dst) in [
            &mut summed.w_query,
            &mut summed.w_enc,
            &mut summed.w_loc,
            &mut summed.bias,
            &mut summed.score_v,
            &mut summed.loc_filters,
        ]
        .into_iter()
        .enumerate()
        {
            let src = match name_idx {
                0 => &gb.attention[1].w_query,
                1 => &gb.attention[1].w_enc,
                2 => &gb.attention[1].w_loc,
                3 => &gb.attention[1].bias,
                4 => &gb.attention[1].score_v,
                _ => &gb.attention[1].loc_filters,
            };
            dst.add_assign(src);
        }
        assert_eq!(summed.w_query.data(), shared_att.w_query.data());
        assert_eq!(summed.w_enc.data(), shared_att.w_enc.data());
        assert_eq!(summed.w_loc.data(), shared_att.w_loc.data());
        assert_eq!(summed.bias.data(), shared_att.bias.data());
        assert_eq!(summed.score_v.data(), shared_att.score_v.data());
        assert_eq!(summed.loc_filters.data(), shared_att.loc_filters.data());
        // The non-attention gradients agree bitwise as well.
        assert_eq!(flatten_encoder(&ga), flatten_encoder(&gb));
    }
}

fn flatten_encoder(p: &ModelParams) -> Vec<f64> {
    named_tensors(p)
        .into_iter()
        .filter(|(name, _)| !name.starts_with("att"))
        .flat_map(|(_, t)| t.data().to_vec())
        .collect()
}

#[test]
fn single_epoch_logs_one_record() {
    let (mut model, corpus) = tiny_setup(AttentionMode::Shared, 6);
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let outcome = train(&mut model, &corpus, &cfg).unwrap();
    assert_eq!(outcome.log.len(), 1);
    assert!(outcome.log[0].train_loss.is_finite());
    assert!(outcome.log[0].dev_loss.is_finite());
}

#[test]
fn training_reduces_dev_loss() {
    let (mut model, corpus) = tiny_setup(AttentionMode::Shared, 7);
    let cfg = TrainConfig {
        epochs: 20,
        batch_size: 3,
        ss_prob: 0.0,
        ..TrainConfig::default()
    };
    let initial = {
        let mut fresh = Model::new(tiny_model_cfg(AttentionMode::Shared), corpus.vocab.clone()).unwrap();
        fresh.init_uniform(cfg.init_range, cfg.seed);
        dataset_loss(&fresh, &corpus.dev, cfg.lambda_mtl).unwrap()
    };
    let outcome = train(&mut model, &corpus, &cfg).unwrap();
    let last = outcome.log.last().unwrap();
    assert!(
        last.dev_loss < initial,
        "dev loss {} did not drop below initial {initial}",
        last.dev_loss
    );
}

#[test]
fn training_trajectory_is_bitwise_reproducible() {
    let corpus = build_corpus(&tiny_data_cfg()).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 2,
        ss_prob: 0.2,
        ..TrainConfig::default()
    };
    let run = |corpus: &crate::data::CorpusSplit| {
        let mut model =
            Model::new(tiny_model_cfg(AttentionMode::Shared), corpus.vocab.clone()).unwrap();
        let outcome = train(&mut model, corpus, &cfg).unwrap();
        outcome
            .log
            .iter()
            .map(|r| (r.train_loss, r.dev_loss, r.dev_ctc_cer))
            .collect::<Vec<_>>()
    };
    assert_eq!(run(&corpus), run(&corpus));
}

#[test]
fn infeasible_assignments_are_skippable_errors() {
    // Labels longer than the subsampled frame budget in every pairing.
    let (model, corpus) = tiny_setup(AttentionMode::Shared, 8);
    let mut sample = corpus.train[0].clone();
    sample.references = vec![vec![3; 10], vec![4; 10]];
    match mtl_loss(&model, &sample, 0.2, None) {
        Err(Error::NonFiniteLoss(_)) => {}
        other => panic!("expected a skippable error, got {other:?}"),
    }
}
