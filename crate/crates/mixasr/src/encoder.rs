//! Three-stage encoder: a shared mixture stage, one speaker-differentiating
//! branch per stream, and a shared recognition stage producing the
//! per-speaker representations the decoders consume.
//!
//! Each stage is one bidirectional recurrent layer with a tanh projection
//! after direction-concatenation; the mixture stage subsamples frames by
//! dropping (keep every `subsample`-th frame).

use crate::error::{Error, Result};
use crate::numerics::lstm::{
    lstm_sequence, lstm_sequence_backward, LstmParams, LstmStepCache,
};
use crate::numerics::ops::{affine, affine_backward, tanh_backward, tanh_vec};
use crate::numerics::Tensor;

/// Stage shapes. All three stages share the same per-direction width and
/// projection width; the stream count fixes how many branch parameter sets
/// exist.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub n_streams: usize,
    pub input_dim: usize,
    /// Per-direction recurrent width.
    pub hidden: usize,
    /// Projection width; also the width of the output representations.
    pub proj: usize,
    /// Frame keep stride after the mixture stage.
    pub subsample: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            n_streams: 2,
            input_dim: 8,
            hidden: 32,
            proj: 32,
            subsample: 2,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_streams < 2 {
            return Err(Error::InvalidConfig(format!(
                "n_streams must be at least 2, got {}",
                self.n_streams
            )));
        }
        if self.subsample == 0 {
            return Err(Error::InvalidConfig("subsample must be at least 1".into()));
        }
        Ok(())
    }

    /// Output frame count for an input of `t` frames.
    pub fn out_frames(&self, t: usize) -> usize {
        t.div_ceil(self.subsample)
    }
}

/// One bidirectional layer with projection: forward and backward cell
/// passes, direction-concatenation, then `tanh(W·[h_f; h_b] + b)`.
#[derive(Debug, Clone)]
pub struct BlstmpParams {
    pub fwd: LstmParams,
    pub bwd: LstmParams,
    pub proj_w: Tensor,
    pub proj_b: Tensor,
}

impl BlstmpParams {
    pub fn new(input: usize, hidden: usize, proj: usize) -> Self {
        BlstmpParams {
            fwd: LstmParams::new(input, hidden),
            bwd: LstmParams::new(input, hidden),
            proj_w: Tensor::zeros(&[proj, 2 * hidden]),
            proj_b: Tensor::zeros(&[proj]),
        }
    }

    pub fn zeros_like(&self) -> Self {
        BlstmpParams {
            fwd: self.fwd.zeros_like(),
            bwd: self.bwd.zeros_like(),
            proj_w: self.proj_w.zeros_like(),
            proj_b: self.proj_b.zeros_like(),
        }
    }
}

pub struct BlstmpCache {
    fwd: Vec<LstmStepCache>,
    bwd: Vec<LstmStepCache>,
    concat: Tensor,
    out: Tensor,
}

fn reverse_rows(t: &Tensor) -> Tensor {
    let mut out = t.zeros_like();
    let n = t.rows();
    for i in 0..n {
        out.row_mut(i).copy_from_slice(t.row(n - 1 - i));
    }
    out
}

pub fn blstmp_forward(p: &BlstmpParams, xs: &Tensor) -> (Tensor, BlstmpCache) {
    let t_len = xs.rows();
    let hidden = p.fwd.hidden_size();
    let proj = p.proj_w.rows();

    let (h_fwd, c_fwd) = lstm_sequence(&p.fwd, xs);
    let reversed = reverse_rows(xs);
    let (h_bwd_rev, c_bwd) = lstm_sequence(&p.bwd, &reversed);
    let h_bwd = reverse_rows(&h_bwd_rev);

    let mut concat = Tensor::zeros(&[t_len, 2 * hidden]);
    for t in 0..t_len {
        concat.row_mut(t)[..hidden].copy_from_slice(h_fwd.row(t));
        concat.row_mut(t)[hidden..].copy_from_slice(h_bwd.row(t));
    }
    let mut out = Tensor::zeros(&[t_len, proj]);
    for t in 0..t_len {
        let y = tanh_vec(&affine(&p.proj_w, &p.proj_b, concat.row(t)));
        out.row_mut(t).copy_from_slice(&y);
    }
    (
        out.clone(),
        BlstmpCache {
            fwd: c_fwd,
            bwd: c_bwd,
            concat,
            out,
        },
    )
}

pub fn blstmp_backward(
    p: &BlstmpParams,
    cache: &BlstmpCache,
    dout: &Tensor,
    grads: &mut BlstmpParams,
) -> Tensor {
    let t_len = dout.rows();
    let hidden = p.fwd.hidden_size();

    let mut d_concat = Tensor::zeros(&[t_len, 2 * hidden]);
    for t in 0..t_len {
        let dy = tanh_backward(cache.out.row(t), dout.row(t));
        let dx = affine_backward(
            &p.proj_w,
            cache.concat.row(t),
            &dy,
            &mut grads.proj_w,
            &mut grads.proj_b,
        );
        d_concat.row_mut(t).copy_from_slice(&dx);
    }

    let mut d_hfwd = Tensor::zeros(&[t_len, hidden]);
    let mut d_hbwd = Tensor::zeros(&[t_len, hidden]);
    for t in 0..t_len {
        d_hfwd.row_mut(t).copy_from_slice(&d_concat.row(t)[..hidden]);
        d_hbwd.row_mut(t).copy_from_slice(&d_concat.row(t)[hidden..]);
    }

    let dxs_fwd = lstm_sequence_backward(&p.fwd, &cache.fwd, &d_hfwd, &mut grads.fwd);
    let d_hbwd_rev = reverse_rows(&d_hbwd);
    let dxs_bwd_rev = lstm_sequence_backward(&p.bwd, &cache.bwd, &d_hbwd_rev, &mut grads.bwd);
    let dxs_bwd = reverse_rows(&dxs_bwd_rev);

    let mut dxs = dxs_fwd;
    dxs.add_assign(&dxs_bwd);
    dxs
}

/// All encoder parameters: the shared mixture stage, one branch per stream,
/// and the shared recognition stage.
#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub mix: BlstmpParams,
    pub sd: Vec<BlstmpParams>,
    pub rec: BlstmpParams,
}

impl EncoderParams {
    pub fn new(cfg: &EncoderConfig) -> Self {
        EncoderParams {
            mix: BlstmpParams::new(cfg.input_dim, cfg.hidden, cfg.proj),
            sd: (0..cfg.n_streams)
                .map(|_| BlstmpParams::new(cfg.proj, cfg.hidden, cfg.proj))
                .collect(),
            rec: BlstmpParams::new(cfg.proj, cfg.hidden, cfg.proj),
        }
    }

    pub fn zeros_like(&self) -> Self {
        EncoderParams {
            mix: self.mix.zeros_like(),
            sd: self.sd.iter().map(|b| b.zeros_like()).collect(),
            rec: self.rec.zeros_like(),
        }
    }
}

/// The per-speaker representations, all of identical shape, plus the
/// mixture-stage representation kept for inspection.
#[derive(Debug, Clone)]
pub struct StreamSet {
    pub streams: Vec<Tensor>,
    pub mix_rep: Option<Tensor>,
}

pub struct MixCache {
    blstmp: BlstmpCache,
    full_frames: usize,
}

/// Mixture stage: bidirectional layer over the input, then keep every
/// `subsample`-th frame.
pub fn encode_mix(
    cfg: &EncoderConfig,
    p: &EncoderParams,
    o: &Tensor,
) -> Result<(Tensor, MixCache)> {
    o.check_cols(cfg.input_dim, "encode_mix input")?;
    let (full, cache) = blstmp_forward(&p.mix, o);
    let t_out = cfg.out_frames(full.rows());
    let mut sub = Tensor::zeros(&[t_out, full.cols()]);
    for (i, t) in (0..full.rows()).step_by(cfg.subsample).enumerate() {
        sub.row_mut(i).copy_from_slice(full.row(t));
    }
    Ok((
        sub,
        MixCache {
            blstmp: cache,
            full_frames: full.rows(),
        },
    ))
}

fn mix_backward(
    cfg: &EncoderConfig,
    p: &EncoderParams,
    cache: &MixCache,
    d_sub: &Tensor,
    grads: &mut EncoderParams,
) -> Tensor {
    let mut d_full = Tensor::zeros(&[cache.full_frames, d_sub.cols()]);
    for (i, t) in (0..cache.full_frames).step_by(cfg.subsample).enumerate() {
        d_full.row_mut(t).copy_from_slice(d_sub.row(i));
    }
    blstmp_backward(&p.mix, &cache.blstmp, &d_full, &mut grads.mix)
}

/// Speaker-differentiating branch `s` applied to the mixture representation.
pub fn encode_sd(
    p: &EncoderParams,
    h: &Tensor,
    s: usize,
) -> Result<(Tensor, BlstmpCache)> {
    let branch = p.sd.get(s).ok_or(Error::StreamOutOfRange {
        index: s,
        n_streams: p.sd.len(),
    })?;
    Ok(blstmp_forward(branch, h))
}

/// Shared recognition stage.
pub fn encode_rec(p: &EncoderParams, hs: &Tensor) -> (Tensor, BlstmpCache) {
    blstmp_forward(&p.rec, hs)
}

pub struct EncodeCache {
    mix: MixCache,
    sd: Vec<BlstmpCache>,
    rec: Vec<BlstmpCache>,
}

/// Full encoder: mixture stage, per-stream branches, shared recognition.
pub fn encode(
    cfg: &EncoderConfig,
    p: &EncoderParams,
    o: &Tensor,
) -> Result<(StreamSet, EncodeCache)> {
    let (h, mix_cache) = encode_mix(cfg, p, o)?;
    let mut streams = Vec::with_capacity(cfg.n_streams);
    let mut sd_caches = Vec::with_capacity(cfg.n_streams);
    let mut rec_caches = Vec::with_capacity(cfg.n_streams);
    for s in 0..cfg.n_streams {
        let (hs, sd_cache) = encode_sd(p, &h, s)?;
        let (gs, rec_cache) = encode_rec(p, &hs);
        streams.push(gs);
        sd_caches.push(sd_cache);
        rec_caches.push(rec_cache);
    }
    Ok((
        StreamSet {
            streams,
            mix_rep: Some(h),
        },
        EncodeCache {
            mix: mix_cache,
            sd: sd_caches,
            rec: rec_caches,
        },
    ))
}

/// Backward through the full encoder; accumulates parameter gradients and
/// returns the gradient w.r.t. the input features.
pub fn encode_backward(
    cfg: &EncoderConfig,
    p: &EncoderParams,
    cache: &EncodeCache,
    d_streams: &[Tensor],
    grads: &mut EncoderParams,
) -> Tensor {
    assert_eq!(d_streams.len(), cfg.n_streams);
    let mut d_h: Option<Tensor> = None;
    for s in 0..cfg.n_streams {
        let d_hs = blstmp_backward(&p.rec, &cache.rec[s], &d_streams[s], &mut grads.rec);
        let d_mix = blstmp_backward(&p.sd[s], &cache.sd[s], &d_hs, &mut grads.sd[s]);
        match &mut d_h {
            None => d_h = Some(d_mix),
            Some(acc) => acc.add_assign(&d_mix),
        }
    }
    mix_backward(cfg, p, &cache.mix, &d_h.unwrap(), grads)
}
