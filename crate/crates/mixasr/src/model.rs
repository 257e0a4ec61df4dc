//! The assembled model: encoder, CTC projection, attention parameter
//! set(s), decoder; uniform initialization; and the binary parameter
//! container.
//!
//! Container layout (little-endian): magic `MXPM`, `u32` version (1),
//! `u32` tensor count, then per tensor `u32` name length, UTF-8 name,
//! `u32` rank, `u32` dims, `f64` payload row-major.

use std::fs;
use std::path::Path;

use crate::attdec::{
    AttentionConditioning, AttentionConfig, AttentionMode, AttentionParams, DecoderParams,
};
use crate::data::Vocabulary;
use crate::encoder::{encode, BlstmpParams, EncoderConfig, EncoderParams, StreamSet};
use crate::error::{Error, Result};
use crate::numerics::lstm::LstmParams;
use crate::numerics::ops::log_softmax;
use crate::numerics::Tensor;
use crate::rng::{derive_seed, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub att: AttentionConfig,
    pub embed_dim: usize,
    pub dec_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            att: AttentionConfig::default(),
            embed_dim: 16,
            dec_hidden: 32,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.att.validate()
    }

    fn query_dim(&self) -> usize {
        match self.att.conditioning {
            AttentionConditioning::DecoderState => self.dec_hidden,
            AttentionConditioning::PrevContext => self.encoder.proj,
        }
    }

    fn n_attention_sets(&self) -> usize {
        match self.att.mode {
            AttentionMode::Shared => 1,
            AttentionMode::Parallel => self.encoder.n_streams,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    pub ctc_w: Tensor,
    pub ctc_b: Tensor,
    pub attention: Vec<AttentionParams>,
    pub decoder: DecoderParams,
}

impl ModelParams {
    pub fn zeros_like(&self) -> Self {
        ModelParams {
            encoder: self.encoder.zeros_like(),
            ctc_w: self.ctc_w.zeros_like(),
            ctc_b: self.ctc_b.zeros_like(),
            attention: self.attention.iter().map(|a| a.zeros_like()).collect(),
            decoder: self.decoder.zeros_like(),
        }
    }
}

pub struct Model {
    pub cfg: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ModelParams,
}

fn blstmp_entries<'a>(prefix: &str, b: &'a BlstmpParams, out: &mut Vec<(String, &'a Tensor)>) {
    out.push((format!("{prefix}.fwd.w_ih"), &b.fwd.w_ih));
    out.push((format!("{prefix}.fwd.w_hh"), &b.fwd.w_hh));
    out.push((format!("{prefix}.fwd.b"), &b.fwd.b));
    out.push((format!("{prefix}.bwd.w_ih"), &b.bwd.w_ih));
    out.push((format!("{prefix}.bwd.w_hh"), &b.bwd.w_hh));
    out.push((format!("{prefix}.bwd.b"), &b.bwd.b));
    out.push((format!("{prefix}.proj_w"), &b.proj_w));
    out.push((format!("{prefix}.proj_b"), &b.proj_b));
}

fn blstmp_entries_mut<'a>(
    prefix: &str,
    b: &'a mut BlstmpParams,
    out: &mut Vec<(String, &'a mut Tensor)>,
) {
    out.push((format!("{prefix}.fwd.w_ih"), &mut b.fwd.w_ih));
    out.push((format!("{prefix}.fwd.w_hh"), &mut b.fwd.w_hh));
    out.push((format!("{prefix}.fwd.b"), &mut b.fwd.b));
    out.push((format!("{prefix}.bwd.w_ih"), &mut b.bwd.w_ih));
    out.push((format!("{prefix}.bwd.w_hh"), &mut b.bwd.w_hh));
    out.push((format!("{prefix}.bwd.b"), &mut b.bwd.b));
    out.push((format!("{prefix}.proj_w"), &mut b.proj_w));
    out.push((format!("{prefix}.proj_b"), &mut b.proj_b));
}

fn att_entries<'a>(prefix: &str, a: &'a AttentionParams, out: &mut Vec<(String, &'a Tensor)>) {
    out.push((format!("{prefix}.w_query"), &a.w_query));
    out.push((format!("{prefix}.w_enc"), &a.w_enc));
    out.push((format!("{prefix}.w_loc"), &a.w_loc));
    out.push((format!("{prefix}.bias"), &a.bias));
    out.push((format!("{prefix}.score_v"), &a.score_v));
    out.push((format!("{prefix}.loc_filters"), &a.loc_filters));
}

fn att_entries_mut<'a>(
    prefix: &str,
    a: &'a mut AttentionParams,
    out: &mut Vec<(String, &'a mut Tensor)>,
) {
    out.push((format!("{prefix}.w_query"), &mut a.w_query));
    out.push((format!("{prefix}.w_enc"), &mut a.w_enc));
    out.push((format!("{prefix}.w_loc"), &mut a.w_loc));
    out.push((format!("{prefix}.bias"), &mut a.bias));
    out.push((format!("{prefix}.score_v"), &mut a.score_v));
    out.push((format!("{prefix}.loc_filters"), &mut a.loc_filters));
}

/// Ordered named view of every tensor in a parameter set. The order is the
/// contract for initialization, optimizer state and the container format.
pub fn named_tensors(p: &ModelParams) -> Vec<(String, &Tensor)> {
    let mut out = Vec::new();
    blstmp_entries("enc.mix", &p.encoder.mix, &mut out);
    for (s, b) in p.encoder.sd.iter().enumerate() {
        blstmp_entries(&format!("enc.sd{s}"), b, &mut out);
    }
    blstmp_entries("enc.rec", &p.encoder.rec, &mut out);
    out.push(("ctc.w".into(), &p.ctc_w));
    out.push(("ctc.b".into(), &p.ctc_b));
    for (i, a) in p.attention.iter().enumerate() {
        att_entries(&format!("att{i}"), a, &mut out);
    }
    out.push(("dec.embed".into(), &p.decoder.embed));
    out.push(("dec.cell.w_ih".into(), &p.decoder.cell.w_ih));
    out.push(("dec.cell.w_hh".into(), &p.decoder.cell.w_hh));
    out.push(("dec.cell.b".into(), &p.decoder.cell.b));
    out.push(("dec.out_w".into(), &p.decoder.out_w));
    out.push(("dec.out_b".into(), &p.decoder.out_b));
    out
}

pub fn named_tensors_mut(p: &mut ModelParams) -> Vec<(String, &mut Tensor)> {
    let mut out = Vec::new();
    blstmp_entries_mut("enc.mix", &mut p.encoder.mix, &mut out);
    for (s, b) in p.encoder.sd.iter_mut().enumerate() {
        blstmp_entries_mut(&format!("enc.sd{s}"), b, &mut out);
    }
    blstmp_entries_mut("enc.rec", &mut p.encoder.rec, &mut out);
    out.push(("ctc.w".into(), &mut p.ctc_w));
    out.push(("ctc.b".into(), &mut p.ctc_b));
    for (i, a) in p.attention.iter_mut().enumerate() {
        att_entries_mut(&format!("att{i}"), a, &mut out);
    }
    out.push(("dec.embed".into(), &mut p.decoder.embed));
    out.push(("dec.cell.w_ih".into(), &mut p.decoder.cell.w_ih));
    out.push(("dec.cell.w_hh".into(), &mut p.decoder.cell.w_hh));
    out.push(("dec.cell.b".into(), &mut p.decoder.cell.b));
    out.push(("dec.out_w".into(), &mut p.decoder.out_w));
    out.push(("dec.out_b".into(), &mut p.decoder.out_b));
    out
}

impl Model {
    /// Zero-initialized model with the dimensions implied by the config and
    /// vocabulary.
    pub fn new(cfg: ModelConfig, vocab: Vocabulary) -> Result<Self> {
        cfg.validate()?;
        let enc = EncoderParams::new(&cfg.encoder);
        let ctc_w = Tensor::zeros(&[vocab.n_ctc_classes(), cfg.encoder.proj]);
        let ctc_b = Tensor::zeros(&[vocab.n_ctc_classes()]);
        let attention = (0..cfg.n_attention_sets())
            .map(|_| AttentionParams::new(&cfg.att, cfg.query_dim(), cfg.encoder.proj))
            .collect();
        let decoder = DecoderParams::new(
            vocab.n_tokens(),
            cfg.embed_dim,
            cfg.encoder.proj,
            cfg.dec_hidden,
            vocab.n_att_classes(),
        );
        Ok(Model {
            cfg,
            vocab,
            params: ModelParams {
                encoder: enc,
                ctc_w,
                ctc_b,
                attention,
                decoder,
            },
        })
    }

    /// The attention parameter set serving stream `s`.
    pub fn attention_params(&self, s: usize) -> Result<&AttentionParams> {
        match self.cfg.att.mode {
            AttentionMode::Shared => Ok(&self.params.attention[0]),
            AttentionMode::Parallel => {
                self.params
                    .attention
                    .get(s)
                    .ok_or(Error::StreamOutOfRange {
                        index: s,
                        n_streams: self.params.attention.len(),
                    })
            }
        }
    }

    /// Index into the attention gradient vector for stream `s`.
    pub fn attention_set_index(&self, s: usize) -> usize {
        match self.cfg.att.mode {
            AttentionMode::Shared => 0,
            AttentionMode::Parallel => s,
        }
    }

    /// Fill every weight uniformly from `[-range, range]`, visiting tensors
    /// in the fixed named order, then set every recurrent forget-gate bias
    /// block to 1.0 (the one documented exception).
    pub fn init_uniform(&mut self, range: f64, seed: u64) {
        let mut rng = Rng::new(derive_seed(seed, "init", 0));
        for (_, t) in named_tensors_mut(&mut self.params) {
            for v in t.data_mut() {
                *v = rng.uniform(-range, range);
            }
        }
        let enc = &mut self.params.encoder;
        for b in std::iter::once(&mut enc.mix)
            .chain(enc.sd.iter_mut())
            .chain(std::iter::once(&mut enc.rec))
        {
            set_forget_bias(&mut b.fwd, 1.0);
            set_forget_bias(&mut b.bwd, 1.0);
        }
        set_forget_bias(&mut self.params.decoder.cell, 1.0);
    }

    /// Per-frame CTC log-probabilities (projection + log-softmax) of one
    /// encoder stream.
    pub fn ctc_logprobs(&self, g: &Tensor) -> Tensor {
        let mut out = Tensor::zeros(&[g.rows(), self.vocab.n_ctc_classes()]);
        for t in 0..g.rows() {
            let logits = crate::numerics::ops::affine(&self.params.ctc_w, &self.params.ctc_b, g.row(t));
            out.row_mut(t).copy_from_slice(&log_softmax(&logits));
        }
        out
    }

    /// Encode a mixture into the per-speaker streams (inference path).
    pub fn encode(&self, o: &Tensor) -> Result<StreamSet> {
        let (set, _) = encode(&self.cfg.encoder, &self.params.encoder, o)?;
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let entries = named_tensors(&self.params);
        write_tensor_file(path, &entries)
    }

    /// Load parameters saved by [`Model::save`] into a model of identical
    /// configuration. Missing, extra or reshaped tensors are errors.
    pub fn load_params(&mut self, path: &Path) -> Result<()> {
        let loaded = read_tensor_file(path)?;
        let mut slots = named_tensors_mut(&mut self.params);
        if loaded.len() != slots.len() {
            return Err(Error::MalformedRecord {
                path: path.to_path_buf(),
                line: 0,
                message: format!(
                    "tensor count mismatch: file has {}, model needs {}",
                    loaded.len(),
                    slots.len()
                ),
            });
        }
        let map: std::collections::HashMap<String, Tensor> = loaded.into_iter().collect();
        for (name, slot) in slots.iter_mut() {
            let t = map.get(name).ok_or_else(|| Error::MalformedRecord {
                path: path.to_path_buf(),
                line: 0,
                message: format!("missing tensor {name}"),
            })?;
            if t.shape() != slot.shape() {
                return Err(Error::MalformedRecord {
                    path: path.to_path_buf(),
                    line: 0,
                    message: format!(
                        "shape mismatch for {name}: file {:?}, model {:?}",
                        t.shape(),
                        slot.shape()
                    ),
                });
            }
            slot.data_mut().copy_from_slice(t.data());
        }
        Ok(())
    }
}

/// Set the forget-gate block (rows H..2H of the bias) of one cell.
pub fn set_forget_bias(p: &mut LstmParams, value: f64) {
    let hidden = p.hidden_size();
    for k in hidden..2 * hidden {
        p.b.data_mut()[k] = value;
    }
}

const MAGIC: &[u8; 4] = b"MXPM";
const VERSION: u32 = 1;

pub fn write_tensor_file(path: &Path, entries: &[(String, &Tensor)]) -> Result<()> {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        bytes.extend_from_slice(&(name.len() as u32).to_le_bytes());
        bytes.extend_from_slice(name.as_bytes());
        bytes.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for d in t.shape() {
            bytes.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_tensor_file(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut off = 0usize;
    let take = |off: &mut usize, n: usize| -> Result<&[u8]> {
        if *off + n > bytes.len() {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                wanted: *off + n,
                found: bytes.len(),
            });
        }
        let s = &bytes[*off..*off + n];
        *off += n;
        Ok(s)
    };
    if take(&mut off, 4)? != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: "MXPM",
        });
    }
    let version = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let count = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut off, name_len)?.to_vec()).map_err(|_| {
            Error::MalformedRecord {
                path: path.to_path_buf(),
                line: 0,
                message: "tensor name is not UTF-8".into(),
            }
        })?;
        let rank = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize);
        }
        let n: usize = shape.iter().product();
        let payload = take(&mut off, n.checked_mul(8).ok_or(Error::DimOverflow {
            path: path.to_path_buf(),
        })?)?;
        let data: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((name, Tensor::from_vec(&shape, data)));
    }
    Ok(out)
}
