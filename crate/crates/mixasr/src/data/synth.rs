//! Feature synthesis: every symbol owns a fixed prototype vector, an
//! utterance emits a run of noisy copies of its tokens' prototypes, and a
//! mixture is the gain-weighted sum of two sources.

use crate::data::{MixtureSample, Utterance, Vocabulary};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng::{derive_seed, Rng};

/// Fixed base for the prototype streams so prototypes depend only on
/// (symbol ordinal, dim), never on the corpus seed.
const PROTOTYPE_SEED: u64 = 0x70726F746F;

/// Prototype vector of the `ordinal`-th symbol in `dim` dimensions.
///
/// Raw Gaussian vectors are drawn per ordinal from fixed seeds and
/// Gram-Schmidt-orthonormalized against all lower ordinals, so the first
/// `dim` symbols are exactly orthonormal and later ones merely unit-norm.
pub fn prototype(ordinal: usize, dim: usize) -> Vec<f64> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(ordinal + 1);
    for k in 0..=ordinal {
        let mut rng = Rng::new(derive_seed(PROTOTYPE_SEED, "prototype", k as u64));
        let mut v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        for prev in rows.iter().take(dim.min(k)) {
            let dot: f64 = v.iter().zip(prev.iter()).map(|(a, b)| a * b).sum();
            for (vi, pi) in v.iter_mut().zip(prev.iter()) {
                *vi -= dot * pi;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            for vi in v.iter_mut() {
                *vi /= norm;
            }
        } else {
            // Degenerate remainder (only possible past `dim` symbols):
            // fall back to the normalized raw draw.
            let mut rng = Rng::new(derive_seed(PROTOTYPE_SEED, "prototype", k as u64));
            v = (0..dim).map(|_| rng.normal()).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            for vi in v.iter_mut() {
                *vi /= n;
            }
        }
        rows.push(v);
    }
    rows.pop().unwrap()
}

/// Synthesize one source utterance: each label token emits
/// `frames_per_token` frames equal to its prototype plus Gaussian noise.
pub fn synth_source(
    vocab: &Vocabulary,
    labels: &[usize],
    seed: u64,
    frames_per_token: usize,
    dim: usize,
    noise_std: f64,
) -> Result<Utterance> {
    if labels.is_empty() {
        return Err(Error::EmptyInput("synth_source labels"));
    }
    let ordinals: Vec<usize> = labels
        .iter()
        .map(|t| vocab.ordinal(*t))
        .collect::<Result<_>>()?;

    let t_total = labels.len() * frames_per_token;
    let mut features = Tensor::zeros(&[t_total, dim]);
    let mut rng = Rng::new(derive_seed(seed, "noise", 0));
    for (k, ord) in ordinals.iter().enumerate() {
        let proto = prototype(*ord, dim);
        for f in 0..frames_per_token {
            let row = features.row_mut(k * frames_per_token + f);
            for (d, p) in proto.iter().enumerate() {
                row[d] = p + noise_std * rng.normal();
            }
        }
    }
    Ok(Utterance {
        id: format!("u{seed:016x}"),
        features,
        labels: labels.to_vec(),
    })
}

/// Mix two sources: `O[t] = a[t] + 10^(gain_db/20) · b[t]`, the shorter
/// source zero-padded at the tail so both label sequences survive intact.
pub fn mix(a: &Utterance, b: &Utterance, gain_db: f64) -> Result<MixtureSample> {
    let dim = a.features.cols();
    if b.features.cols() != dim {
        return Err(Error::DimMismatch {
            context: "mix",
            expected: dim,
            got: b.features.cols(),
        });
    }
    let scale = 10f64.powf(gain_db / 20.0);
    let t_out = a.features.rows().max(b.features.rows());
    let mut mixture = Tensor::zeros(&[t_out, dim]);
    for t in 0..t_out {
        let row = mixture.row_mut(t);
        if t < a.features.rows() {
            for (d, v) in a.features.row(t).iter().enumerate() {
                row[d] += v;
            }
        }
        if t < b.features.rows() {
            for (d, v) in b.features.row(t).iter().enumerate() {
                row[d] += scale * v;
            }
        }
    }
    Ok(MixtureSample {
        id: format!("{}+{}", a.id, b.id),
        mixture,
        references: vec![a.labels.clone(), b.labels.clone()],
        gain_db,
        source_ids: vec![a.id.clone(), b.id.clone()],
    })
}
