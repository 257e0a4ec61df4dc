//! Synthetic two-source corpus generation, mixture construction, vocabulary
//! handling, and the portable feature-file format.

mod corpus;
mod features;
mod synth;
mod vocab;

pub use corpus::{build_corpus, parse_manifest, write_manifest, CorpusSplit, DataConfig};
pub use features::{read_features, write_features};
pub use synth::{mix, prototype, synth_source};
pub use vocab::{Vocabulary, BLANK, EOS, N_RESERVED, SOS};

use crate::numerics::Tensor;

/// A single-source utterance: a `T × D` feature matrix and its label
/// sequence (token ids, never blank/sos/eos).
#[derive(Debug, Clone)]
pub struct Utterance {
    pub id: String,
    pub features: Tensor,
    pub labels: Vec<usize>,
}

/// A two-or-more-source mixture: summed features, one reference label
/// sequence per source (stored in generation order; training must not
/// depend on that order), and the relative gain applied to source 2.
#[derive(Debug, Clone)]
pub struct MixtureSample {
    pub id: String,
    pub mixture: Tensor,
    pub references: Vec<Vec<usize>>,
    pub gain_db: f64,
    pub source_ids: Vec<String>,
}

impl MixtureSample {
    /// Total reference tokens across all sources, the per-token loss
    /// normalizer used in training.
    pub fn n_reference_tokens(&self) -> usize {
        self.references.iter().map(|r| r.len()).sum()
    }
}
