//! Portable deterministic pseudo-random numbers.
//!
//! Everything random in this crate (corpus synthesis, parameter
//! initialization, shuffling, scheduled-sampling coin flips) goes through
//! this generator, so a fixed seed reproduces every artifact bit for bit.
//!
//! The generator is SplitMix64, implemented from its published constants
//! rather than pulled from a library, so a reimplementation in another
//! language agrees with this one on every integer draw. Real draws take the
//! top 53 bits of an integer draw as the mantissa of a uniform in `[0, 1)`.

/// SplitMix64 stream.
#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { state: seed }
    }

    /// Next 64-bit draw: one SplitMix64 step.
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` with 53 mantissa bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)`. Plain modulo: the bias is below 2^-50
    /// for every `n` used here, and the reduction is trivial to re-specify.
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        self.next_u64() % n
    }

    /// Standard normal via Box-Muller on a fresh pair of uniforms.
    pub fn normal(&mut self) -> f64 {
        let mut u1 = self.next_f64();
        while u1 == 0.0 {
            u1 = self.next_f64();
        }
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Bernoulli draw with success probability `p`.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            xs.swap(i, j);
        }
    }
}

/// Derive an independent stream seed from a base seed, a purpose tag and an
/// index. FNV-1a over the inputs, then one SplitMix64 scramble for avalanche.
pub fn derive_seed(base: u64, tag: &str, index: u64) -> u64 {
    const FNV_OFFSET: u64 = 0xCBF2_9CE4_8422_2325;
    const FNV_PRIME: u64 = 0x0000_0100_0000_01B3;
    let mut h = FNV_OFFSET;
    for b in base
        .to_le_bytes()
        .iter()
        .chain(tag.as_bytes())
        .chain(index.to_le_bytes().iter())
    {
        h ^= *b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    Rng::new(h).next_u64()
}
