//! Label-synchronous CTC prefix scoring: the log-probability that the CTC
//! output begins with a given prefix, maintained incrementally per
//! hypothesis through the standard two-variable recursion (paths ending in
//! a non-blank vs a blank frame).

use crate::numerics::ops::lse2;
use crate::numerics::Tensor;

/// Per-prefix DP state. `gamma_n[t]` / `gamma_b[t]` are the log-probs of
/// emitting exactly the prefix within the first `t` frames with the last
/// emission non-blank / blank; `log_prefix` is the log prefix probability.
#[derive(Debug, Clone)]
pub struct CtcPrefixState {
    gamma_n: Vec<f64>,
    gamma_b: Vec<f64>,
    last: Option<usize>,
    pub log_prefix: f64,
}

/// State of the empty prefix: only all-blank frame runs.
pub fn prefix_init(logprobs: &Tensor) -> CtcPrefixState {
    let t_len = logprobs.rows();
    let mut gamma_b = vec![0.0; t_len + 1];
    for t in 1..=t_len {
        gamma_b[t] = gamma_b[t - 1] + logprobs.at(t - 1, 0);
    }
    CtcPrefixState {
        gamma_n: vec![f64::NEG_INFINITY; t_len + 1],
        gamma_b,
        last: None,
        log_prefix: 0.0,
    }
}

/// Extend a prefix with a non-blank class; returns the incremental
/// log-score (new prefix log-prob minus old) and the new state. A prefix
/// longer than the frame count scores `-inf`.
pub fn prefix_extend(
    logprobs: &Tensor,
    state: &CtcPrefixState,
    class: usize,
) -> (f64, CtcPrefixState) {
    debug_assert!(class > 0, "blank cannot extend a prefix");
    let t_len = logprobs.rows();
    let neg_inf = f64::NEG_INFINITY;
    let mut gamma_n = vec![neg_inf; t_len + 1];
    let mut gamma_b = vec![neg_inf; t_len + 1];
    let mut psi = neg_inf;
    for t in 1..=t_len {
        // First emission of `class` at frame t: the previous prefix must be
        // complete by t-1; a repeat of the last symbol needs a blank since.
        let phi = if state.last == Some(class) {
            state.gamma_b[t - 1]
        } else {
            lse2(state.gamma_b[t - 1], state.gamma_n[t - 1])
        };
        let emit = logprobs.at(t - 1, class);
        gamma_n[t] = lse2(gamma_n[t - 1], phi) + emit;
        gamma_b[t] = lse2(gamma_b[t - 1], gamma_n[t - 1]) + logprobs.at(t - 1, 0);
        psi = lse2(psi, phi + emit);
    }
    let delta = psi - state.log_prefix;
    (
        delta,
        CtcPrefixState {
            gamma_n,
            gamma_b,
            last: Some(class),
            log_prefix: psi,
        },
    )
}

/// Log-probability that the prefix is the complete output sequence.
pub fn complete_logprob(state: &CtcPrefixState) -> f64 {
    let t = state.gamma_n.len() - 1;
    lse2(state.gamma_n[t], state.gamma_b[t])
}
