//! Edit distance and the permutation-minimum evaluation protocol: every
//! assignment of hypothesis streams to reference streams is tried and the
//! one minimizing total edit distance is reported.
//!
//! On the synthetic corpus each token is both a character and a word, so
//! the CER and WER columns coincide; both are kept so reports carry the
//! usual pair of columns.

use crate::error::Result;

/// Unit-cost Levenshtein outcome: the distance and the operation counts of
/// one optimal alignment of `a` into `b` (ties resolved substitution first,
/// then deletion, then insertion).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EditCounts {
    pub distance: usize,
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
}

pub fn edit_distance(a: &[usize], b: &[usize]) -> EditCounts {
    let (n, m) = (a.len(), b.len());
    let mut dp = vec![0usize; (n + 1) * (m + 1)];
    let idx = |i: usize, j: usize| i * (m + 1) + j;
    for i in 0..=n {
        dp[idx(i, 0)] = i;
    }
    for j in 0..=m {
        dp[idx(0, j)] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let cost = usize::from(a[i - 1] != b[j - 1]);
            dp[idx(i, j)] = (dp[idx(i - 1, j - 1)] + cost)
                .min(dp[idx(i - 1, j)] + 1)
                .min(dp[idx(i, j - 1)] + 1);
        }
    }

    // Trace one optimal alignment; preference order sub > del > ins.
    let (mut i, mut j) = (n, m);
    let (mut subs, mut dels, mut inss) = (0, 0, 0);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 && a[i - 1] == b[j - 1] && dp[idx(i, j)] == dp[idx(i - 1, j - 1)] {
            i -= 1;
            j -= 1;
        } else if i > 0 && j > 0 && dp[idx(i, j)] == dp[idx(i - 1, j - 1)] + 1 {
            subs += 1;
            i -= 1;
            j -= 1;
        } else if i > 0 && dp[idx(i, j)] == dp[idx(i - 1, j)] + 1 {
            dels += 1;
            i -= 1;
        } else {
            inss += 1;
            j -= 1;
        }
    }
    EditCounts {
        distance: dp[idx(n, m)],
        substitutions: subs,
        deletions: dels,
        insertions: inss,
    }
}

/// Result of scoring one utterance's hypothesis streams against its
/// reference streams under the best assignment.
#[derive(Debug, Clone)]
pub struct PermutationScore {
    /// `assignment[s]` is the reference paired with hypothesis stream `s`.
    pub assignment: Vec<usize>,
    pub pair_counts: Vec<EditCounts>,
    pub total_distance: usize,
    pub total_ref_tokens: usize,
}

impl PermutationScore {
    pub fn error_rate(&self) -> f64 {
        if self.total_ref_tokens == 0 {
            if self.total_distance == 0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            self.total_distance as f64 / self.total_ref_tokens as f64
        }
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(n: usize, cur: &mut Vec<usize>, used: &mut Vec<bool>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        for i in 0..n {
            if !used[i] {
                used[i] = true;
                cur.push(i);
                rec(n, cur, used, out);
                cur.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(n, &mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// Evaluate all assignments of hypotheses to references and keep the
/// minimum-total-distance one (ties to the lexicographically smallest
/// assignment).
pub fn score_permutation_min(hyps: &[Vec<usize>], refs: &[Vec<usize>]) -> Result<PermutationScore> {
    assert_eq!(hyps.len(), refs.len(), "stream count mismatch");
    let s = hyps.len();
    let counts: Vec<Vec<EditCounts>> = hyps
        .iter()
        .map(|h| refs.iter().map(|r| edit_distance(h, r)).collect())
        .collect();
    let mut best: Option<(Vec<usize>, usize)> = None;
    for perm in permutations(s) {
        let total: usize = perm
            .iter()
            .enumerate()
            .map(|(st, &r)| counts[st][r].distance)
            .sum();
        match &best {
            Some((_, t)) if total >= *t => {}
            _ => best = Some((perm, total)),
        }
    }
    let (assignment, total_distance) = best.unwrap();
    let pair_counts: Vec<EditCounts> = assignment
        .iter()
        .enumerate()
        .map(|(st, &r)| counts[st][r])
        .collect();
    let total_ref_tokens = refs.iter().map(|r| r.len()).sum();
    Ok(PermutationScore {
        assignment,
        pair_counts,
        total_distance,
        total_ref_tokens,
    })
}

/// Scores for one utterance in an evaluation report.
#[derive(Debug, Clone)]
pub struct UtteranceScore {
    pub id: String,
    pub score: PermutationScore,
}

/// Corpus-level report: per-utterance details plus token-weighted averages.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub utterances: Vec<UtteranceScore>,
}

impl EvalReport {
    /// Token-weighted average error rate (identical in the CER and WER
    /// columns on this corpus).
    pub fn average_error_rate(&self) -> f64 {
        let dist: usize = self.utterances.iter().map(|u| u.score.total_distance).sum();
        let toks: usize = self.utterances.iter().map(|u| u.score.total_ref_tokens).sum();
        if toks == 0 {
            if dist == 0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            dist as f64 / toks as f64
        }
    }
}
