//! CTC negative log-likelihood with analytic gradients (log-space
//! forward-backward), an exhaustive alignment-enumeration oracle, greedy
//! collapse decoding, and the permutation-free assignment over streams.
//!
//! Labels here are CTC classes: `0` is blank, `1..=V` the vocabulary
//! symbols. Log-probability rows must each exponentiate-sum to 1.

use crate::error::{Error, Result};
use crate::numerics::ops::{lse2, lse3};
use crate::numerics::Tensor;

/// Per-frame log-probabilities plus the reference classes for one pairing.
#[derive(Debug, Clone, Copy)]
pub struct CtcInput<'a> {
    /// `T' × (V+1)`, class 0 = blank.
    pub logprobs: &'a Tensor,
    /// Reference classes in `1..=V`, never blank.
    pub labels: &'a [usize],
}

/// Minimum frame count that admits any alignment: one frame per label plus
/// one separating blank per adjacent repeat.
fn min_frames(labels: &[usize]) -> usize {
    let repeats = labels.windows(2).filter(|w| w[0] == w[1]).count();
    labels.len() + repeats
}

/// Blank-interleaved extended label sequence `∅ l1 ∅ l2 ∅ … ∅`.
fn extended(labels: &[usize]) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * labels.len() + 1);
    ext.push(0);
    for &l in labels {
        ext.push(l);
        ext.push(0);
    }
    ext
}

/// CTC negative log-likelihood and its gradient w.r.t. the log-probabilities.
///
/// Infeasible pairings (labels longer than the frame budget allows) return
/// `+inf` with a zero gradient rather than an error, so the permutation
/// search can still compare totals.
pub fn ctc_loss(input: CtcInput) -> (f64, Tensor) {
    let lp = input.logprobs;
    let t_len = lp.rows();
    let zero_grad = lp.zeros_like();
    if min_frames(input.labels) > t_len {
        return (f64::INFINITY, zero_grad);
    }
    if t_len == 0 {
        // Only the empty label sequence is representable by zero frames.
        return (0.0, zero_grad);
    }

    let ext = extended(input.labels);
    let n_ext = ext.len();
    let neg_inf = f64::NEG_INFINITY;

    // Forward variables, emission at t included.
    let mut alpha = vec![neg_inf; t_len * n_ext];
    alpha[0] = lp.at(0, ext[0]);
    if n_ext > 1 {
        alpha[1] = lp.at(0, ext[1]);
    }
    for t in 1..t_len {
        for u in 0..n_ext {
            let stay = alpha[(t - 1) * n_ext + u];
            let step = if u >= 1 { alpha[(t - 1) * n_ext + u - 1] } else { neg_inf };
            let skip = if u >= 2 && ext[u] != 0 && ext[u] != ext[u - 2] {
                alpha[(t - 1) * n_ext + u - 2]
            } else {
                neg_inf
            };
            let acc = lse3(stay, step, skip);
            alpha[t * n_ext + u] = if acc == neg_inf { neg_inf } else { acc + lp.at(t, ext[u]) };
        }
    }

    let last = (t_len - 1) * n_ext;
    let tail = if n_ext > 1 {
        lse2(alpha[last + n_ext - 1], alpha[last + n_ext - 2])
    } else {
        alpha[last + n_ext - 1]
    };
    if tail == neg_inf {
        return (f64::INFINITY, zero_grad);
    }
    let log_likelihood = tail;

    // Backward variables, emission at t included.
    let mut beta = vec![neg_inf; t_len * n_ext];
    beta[last + n_ext - 1] = lp.at(t_len - 1, ext[n_ext - 1]);
    if n_ext > 1 {
        beta[last + n_ext - 2] = lp.at(t_len - 1, ext[n_ext - 2]);
    }
    for t in (0..t_len - 1).rev() {
        for u in 0..n_ext {
            let stay = beta[(t + 1) * n_ext + u];
            let step = if u + 1 < n_ext { beta[(t + 1) * n_ext + u + 1] } else { neg_inf };
            let skip = if u + 2 < n_ext && ext[u + 2] != 0 && ext[u + 2] != ext[u] {
                beta[(t + 1) * n_ext + u + 2]
            } else {
                neg_inf
            };
            let acc = lse3(stay, step, skip);
            beta[t * n_ext + u] = if acc == neg_inf { neg_inf } else { acc + lp.at(t, ext[u]) };
        }
    }

    // d(-ln p)/d logprob[t][k] = -exp(lse_{u: ext[u]=k}(α+β-logprob[t][k]) - ln p);
    // α and β both include the emission at t, so one copy is divided out.
    let mut grad = lp.zeros_like();
    for t in 0..t_len {
        let mut per_class = vec![neg_inf; lp.cols()];
        for u in 0..n_ext {
            let ab = alpha[t * n_ext + u];
            let bb = beta[t * n_ext + u];
            if ab != neg_inf && bb != neg_inf {
                let k = ext[u];
                per_class[k] = lse2(per_class[k], ab + bb - lp.at(t, k));
            }
        }
        for k in 0..lp.cols() {
            if per_class[k] != neg_inf {
                grad.set(t, k, -(per_class[k] - log_likelihood).exp());
            }
        }
    }
    (-log_likelihood, grad)
}

/// Forward-only CTC negative log-likelihood, used to fill the loss matrix.
pub fn ctc_nll(logprobs: &Tensor, labels: &[usize]) -> f64 {
    let t_len = logprobs.rows();
    if min_frames(labels) > t_len {
        return f64::INFINITY;
    }
    if t_len == 0 {
        return 0.0;
    }
    let ext = extended(labels);
    let n_ext = ext.len();
    let neg_inf = f64::NEG_INFINITY;
    let mut prev = vec![neg_inf; n_ext];
    prev[0] = logprobs.at(0, ext[0]);
    if n_ext > 1 {
        prev[1] = logprobs.at(0, ext[1]);
    }
    let mut cur = vec![neg_inf; n_ext];
    for t in 1..t_len {
        for u in 0..n_ext {
            let stay = prev[u];
            let step = if u >= 1 { prev[u - 1] } else { neg_inf };
            let skip = if u >= 2 && ext[u] != 0 && ext[u] != ext[u - 2] {
                prev[u - 2]
            } else {
                neg_inf
            };
            let acc = lse3(stay, step, skip);
            cur[u] = if acc == neg_inf { neg_inf } else { acc + logprobs.at(t, ext[u]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let tail = if n_ext > 1 {
        lse2(prev[n_ext - 1], prev[n_ext - 2])
    } else {
        prev[n_ext - 1]
    };
    if tail == neg_inf {
        f64::INFINITY
    } else {
        -tail
    }
}

/// Exhaustive oracle: enumerate every length-T' class sequence, keep those
/// collapsing (merge repeats, then drop blanks) to the labels, and sum their
/// probabilities exactly.
pub fn ctc_brute(input: CtcInput) -> Result<f64> {
    let lp = input.logprobs;
    let t_len = lp.rows();
    let n_classes = lp.cols();
    let n_paths = (n_classes as f64).powi(t_len as i32);
    if n_paths > 1e6 {
        return Err(Error::InstanceTooLarge(n_paths));
    }
    if t_len == 0 {
        return Ok(if input.labels.is_empty() { 0.0 } else { f64::INFINITY });
    }

    let mut total = f64::NEG_INFINITY;
    let mut path = vec![0usize; t_len];
    loop {
        if collapse(&path) == input.labels {
            let logp: f64 = path.iter().enumerate().map(|(t, &k)| lp.at(t, k)).sum();
            total = lse2(total, logp);
        }
        // Next path in base n_classes.
        let mut pos = 0;
        loop {
            if pos == t_len {
                return Ok(if total == f64::NEG_INFINITY {
                    f64::INFINITY
                } else {
                    -total
                });
            }
            path[pos] += 1;
            if path[pos] < n_classes {
                break;
            }
            path[pos] = 0;
            pos += 1;
        }
    }
}

fn collapse(path: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut last = usize::MAX;
    for &k in path {
        if k != last && k != 0 {
            out.push(k);
        }
        last = k;
    }
    out
}

/// Per-frame argmax (ties to the lowest class), collapse repeats, drop blanks.
pub fn ctc_greedy_decode(logprobs: &Tensor) -> Vec<usize> {
    let mut path = Vec::with_capacity(logprobs.rows());
    for t in 0..logprobs.rows() {
        let row = logprobs.row(t);
        let mut best = 0;
        for (k, v) in row.iter().enumerate().skip(1) {
            if *v > row[best] {
                best = k;
            }
        }
        path.push(best);
    }
    collapse(&path)
}

/// The chosen stream-to-reference assignment: `assignment[s]` is the
/// reference index paired with stream `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct Permutation {
    pub assignment: Vec<usize>,
    pub pair_losses: Vec<f64>,
    pub total: f64,
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    // Lexicographic order, so ties resolve to the smallest permutation.
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(n);
    let mut used = vec![false; n];
    fn rec(n: usize, current: &mut Vec<usize>, used: &mut Vec<bool>, out: &mut Vec<Vec<usize>>) {
        if current.len() == n {
            out.push(current.clone());
            return;
        }
        for i in 0..n {
            if !used[i] {
                used[i] = true;
                current.push(i);
                rec(n, current, used, out);
                current.pop();
                used[i] = false;
            }
        }
    }
    rec(n, &mut current, &mut used, &mut out);
    out
}

/// Exhaustive argmin over all assignments of the summed pairwise losses.
/// `matrix[s][r]` is the loss of scoring stream `s` against reference `r`;
/// entries may be `+inf` for infeasible pairs. Ties break to the
/// lexicographically smallest permutation.
pub fn pit_assign(matrix: &[Vec<f64>]) -> Result<Permutation> {
    let s = matrix.len();
    for row in matrix {
        if row.len() != s {
            return Err(Error::NonSquareMatrix {
                rows: s,
                cols: row.len(),
            });
        }
    }
    if s == 0 {
        return Err(Error::EmptyInput("pit_assign"));
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    for perm in permutations(s) {
        let total: f64 = perm.iter().enumerate().map(|(st, &r)| matrix[st][r]).sum();
        match &best {
            Some((_, t)) if total >= *t => {}
            _ => best = Some((perm, total)),
        }
    }
    let (assignment, total) = best.unwrap();
    let pair_losses = assignment
        .iter()
        .enumerate()
        .map(|(st, &r)| matrix[st][r])
        .collect();
    Ok(Permutation {
        assignment,
        pair_losses,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::ops::log_softmax;
    use crate::numerics::{grad_check, Tensor};
    use crate::rng::Rng;

    fn uniform_logprobs(t: usize, classes: usize) -> Tensor {
        let v = (1.0 / classes as f64).ln();
        Tensor::from_vec(&[t, classes], vec![v; t * classes])
    }

    fn random_instance(rng: &mut Rng, max_t: usize, max_v: usize) -> (Tensor, Vec<usize>) {
        let t = 1 + rng.below(max_t as u64) as usize;
        let v = 1 + rng.below(max_v as u64) as usize;
        let mut lp = Tensor::zeros(&[t, v + 1]);
        for ti in 0..t {
            let row: Vec<f64> = (0..v + 1).map(|_| rng.uniform(-3.0, 3.0)).collect();
            lp.row_mut(ti).copy_from_slice(&log_softmax(&row));
        }
        let label_len = rng.below(4) as usize;
        let labels: Vec<usize> = (0..label_len).map(|_| 1 + rng.below(v as u64) as usize).collect();
        (lp, labels)
    }

    #[test]
    fn single_frame_single_label() {
        // T'=1, labels=[a], uniform over {blank, a, b}: only the path "a".
        let lp = uniform_logprobs(1, 3);
        let (nll, _) = ctc_loss(CtcInput {
            logprobs: &lp,
            labels: &[1],
        });
        assert!((nll - 3.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn two_frames_single_label_enumerates_three_paths() {
        // Alignments {(a,-),( -,a),(a,a)} out of 9: nll = -ln(3/9) = ln 3.
        let lp = uniform_logprobs(2, 3);
        let (nll, _) = ctc_loss(CtcInput {
            logprobs: &lp,
            labels: &[1],
        });
        assert!((nll - 3.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn repeated_label_needs_separating_blank() {
        let lp = uniform_logprobs(2, 3);
        let (nll, grad) = ctc_loss(CtcInput {
            logprobs: &lp,
            labels: &[1, 1],
        });
        assert_eq!(nll, f64::INFINITY);
        assert!(grad.data().iter().all(|g| *g == 0.0));
        // T'=3 admits exactly the path (a, -, a).
        let lp3 = uniform_logprobs(3, 3);
        let (nll3, _) = ctc_loss(CtcInput {
            logprobs: &lp3,
            labels: &[1, 1],
        });
        assert!((nll3 - 3.0 * 3.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn brute_force_on_empty_labels_is_all_blank_path() {
        let mut rng = Rng::new(3);
        let mut lp = Tensor::zeros(&[4, 3]);
        for t in 0..4 {
            let row: Vec<f64> = (0..3).map(|_| rng.uniform(-2.0, 2.0)).collect();
            lp.row_mut(t).copy_from_slice(&log_softmax(&row));
        }
        let brute = ctc_brute(CtcInput {
            logprobs: &lp,
            labels: &[],
        })
        .unwrap();
        let direct: f64 = -(0..4).map(|t| lp.at(t, 0)).sum::<f64>();
        assert!((brute - direct).abs() < 1e-12);
        let (dp, _) = ctc_loss(CtcInput {
            logprobs: &lp,
            labels: &[],
        });
        assert!((dp - direct).abs() < 1e-12);
    }

    #[test]
    fn brute_force_infeasible_is_infinite() {
        let lp = uniform_logprobs(1, 3);
        let nll = ctc_brute(CtcInput {
            logprobs: &lp,
            labels: &[1, 2],
        })
        .unwrap();
        assert_eq!(nll, f64::INFINITY);
    }

    #[test]
    fn brute_force_rejects_huge_instances() {
        let lp = uniform_logprobs(30, 4);
        assert!(ctc_brute(CtcInput {
            logprobs: &lp,
            labels: &[1],
        })
        .is_err());
    }

    #[test]
    fn dp_matches_brute_force_on_random_instances() {
        let mut rng = Rng::new(20);
        for _ in 0..200 {
            let (lp, labels) = random_instance(&mut rng, 6, 3);
            let (dp, _) = ctc_loss(CtcInput {
                logprobs: &lp,
                labels: &labels,
            });
            let brute = ctc_brute(CtcInput {
                logprobs: &lp,
                labels: &labels,
            })
            .unwrap();
            if dp.is_infinite() {
                assert!(brute.is_infinite());
            } else {
                assert!(
                    (dp - brute).abs() < 1e-9,
                    "dp {dp} vs brute {brute} (labels {labels:?})"
                );
            }
        }
    }

    #[test]
    fn gradient_wrt_logits_matches_finite_differences() {
        let mut rng = Rng::new(77);
        for _ in 0..10 {
            let t = 3 + rng.below(3) as usize;
            let classes = 3;
            let labels: Vec<usize> = (0..2).map(|_| 1 + rng.below(2) as u64 as usize).collect();
            let logits: Vec<f64> = (0..t * classes).map(|_| rng.uniform(-1.5, 1.5)).collect();
            let err = grad_check(
                |x| {
                    let mut lp = Tensor::zeros(&[t, classes]);
                    for ti in 0..t {
                        let row = log_softmax(&x[ti * classes..(ti + 1) * classes]);
                        lp.row_mut(ti).copy_from_slice(&row);
                    }
                    let (nll, dlp) = ctc_loss(CtcInput {
                        logprobs: &lp,
                        labels: &labels,
                    });
                    let mut dlogits = vec![0.0; t * classes];
                    for ti in 0..t {
                        let d = crate::numerics::ops::log_softmax_backward(
                            lp.row(ti),
                            dlp.row(ti),
                        );
                        dlogits[ti * classes..(ti + 1) * classes].copy_from_slice(&d);
                    }
                    (nll, dlogits)
                },
                &logits,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-4, "err {err}");
        }
    }

    #[test]
    fn feasibility_is_monotone_in_frames() {
        let mut rng = Rng::new(8);
        for _ in 0..50 {
            let (lp, labels) = random_instance(&mut rng, 5, 3);
            let nll = ctc_nll(&lp, &labels);
            if nll.is_finite() {
                // Pad one uniform frame: still finite.
                let classes = lp.cols();
                let mut padded = Tensor::zeros(&[lp.rows() + 1, classes]);
                for t in 0..lp.rows() {
                    padded.row_mut(t).copy_from_slice(lp.row(t));
                }
                let u = (1.0 / classes as f64).ln();
                padded.row_mut(lp.rows()).iter_mut().for_each(|x| *x = u);
                assert!(ctc_nll(&padded, &labels).is_finite());
            }
        }
    }

    #[test]
    fn greedy_decode_collapses() {
        // argmax sequence a a - b  ->  a b
        let rows = [
            [0.0f64, 2.0, 1.0],
            [0.0, 2.0, 1.0],
            [2.0, 0.0, 1.0],
            [0.0, 1.0, 2.0],
        ];
        let mut lp = Tensor::zeros(&[4, 3]);
        for (t, r) in rows.iter().enumerate() {
            lp.row_mut(t).copy_from_slice(&log_softmax(r));
        }
        assert_eq!(ctc_greedy_decode(&lp), vec![1, 2]);

        let all_blank = Tensor::from_vec(&[3, 2], vec![0.0, -1.0, 0.0, -1.0, 0.0, -1.0]);
        assert_eq!(ctc_greedy_decode(&all_blank), Vec::<usize>::new());

        // a - a keeps both.
        let rows = [[0.0f64, 2.0], [2.0, 0.0], [0.0, 2.0]];
        let mut lp = Tensor::zeros(&[3, 2]);
        for (t, r) in rows.iter().enumerate() {
            lp.row_mut(t).copy_from_slice(&log_softmax(r));
        }
        assert_eq!(ctc_greedy_decode(&lp), vec![1, 1]);
    }

    #[test]
    fn pit_examples() {
        let p = pit_assign(&[vec![1.0, 2.0], vec![3.0, 0.5]]).unwrap();
        assert_eq!(p.assignment, vec![0, 1]);
        assert!((p.total - 1.5).abs() < 1e-12);

        let p = pit_assign(&[vec![2.0, 1.0], vec![0.5, 3.0]]).unwrap();
        assert_eq!(p.assignment, vec![1, 0]);
        assert!((p.total - 1.5).abs() < 1e-12);

        let p = pit_assign(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(p.assignment, vec![0, 1], "tie breaks to identity");
    }

    #[test]
    fn pit_rejects_non_square() {
        assert!(pit_assign(&[vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn pit_handles_infinite_entries() {
        let inf = f64::INFINITY;
        let p = pit_assign(&[vec![inf, 1.0], vec![2.0, inf]]).unwrap();
        assert_eq!(p.assignment, vec![1, 0]);
        assert!((p.total - 3.0).abs() < 1e-12);
    }

    #[test]
    fn pit_column_permutation_covariance() {
        // Permuting the columns by σ maps the argmin π̂ to σ∘π̂ and leaves
        // the minimum unchanged.
        let mut rng = Rng::new(44);
        for s in [2usize, 3] {
            for _ in 0..100 {
                let matrix: Vec<Vec<f64>> = (0..s)
                    .map(|_| (0..s).map(|_| rng.uniform(0.0, 10.0)).collect())
                    .collect();
                let base = pit_assign(&matrix).unwrap();
                let sigmas = permutations(s);
                let sigma = &sigmas[rng.below(sigmas.len() as u64) as usize];
                // permuted[s][r] = matrix[s][σ^{-1}(r)], i.e. column σ(r) holds old column r.
                let mut permuted = vec![vec![0.0; s]; s];
                for st in 0..s {
                    for r in 0..s {
                        permuted[st][sigma[r]] = matrix[st][r];
                    }
                }
                let mapped = pit_assign(&permuted).unwrap();
                assert!((mapped.total - base.total).abs() < 1e-12);
                let expected: Vec<usize> = base.assignment.iter().map(|&r| sigma[r]).collect();
                assert_eq!(mapped.assignment, expected);
            }
        }
    }
}
