//! Stable softmax / log-sum-exp and the forward/backward pairs for the
//! small set of primitives the model is built from: affine maps, pointwise
//! nonlinearities, 1-d convolution, and softmax cross-entropy.
//!
//! Backward functions accumulate into caller-owned gradient buffers and
//! return gradients with respect to their inputs, so higher-level modules
//! chain them without any graph machinery.

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Numerically stable softmax; max is subtracted before exponentiation.
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::EmptyInput("softmax"));
    }
    let mut out = v.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

/// In-place softmax over a nonempty slice. Entries of `-inf` get weight 0.
pub fn softmax_in_place(v: &mut [f64]) {
    debug_assert!(!v.is_empty());
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// `ln Σ exp(v_i)` with max-subtraction; `-inf` entries are absorbed and an
/// all-`-inf` input returns `-inf`.
pub fn logsumexp(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::EmptyInput("logsumexp"));
    }
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    let sum: f64 = v.iter().map(|x| (x - max).exp()).sum();
    Ok(max + sum.ln())
}

/// Two-argument log-sum-exp, the workhorse of the CTC recursions.
pub fn lse2(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Three-argument log-sum-exp.
pub fn lse3(a: f64, b: f64, c: f64) -> f64 {
    lse2(lse2(a, b), c)
}

/// Log-softmax over a nonempty slice.
pub fn log_softmax(v: &[f64]) -> Vec<f64> {
    let lse = logsumexp(v).expect("log_softmax on empty slice");
    v.iter().map(|x| x - lse).collect()
}

/// Backward of log-softmax: given `d`&nbsp;=&nbsp;dL/d(log-probs), returns
/// dL/d(logits) = d − softmax(logits) · Σ d.
pub fn log_softmax_backward(logprobs: &[f64], d: &[f64]) -> Vec<f64> {
    let total: f64 = d.iter().sum();
    logprobs
        .iter()
        .zip(d.iter())
        .map(|(lp, di)| di - lp.exp() * total)
        .collect()
}

/// Backward of softmax: given outputs `y` and upstream `dy`, returns
/// dL/d(scores) = y ⊙ (dy − Σ y·dy).
pub fn softmax_backward(y: &[f64], dy: &[f64]) -> Vec<f64> {
    let dot: f64 = y.iter().zip(dy.iter()).map(|(a, b)| a * b).sum();
    y.iter().zip(dy.iter()).map(|(yi, di)| yi * (di - dot)).collect()
}

/// y = W·x + b with W stored row-major as `out × in`.
pub fn affine(w: &Tensor, b: &Tensor, x: &[f64]) -> Vec<f64> {
    let (out_dim, in_dim) = (w.rows(), w.cols());
    debug_assert_eq!(x.len(), in_dim);
    debug_assert_eq!(b.len(), out_dim);
    let mut y = b.data().to_vec();
    for o in 0..out_dim {
        let row = w.row(o);
        let mut acc = 0.0;
        for i in 0..in_dim {
            acc += row[i] * x[i];
        }
        y[o] += acc;
    }
    y
}

/// Backward of `affine`: accumulates dW and db, returns dx.
pub fn affine_backward(
    w: &Tensor,
    x: &[f64],
    dy: &[f64],
    dw: &mut Tensor,
    db: &mut Tensor,
) -> Vec<f64> {
    let (out_dim, in_dim) = (w.rows(), w.cols());
    let mut dx = vec![0.0; in_dim];
    for o in 0..out_dim {
        let g = dy[o];
        db.data_mut()[o] += g;
        let wrow = w.row(o);
        let dwrow = dw.row_mut(o);
        for i in 0..in_dim {
            dwrow[i] += g * x[i];
            dx[i] += wrow[i] * g;
        }
    }
    dx
}

pub fn tanh_vec(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.tanh()).collect()
}

/// Backward of tanh expressed through the forward output `y`.
pub fn tanh_backward(y: &[f64], dy: &[f64]) -> Vec<f64> {
    y.iter().zip(dy.iter()).map(|(yi, di)| di * (1.0 - yi * yi)).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Same-padded 1-d convolution of a single channel into `k` channels.
///
/// `filters` is `k × width` with odd `width`; output is `len(x) × k`.
pub fn conv1d(filters: &Tensor, x: &[f64]) -> Tensor {
    let (k, width) = (filters.rows(), filters.cols());
    debug_assert!(width % 2 == 1, "conv1d filter width must be odd");
    let half = (width / 2) as isize;
    let t_len = x.len();
    let mut out = Tensor::zeros(&[t_len, k]);
    for t in 0..t_len {
        for f in 0..k {
            let frow = filters.row(f);
            let mut acc = 0.0;
            for (r, w) in frow.iter().enumerate() {
                let src = t as isize + r as isize - half;
                if src >= 0 && (src as usize) < t_len {
                    acc += w * x[src as usize];
                }
            }
            out.set(t, f, acc);
        }
    }
    out
}

/// Backward of `conv1d`: accumulates filter gradients, returns dx.
pub fn conv1d_backward(filters: &Tensor, x: &[f64], dout: &Tensor, dfilters: &mut Tensor) -> Vec<f64> {
    let (k, width) = (filters.rows(), filters.cols());
    let half = (width / 2) as isize;
    let t_len = x.len();
    let mut dx = vec![0.0; t_len];
    for t in 0..t_len {
        for f in 0..k {
            let g = dout.at(t, f);
            if g == 0.0 {
                continue;
            }
            let frow = filters.row(f);
            let dfrow = dfilters.row_mut(f);
            for r in 0..width {
                let src = t as isize + r as isize - half;
                if src >= 0 && (src as usize) < t_len {
                    dfrow[r] += g * x[src as usize];
                    dx[src as usize] += g * frow[r];
                }
            }
        }
    }
    dx
}

/// Softmax cross-entropy against a one-hot target.
///
/// Returns the negative log-likelihood and the log-probabilities; the
/// gradient w.r.t. the logits is `exp(logprobs) − onehot(target)`.
pub fn softmax_xent(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let logprobs = log_softmax(logits);
    (-logprobs[target], logprobs)
}

pub fn softmax_xent_backward(logprobs: &[f64], target: usize, upstream: f64) -> Vec<f64> {
    logprobs
        .iter()
        .enumerate()
        .map(|(i, lp)| upstream * (lp.exp() - if i == target { 1.0 } else { 0.0 }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn softmax_symmetry() {
        let y = softmax(&[0.0, 0.0]).unwrap();
        assert_eq!(y, vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_stable_under_large_inputs() {
        let y = softmax(&[1000.0, 1000.0, 1000.0]).unwrap();
        for v in &y {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
            assert!(v.is_finite());
        }
    }

    #[test]
    fn softmax_direct_evaluation() {
        // e^a/(e^a+e^b) with a=ln 1, b=ln 3 gives 1/4 and 3/4.
        let y = softmax(&[1.0_f64.ln(), 3.0_f64.ln()]).unwrap();
        assert!((y[0] - 0.25).abs() < 1e-12);
        assert!((y[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn softmax_rejects_empty() {
        assert!(softmax(&[]).is_err());
    }

    #[test]
    fn softmax_sums_to_one_and_is_shift_invariant() {
        let mut rng = Rng::new(11);
        for _ in 0..100 {
            let v: Vec<f64> = (0..10).map(|_| rng.uniform(-50.0, 50.0)).collect();
            let y = softmax(&v).unwrap();
            let sum: f64 = y.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            let c = rng.uniform(-100.0, 100.0);
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let y2 = softmax(&shifted).unwrap();
            for (a, b) in y.iter().zip(y2.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn logsumexp_examples() {
        let ln1 = 1.0_f64.ln();
        assert!((logsumexp(&[ln1, ln1]).unwrap() - 2.0_f64.ln()).abs() < 1e-12);
        assert_eq!(logsumexp(&[f64::NEG_INFINITY, 1.5]).unwrap(), 1.5);
        assert!((logsumexp(&[0.0, 0.0, 0.0, 0.0]).unwrap() - 4.0_f64.ln()).abs() < 1e-12);
        assert_eq!(
            logsumexp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]).unwrap(),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn logsumexp_bounds() {
        let mut rng = Rng::new(5);
        for _ in 0..100 {
            let v: Vec<f64> = (0..10).map(|_| rng.uniform(-20.0, 20.0)).collect();
            let lse = logsumexp(&v).unwrap();
            let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(lse >= max);
            assert!(lse <= max + (v.len() as f64).ln() + 1e-12);
        }
    }

    #[test]
    fn lse2_matches_logsumexp() {
        let mut rng = Rng::new(9);
        for _ in 0..100 {
            let a = rng.uniform(-30.0, 30.0);
            let b = rng.uniform(-30.0, 30.0);
            assert!((lse2(a, b) - logsumexp(&[a, b]).unwrap()).abs() < 1e-12);
        }
        assert_eq!(lse2(f64::NEG_INFINITY, f64::NEG_INFINITY), f64::NEG_INFINITY);
    }

    #[test]
    fn conv1d_identity_filter() {
        // Single filter [0, 1, 0] reproduces the input.
        let filters = Tensor::from_vec(&[1, 3], vec![0.0, 1.0, 0.0]);
        let x = [1.0, 2.0, 3.0, 4.0];
        let out = conv1d(&filters, &x);
        for (t, v) in x.iter().enumerate() {
            assert_eq!(out.at(t, 0), *v);
        }
    }
}
