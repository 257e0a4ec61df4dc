//! A single gated recurrent primitive: the standard LSTM cell, with
//! step-level and sequence-level forward/backward functions. Every
//! recurrent layer in the model (encoder directions, decoder, language
//! model) is built from this one cell.

use crate::numerics::ops::sigmoid;
use crate::numerics::Tensor;

/// Cell parameters. Gate blocks are ordered `[input, forget, cell, output]`
/// along the first axis, so `w_ih` is `4H × I`, `w_hh` is `4H × H` and the
/// bias is `4H`. The forget-gate block is rows `H..2H`.
#[derive(Debug, Clone)]
pub struct LstmParams {
    pub w_ih: Tensor,
    pub w_hh: Tensor,
    pub b: Tensor,
}

impl LstmParams {
    pub fn new(input: usize, hidden: usize) -> Self {
        LstmParams {
            w_ih: Tensor::zeros(&[4 * hidden, input]),
            w_hh: Tensor::zeros(&[4 * hidden, hidden]),
            b: Tensor::zeros(&[4 * hidden]),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.b.len() / 4
    }

    pub fn input_size(&self) -> usize {
        self.w_ih.cols()
    }

    pub fn zeros_like(&self) -> Self {
        LstmParams {
            w_ih: self.w_ih.zeros_like(),
            w_hh: self.w_hh.zeros_like(),
            b: self.b.zeros_like(),
        }
    }
}

/// Hidden and cell activations after a step.
#[derive(Debug, Clone)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        LstmState {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

/// Everything the backward pass needs from one forward step.
#[derive(Debug, Clone)]
pub struct LstmStepCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    /// Post-activation gates `[i, f, g, o]`, each of length H.
    pub gates: Vec<f64>,
    pub c_new: Vec<f64>,
    pub tanh_c: Vec<f64>,
}

/// One cell step: returns the new state and the cache for backward.
pub fn lstm_step(p: &LstmParams, x: &[f64], state: &LstmState) -> (LstmState, LstmStepCache) {
    let hidden = p.hidden_size();
    debug_assert_eq!(x.len(), p.input_size());
    debug_assert_eq!(state.h.len(), hidden);

    // pre = W_ih·x + W_hh·h_prev + b
    let mut pre = p.b.data().to_vec();
    for r in 0..4 * hidden {
        let wih = p.w_ih.row(r);
        let whh = p.w_hh.row(r);
        let mut acc = 0.0;
        for (i, xi) in x.iter().enumerate() {
            acc += wih[i] * xi;
        }
        for (j, hj) in state.h.iter().enumerate() {
            acc += whh[j] * hj;
        }
        pre[r] += acc;
    }

    let mut gates = vec![0.0; 4 * hidden];
    for k in 0..hidden {
        gates[k] = sigmoid(pre[k]); // input
        gates[hidden + k] = sigmoid(pre[hidden + k]); // forget
        gates[2 * hidden + k] = pre[2 * hidden + k].tanh(); // cell candidate
        gates[3 * hidden + k] = sigmoid(pre[3 * hidden + k]); // output
    }

    let mut c_new = vec![0.0; hidden];
    let mut tanh_c = vec![0.0; hidden];
    let mut h_new = vec![0.0; hidden];
    for k in 0..hidden {
        c_new[k] = gates[hidden + k] * state.c[k] + gates[k] * gates[2 * hidden + k];
        tanh_c[k] = c_new[k].tanh();
        h_new[k] = gates[3 * hidden + k] * tanh_c[k];
    }

    let cache = LstmStepCache {
        x: x.to_vec(),
        h_prev: state.h.clone(),
        c_prev: state.c.clone(),
        gates,
        c_new: c_new.clone(),
        tanh_c,
    };
    (LstmState { h: h_new, c: c_new }, cache)
}

/// Backward of one step. `dh`/`dc` are gradients w.r.t. the step outputs;
/// parameter gradients accumulate into `grads`; returns `(dx, dh_prev, dc_prev)`.
pub fn lstm_step_backward(
    p: &LstmParams,
    cache: &LstmStepCache,
    dh: &[f64],
    dc: &[f64],
    grads: &mut LstmParams,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let hidden = p.hidden_size();
    let input = p.input_size();
    let g = &cache.gates;

    let mut dpre = vec![0.0; 4 * hidden];
    let mut dc_prev = vec![0.0; hidden];
    for k in 0..hidden {
        let (i, f, gg, o) = (g[k], g[hidden + k], g[2 * hidden + k], g[3 * hidden + k]);
        let tc = cache.tanh_c[k];
        let d_o = dh[k] * tc;
        let d_c = dc[k] + dh[k] * o * (1.0 - tc * tc);
        let d_f = d_c * cache.c_prev[k];
        let d_i = d_c * gg;
        let d_g = d_c * i;
        dc_prev[k] = d_c * f;
        dpre[k] = d_i * i * (1.0 - i);
        dpre[hidden + k] = d_f * f * (1.0 - f);
        dpre[2 * hidden + k] = d_g * (1.0 - gg * gg);
        dpre[3 * hidden + k] = d_o * o * (1.0 - o);
    }

    let mut dx = vec![0.0; input];
    let mut dh_prev = vec![0.0; hidden];
    for r in 0..4 * hidden {
        let gq = dpre[r];
        grads.b.data_mut()[r] += gq;
        if gq == 0.0 {
            continue;
        }
        let wih = p.w_ih.row(r);
        let whh = p.w_hh.row(r);
        let dwih = grads.w_ih.row_mut(r);
        for i in 0..input {
            dwih[i] += gq * cache.x[i];
            dx[i] += wih[i] * gq;
        }
        let dwhh = grads.w_hh.row_mut(r);
        for j in 0..hidden {
            dwhh[j] += gq * cache.h_prev[j];
            dh_prev[j] += whh[j] * gq;
        }
    }
    (dx, dh_prev, dc_prev)
}

/// Run the cell over a `T × I` sequence from a zero initial state.
pub fn lstm_sequence(p: &LstmParams, xs: &Tensor) -> (Tensor, Vec<LstmStepCache>) {
    let t_len = xs.rows();
    let hidden = p.hidden_size();
    let mut state = LstmState::zeros(hidden);
    let mut out = Tensor::zeros(&[t_len, hidden]);
    let mut caches = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let (next, cache) = lstm_step(p, xs.row(t), &state);
        out.row_mut(t).copy_from_slice(&next.h);
        caches.push(cache);
        state = next;
    }
    (out, caches)
}

/// Backward over a whole sequence given `dout` (`T × H`); returns `dxs`.
pub fn lstm_sequence_backward(
    p: &LstmParams,
    caches: &[LstmStepCache],
    dout: &Tensor,
    grads: &mut LstmParams,
) -> Tensor {
    let t_len = caches.len();
    let hidden = p.hidden_size();
    let mut dxs = Tensor::zeros(&[t_len, p.input_size()]);
    let mut dh = vec![0.0; hidden];
    let mut dc = vec![0.0; hidden];
    for t in (0..t_len).rev() {
        for k in 0..hidden {
            dh[k] += dout.at(t, k);
        }
        let (dx, dh_prev, dc_prev) = lstm_step_backward(p, &caches[t], &dh, &dc, grads);
        dxs.row_mut(t).copy_from_slice(&dx);
        dh = dh_prev;
        dc = dc_prev;
    }
    dxs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_params(input: usize, hidden: usize, seed: u64) -> LstmParams {
        let mut p = LstmParams::new(input, hidden);
        let mut rng = Rng::new(seed);
        for t in [&mut p.w_ih, &mut p.w_hh, &mut p.b] {
            for v in t.data_mut() {
                *v = rng.uniform(-0.5, 0.5);
            }
        }
        p
    }

    #[test]
    fn step_is_deterministic_and_bounded() {
        let p = random_params(3, 4, 1);
        let state = LstmState::zeros(4);
        let x = [0.3, -0.2, 0.9];
        let (s1, _) = lstm_step(&p, &x, &state);
        let (s2, _) = lstm_step(&p, &x, &state);
        assert_eq!(s1.h, s2.h);
        for h in &s1.h {
            assert!(h.abs() < 1.0);
        }
    }

    #[test]
    fn zero_input_zero_params_gives_zero_output() {
        let p = LstmParams::new(2, 3);
        let (out, _) = lstm_sequence(&p, &Tensor::zeros(&[4, 2]));
        assert!(out.data().iter().all(|v| *v == 0.0));
    }
}
