//! AdaDelta: per-parameter step sizes from running averages of squared
//! gradients and squared updates, no global learning rate.

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Optimizer state: one pair of accumulators per parameter tensor, matched
/// by position in the fixed tensor order.
#[derive(Debug, Clone)]
pub struct AdaDelta {
    pub rho: f64,
    pub eps: f64,
    avg_sq_grad: Vec<Vec<f64>>,
    avg_sq_update: Vec<Vec<f64>>,
}

impl AdaDelta {
    pub fn new(rho: f64, eps: f64, tensor_sizes: &[usize]) -> Self {
        AdaDelta {
            rho,
            eps,
            avg_sq_grad: tensor_sizes.iter().map(|n| vec![0.0; *n]).collect(),
            avg_sq_update: tensor_sizes.iter().map(|n| vec![0.0; *n]).collect(),
        }
    }

    pub fn for_tensors(rho: f64, eps: f64, tensors: &[(String, &Tensor)]) -> Self {
        let sizes: Vec<usize> = tensors.iter().map(|(_, t)| t.len()).collect();
        AdaDelta::new(rho, eps, &sizes)
    }

    /// One update:
    ///   E[g²] ← ρE[g²] + (1−ρ)g²
    ///   Δ = −(√(E[Δ²]+ε) / √(E[g²]+ε))·g
    ///   E[Δ²] ← ρE[Δ²] + (1−ρ)Δ²
    ///   p ← p + Δ
    ///
    /// A non-finite gradient anywhere rejects the whole step (no state is
    /// touched) so the caller can log and continue.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor]) -> Result<()> {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.avg_sq_grad.len());
        for g in grads {
            if !g.all_finite() {
                return Err(Error::NonFiniteLoss(
                    "gradient contains non-finite values; step rejected".into(),
                ));
            }
        }
        for ((p, g), (eg2, ed2)) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.avg_sq_grad.iter_mut().zip(self.avg_sq_update.iter_mut()))
        {
            for (k, gv) in g.data().iter().enumerate() {
                eg2[k] = self.rho * eg2[k] + (1.0 - self.rho) * gv * gv;
                let delta = -((ed2[k] + self.eps).sqrt() / (eg2[k] + self.eps).sqrt()) * gv;
                ed2[k] = self.rho * ed2[k] + (1.0 - self.rho) * delta * delta;
                p.data_mut()[k] += delta;
            }
        }
        Ok(())
    }
}
