//! Finite-difference gradient checking. This is the oracle every analytic
//! backward function in the crate is tested against.

use crate::error::{Error, Result};

/// Check an analytic gradient against central finite differences.
///
/// `f` maps a parameter vector to `(loss, gradient)`. The analytic gradient
/// is taken from one evaluation at `x`; the numeric gradient of coordinate
/// `i` is `(f(x+εe_i) − f(x−εe_i)) / 2ε`. Returns the maximum over
/// coordinates of `|analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(mut f: F, x: &[f64], epsilon: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (loss, analytic) = f(x);
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss(format!("loss {loss} at base point")));
    }
    assert_eq!(analytic.len(), x.len(), "gradient length mismatch");

    let mut worst: f64 = 0.0;
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + epsilon;
        let (up, _) = f(&probe);
        probe[i] = x[i] - epsilon;
        let (down, _) = f(&probe);
        probe[i] = x[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFiniteLoss(format!(
                "loss non-finite at coordinate {i} perturbation"
            )));
        }
        let numeric = (up - down) / (2.0 * epsilon);
        worst = worst.max(rel_err(analytic[i], numeric));
    }
    Ok(worst)
}

/// `|a − b| / max(|a|, |b|, 1e-8)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}
