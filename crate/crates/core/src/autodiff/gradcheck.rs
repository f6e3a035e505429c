//! Central finite-difference gradient checks.

use super::tensor::DenseTensor;
use crate::error::{Error, Result};

/// Max over parameters of `|analytic − central| / max(1, |central|)`.
///
/// `f` must return a single-element tensor; `h` must lie in `(0, 1e-2]`.
pub fn finite_diff_check<F>(mut f: F, params: &[f64], analytic: &[f64], h: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> DenseTensor,
{
    if !(h > 0.0 && h <= 1e-2) {
        return Err(Error::invalid(format!("step {h} outside (0, 1e-2]")));
    }
    if params.len() != analytic.len() {
        return Err(Error::shape(format!(
            "{} parameters but {} analytic gradients",
            params.len(),
            analytic.len()
        )));
    }
    let mut probe = params.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        probe[i] = params[i] + h;
        let plus = f(&probe).item()?;
        probe[i] = params[i] - h;
        let minus = f(&probe).item()?;
        probe[i] = params[i];
        let central = (plus - minus) / (2.0 * h);
        let err = (analytic[i] - central).abs() / central.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}
