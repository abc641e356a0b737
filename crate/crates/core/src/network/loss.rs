use crate::error::{Error, Result};
use crate::numerics::log_sum_exp;

/// `−ln probs[target]`.
pub fn cross_entropy(probs: &[f64], target: usize) -> Result<f64> {
    let p = probs
        .get(target)
        .ok_or_else(|| Error::invalid(format!("target {target} out of range for {} classes", probs.len())))?;
    Ok(-p.ln())
}

/// Cross-entropy computed from logits, `lse(f) − f[target]`.
pub fn cross_entropy_logits(logits: &[f64], target: usize) -> Result<f64> {
    if target >= logits.len() {
        return Err(Error::invalid(format!(
            "target {target} out of range for {} classes",
            logits.len()
        )));
    }
    Ok(log_sum_exp(logits)? - logits[target])
}

/// Summed smooth-L1 over box coordinates: `0.5 d²` below 1, `|d| − 0.5` above.
pub fn smooth_l1(pred: &[f64], truth: &[f64]) -> f64 {
    pred.iter()
        .zip(truth)
        .map(|(p, t)| {
            let d = (p - t).abs();
            if d < 1.0 {
                0.5 * d * d
            } else {
                d - 0.5
            }
        })
        .sum()
}

/// Derivative of [`smooth_l1`] with respect to one predicted coordinate.
pub(crate) fn smooth_l1_grad(pred: f64, truth: f64) -> f64 {
    (pred - truth).clamp(-1.0, 1.0)
}
