use crate::error::{Error, Result};
use crate::model::log_softmax;

fn check_label(len: usize, label: usize) -> Result<()> {
    if label >= len {
        return Err(Error::Invalid(format!("label {label} out of range for {len} classes")));
    }
    Ok(())
}

/// `-ln probs[label]`.
pub fn cross_entropy(probs: &[f64], label: usize) -> Result<f64> {
    check_label(probs.len(), label)?;
    Ok(-probs[label].ln())
}

/// Cross-entropy evaluated from logits through a log-sum-exp, which stays
/// finite even when the target probability underflows.
pub fn cross_entropy_from_logits(logits: &[f64], label: usize) -> Result<f64> {
    check_label(logits.len(), label)?;
    Ok(-log_softmax(logits)[label])
}
