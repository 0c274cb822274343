use crate::error::{Error, Result};
use crate::tensor::Element;

/// Mean softmax cross-entropy over rows. Returns the loss and the row-wise
/// softmax probabilities (kept for the backward pass).
pub fn softmax_cross_entropy_forward<T: Element>(
    logits: &[T],
    rows: usize,
    classes: usize,
    labels: &[usize],
) -> Result<(T, Vec<T>)> {
    if labels.len() != rows || logits.len() != rows * classes {
        return Err(Error::shape(
            "softmax_cross_entropy",
            format!("{rows}x{classes} logits with {} labels", labels.len()),
        ));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    let mut probs = vec![T::zero(); logits.len()];
    let mut total = T::zero();
    for (r, &label) in labels.iter().enumerate() {
        let row = &logits[r * classes..(r + 1) * classes];
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let denom: T = row.iter().map(|&v| (v - max).exp()).sum();
        let log_denom = denom.ln();
        for (p, &v) in probs[r * classes..(r + 1) * classes].iter_mut().zip(row) {
            *p = (v - max).exp() / denom;
        }
        total = total + log_denom - (row[label] - max);
    }
    Ok((total / T::of(rows as f64), probs))
}

/// Gradient w.r.t. the logits: `(softmax - onehot) / rows`, scaled by `dloss`.
pub fn softmax_cross_entropy_backward<T: Element>(probs: &[T], classes: usize, labels: &[usize], dloss: T) -> Vec<T> {
    let rows = labels.len();
    let scale = dloss / T::of(rows as f64);
    let mut g: Vec<T> = probs.iter().map(|&p| p * scale).collect();
    for (r, &label) in labels.iter().enumerate() {
        let i = r * classes + label;
        g[i] = g[i] - scale;
    }
    g
}
