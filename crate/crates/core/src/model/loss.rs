use super::scalar::Real;
use crate::error::{Error, Result};

/// Row-wise softmax of `rows × classes` logits, stabilized by the row max.
pub fn softmax<T: Real>(logits: &[T], classes: usize) -> Vec<T> {
    let mut out = logits.to_vec();
    for row in out.chunks_exact_mut(classes) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// `-log softmax(row)[label]` via log-sum-exp, accumulated in `f64`.
pub fn sample_cross_entropy<T: Real>(row: &[T], label: usize) -> f64 {
    let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v.as_f64() - max).exp()).sum::<f64>().ln();
    lse - row[label].as_f64()
}

fn check_labels(labels: &[u32], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::InvalidArgument(format!(
            "{} labels for {rows} rows",
            labels.len()
        )));
    }
    if let Some(&l) = labels.iter().find(|&&l| l as usize >= classes) {
        return Err(Error::InvalidArgument(format!(
            "label {l} out of range for {classes} classes"
        )));
    }
    Ok(())
}

/// Mean cross-entropy over a batch of logits.
pub fn cross_entropy<T: Real>(logits: &[T], labels: &[u32], classes: usize) -> Result<f64> {
    if classes == 0 || logits.len() % classes != 0 {
        return Err(Error::InvalidArgument("logit buffer shape".into()));
    }
    let rows = logits.len() / classes;
    check_labels(labels, rows, classes)?;
    if rows == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let total: f64 = logits
        .chunks_exact(classes)
        .zip(labels)
        .map(|(row, &l)| sample_cross_entropy(row, l as usize))
        .sum();
    Ok(total / rows as f64)
}

/// Mean cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy_grad<T: Real>(
    logits: &[T],
    labels: &[u32],
    classes: usize,
) -> Result<(f64, Vec<T>)> {
    let loss = cross_entropy(logits, labels, classes)?;
    let rows = labels.len();
    let mut grad = softmax(logits, classes);
    let inv = T::lit(1.0 / rows as f64);
    for (row, &l) in grad.chunks_exact_mut(classes).zip(labels) {
        row[l as usize] -= T::one();
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
    Ok((loss, grad))
}
