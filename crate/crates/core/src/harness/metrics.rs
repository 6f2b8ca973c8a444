use crate::error::{Error, Result};

pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::shape(
            "accuracy",
            format!("{} predictions for {} labels", pred.len(), truth.len()),
        ));
    }
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Raw accuracy, or `max(acc, 1 − acc)` for two-class problems where the
/// target label assignment is arbitrary.
pub fn corrected_accuracy(pred: &[usize], truth: &[usize], num_classes: usize) -> Result<f64> {
    let acc = accuracy(pred, truth)?;
    Ok(correct_two_class(acc, num_classes))
}

pub fn correct_two_class(acc: f64, num_classes: usize) -> f64 {
    if num_classes == 2 {
        acc.max(1.0 - acc)
    } else {
        acc
    }
}

/// Counts indexed `[truth][prediction]`.
pub fn confusion_matrix(pred: &[usize], truth: &[usize], num_classes: usize) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0; num_classes]; num_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        m[t][p] += 1;
    }
    m
}

/// Share of predictions landing in the `k` most predicted classes.
pub fn top_k_prediction_mass(confusion: &[Vec<usize>], k: usize) -> f64 {
    let n = confusion.len();
    let mut cols: Vec<usize> = (0..n)
        .map(|j| confusion.iter().map(|row| row[j]).sum())
        .collect();
    let total: usize = cols.iter().sum();
    if total == 0 {
        return 0.0;
    }
    cols.sort_unstable_by(|a, b| b.cmp(a));
    cols.iter().take(k).sum::<usize>() as f64 / total as f64
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
