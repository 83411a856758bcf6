//! Unweighted accuracy: mean over classes of per-class recall.

use super::TrainError;

fn per_class_counts(
    predictions: &[usize],
    labels: &[usize],
    classes: usize,
) -> (Vec<usize>, Vec<usize>) {
    let mut hits = vec![0usize; classes];
    let mut totals = vec![0usize; classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        totals[l] += 1;
        if p == l {
            hits[l] += 1;
        }
    }
    (hits, totals)
}

/// Macro-averaged per-class recall. Errors if a class is absent from the
/// labels.
pub fn unweighted_accuracy(
    predictions: &[usize],
    labels: &[usize],
    classes: usize,
) -> Result<f64, TrainError> {
    if predictions.len() != labels.len() {
        return Err(TrainError::Contract(format!(
            "prediction/label length mismatch: {} vs {}",
            predictions.len(),
            labels.len()
        )));
    }
    let (hits, totals) = per_class_counts(predictions, labels, classes);
    if let Some(c) = totals.iter().position(|&t| t == 0) {
        return Err(TrainError::ClassAbsent { class: c });
    }
    let sum: f64 = hits
        .iter()
        .zip(&totals)
        .map(|(&h, &t)| h as f64 / t as f64)
        .sum();
    Ok(sum / classes as f64)
}

/// As `unweighted_accuracy`, but averages over the classes present in the
/// labels and reports the absent ones instead of failing.
pub fn unweighted_accuracy_lenient(
    predictions: &[usize],
    labels: &[usize],
    classes: usize,
) -> (f64, Vec<usize>) {
    let (hits, totals) = per_class_counts(predictions, labels, classes);
    let absent: Vec<usize> = (0..classes).filter(|&c| totals[c] == 0).collect();
    let present = classes - absent.len();
    if present == 0 {
        return (0.0, absent);
    }
    let sum: f64 = hits
        .iter()
        .zip(&totals)
        .filter(|(_, &t)| t > 0)
        .map(|(&h, &t)| h as f64 / t as f64)
        .sum();
    (sum / present as f64, absent)
}
