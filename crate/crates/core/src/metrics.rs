//! Evaluation and truth-side metrics.
//!
//! Everything here may read hidden truth; training code never calls into
//! this module except for [`accuracy`], which only touches the given labels
//! (equal to the truth on the test split by construction).

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::pipeline::{RelabelResult, RunTrace};
use crate::schedule::LossSplit;

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Classification accuracy against the dataset's given labels, evaluated in
/// fixed-size chunks for a deterministic pass.
pub fn accuracy(net: &crate::nn::Network, dataset: &Dataset) -> Result<f64> {
    const CHUNK: usize = 256;
    let n = dataset.len();
    let labels = dataset.given_labels();
    let mut correct = 0usize;
    for start in (0..n).step_by(CHUNK) {
        let idx: Vec<usize> = (start..(start + CHUNK).min(n)).collect();
        let (logits, _) = net.forward(&dataset.images().select_rows(&idx))?;
        for (row, &i) in idx.iter().enumerate() {
            if argmax(logits.row(row)) == labels[i] {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / n.max(1) as f64)
}

/// Arithmetic mean of the last `k` history entries.
pub fn avg_last_k(history: &[f64], k: usize) -> Result<f64> {
    if history.len() < k || k == 0 {
        return Err(Error::RejectedInput(format!(
            "need at least {k} entries, have {}",
            history.len()
        )));
    }
    Ok(history[history.len() - k..].iter().sum::<f64>() / k as f64)
}

/// Fraction of (index, label-used) pairs whose label matches the hidden
/// truth. For co-teaching selections with given labels this is the
/// clean fraction of the selection.
pub fn clean_fraction(pairs: &[(usize, usize)], dataset: &Dataset) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let truth = dataset.truth();
    let good = pairs
        .iter()
        .filter(|&&(i, label)| truth.labels()[i] == label)
        .count();
    good as f64 / pairs.len() as f64
}

/// Fraction of small-loss indices whose given label is uncorrupted.
pub fn small_loss_clean_fraction(split: &LossSplit, dataset: &Dataset) -> f64 {
    if split.small.is_empty() {
        return 0.0;
    }
    let truth = dataset.truth();
    let clean = split
        .small
        .iter()
        .filter(|&&i| !truth.corrupted()[i])
        .count();
    clean as f64 / split.small.len() as f64
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct RelabelQuality {
    /// Among kept pseudo-labels, the fraction matching the hidden truth.
    pub precision: f64,
    /// Correctly re-labeled kept samples over all large-loss samples.
    pub recall: f64,
    pub kept: usize,
    pub large: usize,
}

pub fn relabel_quality(
    split: &LossSplit,
    relabeling: &RelabelResult,
    dataset: &Dataset,
) -> RelabelQuality {
    let truth = dataset.truth();
    let mut kept = 0usize;
    let mut kept_correct = 0usize;
    for (pos, &i) in split.large.iter().enumerate() {
        if relabeling.kept[pos] {
            kept += 1;
            if relabeling.pseudo[pos] == truth.labels()[i] {
                kept_correct += 1;
            }
        }
    }
    RelabelQuality {
        precision: kept_correct as f64 / kept.max(1) as f64,
        recall: kept_correct as f64 / split.large.len().max(1) as f64,
        kept,
        large: split.large.len(),
    }
}

/// Per-epoch clean fractions of the reported network's selections.
pub fn per_epoch_clean_fractions(trace: &RunTrace, train: &Dataset) -> Vec<f64> {
    trace
        .epochs
        .iter()
        .map(|e| clean_fraction(&e.selected, train))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;
    use crate::tensor::Tensor;

    #[test]
    fn avg_last_k_examples() {
        assert_eq!(avg_last_k(&[1.0, 2.0, 3.0, 4.0], 2).unwrap(), 3.5);
        assert_eq!(avg_last_k(&[5.0; 7], 3).unwrap(), 5.0);
        assert_eq!(avg_last_k(&[1.0, 2.0, 3.0], 3).unwrap(), 2.0);
        assert!(avg_last_k(&[1.0], 2).is_err());
    }

    #[test]
    fn clean_fraction_counts_matches() {
        let d = Dataset::new(Tensor::zeros(vec![4, 1]), vec![0, 1, 0, 1], 2, Split::Train)
            .unwrap()
            .with_given_labels(vec![0, 0, 0, 1])
            .unwrap();
        // pairs use given labels; index 1 is corrupted
        let pairs = vec![(0, 0), (1, 0), (3, 1)];
        let f = clean_fraction(&pairs, &d);
        assert!((f - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn argmax_takes_first_on_ties() {
        assert_eq!(argmax(&[0.5, 0.5, 0.1]), 0);
        assert_eq!(argmax(&[0.1, 0.9, 0.9]), 1);
    }
}
