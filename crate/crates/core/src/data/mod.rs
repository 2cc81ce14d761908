//! Dataset ingestion and label-noise injection.
//!
//! A [`Dataset`] carries the images, the (possibly corrupted) labels handed
//! to training, and the hidden ground truth. Ground truth sits behind an
//! access counter so tests can prove that training code paths never read it;
//! only evaluation and metrics code may go through [`Dataset::truth`].

pub mod blobs;
pub mod cifar;
pub mod mnist;
pub mod noise;

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Test,
}

/// Hidden per-sample ground truth.
#[derive(Debug)]
struct Truth {
    labels: Vec<usize>,
    corrupted: Vec<bool>,
    accesses: AtomicU64,
}

/// A counted view of the ground truth.
pub struct TruthView<'a> {
    labels: &'a [usize],
    corrupted: &'a [bool],
}

impl TruthView<'_> {
    pub fn labels(&self) -> &[usize] {
        self.labels
    }

    pub fn corrupted(&self) -> &[bool] {
        self.corrupted
    }
}

#[derive(Debug)]
pub struct Dataset {
    images: Tensor,
    given: Vec<usize>,
    truth: Truth,
    k: usize,
    split: Split,
}

impl Dataset {
    /// Build a clean dataset: given labels equal the true labels.
    pub fn new(images: Tensor, labels: Vec<usize>, k: usize, split: Split) -> Result<Self> {
        if images.rows() != labels.len() {
            return Err(Error::RejectedInput(format!(
                "{} images but {} labels",
                images.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::RejectedInput(format!(
                "label {bad} out of range for K={k}"
            )));
        }
        let n = labels.len();
        Ok(Dataset {
            images,
            given: labels.clone(),
            truth: Truth {
                labels,
                corrupted: vec![false; n],
                accesses: AtomicU64::new(0),
            },
            k,
            split,
        })
    }

    /// Rebuild with new given labels; corruption flags are derived so that
    /// `corrupted[i] <=> given[i] != true[i]` always holds.
    pub(crate) fn with_given_labels(mut self, given: Vec<usize>) -> Result<Self> {
        if given.len() != self.truth.labels.len() {
            return Err(Error::RejectedInput("label count changed".into()));
        }
        if let Some(&bad) = given.iter().find(|&&l| l >= self.k) {
            return Err(Error::RejectedInput(format!(
                "label {bad} out of range for K={}",
                self.k
            )));
        }
        self.truth.corrupted = given
            .iter()
            .zip(&self.truth.labels)
            .map(|(g, t)| g != t)
            .collect();
        self.given = given;
        Ok(self)
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    /// Labels visible to training.
    pub fn given_labels(&self) -> &[usize] {
        &self.given
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.given.len()
    }

    pub fn is_empty(&self) -> bool {
        self.given.is_empty()
    }

    pub fn split(&self) -> Split {
        self.split
    }

    /// Shape of a single sample (without the batch dimension).
    pub fn sample_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    /// Counted access to the hidden ground truth. Training code must never
    /// call this; the counter is how tests enforce that.
    pub fn truth(&self) -> TruthView<'_> {
        self.truth.accesses.fetch_add(1, Ordering::Relaxed);
        TruthView {
            labels: &self.truth.labels,
            corrupted: &self.truth.corrupted,
        }
    }

    /// Number of times [`Dataset::truth`] has been called.
    pub fn truth_accesses(&self) -> u64 {
        self.truth.accesses.load(Ordering::Relaxed)
    }

    /// Fraction of samples whose given label differs from the truth.
    /// Metrics-side helper; counts as a truth access.
    pub fn corrupted_fraction(&self) -> f64 {
        let view = self.truth();
        if view.corrupted.is_empty() {
            return 0.0;
        }
        view.corrupted.iter().filter(|&&c| c).count() as f64 / view.corrupted.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        let images = Tensor::zeros(vec![4, 2]);
        Dataset::new(images, vec![0, 1, 2, 0], 3, Split::Train).unwrap()
    }

    #[test]
    fn clean_dataset_has_no_corruption() {
        let d = tiny();
        assert_eq!(d.truth().corrupted(), &[false; 4]);
        assert_eq!(d.given_labels(), d.truth().labels());
    }

    #[test]
    fn with_given_labels_syncs_flags() {
        let d = tiny().with_given_labels(vec![0, 2, 2, 1]).unwrap();
        assert_eq!(d.truth().corrupted(), &[false, true, false, true]);
    }

    #[test]
    fn truth_access_is_counted() {
        let d = tiny();
        assert_eq!(d.truth_accesses(), 0);
        let _ = d.given_labels();
        let _ = d.images();
        assert_eq!(d.truth_accesses(), 0);
        let _ = d.truth();
        let _ = d.truth();
        assert_eq!(d.truth_accesses(), 2);
    }

    #[test]
    fn out_of_range_label_rejected() {
        let images = Tensor::zeros(vec![2, 2]);
        assert!(Dataset::new(images, vec![0, 3], 3, Split::Train).is_err());
    }
}
