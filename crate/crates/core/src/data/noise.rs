//! Label-noise transition matrices and corruption sampling.
//!
//! `P[i][j]` is the probability that a sample whose true class is `i` is
//! observed with label `j`. Symmetric flipping spreads the corruption mass
//! `eps` evenly over the other K-1 classes; pair flipping sends all of it to
//! the cyclic successor `(i+1) mod K`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    Symmetric,
    Pairflip,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseMatrix {
    kind: NoiseKind,
    epsilon: f64,
    k: usize,
    /// Row-major K x K.
    p: Vec<f64>,
}

pub fn build_noise_matrix(kind: NoiseKind, epsilon: f64, k: usize) -> Result<NoiseMatrix> {
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::Config(format!(
            "noise rate must be in [0, 1), got {epsilon}"
        )));
    }
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 classes, got {k}")));
    }
    let mut p = vec![0.0; k * k];
    match kind {
        NoiseKind::Symmetric => {
            let off = epsilon / (k - 1) as f64;
            for i in 0..k {
                for j in 0..k {
                    p[i * k + j] = if i == j { 1.0 - epsilon } else { off };
                }
            }
        }
        NoiseKind::Pairflip => {
            for i in 0..k {
                p[i * k + i] = 1.0 - epsilon;
                p[i * k + (i + 1) % k] += epsilon;
            }
        }
    }
    Ok(NoiseMatrix {
        kind,
        epsilon,
        k,
        p,
    })
}

impl NoiseMatrix {
    pub fn kind(&self) -> NoiseKind {
        self.kind
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.p[i * self.k..(i + 1) * self.k]
    }

    pub fn prob(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.k + j]
    }

    /// Draw an observed label for true class `i`.
    fn sample_row(&self, i: usize, rng: &mut ChaCha8Rng) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (j, pj) in self.row(i).iter().enumerate() {
            acc += pj;
            if u < acc {
                return j;
            }
        }
        self.k - 1 // guard against cumulative rounding
    }
}

/// Resample the given labels of a train split from `P` row by row.
/// True labels and images are untouched; corruption flags are re-derived.
pub fn corrupt_labels(dataset: Dataset, p: &NoiseMatrix, rng: &mut ChaCha8Rng) -> Result<Dataset> {
    if dataset.split() != Split::Train {
        return Err(Error::RejectedInput(
            "label corruption applies to the train split only".into(),
        ));
    }
    if dataset.k() != p.k() {
        return Err(Error::RejectedInput(format!(
            "dataset has K={} but noise matrix has K={}",
            dataset.k(),
            p.k()
        )));
    }
    let given: Vec<usize> = dataset
        .truth()
        .labels()
        .iter()
        .map(|&t| p.sample_row(t, rng))
        .collect();
    dataset.with_given_labels(given)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, streams};
    use crate::tensor::Tensor;
    use approx::assert_abs_diff_eq;

    #[test]
    fn symmetric_half_k10() {
        let m = build_noise_matrix(NoiseKind::Symmetric, 0.5, 10).unwrap();
        for i in 0..10 {
            assert_abs_diff_eq!(m.prob(i, i), 0.5, epsilon = 1e-15);
            for j in 0..10 {
                if j != i {
                    assert_abs_diff_eq!(m.prob(i, j), 0.5 / 9.0, epsilon = 1e-15);
                }
            }
        }
    }

    #[test]
    fn pairflip_45_k10() {
        let m = build_noise_matrix(NoiseKind::Pairflip, 0.45, 10).unwrap();
        for i in 0..10 {
            assert_abs_diff_eq!(m.prob(i, i), 0.55, epsilon = 1e-15);
            assert_abs_diff_eq!(m.prob(i, (i + 1) % 10), 0.45, epsilon = 1e-15);
        }
    }

    #[test]
    fn zero_rate_is_identity() {
        for kind in [NoiseKind::Symmetric, NoiseKind::Pairflip] {
            let m = build_noise_matrix(kind, 0.0, 5).unwrap();
            for i in 0..5 {
                for j in 0..5 {
                    assert_eq!(m.prob(i, j), if i == j { 1.0 } else { 0.0 });
                }
            }
        }
    }

    #[test]
    fn rows_sum_to_one_across_k_and_eps() {
        for k in [2usize, 3, 10, 37, 100] {
            for eps in [0.0, 0.2, 0.45, 0.5, 0.99] {
                for kind in [NoiseKind::Symmetric, NoiseKind::Pairflip] {
                    let m = build_noise_matrix(kind, eps, k).unwrap();
                    for i in 0..k {
                        let s: f64 = m.row(i).iter().sum();
                        assert_abs_diff_eq!(s, 1.0, epsilon = 1e-12);
                        assert!(m.row(i).iter().all(|&v| v >= 0.0));
                    }
                }
            }
        }
    }

    #[test]
    fn invalid_rate_rejected() {
        assert!(build_noise_matrix(NoiseKind::Symmetric, 1.0, 10).is_err());
        assert!(build_noise_matrix(NoiseKind::Symmetric, -0.1, 10).is_err());
    }

    fn labeled_dataset(n: usize, k: usize, split: Split) -> Dataset {
        let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
        Dataset::new(Tensor::zeros(vec![n, 1]), labels, k, split).unwrap()
    }

    #[test]
    fn zero_eps_leaves_labels_untouched() {
        let d = labeled_dataset(1000, 10, Split::Train);
        let m = build_noise_matrix(NoiseKind::Symmetric, 0.0, 10).unwrap();
        let mut rng = stream(1, streams::NOISE);
        let d = corrupt_labels(d, &m, &mut rng).unwrap();
        assert_eq!(d.given_labels(), d.truth().labels());
        assert!(d.truth().corrupted().iter().all(|&c| !c));
    }

    #[test]
    fn corruption_preserves_truth_and_images() {
        let d = labeled_dataset(500, 5, Split::Train);
        let images_before = d.images().clone();
        let truth_before = d.truth().labels().to_vec();
        let m = build_noise_matrix(NoiseKind::Pairflip, 0.45, 5).unwrap();
        let mut rng = stream(2, streams::NOISE);
        let d = corrupt_labels(d, &m, &mut rng).unwrap();
        assert_eq!(d.images(), &images_before);
        assert_eq!(d.truth().labels(), &truth_before[..]);
        // flags match the definition
        for i in 0..d.len() {
            assert_eq!(
                d.truth().corrupted()[i],
                d.given_labels()[i] != d.truth().labels()[i]
            );
        }
    }

    #[test]
    fn corruption_is_deterministic_per_seed() {
        let m = build_noise_matrix(NoiseKind::Symmetric, 0.5, 10).unwrap();
        let run = |seed| {
            let d = labeled_dataset(2000, 10, Split::Train);
            let mut rng = stream(seed, streams::NOISE);
            corrupt_labels(d, &m, &mut rng).unwrap().given_labels().to_vec()
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8));
    }

    #[test]
    fn test_split_rejected() {
        let d = labeled_dataset(10, 5, Split::Test);
        let m = build_noise_matrix(NoiseKind::Symmetric, 0.5, 5).unwrap();
        let mut rng = stream(1, streams::NOISE);
        assert!(corrupt_labels(d, &m, &mut rng).is_err());
    }
}
