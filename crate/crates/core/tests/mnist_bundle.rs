//! Integrity checks for the bundled MNIST files.

use std::path::PathBuf;

use mct_core::data::mnist::load_mnist_idx;
use mct_core::data::Split;

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
}

#[test]
fn bundle_is_canonical_mnist() {
    let dir = data_dir();
    let train = load_mnist_idx(
        &dir.join("train-images-idx3-ubyte.gz"),
        &dir.join("train-labels-idx1-ubyte.gz"),
        Split::Train,
    )
    .unwrap();
    let test = load_mnist_idx(
        &dir.join("t10k-images-idx3-ubyte.gz"),
        &dir.join("t10k-labels-idx1-ubyte.gz"),
        Split::Test,
    )
    .unwrap();

    assert_eq!(train.len(), 60000);
    assert_eq!(test.len(), 10000);
    assert_eq!(train.k(), 10);
    assert_eq!(train.images().shape(), &[60000, 1, 28, 28]);
    assert_eq!(test.images().shape(), &[10000, 1, 28, 28]);

    // pixels are scaled bytes
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in train.images().row(0) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    assert!(lo >= 0.0 && hi <= 1.0 && hi > 0.5);

    // canonical per-digit label histograms
    let hist = |labels: &[usize]| {
        let mut counts = vec![0usize; 10];
        for &l in labels {
            counts[l] += 1;
        }
        counts
    };
    assert_eq!(
        hist(train.given_labels()),
        vec![5923, 6742, 5958, 6131, 5842, 5421, 5918, 6265, 5851, 5949]
    );
    assert_eq!(
        hist(test.given_labels()),
        vec![980, 1135, 1032, 1010, 982, 892, 958, 1028, 974, 1009]
    );
}
