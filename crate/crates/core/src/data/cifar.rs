//! CIFAR-10/100 binary batch reader.
//!
//! CIFAR-10 records are 1 label byte + 3072 image bytes; CIFAR-100 records
//! carry 2 label bytes (coarse, fine) + 3072 image bytes. Images are
//! channel-major 32x32 RGB, scaled here to [0, 1].

use std::path::{Path, PathBuf};

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CifarVariant {
    Cifar10,
    Cifar100,
}

impl CifarVariant {
    pub fn k(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 10,
            CifarVariant::Cifar100 => 100,
        }
    }

    fn label_bytes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 1,
            CifarVariant::Cifar100 => 2,
        }
    }

    fn record_len(self) -> usize {
        self.label_bytes() + 3 * 32 * 32
    }
}

/// Load one or more CIFAR binary batch files into a single dataset.
pub fn load_cifar_binary(
    paths: &[PathBuf],
    variant: CifarVariant,
    split: Split,
) -> Result<Dataset> {
    if paths.is_empty() {
        return Err(Error::RejectedInput("no CIFAR batch files given".into()));
    }
    let record = variant.record_len();
    let mut pixels: Vec<f64> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for path in paths {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.is_empty() {
            return Err(Error::format(path, 0, "empty file"));
        }
        if bytes.len() % record != 0 {
            return Err(Error::format(
                path,
                (bytes.len() - bytes.len() % record) as u64,
                format!(
                    "file size {} is not a multiple of the {record}-byte record length",
                    bytes.len()
                ),
            ));
        }
        for (i, rec) in bytes.chunks_exact(record).enumerate() {
            // CIFAR-100: first byte is the coarse label, second the fine one.
            let label = rec[variant.label_bytes() - 1] as usize;
            if label >= variant.k() {
                return Err(Error::format(
                    path,
                    (i * record) as u64,
                    format!("label {label} out of range for K={}", variant.k()),
                ));
            }
            labels.push(label);
            pixels.extend(rec[variant.label_bytes()..].iter().map(|&b| f64::from(b) / 255.0));
        }
    }
    let n = labels.len();
    Dataset::new(
        Tensor::new(vec![n, 3, 32, 32], pixels)?,
        labels,
        variant.k(),
        split,
    )
}

/// Convenience for the standard file layout under a directory.
pub fn cifar10_train_paths(dir: &Path) -> Vec<PathBuf> {
    (1..=5)
        .map(|i| dir.join(format!("data_batch_{i}.bin")))
        .collect()
}

pub fn cifar10_test_paths(dir: &Path) -> Vec<PathBuf> {
    vec![dir.join("test_batch.bin")]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record10(label: u8, fill: u8) -> Vec<u8> {
        let mut r = vec![label];
        r.extend(std::iter::repeat(fill).take(3072));
        r
    }

    #[test]
    fn loads_cifar10_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data_batch_1.bin");
        let mut bytes = record10(3, 255);
        bytes.extend(record10(7, 0));
        std::fs::write(&path, bytes).unwrap();
        let d = load_cifar_binary(&[path], CifarVariant::Cifar10, Split::Train).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.k(), 10);
        assert_eq!(d.given_labels(), &[3, 7]);
        assert_eq!(d.images().shape(), &[2, 3, 32, 32]);
        assert_eq!(d.images().row(0)[0], 1.0);
        assert_eq!(d.images().row(1)[0], 0.0);
    }

    #[test]
    fn loads_cifar100_fine_labels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.bin");
        let mut bytes = vec![11u8, 42u8]; // coarse 11, fine 42
        bytes.extend(std::iter::repeat(128u8).take(3072));
        std::fs::write(&path, bytes).unwrap();
        let d = load_cifar_binary(&[path], CifarVariant::Cifar100, Split::Train).unwrap();
        assert_eq!(d.k(), 100);
        assert_eq!(d.given_labels(), &[42]);
    }

    #[test]
    fn partial_record_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data_batch_1.bin");
        let mut bytes = record10(1, 9);
        bytes.extend([0u8; 100]); // trailing partial record
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            load_cifar_binary(&[path], CifarVariant::Cifar10, Split::Train),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn empty_file_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.bin");
        std::fs::write(&path, []).unwrap();
        match load_cifar_binary(&[path], CifarVariant::Cifar10, Split::Train) {
            Err(Error::Format { reason, .. }) => assert!(reason.contains("empty")),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn missing_file_is_io_error_with_path() {
        let missing = PathBuf::from("/nonexistent/batch.bin");
        match load_cifar_binary(&[missing.clone()], CifarVariant::Cifar10, Split::Train) {
            Err(Error::Io { path, .. }) => assert_eq!(path, missing),
            other => panic!("expected io error, got {other:?}"),
        }
    }
}
