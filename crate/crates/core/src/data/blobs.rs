//! Synthetic Gaussian-blob datasets, their rasterized form, and the NLBL
//! on-disk format.
//!
//! Blobs are the desk-scale verification substrate: K well-separated
//! Gaussian clusters in `dim` dimensions whose hidden structure a classifier
//! can provably recover (a nearest-centroid oracle must score ~100% when
//! `separation >> noise_std`).
//!
//! The rendered variant rasterizes 2-d blob samples into small grayscale
//! images: the sample position becomes a Gaussian bump, and the two top rows
//! carry a left-to-right intensity ramp. The ramp is the orientation cue
//! that makes the rotation pretext task well-posed; without it a rotated
//! blob image is indistinguishable from an unrotated one of another class.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::rng::{stream, streams};
use crate::tensor::Tensor;

/// Seeded cluster centers with pairwise distance >= separation.
#[derive(Debug, Clone)]
pub struct BlobGenerator {
    k: usize,
    dim: usize,
    /// `[k, dim]`.
    centers: Tensor,
}

impl BlobGenerator {
    pub fn new(k: usize, dim: usize, separation: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        if k < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {k}")));
        }
        if dim < 2 {
            return Err(Error::Config(format!("need dim >= 2, got {dim}")));
        }
        if separation <= 0.0 {
            return Err(Error::Config(format!(
                "separation must be positive, got {separation}"
            )));
        }
        // Box wide enough that k balls of radius separation/2 fit loosely.
        let side = separation * (1.8 * (k as f64).powf(1.0 / dim as f64) + 2.0);
        if !side.is_finite() {
            return Err(Error::Config(format!(
                "separation {separation} is infeasible for k={k}, dim={dim}"
            )));
        }
        let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
        let mut attempts = 0usize;
        let max_attempts = 200 * k;
        while centers.len() < k {
            if attempts >= max_attempts {
                return Err(Error::Config(format!(
                    "could not place {k} centers with separation {separation} in dim {dim} \
                     after {max_attempts} attempts"
                )));
            }
            attempts += 1;
            let cand: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.0..side)).collect();
            let ok = centers.iter().all(|c| {
                let d2: f64 = c.iter().zip(&cand).map(|(a, b)| (a - b) * (a - b)).sum();
                d2.sqrt() >= separation
            });
            if ok {
                centers.push(cand);
            }
        }
        let flat: Vec<f64> = centers.into_iter().flatten().collect();
        Ok(BlobGenerator {
            k,
            dim,
            centers: Tensor::new(vec![k, dim], flat)?,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn centers(&self) -> &Tensor {
        &self.centers
    }

    /// Draw `n_per_class` points per class: center + N(0, noise_std) noise.
    pub fn sample(
        &self,
        n_per_class: usize,
        noise_std: f64,
        split: Split,
        rng: &mut ChaCha8Rng,
    ) -> Result<Dataset> {
        let n = n_per_class * self.k;
        let mut data = Vec::with_capacity(n * self.dim);
        let mut labels = Vec::with_capacity(n);
        for class in 0..self.k {
            let c = self.centers.row(class);
            for _ in 0..n_per_class {
                for &cv in c {
                    let z: f64 = StandardNormal.sample(rng);
                    data.push(cv + noise_std * z);
                }
                labels.push(class);
            }
        }
        Dataset::new(Tensor::new(vec![n, self.dim], data)?, labels, self.k, split)
    }
}

/// One-shot blob dataset. Centers come from the `data` stream of `seed`,
/// samples from a split-tagged child stream, so a train/test pair built with
/// the same seed shares centers but not noise.
pub fn make_blobs(
    k: usize,
    n_per_class: usize,
    dim: usize,
    separation: f64,
    noise_std: f64,
    seed: u64,
    split: Split,
) -> Result<Dataset> {
    let mut center_rng = stream(seed, streams::DATA);
    let generator = BlobGenerator::new(k, dim, separation, &mut center_rng)?;
    let stream_name = match split {
        Split::Train => "blobs-train",
        Split::Test => "blobs-test",
    };
    let mut sample_rng = stream(seed, stream_name);
    generator.sample(n_per_class, noise_std, split, &mut sample_rng)
}

/// Rasterization geometry for rendered blobs.
pub const RENDER_IMG: usize = 16;
const RENDER_MARGIN: f64 = 3.0;
const BUMP_SIGMA: f64 = 1.3;
const CUE_ROWS: usize = 2;

/// Rasterize 2-d blob samples into `[n, 1, img, img]` grayscale images with
/// an orientation-cue ramp across the top rows.
pub fn make_rendered_blobs(
    k: usize,
    n_per_class: usize,
    separation: f64,
    noise_std: f64,
    pixel_noise: f64,
    seed: u64,
    split: Split,
) -> Result<Dataset> {
    let img = RENDER_IMG;
    let mut center_rng = stream(seed, streams::DATA);
    let generator = BlobGenerator::new(k, 2, separation, &mut center_rng)?;
    let stream_name = match split {
        Split::Train => "rblobs-train",
        Split::Test => "rblobs-test",
    };
    let mut rng = stream(seed, stream_name);
    let flat = generator.sample(n_per_class, noise_std, split, &mut rng)?;

    // Map blob space onto the pixel box [margin, img-1-margin]^2. The box
    // bounds come from the centers plus a 3-sigma noise allowance so that
    // almost every bump lands inside the frame.
    let allow = 3.0 * noise_std;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in generator.centers().data() {
        lo = lo.min(v - allow);
        hi = hi.max(v + allow);
    }
    let span = (hi - lo).max(1e-9);
    let px_span = img as f64 - 1.0 - 2.0 * RENDER_MARGIN;
    let to_px = |v: f64| RENDER_MARGIN + (v - lo).clamp(0.0, span) / span * px_span;

    let n = flat.len();
    let mut data = vec![0.0f64; n * img * img];
    for s in 0..n {
        let coords = flat.images().row(s);
        let (cx, cy) = (to_px(coords[0]), to_px(coords[1]));
        let pix = &mut data[s * img * img..(s + 1) * img * img];
        for y in 0..img {
            for x in 0..img {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                pix[y * img + x] = (-d2 / (2.0 * BUMP_SIGMA * BUMP_SIGMA)).exp();
            }
        }
        // orientation cue: top rows hold a left-to-right ramp
        for y in 0..CUE_ROWS {
            for x in 0..img {
                pix[y * img + x] = 0.3 + 0.6 * x as f64 / (img as f64 - 1.0);
            }
        }
        if pixel_noise > 0.0 {
            for v in pix.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = (*v + pixel_noise * z).clamp(0.0, 1.0);
            }
        }
    }
    Dataset::new(
        Tensor::new(vec![n, 1, img, img], data)?,
        flat.given_labels().to_vec(),
        k,
        split,
    )
}

const NLBL_MAGIC: &[u8; 4] = b"NLBL";
const NLBL_VERSION: u8 = 1;

/// Write a synthetic dataset: magic "NLBL", version byte, K, n, dim as
/// little-endian u32, n rows of dim f64 values, then n true labels and
/// n given labels as u32.
pub fn save_nlbl(dataset: &Dataset, path: &Path) -> Result<()> {
    let n = dataset.len();
    let dim = dataset.images().row_len();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut write = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    write(NLBL_MAGIC)?;
    write(&[NLBL_VERSION])?;
    write(&(dataset.k() as u32).to_le_bytes())?;
    write(&(n as u32).to_le_bytes())?;
    write(&(dim as u32).to_le_bytes())?;
    for v in dataset.images().data() {
        write(&v.to_le_bytes())?;
    }
    let truth = dataset.truth();
    for &t in truth.labels() {
        write(&(t as u32).to_le_bytes())?;
    }
    for &g in dataset.given_labels() {
        write(&(g as u32).to_le_bytes())?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_nlbl(path: &Path, split: Split) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut offset = 0u64;
    let mut take = |buf: &mut [u8], what: &str| -> Result<()> {
        r.read_exact(buf)
            .map_err(|_| Error::format(path, offset, format!("truncated while reading {what}")))?;
        offset += buf.len() as u64;
        Ok(())
    };

    let mut magic = [0u8; 4];
    take(&mut magic, "magic")?;
    if &magic != NLBL_MAGIC {
        return Err(Error::format(path, 0, format!("bad magic {magic:02x?}")));
    }
    let mut version = [0u8; 1];
    take(&mut version, "version")?;
    if version[0] != NLBL_VERSION {
        return Err(Error::format(path, 4, format!("unsupported version {}", version[0])));
    }
    let mut u32buf = [0u8; 4];
    take(&mut u32buf, "K")?;
    let k = u32::from_le_bytes(u32buf) as usize;
    take(&mut u32buf, "n")?;
    let n = u32::from_le_bytes(u32buf) as usize;
    take(&mut u32buf, "dim")?;
    let dim = u32::from_le_bytes(u32buf) as usize;

    let mut data = vec![0.0f64; n * dim];
    let mut f64buf = [0u8; 8];
    for v in data.iter_mut() {
        take(&mut f64buf, "row data")?;
        *v = f64::from_le_bytes(f64buf);
    }
    let mut read_labels = |what: &str| -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            take(&mut u32buf, what)?;
            out.push(u32::from_le_bytes(u32buf) as usize);
        }
        Ok(out)
    };
    let true_labels = read_labels("true labels")?;
    let given = read_labels("given labels")?;

    Dataset::new(Tensor::new(vec![n, dim], data)?, true_labels, k, split)?
        .with_given_labels(given)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent oracle: classify by the nearest true class centroid
    /// computed directly from another sample of the generator.
    fn nearest_centroid_error(train: &Dataset, test: &Dataset, k: usize) -> f64 {
        let dim = train.images().row_len();
        let mut centroids = vec![vec![0.0f64; dim]; k];
        let mut counts = vec![0usize; k];
        for i in 0..train.len() {
            let c = train.given_labels()[i];
            counts[c] += 1;
            for (acc, v) in centroids[c].iter_mut().zip(train.images().row(i)) {
                *acc += v;
            }
        }
        for (c, cnt) in centroids.iter_mut().zip(&counts) {
            for v in c.iter_mut() {
                *v /= (*cnt).max(1) as f64;
            }
        }
        let mut wrong = 0usize;
        for i in 0..test.len() {
            let x = test.images().row(i);
            let best = (0..k)
                .min_by(|&a, &b| {
                    let da: f64 = centroids[a].iter().zip(x).map(|(c, v)| (c - v) * (c - v)).sum();
                    let db: f64 = centroids[b].iter().zip(x).map(|(c, v)| (c - v) * (c - v)).sum();
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
            if best != test.given_labels()[i] {
                wrong += 1;
            }
        }
        wrong as f64 / test.len() as f64
    }

    #[test]
    fn widely_separated_blobs_are_trivially_classifiable() {
        let train = make_blobs(2, 100, 2, 50.0, 1.0, 3, Split::Train).unwrap();
        let test = make_blobs(2, 100, 2, 50.0, 1.0, 3, Split::Test).unwrap();
        assert_eq!(nearest_centroid_error(&train, &test, 2), 0.0);
    }

    #[test]
    fn same_seed_same_dataset() {
        let a = make_blobs(3, 20, 4, 8.0, 1.0, 11, Split::Train).unwrap();
        let b = make_blobs(3, 20, 4, 8.0, 1.0, 11, Split::Train).unwrap();
        assert_eq!(a.images(), b.images());
        assert_eq!(a.given_labels(), b.given_labels());
        let c = make_blobs(3, 20, 4, 8.0, 1.0, 12, Split::Train).unwrap();
        assert_ne!(a.images().data(), c.images().data());
    }

    #[test]
    fn five_class_blobs_held_out_error_below_one_percent() {
        let train = make_blobs(5, 400, 10, 10.0, 1.0, 42, Split::Train).unwrap();
        let test = make_blobs(5, 200, 10, 10.0, 1.0, 42, Split::Test).unwrap();
        let err = nearest_centroid_error(&train, &test, 5);
        assert!(err < 0.01, "held-out nearest-centroid error {err}");
    }

    #[test]
    fn infeasible_separation_is_config_error() {
        let mut rng = stream(0, streams::DATA);
        let r = BlobGenerator::new(100, 2, 1e308, &mut rng);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn rendered_blobs_have_cue_and_bump() {
        let d = make_rendered_blobs(4, 5, 6.0, 0.5, 0.0, 9, Split::Train).unwrap();
        assert_eq!(d.images().shape(), &[20, 1, RENDER_IMG, RENDER_IMG]);
        let img = d.images().row(0);
        // ramp increases along the top row
        assert!(img[0] < img[RENDER_IMG - 1]);
        // some pixel below the cue rows carries the bump
        let below: f64 = img[CUE_ROWS * RENDER_IMG..].iter().cloned().fold(0.0, f64::max);
        assert!(below > 0.5, "bump max {below}");
    }

    #[test]
    fn nlbl_round_trip() {
        let d = make_blobs(3, 10, 4, 8.0, 1.0, 21, Split::Train).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("blobs.nlbl");
        save_nlbl(&d, &path).unwrap();
        let back = load_nlbl(&path, Split::Train).unwrap();
        assert_eq!(back.images(), d.images());
        assert_eq!(back.given_labels(), d.given_labels());
        assert_eq!(back.truth().labels(), d.truth().labels());
        assert_eq!(back.k(), 3);
    }

    #[test]
    fn nlbl_rejects_bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.nlbl");
        std::fs::write(&path, b"XXXX rest").unwrap();
        assert!(matches!(
            load_nlbl(&path, Split::Train),
            Err(Error::Format { .. })
        ));

        let d = make_blobs(2, 4, 2, 8.0, 1.0, 1, Split::Train).unwrap();
        let full = dir.path().join("full.nlbl");
        save_nlbl(&d, &full).unwrap();
        let bytes = std::fs::read(&full).unwrap();
        let cut = dir.path().join("cut.nlbl");
        std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
        match load_nlbl(&cut, Split::Train) {
            Err(Error::Format { offset, .. }) => assert!(offset > 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }
}
