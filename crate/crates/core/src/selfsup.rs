//! Rotation-prediction pretext pretraining and early-layer weight transfer.
//!
//! The pretext task: every image is presented in all four 90-degree
//! rotations and a 4-logit network learns to predict which rotation was
//! applied. Labels never enter this stage; the trained early layers are
//! then copied into both classification networks, whose remaining layers
//! keep their independent random initialization.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{AdamState, Network};
use crate::rng::shuffled_indices;
use crate::tensor::Tensor;

/// Exact 90k-degree counterclockwise rotation of a `[c, h, w]` image by
/// index permutation; no interpolation.
pub fn rotate_image(img: &Tensor, k: u8) -> Result<Tensor> {
    let shape = img.shape();
    let (c, h, w) = match shape {
        [c, h, w] => (*c, *h, *w),
        other => {
            return Err(Error::RejectedInput(format!(
                "rotate expects [c, h, w], got {other:?}"
            )))
        }
    };
    if h != w {
        return Err(Error::RejectedInput(format!(
            "rotation requires square images, got {h}x{w}"
        )));
    }
    let k = k % 4;
    if k == 0 {
        return Ok(img.clone());
    }
    let src = img.data();
    let mut out = vec![0.0f64; src.len()];
    for ch in 0..c {
        let s = &src[ch * h * w..(ch + 1) * h * w];
        let d = &mut out[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                // one 90-degree ccw step: (y, x) <- (x, w-1-y)
                let (sy, sx) = match k {
                    1 => (x, w - 1 - y),
                    2 => (h - 1 - y, w - 1 - x),
                    _ => (h - 1 - x, y),
                };
                d[y * w + x] = s[sy * w + sx];
            }
        }
    }
    Tensor::new(shape.to_vec(), out)
}

/// All four rotations of each image with their rotation labels.
///
/// Output order is (img0 k=0..3, img1 k=0..3, ...).
#[derive(Debug, Clone)]
pub struct RotationBatch {
    /// `[4*b, c, h, w]`.
    pub images: Tensor,
    /// Values in 0..4 (0, 90, 180, 270 degrees).
    pub labels: Vec<usize>,
}

pub fn make_rotation_batch(images: &Tensor) -> Result<RotationBatch> {
    let shape = images.shape();
    if shape.len() != 4 {
        return Err(Error::RejectedInput(format!(
            "rotation batch expects [b, c, h, w], got {shape:?}"
        )));
    }
    let b = shape[0];
    let sample_shape = &shape[1..];
    let mut data = Vec::with_capacity(4 * images.len());
    let mut labels = Vec::with_capacity(4 * b);
    for i in 0..b {
        let img = Tensor::new(sample_shape.to_vec(), images.row(i).to_vec())?;
        for k in 0..4u8 {
            let rot = rotate_image(&img, k)?;
            data.extend_from_slice(rot.data());
            labels.push(k as usize);
        }
    }
    let mut out_shape = shape.to_vec();
    out_shape[0] = 4 * b;
    Ok(RotationBatch {
        images: Tensor::new(out_shape, data)?,
        labels,
    })
}

/// Train a 4-logit network on the rotation pretext over `images` only.
///
/// `batch_size` counts rotated samples, so `batch_size / 4` source images
/// are expanded per step. The rng drives both the per-epoch shuffle and
/// nothing else; labels of the underlying dataset are never seen here.
pub fn pretrain_rotnet(
    net: &mut Network,
    images: &Tensor,
    epochs: u32,
    lr: f64,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    if net.num_classes() != 4 {
        return Err(Error::Config(format!(
            "pretext network must have a 4-logit head, has {}",
            net.num_classes()
        )));
    }
    let n = images.rows();
    let per_step = (batch_size / 4).max(1);
    let mut opt = AdamState::new(lr);
    for _ in 0..epochs {
        let order = shuffled_indices(n, rng);
        for chunk in order.chunks(per_step) {
            let batch = images.select_rows(chunk);
            let rot = make_rotation_batch(&batch)?;
            let (grads, _) = net.backward(&rot.images, &rot.labels)?;
            opt.step_network(net, &grads);
        }
    }
    Ok(())
}

/// Rotation-prediction accuracy of a 4-logit network over a held-out image
/// set; evaluation-side helper.
pub fn rotation_accuracy(net: &Network, images: &Tensor) -> Result<f64> {
    let n = images.rows();
    let mut correct = 0usize;
    let mut total = 0usize;
    for chunk_start in (0..n).step_by(64) {
        let idx: Vec<usize> = (chunk_start..(chunk_start + 64).min(n)).collect();
        let rot = make_rotation_batch(&images.select_rows(&idx))?;
        let (logits, _) = net.forward(&rot.images)?;
        for (i, &label) in rot.labels.iter().enumerate() {
            let row = logits.row(i);
            let pred = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(j, _)| j)
                .unwrap();
            if pred == label {
                correct += 1;
            }
            total += 1;
        }
    }
    Ok(correct as f64 / total.max(1) as f64)
}

/// Copy the first `l` trainable layers of `pretrained` into `target`.
/// The remaining layers keep their own (seeded random) initialization so
/// the two downstream networks do not start identical.
pub fn transfer_weights(pretrained: &Network, target: &mut Network, l: usize) -> Result<()> {
    target.copy_early_layers_from(pretrained, l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{blobs::make_rendered_blobs, Split};
    use crate::nn::{build_network, ArchPreset};
    use crate::rng::{stream, streams};

    fn img3x3() -> Tensor {
        Tensor::new(
            vec![1, 3, 3],
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0],
        )
        .unwrap()
    }

    #[test]
    fn k0_is_identity() {
        let img = img3x3();
        assert_eq!(rotate_image(&img, 0).unwrap(), img);
    }

    #[test]
    fn two_quarter_turns_equal_half_turn() {
        let img = img3x3();
        let twice = rotate_image(&rotate_image(&img, 1).unwrap(), 1).unwrap();
        assert_eq!(twice, rotate_image(&img, 2).unwrap());
    }

    #[test]
    fn four_quarter_turns_restore_the_image() {
        let mut img = img3x3();
        for _ in 0..4 {
            img = rotate_image(&img, 1).unwrap();
        }
        assert_eq!(img, img3x3());
    }

    #[test]
    fn rotation_conserves_pixel_sum() {
        let img = img3x3();
        let total: f64 = img.data().iter().sum();
        for k in 0..4 {
            let r = rotate_image(&img, k).unwrap();
            assert_eq!(r.data().iter().sum::<f64>(), total);
            let mut sorted_a = img.data().to_vec();
            let mut sorted_b = r.data().to_vec();
            sorted_a.sort_by(|a, b| a.partial_cmp(b).unwrap());
            sorted_b.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert_eq!(sorted_a, sorted_b); // bijection on pixel positions
        }
    }

    #[test]
    fn non_square_image_rejected() {
        let img = Tensor::zeros(vec![1, 2, 3]);
        assert!(rotate_image(&img, 1).is_err());
    }

    #[test]
    fn rotation_batch_layout() {
        let images = Tensor::zeros(vec![2, 1, 4, 4]);
        let rot = make_rotation_batch(&images).unwrap();
        assert_eq!(rot.images.shape(), &[8, 1, 4, 4]);
        assert_eq!(rot.labels, vec![0, 1, 2, 3, 0, 1, 2, 3]);
    }

    #[test]
    fn constant_image_rotations_are_identical_with_distinct_labels() {
        let images = Tensor::filled(vec![1, 1, 4, 4], 0.5);
        let rot = make_rotation_batch(&images).unwrap();
        for i in 1..4 {
            assert_eq!(rot.images.row(i), rot.images.row(0));
        }
        assert_eq!(rot.labels, vec![0, 1, 2, 3]);
    }

    #[test]
    fn zero_epochs_leaves_weights_unchanged() {
        let mut rng = stream(1, streams::PRETEXT);
        let mut net = build_network(ArchPreset::Mlp, &[1, 8, 8], 4, &mut rng).unwrap();
        let before = net.clone();
        let images = Tensor::zeros(vec![4, 1, 8, 8]);
        pretrain_rotnet(&mut net, &images, 0, 1e-3, 16, &mut rng).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn pretraining_is_deterministic_per_seed() {
        let images = make_rendered_blobs(3, 6, 6.0, 0.5, 0.02, 5, Split::Train)
            .unwrap()
            .images()
            .clone();
        let run = || {
            let mut init = stream(2, streams::PRETEXT);
            let mut net = build_network(ArchPreset::Mlp, &[1, 16, 16], 4, &mut init).unwrap();
            let mut rng = stream(2, "pretext-shuffle");
            pretrain_rotnet(&mut net, &images, 2, 1e-3, 32, &mut rng).unwrap();
            net
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn pretraining_learns_rotations_on_cued_images() {
        let train = make_rendered_blobs(4, 40, 6.0, 0.5, 0.02, 7, Split::Train).unwrap();
        let held_out = make_rendered_blobs(4, 20, 6.0, 0.5, 0.02, 7, Split::Test).unwrap();
        let mut init = stream(3, streams::PRETEXT);
        let mut net = build_network(ArchPreset::Mlp, &[1, 16, 16], 4, &mut init).unwrap();
        let mut rng = stream(3, "pretext-shuffle");
        pretrain_rotnet(&mut net, train.images(), 8, 1e-3, 64, &mut rng).unwrap();
        let acc = rotation_accuracy(&net, held_out.images()).unwrap();
        assert!(acc > 0.9, "held-out rotation accuracy {acc}");
    }

    #[test]
    fn transfer_leaves_later_layers_different() {
        let mut pretext_rng = stream(4, streams::PRETEXT);
        let pretrained =
            build_network(ArchPreset::SmallCnn, &[1, 16, 16], 4, &mut pretext_rng).unwrap();
        let mut p = build_network(
            ArchPreset::SmallCnn,
            &[1, 16, 16],
            5,
            &mut stream(4, streams::INIT_P),
        )
        .unwrap();
        let mut q = build_network(
            ArchPreset::SmallCnn,
            &[1, 16, 16],
            5,
            &mut stream(4, streams::INIT_Q),
        )
        .unwrap();
        transfer_weights(&pretrained, &mut p, 3).unwrap();
        transfer_weights(&pretrained, &mut q, 3).unwrap();
        // first 3 trainable layers agree
        for i in 0..3 {
            let li = p.trainable_body_indices()[i];
            assert_eq!(p.layers()[li].params()[0], q.layers()[li].params()[0]);
        }
        // at least one later layer differs
        let li = p.trainable_body_indices()[3];
        assert_ne!(p.layers()[li].params()[0], q.layers()[li].params()[0]);
    }
}
