//! Network: an ordered layer stack with a K-logit head and a feature tap.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::layer::{Conv2d, Dense, Layer};
use crate::nn::loss;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    /// Body layers, in execution order.
    layers: Vec<Layer>,
    /// Final dense layer producing the K logits.
    head: Dense,
    /// Features are the (flattened) output of `layers[feature_tap]`.
    feature_tap: usize,
}

/// Parameter gradients in the same order as [`Network::params`].
#[derive(Debug, Clone)]
pub struct Gradients(pub Vec<Tensor>);

impl Network {
    pub fn new(layers: Vec<Layer>, head: Dense, feature_tap: usize) -> Result<Self> {
        if feature_tap >= layers.len() {
            return Err(Error::Config(format!(
                "feature tap {feature_tap} must precede the head ({} body layers)",
                layers.len()
            )));
        }
        Ok(Network {
            layers,
            head,
            feature_tap,
        })
    }

    /// Number of output classes.
    pub fn num_classes(&self) -> usize {
        self.head.out_dim
    }

    pub fn feature_dim(&self) -> usize {
        // The presets tap right before the head, where the width is the
        // head's input; a mid-stack tap is resolved at forward time.
        if self.feature_tap == self.layers.len() - 1 {
            self.head.in_dim
        } else {
            0
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn head(&self) -> &Dense {
        &self.head
    }

    /// Forward pass: returns `[n, K]` logits and `[n, feature_dim]` features.
    pub fn forward(&self, batch: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut x = batch.clone();
        let mut features = None;
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(&x)?;
            if i == self.feature_tap {
                let n = x.rows();
                features = Some(x.reshaped(vec![n, x.row_len()])?);
            }
        }
        let logits = self.head.forward(&x).map_err(head_err)?;
        Ok((logits, features.expect("feature tap precedes head")))
    }

    /// Forward pass retaining every layer input, for backprop.
    fn forward_cached(&self, batch: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let mut inputs = Vec::with_capacity(self.layers.len() + 1);
        let mut x = batch.clone();
        for layer in &self.layers {
            let y = layer.forward(&x)?;
            inputs.push(x);
            x = y;
        }
        let logits = self.head.forward(&x).map_err(head_err)?;
        inputs.push(x); // head input
        Ok((logits, inputs))
    }

    /// Gradient of the mean cross-entropy over the batch w.r.t. every
    /// parameter, ordered as in [`Network::params`]. Also returns the logits.
    pub fn backward(&self, batch: &Tensor, labels: &[usize]) -> Result<(Gradients, Tensor)> {
        let (logits, inputs) = self.forward_cached(batch)?;
        let grad_logits = loss::mean_ce_logit_grad(&logits, labels)?;

        let head_input = &inputs[self.layers.len()];
        let (mut grad, dw_head, db_head) = {
            let head_layer = Layer::Dense(self.head.clone());
            let (dx, params) = head_layer.backward(head_input, &grad_logits);
            let (dw, db) = params.expect("dense head has params");
            (dx, dw, db)
        };

        let mut rev_param_grads: Vec<Tensor> = vec![db_head, dw_head];
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let (dx, params) = layer.backward(&inputs[i], &grad);
            if let Some((dw, db)) = params {
                rev_param_grads.push(db);
                rev_param_grads.push(dw);
            }
            grad = dx;
        }
        rev_param_grads.reverse();
        Ok((Gradients(rev_param_grads), logits))
    }

    /// All parameter tensors: body layers in order, head last; weight before
    /// bias within a layer.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = Vec::new();
        for layer in &self.layers {
            out.extend(layer.params());
        }
        out.push(&self.head.weight);
        out.push(&self.head.bias);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for layer in &mut self.layers {
            out.extend(layer.params_mut());
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Body layers that carry parameters, in order (the head is excluded).
    pub fn trainable_body_indices(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.has_params())
            .map(|(i, _)| i)
            .collect()
    }

    /// Copy the parameters of the first `l` trainable body layers from
    /// `source`. The remaining layers and the head are left untouched.
    pub fn copy_early_layers_from(&mut self, source: &Network, l: usize) -> Result<()> {
        let src_idx = source.trainable_body_indices();
        let dst_idx = self.trainable_body_indices();
        if l > src_idx.len() || l > dst_idx.len() {
            return Err(Error::Config(format!(
                "cannot transfer {l} layers: source has {}, target has {}",
                src_idx.len(),
                dst_idx.len()
            )));
        }
        for i in 0..l {
            let src_params: Vec<Tensor> = source.layers[src_idx[i]]
                .params()
                .into_iter()
                .cloned()
                .collect();
            let dst_params = self.layers[dst_idx[i]].params_mut();
            if src_params.len() != dst_params.len() {
                return Err(Error::Config(format!(
                    "layer {i}: parameter arity mismatch during transfer"
                )));
            }
            for (dst, src) in dst_params.into_iter().zip(src_params) {
                if dst.shape() != src.shape() {
                    return Err(Error::Config(format!(
                        "layer {i}: shape mismatch during transfer: {:?} vs {:?}",
                        dst.shape(),
                        src.shape()
                    )));
                }
                *dst = src;
            }
        }
        Ok(())
    }
}

fn head_err(e: Error) -> Error {
    match e {
        Error::RejectedInput(msg) => Error::RejectedInput(format!("head layer: {msg}")),
        other => other,
    }
}

/// Architecture presets. Desk-scale stand-ins for the usual fixed CNNs: both
/// expose 128-dim penultimate features and a K-logit head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArchPreset {
    /// input - 256 - 128 - K dense stack.
    Mlp,
    /// 3 conv blocks (stride 2) then 256.. flat - 128 - K.
    SmallCnn,
}

impl ArchPreset {
    /// Default number of early layers transferred from a pretrained model.
    pub fn default_transfer_layers(self) -> usize {
        match self {
            ArchPreset::Mlp => 1,
            ArchPreset::SmallCnn => 3,
        }
    }
}

pub const LEAKY_SLOPE: f64 = 0.01;

/// Build a preset network for the given input shape (without the batch dim)
/// and class count. Initialization draws from `rng` in a fixed order.
pub fn build_network(
    preset: ArchPreset,
    input_shape: &[usize],
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Network> {
    match preset {
        ArchPreset::Mlp => {
            let in_dim: usize = input_shape.iter().product();
            if in_dim == 0 {
                return Err(Error::Config("empty input shape".into()));
            }
            let layers = vec![
                Layer::Flatten,
                Layer::Dense(Dense::new(in_dim, 256, rng)),
                Layer::LeakyRelu(LEAKY_SLOPE),
                Layer::Dense(Dense::new(256, 128, rng)),
                Layer::LeakyRelu(LEAKY_SLOPE),
            ];
            let head = Dense::new(128, k, rng);
            Network::new(layers, head, 4)
        }
        ArchPreset::SmallCnn => {
            let (c, h, w) = match input_shape {
                [c, h, w] => (*c, *h, *w),
                other => {
                    return Err(Error::Config(format!(
                        "small-cnn preset needs [c, h, w] input, got {other:?}"
                    )))
                }
            };
            let conv_dims = |d: usize| (d + 2 - 3) / 2 + 1; // kernel 3, stride 2, pad 1
            let (h1, w1) = (conv_dims(h), conv_dims(w));
            let (h2, w2) = (conv_dims(h1), conv_dims(w1));
            let (h3, w3) = (conv_dims(h2), conv_dims(w2));
            let flat = 16 * h3 * w3;
            if flat == 0 {
                return Err(Error::Config(format!(
                    "input {h}x{w} too small for the small-cnn preset"
                )));
            }
            let layers = vec![
                Layer::Conv2d(Conv2d::new(c, 8, 3, 2, 1, rng)),
                Layer::LeakyRelu(LEAKY_SLOPE),
                Layer::Conv2d(Conv2d::new(8, 16, 3, 2, 1, rng)),
                Layer::LeakyRelu(LEAKY_SLOPE),
                Layer::Conv2d(Conv2d::new(16, 16, 3, 2, 1, rng)),
                Layer::LeakyRelu(LEAKY_SLOPE),
                Layer::Flatten,
                Layer::Dense(Dense::new(flat, 128, rng)),
                Layer::LeakyRelu(LEAKY_SLOPE),
            ];
            let head = Dense::new(128, k, rng);
            Network::new(layers, head, 8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use approx::assert_abs_diff_eq;

    fn identity_net(dim: usize) -> Network {
        // One pass-through body layer (slope 1 keeps values intact) and an
        // identity head.
        let mut w = Tensor::zeros(vec![dim, dim]);
        for i in 0..dim {
            w.data_mut()[i * dim + i] = 1.0;
        }
        let head = Dense::from_parts(w, Tensor::zeros(vec![dim])).unwrap();
        Network::new(vec![Layer::LeakyRelu(1.0)], head, 0).unwrap()
    }

    #[test]
    fn identity_head_returns_input() {
        let net = identity_net(3);
        let x = Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 0.0, 3.0, -0.25]).unwrap();
        let (logits, features) = net.forward(&x).unwrap();
        assert_eq!(logits.data(), x.data());
        assert_eq!(features.data(), x.data());
    }

    #[test]
    fn zero_weight_network_outputs_zero() {
        let head = Dense::from_parts(Tensor::zeros(vec![4, 3]), Tensor::zeros(vec![4])).unwrap();
        let net = Network::new(vec![Layer::LeakyRelu(1.0)], head, 0).unwrap();
        let x = Tensor::new(vec![1, 3], vec![5.0, -2.0, 1.0]).unwrap();
        let (logits, _) = net.forward(&x).unwrap();
        assert!(logits.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_layer_forward_matches_hand_multiply() {
        // layer 1: [[1, 2], [0, -1]] x + [0.5, 0]; head: [[2, 0], [1, 1]] y
        let l1 = Dense::from_parts(
            Tensor::new(vec![2, 2], vec![1.0, 2.0, 0.0, -1.0]).unwrap(),
            Tensor::new(vec![2], vec![0.5, 0.0]).unwrap(),
        )
        .unwrap();
        let head = Dense::from_parts(
            Tensor::new(vec![2, 2], vec![2.0, 0.0, 1.0, 1.0]).unwrap(),
            Tensor::zeros(vec![2]),
        )
        .unwrap();
        let net = Network::new(vec![Layer::Dense(l1)], head, 0).unwrap();
        let x = Tensor::new(vec![1, 2], vec![3.0, -2.0]).unwrap();
        // h = [1*3 + 2*(-2) + 0.5, 0*3 + (-1)(-2)] = [-0.5, 2]
        // logits = [2*(-0.5), -0.5 + 2] = [-1, 1.5]
        let (logits, features) = net.forward(&x).unwrap();
        assert_eq!(features.data(), &[-0.5, 2.0]);
        assert_eq!(logits.data(), &[-1.0, 1.5]);
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = stream(11, "init");
        let net = build_network(ArchPreset::Mlp, &[10], 5, &mut rng).unwrap();
        let x = Tensor::new(vec![2, 10], (0..20).map(|i| i as f64 * 0.1).collect()).unwrap();
        let (a, _) = net.forward(&x).unwrap();
        let (b, _) = net.forward(&x).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn forward_rejects_wrong_batch_shape() {
        let mut rng = stream(11, "init");
        let net = build_network(ArchPreset::Mlp, &[10], 5, &mut rng).unwrap();
        let x = Tensor::zeros(vec![2, 7]);
        assert!(net.forward(&x).is_err());
    }

    #[test]
    fn softmax_grad_closed_form_single_layer() {
        // Single dense head; gradient w.r.t. bias equals softmax(u) - onehot.
        let head = Dense::from_parts(
            Tensor::new(vec![3, 3], vec![0.0; 9]).unwrap(),
            Tensor::new(vec![3], vec![0.3, -0.2, 0.9]).unwrap(),
        )
        .unwrap();
        let net = Network::new(vec![Layer::LeakyRelu(1.0)], head, 0).unwrap();
        let x = Tensor::zeros(vec![1, 3]);
        let (grads, logits) = net.backward(&x, &[1]).unwrap();
        let p = loss::softmax(logits.row(0));
        let db = grads.0.last().unwrap();
        assert_abs_diff_eq!(db.data()[0], p[0], epsilon = 1e-12);
        assert_abs_diff_eq!(db.data()[1], p[1] - 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(db.data()[2], p[2], epsilon = 1e-12);
    }

    #[test]
    fn gradient_vanishes_at_stationary_label_distribution() {
        // With a uniform logit head output and labels spread uniformly over
        // classes, the mean bias gradient cancels.
        let head = Dense::from_parts(Tensor::zeros(vec![4, 2]), Tensor::zeros(vec![4])).unwrap();
        let net = Network::new(vec![Layer::LeakyRelu(1.0)], head, 0).unwrap();
        let x = Tensor::zeros(vec![4, 2]);
        let (grads, _) = net.backward(&x, &[0, 1, 2, 3]).unwrap();
        for g in &grads.0 {
            for v in g.data() {
                assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn cnn_preset_shapes_compose() {
        let mut rng = stream(3, "init");
        let net = build_network(ArchPreset::SmallCnn, &[1, 28, 28], 10, &mut rng).unwrap();
        let x = Tensor::zeros(vec![2, 1, 28, 28]);
        let (logits, features) = net.forward(&x).unwrap();
        assert_eq!(logits.shape(), &[2, 10]);
        assert_eq!(features.shape(), &[2, 128]);
        assert_eq!(net.trainable_body_indices().len(), 4);
    }

    #[test]
    fn transfer_copies_exactly_l_layers() {
        let mut rng_a = stream(1, "a");
        let mut rng_b = stream(2, "b");
        let src = build_network(ArchPreset::SmallCnn, &[1, 16, 16], 4, &mut rng_a).unwrap();
        let mut dst = build_network(ArchPreset::SmallCnn, &[1, 16, 16], 7, &mut rng_b).unwrap();
        let before_layer4: Vec<f64> = dst.layers()[7].params()[0].data().to_vec();
        dst.copy_early_layers_from(&src, 3).unwrap();
        for i in 0..3 {
            let li = dst.trainable_body_indices()[i];
            assert_eq!(dst.layers()[li].params()[0].data(), src.layers()[li].params()[0].data());
        }
        assert_eq!(dst.layers()[7].params()[0].data(), &before_layer4[..]);
    }

    #[test]
    fn transfer_zero_layers_is_identity() {
        let mut rng = stream(1, "a");
        let src = build_network(ArchPreset::Mlp, &[10], 4, &mut rng).unwrap();
        let mut dst = build_network(ArchPreset::Mlp, &[10], 4, &mut rng).unwrap();
        let before = dst.clone();
        dst.copy_early_layers_from(&src, 0).unwrap();
        assert_eq!(dst, before);
    }

    #[test]
    fn transfer_shape_mismatch_is_config_error() {
        let mut rng = stream(1, "a");
        let src = build_network(ArchPreset::Mlp, &[10], 4, &mut rng).unwrap();
        let mut dst = build_network(ArchPreset::Mlp, &[12], 4, &mut rng).unwrap();
        assert!(matches!(
            dst.copy_early_layers_from(&src, 1),
            Err(Error::Config(_))
        ));
    }
}
