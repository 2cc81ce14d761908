//! Central-finite-difference verification of the analytic gradients.

use crate::error::{Error, Result};
use crate::nn::loss;
use crate::nn::net::Network;
use crate::tensor::Tensor;

/// Maximum parameter count accepted; finite differences cost two forward
/// passes per parameter.
pub const MAX_PARAMS: usize = 10_000;

fn mean_ce(net: &Network, batch: &Tensor, labels: &[usize]) -> Result<f64> {
    let (logits, _) = net.forward(batch)?;
    let losses = loss::per_sample_losses(&logits, labels)?;
    Ok(loss::mean_loss(&losses))
}

/// Compare the analytic gradient of the batch-mean cross-entropy against
/// central finite differences with step `h`.
///
/// Returns the max over parameters of
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check(net: &mut Network, batch: &Tensor, labels: &[usize], h: f64) -> Result<f64> {
    if net.param_count() > MAX_PARAMS {
        return Err(Error::RejectedInput(format!(
            "grad check limited to {MAX_PARAMS} parameters, net has {}",
            net.param_count()
        )));
    }
    let (analytic, _) = net.backward(batch, labels)?;

    let mut max_rel = 0.0_f64;
    let n_tensors = analytic.0.len();
    for ti in 0..n_tensors {
        let len = analytic.0[ti].len();
        for i in 0..len {
            let orig = net.params_mut()[ti].data()[i];
            net.params_mut()[ti].data_mut()[i] = orig + h;
            let plus = mean_ce(net, batch, labels)?;
            net.params_mut()[ti].data_mut()[i] = orig - h;
            let minus = mean_ce(net, batch, labels)?;
            net.params_mut()[ti].data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.0[ti].data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layer::{Conv2d, Dense, Layer};
    use crate::nn::net::{build_network, ArchPreset, Network};
    use crate::rng::stream;
    use rand::Rng;

    fn random_batch(n: usize, shape: &[usize], k: usize, seed: u64) -> (Tensor, Vec<usize>) {
        let mut rng = stream(seed, "gradcheck-data");
        let mut full = vec![n];
        full.extend_from_slice(shape);
        let count: usize = full.iter().product();
        let data: Vec<f64> = (0..count).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        (Tensor::new(full, data).unwrap(), labels)
    }

    #[test]
    fn linear_net_matches_to_1e7() {
        let mut rng = stream(5, "init");
        let l = Dense::new(6, 5, &mut rng);
        let head = Dense::new(5, 3, &mut rng);
        let mut net = Network::new(vec![Layer::Dense(l)], head, 0).unwrap();
        let (batch, labels) = random_batch(4, &[6], 3, 5);
        let err = grad_check(&mut net, &batch, &labels, 3e-5).unwrap();
        assert!(err < 1e-7, "max rel err {err}");
    }

    #[test]
    fn mlp_with_leaky_relu_matches_to_1e4() {
        let mut rng = stream(9, "init");
        let mut net = Network::new(
            vec![
                Layer::Dense(Dense::new(8, 16, &mut rng)),
                Layer::LeakyRelu(0.01),
                Layer::Dense(Dense::new(16, 12, &mut rng)),
                Layer::LeakyRelu(0.01),
            ],
            Dense::new(12, 4, &mut rng),
            3,
        )
        .unwrap();
        let (batch, labels) = random_batch(5, &[8], 4, 9);
        let err = grad_check(&mut net, &batch, &labels, 1e-5).unwrap();
        assert!(err < 1e-4, "max rel err {err}");
    }

    #[test]
    fn single_channel_conv_matches_to_1e4() {
        let mut rng = stream(13, "init");
        let conv = Conv2d::new(1, 2, 3, 1, 1, &mut rng);
        let head = Dense::new(2 * 6 * 6, 3, &mut rng);
        let mut net = Network::new(
            vec![
                Layer::Conv2d(conv),
                Layer::LeakyRelu(0.01),
                Layer::Flatten,
            ],
            head,
            2,
        )
        .unwrap();
        let (batch, labels) = random_batch(3, &[1, 6, 6], 3, 13);
        let err = grad_check(&mut net, &batch, &labels, 1e-5).unwrap();
        assert!(err < 1e-4, "max rel err {err}");
    }

    #[test]
    fn oversized_net_is_rejected() {
        let mut rng = stream(1, "init");
        let mut net = build_network(ArchPreset::Mlp, &[784], 10, &mut rng).unwrap();
        let (batch, labels) = random_batch(1, &[784], 10, 1);
        assert!(grad_check(&mut net, &batch, &labels, 1e-5).is_err());
    }
}
