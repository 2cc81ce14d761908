//! Forget-rate schedule and small-loss instance selection.
//!
//! The forget rate `R(T) = 1 - min(T/T_k * eps, eps)` ramps from 1 down to
//! `1 - eps` over the first `T_k` epochs and stays flat afterwards. Each
//! mini-batch keeps its `R(T)` lowest-loss fraction for the weight update.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Epoch schedule for a run. `epsilon` here is the noise level *assumed* by
/// the schedule, which may deliberately differ from the injected rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub epsilon: f64,
    pub t_k: u32,
    pub t_update: u32,
    pub t_max: u32,
}

impl Schedule {
    pub fn new(epsilon: f64, t_k: u32, t_update: u32, t_max: u32) -> Result<Self> {
        let s = Schedule {
            epsilon,
            t_k,
            t_update,
            t_max,
        };
        s.validate().map_err(Error::Validation)?;
        Ok(s)
    }

    pub fn validate(&self) -> std::result::Result<(), Vec<String>> {
        let mut errs = Vec::new();
        if !(0.0..1.0).contains(&self.epsilon) {
            errs.push(format!(
                "schedule epsilon must be in [0, 1), got {}",
                self.epsilon
            ));
        }
        if self.t_k < 1 {
            errs.push("t_k must be >= 1".into());
        }
        if self.t_k > self.t_update {
            errs.push(format!(
                "t_k ({}) must not exceed t_update ({})",
                self.t_k, self.t_update
            ));
        }
        if self.t_update >= self.t_max {
            errs.push(format!(
                "t_update ({}) must be below t_max ({})",
                self.t_update, self.t_max
            ));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }

    /// `R(T) = 1 - min(T/T_k * eps, eps)`; non-increasing, equal to
    /// `1 - eps` for all `T >= T_k`.
    pub fn forget_rate(&self, t: u32) -> f64 {
        let ramp = t as f64 / self.t_k as f64 * self.epsilon;
        1.0 - ramp.min(self.epsilon)
    }
}

/// Number of samples kept from a batch: `ceil(r * batch_size)`, clamped to
/// `[1, batch_size]` so the update set is never empty.
pub fn num_keep(batch_size: usize, r: f64) -> usize {
    debug_assert!(batch_size >= 1);
    debug_assert!(r > 0.0 && r <= 1.0);
    ((r * batch_size as f64).ceil() as usize).clamp(1, batch_size)
}

/// Indices split into small-loss and large-loss sets, both sorted by
/// ascending loss with ties broken by ascending index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LossSplit {
    pub small: Vec<usize>,
    pub large: Vec<usize>,
    /// Epoch at which the split was computed (0 for ad-hoc splits).
    pub epoch: u32,
}

impl LossSplit {
    pub fn len(&self) -> usize {
        self.small.len() + self.large.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Sort losses ascending (ties by index) and keep the first
/// `num_keep(n, r)` as the small-loss set.
pub fn select_small_loss(losses: &[f64], r: f64) -> Result<LossSplit> {
    if let Some(i) = losses.iter().position(|l| l.is_nan()) {
        return Err(Error::RejectedInput(format!("loss at index {i} is NaN")));
    }
    let n = losses.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        losses[a]
            .partial_cmp(&losses[b])
            .expect("NaN screened above")
            .then(a.cmp(&b))
    });
    let keep = if n == 0 { 0 } else { num_keep(n, r) };
    let large = order.split_off(keep);
    Ok(LossSplit {
        small: order,
        large,
        epoch: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn forget_rate_is_one_at_zero() {
        for eps in [0.0, 0.2, 0.45, 0.5, 0.9] {
            let s = Schedule::new(eps, 10, 30, 40).unwrap();
            assert_eq!(s.forget_rate(0), 1.0);
        }
    }

    #[test]
    fn forget_rate_midpoint_value() {
        let s = Schedule::new(0.5, 10, 30, 40).unwrap();
        assert_abs_diff_eq!(s.forget_rate(5), 0.75, epsilon = 1e-15);
    }

    #[test]
    fn forget_rate_flat_after_ramp() {
        let s = Schedule::new(0.45, 10, 30, 200).unwrap();
        for t in 10..=200 {
            assert_abs_diff_eq!(s.forget_rate(t), 0.55, epsilon = 1e-15);
        }
    }

    #[test]
    fn forget_rate_non_increasing() {
        let s = Schedule::new(0.37, 13, 30, 40).unwrap();
        let mut prev = f64::INFINITY;
        for t in 0..100 {
            let r = s.forget_rate(t);
            assert!(r <= prev);
            prev = r;
        }
    }

    #[test]
    fn schedule_validation_is_itemized() {
        let s = Schedule {
            epsilon: 1.5,
            t_k: 0,
            t_update: 50,
            t_max: 40,
        };
        let errs = s.validate().unwrap_err();
        assert_eq!(errs.len(), 3);
    }

    #[test]
    fn num_keep_examples() {
        assert_eq!(num_keep(128, 1.0), 128);
        assert_eq!(num_keep(128, 0.5), 64);
        assert_eq!(num_keep(10, 0.55), 6);
        assert_eq!(num_keep(3, 0.01), 1);
    }

    #[test]
    fn select_small_loss_sorts_and_splits() {
        let split = select_small_loss(&[0.1, 0.9, 0.2, 0.5], 0.5).unwrap();
        assert_eq!(split.small, vec![0, 2]);
        assert_eq!(split.large, vec![3, 1]);
    }

    #[test]
    fn ties_break_by_index() {
        let split = select_small_loss(&[0.5, 0.5, 0.5, 0.5], 0.5).unwrap();
        assert_eq!(split.small, vec![0, 1]);
        assert_eq!(split.large, vec![2, 3]);
    }

    #[test]
    fn nan_loss_rejected() {
        assert!(select_small_loss(&[0.1, f64::NAN], 0.5).is_err());
    }

    proptest! {
        #[test]
        fn split_partitions_all_indices(
            losses in proptest::collection::vec(0.0f64..10.0, 1..200),
            r in 0.01f64..1.0,
        ) {
            let split = select_small_loss(&losses, r).unwrap();
            prop_assert_eq!(split.small.len(), num_keep(losses.len(), r));
            let mut all: Vec<usize> = split.small.iter().chain(&split.large).cloned().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..losses.len()).collect::<Vec<_>>());
            // boundary between the sets respects loss order
            if let (Some(&sm), Some(&lg)) = (split.small.last(), split.large.first()) {
                prop_assert!(losses[sm] <= losses[lg]);
            }
        }

        #[test]
        fn selection_matches_brute_force_oracle(
            losses in proptest::collection::vec(0.0f64..10.0, 1..100),
            r in 0.01f64..1.0,
        ) {
            // independent oracle: full sort of (loss, index) pairs, then slice
            let mut pairs: Vec<(f64, usize)> =
                losses.iter().cloned().zip(0..).collect();
            pairs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let keep = num_keep(losses.len(), r);
            let expected_small: Vec<usize> = pairs[..keep].iter().map(|p| p.1).collect();
            let expected_large: Vec<usize> = pairs[keep..].iter().map(|p| p.1).collect();

            let split = select_small_loss(&losses, r).unwrap();
            prop_assert_eq!(split.small, expected_small);
            prop_assert_eq!(split.large, expected_large);
        }

        #[test]
        fn selection_is_permutation_invariant(
            losses in proptest::collection::vec(0.0f64..10.0, 2..50),
            seed in 0u64..1000,
        ) {
            // shuffle inputs, select, then map indices back: same index SET
            // (order can differ only among exact ties)
            use rand::seq::SliceRandom;
            let mut rng = crate::rng::stream(seed, "perm");
            let mut perm: Vec<usize> = (0..losses.len()).collect();
            perm.shuffle(&mut rng);
            let shuffled: Vec<f64> = perm.iter().map(|&i| losses[i]).collect();

            let base = select_small_loss(&losses, 0.5).unwrap();
            let shuf = select_small_loss(&shuffled, 0.5).unwrap();
            let mut base_small: Vec<f64> = base.small.iter().map(|&i| losses[i]).collect();
            let mut shuf_small: Vec<f64> = shuf.small.iter().map(|&i| shuffled[i]).collect();
            base_small.sort_by(|a, b| a.partial_cmp(b).unwrap());
            shuf_small.sort_by(|a, b| a.partial_cmp(b).unwrap());
            prop_assert_eq!(base_small, shuf_small);
        }
    }
}
