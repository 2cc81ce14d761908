//! The four-step training pipeline and its baselines.
//!
//! Step 1: optional rotation-pretext pretraining, transferred into both
//! networks. Step 2: dual-network co-teaching, where each network updates on
//! the *peer's* small-loss selection. Step 3: at `t_update`, split the train
//! set by loss, compute class means from the lowest-loss samples, and
//! re-label the large-loss samples by softmax over negative distances to the
//! means. Step 4: train a single network on the augmented set.
//!
//! Training code in this module reads only images and given labels; hidden
//! truth stays behind [`Dataset::truth`] and is consumed exclusively by
//! metrics code in the harness. Tests pin that with the access counter.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::accuracy;
use crate::nn::{build_network, loss, AdamState, ArchPreset, Network};
use crate::rng::{shuffled_indices, stream, streams};
use crate::schedule::{select_small_loss, LossSplit, Schedule};
use crate::selfsup::{pretrain_rotnet, transfer_weights};
use crate::tensor::Tensor;

/// Which pipeline to run. `Standard` and `Coteaching` are the baselines;
/// `MctR` is the pipeline without Step 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Standard,
    Coteaching,
    MctR,
    MctS2r,
}

impl Variant {
    pub fn all() -> [Variant; 4] {
        [
            Variant::Standard,
            Variant::Coteaching,
            Variant::MctR,
            Variant::MctS2r,
        ]
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Standard => "standard",
            Variant::Coteaching => "coteaching",
            Variant::MctR => "mct-r",
            Variant::MctS2r => "mct-s2r",
        }
    }
}

/// Which of the two networks performs the re-labeling and final training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RelabelNet {
    P,
    Q,
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub variant: Variant,
    pub schedule: Schedule,
    pub kappa: f64,
    /// Lowest-loss samples per class used for the class means.
    pub n_top: usize,
    pub lr: f64,
    /// Adam numeric-stability term. The 1e-8 default behaves like signSGD
    /// once gradients vanish (the update saturates at +/-lr); training on
    /// already-fit selections needs a larger value to stay put.
    pub adam_eps: f64,
    /// Co-teaching protocol learning-rate plan: lr and momentum decay
    /// linearly over the last 60% of the epoch budget (epochs 80..200 at
    /// the reference scale).
    pub lr_decay: bool,
    pub batch_size: usize,
    pub arch: ArchPreset,
    /// Early trainable layers copied from the pretext model.
    pub transfer_layers: usize,
    pub pretext_epochs: u32,
    pub pretext_batch: usize,
    pub relabel_net: RelabelNet,
    pub seed: u64,
    /// Keep the feature matrix from the re-label stage in the trace.
    pub capture_features: bool,
    /// Keep per-batch co-teaching selection logs in the trace.
    pub capture_batch_logs: bool,
}

/// A network with its persistent optimizer state.
#[derive(Debug, Clone)]
pub struct Learner {
    pub net: Network,
    pub opt: AdamState,
}

impl Learner {
    pub fn new(net: Network, lr: f64) -> Self {
        let opt = AdamState::new(lr);
        Learner { net, opt }
    }

    /// One Adam step on the mean cross-entropy over the given batch.
    fn train_step(&mut self, images: &Tensor, labels: &[usize]) -> Result<()> {
        let (grads, _) = self.net.backward(images, labels)?;
        self.opt.step_network(&mut self.net, &grads);
        Ok(())
    }
}

/// Per-batch co-teaching log: which indices each network selected and which
/// it was updated on. Selections are dataset indices.
#[derive(Debug, Clone)]
pub struct CoteachBatchLog {
    pub sel_p: Vec<usize>,
    pub sel_q: Vec<usize>,
    pub upd_p: Vec<usize>,
    pub upd_q: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct CoteachEpochOutcome {
    /// Mean per-sample loss of network p over all full batches.
    pub mean_loss_p: f64,
    /// Network p's own small-loss selection: (dataset index, label used).
    pub selected_p: Vec<(usize, usize)>,
    pub batch_logs: Option<Vec<CoteachBatchLog>>,
}

/// Per-epoch optimizer plan: constant for the first 40% of the budget,
/// then lr falls linearly toward 0 and momentum from 0.9 toward 0.1.
fn epoch_lr_beta1(base_lr: f64, t: u32, t_max: u32) -> (f64, f64) {
    let decay_start = ((0.4 * t_max as f64).round() as u32).max(1);
    if t <= decay_start {
        (base_lr, 0.9)
    } else {
        let f = (t_max - t + 1) as f64 / (t_max - decay_start) as f64;
        (base_lr * f, 0.1 + 0.8 * f.min(1.0))
    }
}

fn apply_lr_plan(cfg: &PipelineConfig, learner: &mut Learner, t: u32, t_max: u32) {
    if cfg.lr_decay {
        let (lr, beta1) = epoch_lr_beta1(cfg.lr, t, t_max);
        learner.opt.lr = lr;
        learner.opt.beta1 = beta1;
    }
}

/// Ascending copy of batch-local indices, so update batches preserve the
/// original sample order (keeps R = 1 bit-identical to plain training).
fn in_batch_order(selection: &[usize]) -> Vec<usize> {
    let mut v = selection.to_vec();
    v.sort_unstable();
    v
}

/// One epoch of cross-updating co-teaching at forget rate `r`.
///
/// Both networks see the same shuffled mini-batches; each computes its own
/// small-loss selection, then p updates on q's selection and q on p's.
/// Both selections are fixed before either network changes.
pub fn coteach_epoch(
    p: &mut Learner,
    q: &mut Learner,
    train: &Dataset,
    r: f64,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
    log_batches: bool,
) -> Result<CoteachEpochOutcome> {
    let given = train.given_labels();
    let order = shuffled_indices(train.len(), rng);
    let mut loss_sum = 0.0;
    let mut loss_count = 0usize;
    let mut selected_p = Vec::new();
    let mut batch_logs = log_batches.then(Vec::new);

    for chunk in order.chunks(batch_size) {
        let images = train.images().select_rows(chunk);
        let labels: Vec<usize> = chunk.iter().map(|&i| given[i]).collect();

        let (logits_p, _) = p.net.forward(&images)?;
        let (logits_q, _) = q.net.forward(&images)?;
        let losses_p = loss::per_sample_losses(&logits_p, &labels)?;
        let losses_q = loss::per_sample_losses(&logits_q, &labels)?;
        loss_sum += losses_p.iter().sum::<f64>();
        loss_count += losses_p.len();

        let split_p = select_small_loss(&losses_p, r)?;
        let split_q = select_small_loss(&losses_q, r)?;
        selected_p.extend(split_p.small.iter().map(|&b| (chunk[b], labels[b])));

        // cross update: p learns from q's selection and vice versa
        let upd_p = in_batch_order(&split_q.small);
        let upd_q = in_batch_order(&split_p.small);
        let labels_for = |sel: &[usize]| sel.iter().map(|&b| labels[b]).collect::<Vec<_>>();
        p.train_step(&images.select_rows(&upd_p), &labels_for(&upd_p))?;
        q.train_step(&images.select_rows(&upd_q), &labels_for(&upd_q))?;

        if let Some(logs) = batch_logs.as_mut() {
            let to_dataset = |sel: &[usize]| sel.iter().map(|&b| chunk[b]).collect::<Vec<_>>();
            logs.push(CoteachBatchLog {
                sel_p: to_dataset(&split_p.small),
                sel_q: to_dataset(&split_q.small),
                upd_p: to_dataset(&upd_p),
                upd_q: to_dataset(&upd_q),
            });
        }
    }
    Ok(CoteachEpochOutcome {
        mean_loss_p: loss_sum / loss_count.max(1) as f64,
        selected_p,
        batch_logs,
    })
}

/// Per-sample losses (and optionally penultimate features) over the whole
/// train set in one deterministic index-order pass.
pub fn eval_losses_features(
    net: &Network,
    train: &Dataset,
    capture_features: bool,
) -> Result<(Vec<f64>, Option<Tensor>)> {
    const CHUNK: usize = 256;
    let n = train.len();
    let given = train.given_labels();
    let mut losses = Vec::with_capacity(n);
    let mut features: Option<Tensor> = None;
    for start in (0..n).step_by(CHUNK) {
        let idx: Vec<usize> = (start..(start + CHUNK).min(n)).collect();
        let images = train.images().select_rows(&idx);
        let labels: Vec<usize> = idx.iter().map(|&i| given[i]).collect();
        let (logits, feats) = net.forward(&images)?;
        losses.extend(loss::per_sample_losses(&logits, &labels)?);
        if capture_features {
            let fdim = feats.row_len();
            let dst = features.get_or_insert_with(|| Tensor::zeros(vec![n, fdim]));
            dst.data_mut()[start * fdim..start * fdim + feats.len()]
                .copy_from_slice(feats.data());
        }
    }
    Ok((losses, features))
}

/// The Step-3 whole-set loss split at epoch `epoch`, using the dataset-level
/// forget rate `r`.
pub fn collect_loss_split(
    net: &Network,
    train: &Dataset,
    r: f64,
    epoch: u32,
) -> Result<(LossSplit, Vec<f64>)> {
    let (losses, _) = eval_losses_features(net, train, false)?;
    let mut split = select_small_loss(&losses, r)?;
    split.epoch = epoch;
    Ok((split, losses))
}

/// Class-wise feature means over the lowest-loss small-loss samples.
#[derive(Debug, Clone)]
pub struct MeanSet {
    /// `[k, feature_dim]`.
    pub means: Tensor,
    /// Samples actually averaged per class.
    pub support: Vec<usize>,
    /// Classes that had no small-loss members and fell back to the
    /// lowest-loss samples of the whole train set.
    pub fallback_classes: Vec<usize>,
}

/// Compute per-class means from up to `n_top` lowest-loss small-loss samples
/// of each class. A class with no small-loss members falls back to its
/// `n_top` lowest-loss samples over the entire train set and is flagged.
pub fn class_means(
    features: &Tensor,
    given: &[usize],
    split: &LossSplit,
    losses: &[f64],
    n_top: usize,
    k: usize,
) -> Result<MeanSet> {
    if n_top == 0 {
        return Err(Error::Config("n_top must be at least 1".into()));
    }
    let fdim = features.row_len();
    let mut means = Tensor::zeros(vec![k, fdim]);
    let mut support = vec![0usize; k];
    let mut fallback_classes = Vec::new();

    // full loss order, for the fallback path
    let full_order = || {
        let mut idx: Vec<usize> = (0..losses.len()).collect();
        idx.sort_by(|&a, &b| losses[a].partial_cmp(&losses[b]).unwrap().then(a.cmp(&b)));
        idx
    };
    let mut full: Option<Vec<usize>> = None;

    for class in 0..k {
        let mut picked: Vec<usize> = split
            .small
            .iter()
            .filter(|&&i| given[i] == class)
            .take(n_top)
            .cloned()
            .collect();
        if picked.is_empty() {
            let order = full.get_or_insert_with(full_order);
            picked = order
                .iter()
                .filter(|&&i| given[i] == class)
                .take(n_top)
                .cloned()
                .collect();
            if picked.is_empty() {
                return Err(Error::RejectedInput(format!(
                    "class {class} has no samples at all"
                )));
            }
            fallback_classes.push(class);
        }
        support[class] = picked.len();
        let dst = &mut means.data_mut()[class * fdim..(class + 1) * fdim];
        for &i in &picked {
            for (d, v) in dst.iter_mut().zip(features.row(i)) {
                *d += v;
            }
        }
        for d in dst.iter_mut() {
            *d /= picked.len() as f64;
        }
    }
    Ok(MeanSet {
        means,
        support,
        fallback_classes,
    })
}

/// Pseudo-labels and confidences for the large-loss samples.
#[derive(Debug, Clone)]
pub struct RelabelResult {
    /// Argmax class per large-loss sample (ties take the lowest index).
    pub pseudo: Vec<usize>,
    /// Max softmax similarity; always >= 1/K.
    pub confidence: Vec<f64>,
    /// `confidence >= kappa`, per sample.
    pub kept: Vec<bool>,
}

/// Re-label by Euclidean distance to the class means: `d_hat = softmax(-d)`,
/// pseudo-label argmax, confidence max, kept where `confidence >= kappa`.
pub fn relabel(large_features: &Tensor, means: &MeanSet, kappa: f64) -> Result<RelabelResult> {
    let fdim = large_features.row_len();
    let k = means.means.rows();
    if means.means.row_len() != fdim {
        return Err(Error::RejectedInput(format!(
            "feature dim {fdim} does not match mean dim {}",
            means.means.row_len()
        )));
    }
    let m = large_features.rows();
    let mut pseudo = Vec::with_capacity(m);
    let mut confidence = Vec::with_capacity(m);
    for i in 0..m {
        let f = large_features.row(i);
        let neg_d: Vec<f64> = (0..k)
            .map(|c| {
                let d2: f64 = means
                    .means
                    .row(c)
                    .iter()
                    .zip(f)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                -d2.sqrt()
            })
            .collect();
        let sim = loss::softmax(&neg_d);
        let (mut best, mut best_v) = (0usize, sim[0]);
        for (j, &v) in sim.iter().enumerate().skip(1) {
            if v > best_v {
                best = j;
                best_v = v;
            }
        }
        pseudo.push(best);
        confidence.push(best_v);
    }
    let kept = confidence.iter().map(|&c| c >= kappa).collect();
    Ok(RelabelResult {
        pseudo,
        confidence,
        kept,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Small,
    Relabeled,
}

/// The augmented train set: small-loss samples with their given labels plus
/// confidently re-labeled large-loss samples.
#[derive(Debug, Clone)]
pub struct AugmentedSet {
    /// Dataset indices; small-loss members first, then kept re-labels.
    pub indices: Vec<usize>,
    /// Effective label per entry.
    pub labels: Vec<usize>,
    pub provenance: Vec<Provenance>,
}

impl AugmentedSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn count(&self, p: Provenance) -> usize {
        self.provenance.iter().filter(|&&x| x == p).count()
    }
}

pub fn build_augmented(split: &LossSplit, given: &[usize], rl: &RelabelResult) -> AugmentedSet {
    let mut indices = Vec::with_capacity(split.small.len() + rl.kept.len());
    let mut labels = Vec::with_capacity(indices.capacity());
    let mut provenance = Vec::with_capacity(indices.capacity());
    for &i in &split.small {
        indices.push(i);
        labels.push(given[i]);
        provenance.push(Provenance::Small);
    }
    for (pos, &i) in split.large.iter().enumerate() {
        if rl.kept[pos] {
            indices.push(i);
            labels.push(rl.pseudo[pos]);
            provenance.push(Provenance::Relabeled);
        }
    }
    AugmentedSet {
        indices,
        labels,
        provenance,
    }
}

/// An all-samples "augmented" set with the given labels; the standard
/// baseline trains on this.
fn full_given_set(train: &Dataset) -> AugmentedSet {
    AugmentedSet {
        indices: (0..train.len()).collect(),
        labels: train.given_labels().to_vec(),
        provenance: vec![Provenance::Small; train.len()],
    }
}

#[derive(Debug, Clone)]
pub struct FinalEpochOutcome {
    pub mean_loss: f64,
    /// (dataset index, effective label) pairs the network updated on.
    pub selected: Vec<(usize, usize)>,
}

/// One single-network epoch over an augmented set with per-batch small-loss
/// selection at forget rate `r` (self update, no peer).
pub fn final_train_epoch(
    learner: &mut Learner,
    train: &Dataset,
    aug: &AugmentedSet,
    r: f64,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<FinalEpochOutcome> {
    let order = shuffled_indices(aug.len(), rng);
    let mut loss_sum = 0.0;
    let mut loss_count = 0usize;
    let mut selected = Vec::new();
    for chunk in order.chunks(batch_size) {
        let ds_idx: Vec<usize> = chunk.iter().map(|&pos| aug.indices[pos]).collect();
        let labels: Vec<usize> = chunk.iter().map(|&pos| aug.labels[pos]).collect();
        let images = train.images().select_rows(&ds_idx);

        let (logits, _) = learner.net.forward(&images)?;
        let losses = loss::per_sample_losses(&logits, &labels)?;
        loss_sum += losses.iter().sum::<f64>();
        loss_count += losses.len();

        let split = select_small_loss(&losses, r)?;
        let upd = in_batch_order(&split.small);
        let upd_labels: Vec<usize> = upd.iter().map(|&b| labels[b]).collect();
        selected.extend(upd.iter().map(|&b| (ds_idx[b], labels[b])));
        learner.train_step(&images.select_rows(&upd), &upd_labels)?;
    }
    Ok(FinalEpochOutcome {
        mean_loss: loss_sum / loss_count.max(1) as f64,
        selected,
    })
}

/// Everything observable about one epoch.
#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: u32,
    pub train_loss: f64,
    pub test_acc: f64,
    /// (dataset index, label used) for the reported network's own selection.
    pub selected: Vec<(usize, usize)>,
}

/// The Step-3 artifacts.
#[derive(Debug, Clone)]
pub struct RelabelStage {
    pub losses: Vec<f64>,
    pub split: LossSplit,
    /// `[n, feature_dim]` when captured.
    pub features: Option<Tensor>,
    pub means: MeanSet,
    pub relabeling: RelabelResult,
    pub augmented: AugmentedSet,
}

/// Run Step 3 against an already-trained network: whole-set loss split at
/// forget rate `r_update`, class means from the `n_top` lowest-loss samples
/// per class, re-labeling of the large-loss set, and the augmented set.
pub fn compute_relabel_stage(
    net: &Network,
    train: &Dataset,
    r_update: f64,
    t_update: u32,
    n_top: usize,
    kappa: f64,
    keep_features: bool,
) -> Result<RelabelStage> {
    let (losses, features) = eval_losses_features(net, train, true)?;
    let mut split = select_small_loss(&losses, r_update)?;
    split.epoch = t_update;
    let features = features.expect("features requested");
    let means = class_means(
        &features,
        train.given_labels(),
        &split,
        &losses,
        n_top,
        train.k(),
    )?;
    let large_features = features.select_rows(&split.large);
    let relabeling = relabel(&large_features, &means, kappa)?;
    let augmented = build_augmented(&split, train.given_labels(), &relabeling);
    Ok(RelabelStage {
        losses,
        split,
        features: keep_features.then_some(features),
        means,
        relabeling,
        augmented,
    })
}

/// Full run output. Training never reads hidden truth, so everything
/// truth-derived (clean fractions, re-label precision) is computed later by
/// the harness from these records.
#[derive(Debug, Clone)]
pub struct RunTrace {
    pub network: Network,
    pub t_update_net: Option<Network>,
    pub pretext_net: Option<Network>,
    /// True when the variant asked for pretraining but the input shape
    /// cannot support the rotation task.
    pub pretext_skipped: bool,
    pub epochs: Vec<EpochRecord>,
    pub relabel: Option<RelabelStage>,
    pub coteach_logs: Vec<Vec<CoteachBatchLog>>,
}

impl RunTrace {
    pub fn test_accuracy_history(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.test_acc).collect()
    }

    pub fn train_loss_history(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }
}

/// Run the configured variant end to end.
pub fn run_pipeline(cfg: &PipelineConfig, train: &Dataset, test: &Dataset) -> Result<RunTrace> {
    if train.k() != test.k() {
        return Err(Error::RejectedInput(format!(
            "train K={} but test K={}",
            train.k(),
            test.k()
        )));
    }
    if train.sample_shape() != test.sample_shape() {
        return Err(Error::RejectedInput(
            "train/test sample shapes differ".into(),
        ));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let k = train.k();
    let shape = train.sample_shape().to_vec();
    let sched = cfg.schedule;

    // Step 1: initialization, with optional pretext pretraining. The
    // rotation task needs square images; on any other input shape the
    // pretext stage is skipped (and flagged), leaving the variant to run
    // like its no-pretraining counterpart.
    let mut pretext_net = None;
    let mut pretext_skipped = false;
    let mut p = Learner::new(
        build_network(cfg.arch, &shape, k, &mut stream(cfg.seed, streams::INIT_P))?,
        cfg.lr,
    );
    let mut q = Learner::new(
        build_network(cfg.arch, &shape, k, &mut stream(cfg.seed, streams::INIT_Q))?,
        cfg.lr,
    );
    p.opt.eps = cfg.adam_eps;
    q.opt.eps = cfg.adam_eps;
    if cfg.variant == Variant::MctS2r {
        let rotatable = matches!(shape.as_slice(), [_, h, w] if h == w);
        if rotatable {
            let mut pretext_rng = stream(cfg.seed, streams::PRETEXT);
            let mut rotnet = build_network(cfg.arch, &shape, 4, &mut pretext_rng)?;
            pretrain_rotnet(
                &mut rotnet,
                train.images(),
                cfg.pretext_epochs,
                cfg.lr,
                cfg.pretext_batch,
                &mut pretext_rng,
            )?;
            transfer_weights(&rotnet, &mut p.net, cfg.transfer_layers)?;
            transfer_weights(&rotnet, &mut q.net, cfg.transfer_layers)?;
            pretext_net = Some(rotnet);
        } else {
            pretext_skipped = true;
        }
    }

    let mut shuffle_rng = stream(cfg.seed, streams::SHUFFLE);
    let mut epochs: Vec<EpochRecord> = Vec::new();
    let mut coteach_logs: Vec<Vec<CoteachBatchLog>> = Vec::new();
    let mut t_update_net = None;
    let mut relabel_stage = None;

    match cfg.variant {
        Variant::Standard => {
            // Single network, full batches (R = 1), no re-labeling.
            let aug = full_given_set(train);
            for t in 1..=sched.t_max {
                apply_lr_plan(cfg, &mut p, t, sched.t_max);
                let out =
                    final_train_epoch(&mut p, train, &aug, 1.0, cfg.batch_size, &mut shuffle_rng)?;
                epochs.push(EpochRecord {
                    epoch: t,
                    train_loss: out.mean_loss,
                    test_acc: accuracy(&p.net, test)?,
                    selected: out.selected,
                });
                if t == sched.t_update {
                    t_update_net = Some(p.net.clone());
                }
            }
        }
        Variant::Coteaching => {
            for t in 1..=sched.t_max {
                apply_lr_plan(cfg, &mut p, t, sched.t_max);
                apply_lr_plan(cfg, &mut q, t, sched.t_max);
                let r = sched.forget_rate(t - 1);
                let out = coteach_epoch(
                    &mut p,
                    &mut q,
                    train,
                    r,
                    cfg.batch_size,
                    &mut shuffle_rng,
                    cfg.capture_batch_logs,
                )?;
                if let Some(logs) = out.batch_logs {
                    coteach_logs.push(logs);
                }
                epochs.push(EpochRecord {
                    epoch: t,
                    train_loss: out.mean_loss_p,
                    test_acc: accuracy(&p.net, test)?,
                    selected: out.selected_p,
                });
                if t == sched.t_update {
                    t_update_net = Some(p.net.clone());
                }
            }
        }
        Variant::MctR | Variant::MctS2r => {
            // Step 2: co-teach until t_update.
            for t in 1..=sched.t_update {
                apply_lr_plan(cfg, &mut p, t, sched.t_max);
                apply_lr_plan(cfg, &mut q, t, sched.t_max);
                let r = sched.forget_rate(t - 1);
                let out = coteach_epoch(
                    &mut p,
                    &mut q,
                    train,
                    r,
                    cfg.batch_size,
                    &mut shuffle_rng,
                    cfg.capture_batch_logs,
                )?;
                if let Some(logs) = out.batch_logs {
                    coteach_logs.push(logs);
                }
                epochs.push(EpochRecord {
                    epoch: t,
                    train_loss: out.mean_loss_p,
                    test_acc: accuracy(&p.net, test)?,
                    selected: out.selected_p,
                });
            }

            // Step 3: pick one network, split by loss, re-label.
            let mut chosen = match cfg.relabel_net {
                RelabelNet::P => p,
                RelabelNet::Q => q,
            };
            t_update_net = Some(chosen.net.clone());
            relabel_stage = Some(compute_relabel_stage(
                &chosen.net,
                train,
                sched.forget_rate(sched.t_update),
                sched.t_update,
                cfg.n_top,
                cfg.kappa,
                cfg.capture_features,
            )?);
            let aug = &relabel_stage.as_ref().unwrap().augmented;

            // Step 4: single-network training on the augmented set.
            for t in sched.t_update + 1..=sched.t_max {
                apply_lr_plan(cfg, &mut chosen, t, sched.t_max);
                let r = sched.forget_rate(t - 1);
                let out = final_train_epoch(
                    &mut chosen,
                    train,
                    aug,
                    r,
                    cfg.batch_size,
                    &mut shuffle_rng,
                )?;
                epochs.push(EpochRecord {
                    epoch: t,
                    train_loss: out.mean_loss,
                    test_acc: accuracy(&chosen.net, test)?,
                    selected: out.selected,
                });
            }
            p = chosen;
        }
    }

    Ok(RunTrace {
        network: p.net,
        t_update_net,
        pretext_net,
        pretext_skipped,
        epochs,
        relabel: relabel_stage,
        coteach_logs,
    })
}
