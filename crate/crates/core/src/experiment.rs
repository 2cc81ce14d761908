//! Experiment harness: configuration, seeded execution, reports, exports.
//!
//! Configuration comes from a TOML file; every field can be overridden with
//! `key=value` pairs (CLI flags win over the file). A run is deterministic
//! per seed: all randomness flows from the root seed through named streams,
//! so re-running a config reproduces the metrics byte for byte.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::blobs::{make_blobs, make_rendered_blobs};
use crate::data::cifar::{cifar10_test_paths, cifar10_train_paths, load_cifar_binary, CifarVariant};
use crate::data::mnist::load_mnist_idx;
use crate::data::noise::{build_noise_matrix, corrupt_labels, NoiseKind};
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::metrics::{
    avg_last_k, clean_fraction, relabel_quality, small_loss_clean_fraction, RelabelQuality,
};
use crate::nn::ArchPreset;
use crate::pipeline::{run_pipeline, PipelineConfig, RelabelNet, RelabelStage, RunTrace, Variant};
use crate::rng::{stream, streams};
use crate::schedule::Schedule;
use crate::weights::save_weights;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
#[serde(tag = "kind")]
pub enum DatasetConfig {
    Mnist {
        dir: PathBuf,
    },
    Cifar10 {
        dir: PathBuf,
    },
    Cifar100 {
        dir: PathBuf,
    },
    Blobs {
        #[serde(default = "default_classes")]
        classes: usize,
        #[serde(default = "default_train_per_class")]
        train_per_class: usize,
        #[serde(default = "default_test_per_class")]
        test_per_class: usize,
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default = "default_separation")]
        separation: f64,
        #[serde(default = "default_noise_std")]
        noise_std: f64,
    },
    RenderedBlobs {
        #[serde(default = "default_classes")]
        classes: usize,
        #[serde(default = "default_train_per_class")]
        train_per_class: usize,
        #[serde(default = "default_test_per_class")]
        test_per_class: usize,
        #[serde(default = "default_separation")]
        separation: f64,
        #[serde(default = "default_noise_std")]
        noise_std: f64,
        #[serde(default = "default_pixel_noise")]
        pixel_noise: f64,
    },
}

fn default_classes() -> usize {
    5
}
fn default_train_per_class() -> usize {
    400
}
fn default_test_per_class() -> usize {
    200
}
fn default_dim() -> usize {
    10
}
fn default_separation() -> f64 {
    10.0
}
fn default_noise_std() -> f64 {
    1.0
}
fn default_pixel_noise() -> f64 {
    0.05
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub kind: NoiseKind,
    /// True injected corruption rate.
    pub rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    /// Noise level assumed by the forget-rate schedule. Defaults to the
    /// injected rate; set explicitly to probe mismatched assumptions.
    pub epsilon: Option<f64>,
    pub t_k: u32,
    pub t_update: u32,
    pub t_max: u32,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        // reference defaults; desk-scale profiles override t_max explicitly
        ScheduleConfig {
            epsilon: None,
            t_k: 10,
            t_update: 30,
            t_max: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    /// Adam numeric-stability term (see the pipeline docs for why the
    /// conventional 1e-8 misbehaves on already-fit selections).
    pub adam_eps: f64,
    /// Protocol learning-rate plan (linear lr/momentum decay over the last
    /// 60% of the budget).
    pub lr_decay: bool,
    pub batch_size: usize,
    pub arch: ArchPreset,
    /// Early trainable layers transferred from the pretext model;
    /// defaults to the preset's convention (3 conv / 1 dense).
    pub transfer_layers: Option<usize>,
    pub pretext_epochs: u32,
    pub kappa: f64,
    /// Lowest-loss samples per class used for the class means.
    pub n_top: usize,
    pub relabel_net: RelabelNet,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            adam_eps: 1e-8,
            lr_decay: true,
            batch_size: 128,
            arch: ArchPreset::Mlp,
            transfer_layers: None,
            pretext_epochs: 25,
            kappa: 0.90,
            n_top: 50,
            relabel_net: RelabelNet::P,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_variant")]
    pub variant: Variant,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Write features.csv alongside the report (needs the feature matrix).
    #[serde(default)]
    pub export_features: bool,
    pub dataset: DatasetConfig,
    pub noise: NoiseConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_seed() -> u64 {
    1
}
fn default_variant() -> Variant {
    Variant::MctS2r
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config parse error: {e}")))
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn schedule_epsilon(&self) -> f64 {
        self.schedule.epsilon.unwrap_or(self.noise.rate)
    }

    pub fn resolved_schedule(&self) -> Result<Schedule> {
        Schedule::new(
            self.schedule_epsilon(),
            self.schedule.t_k,
            self.schedule.t_update,
            self.schedule.t_max,
        )
    }

    pub fn transfer_layers(&self) -> usize {
        self.train
            .transfer_layers
            .unwrap_or_else(|| self.train.arch.default_transfer_layers())
    }

    /// Every constraint violation, reported together.
    pub fn validate(&self) -> Result<()> {
        let mut errs: Vec<String> = Vec::new();
        if !(0.0..1.0).contains(&self.noise.rate) {
            errs.push(format!(
                "noise.rate must be in [0, 1), got {}",
                self.noise.rate
            ));
        }
        let sched = Schedule {
            epsilon: self.schedule_epsilon(),
            t_k: self.schedule.t_k,
            t_update: self.schedule.t_update,
            t_max: self.schedule.t_max,
        };
        if let Err(mut es) = sched.validate() {
            errs.append(&mut es);
        }
        if self.train.lr <= 0.0 || !self.train.lr.is_finite() {
            errs.push(format!("train.lr must be positive, got {}", self.train.lr));
        }
        if self.train.adam_eps <= 0.0 || !self.train.adam_eps.is_finite() {
            errs.push(format!(
                "train.adam_eps must be positive, got {}",
                self.train.adam_eps
            ));
        }
        if self.train.batch_size == 0 {
            errs.push("train.batch_size must be at least 1".into());
        }
        if self.train.n_top == 0 {
            errs.push("train.n_top must be at least 1".into());
        }
        if !(self.train.kappa >= 0.0 && self.train.kappa.is_finite()) {
            errs.push(format!(
                "train.kappa must be a finite non-negative value, got {}",
                self.train.kappa
            ));
        }
        match &self.dataset {
            DatasetConfig::Blobs {
                classes,
                train_per_class,
                test_per_class,
                dim,
                separation,
                noise_std,
            } => {
                if *classes < 2 {
                    errs.push("dataset.classes must be at least 2".into());
                }
                if *dim < 2 {
                    errs.push("dataset.dim must be at least 2".into());
                }
                if *separation <= 0.0 {
                    errs.push("dataset.separation must be positive".into());
                }
                if *noise_std < 0.0 {
                    errs.push("dataset.noise_std must be non-negative".into());
                }
                if *train_per_class == 0 || *test_per_class == 0 {
                    errs.push("dataset per-class sample counts must be positive".into());
                }
                if self.train.arch == ArchPreset::SmallCnn {
                    errs.push("small-cnn preset needs image data; use rendered-blobs".into());
                }
            }
            DatasetConfig::RenderedBlobs {
                classes,
                train_per_class,
                test_per_class,
                separation,
                noise_std,
                pixel_noise,
            } => {
                if *classes < 2 {
                    errs.push("dataset.classes must be at least 2".into());
                }
                if *separation <= 0.0 {
                    errs.push("dataset.separation must be positive".into());
                }
                if *noise_std < 0.0 || *pixel_noise < 0.0 {
                    errs.push("dataset noise levels must be non-negative".into());
                }
                if *train_per_class == 0 || *test_per_class == 0 {
                    errs.push("dataset per-class sample counts must be positive".into());
                }
            }
            DatasetConfig::Mnist { dir }
            | DatasetConfig::Cifar10 { dir }
            | DatasetConfig::Cifar100 { dir } => {
                if !dir.is_dir() {
                    errs.push(format!("dataset.dir {} is not a directory", dir.display()));
                }
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }

    /// Set one field from its config path, e.g. `schedule.t_update=20`,
    /// `train.kappa=0.8`, `variant=mct-r`. This is the override mechanism
    /// used by CLI flags and sweeps.
    pub fn set_key(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("cannot parse {value:?} as {what} for {key}"));
        macro_rules! parse {
            ($t:ty, $what:expr) => {
                value.parse::<$t>().map_err(|_| bad($what))?
            };
        }
        match key {
            "seed" => self.seed = parse!(u64, "integer"),
            "variant" => {
                self.variant = match value {
                    "standard" => Variant::Standard,
                    "coteaching" => Variant::Coteaching,
                    "mct-r" => Variant::MctR,
                    "mct-s2r" => Variant::MctS2r,
                    _ => return Err(bad("variant")),
                }
            }
            "out_dir" => self.out_dir = Some(PathBuf::from(value)),
            "export_features" => self.export_features = parse!(bool, "bool"),
            "noise.kind" => {
                self.noise.kind = match value {
                    "symmetric" => NoiseKind::Symmetric,
                    "pairflip" => NoiseKind::Pairflip,
                    _ => return Err(bad("noise kind")),
                }
            }
            "noise.rate" => self.noise.rate = parse!(f64, "float"),
            "schedule.epsilon" => self.schedule.epsilon = Some(parse!(f64, "float")),
            "schedule.t_k" => self.schedule.t_k = parse!(u32, "integer"),
            "schedule.t_update" => self.schedule.t_update = parse!(u32, "integer"),
            "schedule.t_max" => self.schedule.t_max = parse!(u32, "integer"),
            "train.lr" => self.train.lr = parse!(f64, "float"),
            "train.adam_eps" => self.train.adam_eps = parse!(f64, "float"),
            "train.lr_decay" => self.train.lr_decay = parse!(bool, "bool"),
            "train.batch_size" => self.train.batch_size = parse!(usize, "integer"),
            "train.arch" => {
                self.train.arch = match value {
                    "mlp" => ArchPreset::Mlp,
                    "small-cnn" => ArchPreset::SmallCnn,
                    _ => return Err(bad("architecture preset")),
                }
            }
            "train.transfer_layers" => {
                self.train.transfer_layers = Some(parse!(usize, "integer"))
            }
            "train.pretext_epochs" => self.train.pretext_epochs = parse!(u32, "integer"),
            "train.kappa" => self.train.kappa = parse!(f64, "float"),
            "train.n_top" => self.train.n_top = parse!(usize, "integer"),
            "train.relabel_net" => {
                self.train.relabel_net = match value {
                    "p" => RelabelNet::P,
                    "q" => RelabelNet::Q,
                    _ => return Err(bad("relabel net (p or q)")),
                }
            }
            _ => {
                if let Some(rest) = key.strip_prefix("dataset.") {
                    return self.set_dataset_key(rest, value);
                }
                return Err(Error::Config(format!("unknown config key {key:?}")));
            }
        }
        Ok(())
    }

    fn set_dataset_key(&mut self, key: &str, value: &str) -> Result<()> {
        let bad =
            |what: &str| Error::Config(format!("cannot parse {value:?} as {what} for dataset.{key}"));
        match (&mut self.dataset, key) {
            (
                DatasetConfig::Mnist { dir }
                | DatasetConfig::Cifar10 { dir }
                | DatasetConfig::Cifar100 { dir },
                "dir",
            ) => *dir = PathBuf::from(value),
            (DatasetConfig::Blobs { classes, .. } | DatasetConfig::RenderedBlobs { classes, .. }, "classes") => {
                *classes = value.parse().map_err(|_| bad("integer"))?
            }
            (
                DatasetConfig::Blobs { train_per_class, .. }
                | DatasetConfig::RenderedBlobs { train_per_class, .. },
                "train_per_class",
            ) => *train_per_class = value.parse().map_err(|_| bad("integer"))?,
            (
                DatasetConfig::Blobs { test_per_class, .. }
                | DatasetConfig::RenderedBlobs { test_per_class, .. },
                "test_per_class",
            ) => *test_per_class = value.parse().map_err(|_| bad("integer"))?,
            (DatasetConfig::Blobs { dim, .. }, "dim") => {
                *dim = value.parse().map_err(|_| bad("integer"))?
            }
            (
                DatasetConfig::Blobs { separation, .. }
                | DatasetConfig::RenderedBlobs { separation, .. },
                "separation",
            ) => *separation = value.parse().map_err(|_| bad("float"))?,
            (
                DatasetConfig::Blobs { noise_std, .. }
                | DatasetConfig::RenderedBlobs { noise_std, .. },
                "noise_std",
            ) => *noise_std = value.parse().map_err(|_| bad("float"))?,
            (DatasetConfig::RenderedBlobs { pixel_noise, .. }, "pixel_noise") => {
                *pixel_noise = value.parse().map_err(|_| bad("float"))?
            }
            _ => {
                return Err(Error::Config(format!(
                    "key dataset.{key} does not apply to this dataset kind"
                )))
            }
        }
        Ok(())
    }
}

/// First existing candidate among `name` and `name.gz` under `dir`.
fn idx_file(dir: &Path, name: &str) -> Result<PathBuf> {
    let plain = dir.join(name);
    if plain.is_file() {
        return Ok(plain);
    }
    let gz = dir.join(format!("{name}.gz"));
    if gz.is_file() {
        return Ok(gz);
    }
    Err(Error::io(
        plain,
        std::io::Error::new(std::io::ErrorKind::NotFound, "file not found (also tried .gz)"),
    ))
}

/// Materialize the train/test pair described by the config. The train split
/// is corrupted with the configured noise via the `noise` stream.
pub fn load_datasets(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let (train, test) = match &cfg.dataset {
        DatasetConfig::Mnist { dir } => {
            let train = load_mnist_idx(
                &idx_file(dir, "train-images-idx3-ubyte")?,
                &idx_file(dir, "train-labels-idx1-ubyte")?,
                Split::Train,
            )?;
            let test = load_mnist_idx(
                &idx_file(dir, "t10k-images-idx3-ubyte")?,
                &idx_file(dir, "t10k-labels-idx1-ubyte")?,
                Split::Test,
            )?;
            (train, test)
        }
        DatasetConfig::Cifar10 { dir } => {
            let train = load_cifar_binary(&cifar10_train_paths(dir), CifarVariant::Cifar10, Split::Train)?;
            let test = load_cifar_binary(&cifar10_test_paths(dir), CifarVariant::Cifar10, Split::Test)?;
            (train, test)
        }
        DatasetConfig::Cifar100 { dir } => {
            let train = load_cifar_binary(
                &[dir.join("train.bin")],
                CifarVariant::Cifar100,
                Split::Train,
            )?;
            let test = load_cifar_binary(
                &[dir.join("test.bin")],
                CifarVariant::Cifar100,
                Split::Test,
            )?;
            (train, test)
        }
        DatasetConfig::Blobs {
            classes,
            train_per_class,
            test_per_class,
            dim,
            separation,
            noise_std,
        } => {
            let train = make_blobs(
                *classes,
                *train_per_class,
                *dim,
                *separation,
                *noise_std,
                cfg.seed,
                Split::Train,
            )?;
            let test = make_blobs(
                *classes,
                *test_per_class,
                *dim,
                *separation,
                *noise_std,
                cfg.seed,
                Split::Test,
            )?;
            (train, test)
        }
        DatasetConfig::RenderedBlobs {
            classes,
            train_per_class,
            test_per_class,
            separation,
            noise_std,
            pixel_noise,
        } => {
            let train = make_rendered_blobs(
                *classes,
                *train_per_class,
                *separation,
                *noise_std,
                *pixel_noise,
                cfg.seed,
                Split::Train,
            )?;
            let test = make_rendered_blobs(
                *classes,
                *test_per_class,
                *separation,
                *noise_std,
                *pixel_noise,
                cfg.seed,
                Split::Test,
            )?;
            (train, test)
        }
    };
    let matrix = build_noise_matrix(cfg.noise.kind, cfg.noise.rate, train.k())?;
    let mut noise_rng = stream(cfg.seed, streams::NOISE);
    let train = corrupt_labels(train, &matrix, &mut noise_rng)?;
    Ok((train, test))
}

pub fn pipeline_config(cfg: &ExperimentConfig) -> Result<PipelineConfig> {
    Ok(PipelineConfig {
        variant: cfg.variant,
        schedule: cfg.resolved_schedule()?,
        kappa: cfg.train.kappa,
        n_top: cfg.train.n_top,
        lr: cfg.train.lr,
        adam_eps: cfg.train.adam_eps,
        lr_decay: cfg.train.lr_decay,
        batch_size: cfg.train.batch_size,
        arch: cfg.train.arch,
        transfer_layers: cfg.transfer_layers(),
        pretext_epochs: cfg.train.pretext_epochs,
        pretext_batch: cfg.train.batch_size,
        relabel_net: cfg.train.relabel_net,
        seed: cfg.seed,
        capture_features: cfg.export_features,
        capture_batch_logs: false,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct EpochMetrics {
    pub epoch: u32,
    pub train_loss: f64,
    pub test_acc: f64,
    /// Fraction of this epoch's selected (index, label) pairs whose label
    /// matches the hidden truth.
    pub clean_frac_small: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SetSizes {
    pub small: usize,
    pub large: usize,
    pub relabeled_kept: usize,
    pub augmented: usize,
}

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub variant: String,
    pub epochs: Vec<EpochMetrics>,
    /// Mean test accuracy over the last 10 epochs (or all, if fewer).
    pub avg_last10_acc: f64,
    pub final_acc: f64,
    /// Clean fraction of the whole-set small-loss split at t_update.
    pub clean_frac_at_t_update: Option<f64>,
    pub relabel: Option<RelabelQuality>,
    pub sizes: Option<SetSizes>,
    pub fallback_classes: Vec<usize>,
    pub pretext_skipped: bool,
    pub wall_clock_seconds: f64,
}

impl RunReport {
    pub fn epochs_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,test_acc,clean_frac_small\n");
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                e.epoch, e.train_loss, e.test_acc, e.clean_frac_small
            );
        }
        out
    }
}

/// Truth-side post-processing of a finished run.
fn build_report(
    cfg: &ExperimentConfig,
    trace: &RunTrace,
    train: &Dataset,
    wall_clock_seconds: f64,
) -> Result<RunReport> {
    let epochs: Vec<EpochMetrics> = trace
        .epochs
        .iter()
        .map(|e| EpochMetrics {
            epoch: e.epoch,
            train_loss: e.train_loss,
            test_acc: e.test_acc,
            clean_frac_small: clean_fraction(&e.selected, train),
        })
        .collect();
    let acc: Vec<f64> = trace.test_accuracy_history();
    let k_last = acc.len().min(10);
    let avg_last10_acc = avg_last_k(&acc, k_last)?;
    let (clean_at_update, relabel, sizes, fallback) = match &trace.relabel {
        Some(stage) => (
            Some(small_loss_clean_fraction(&stage.split, train)),
            Some(relabel_quality(&stage.split, &stage.relabeling, train)),
            Some(SetSizes {
                small: stage.split.small.len(),
                large: stage.split.large.len(),
                relabeled_kept: stage.relabeling.kept.iter().filter(|&&k| k).count(),
                augmented: stage.augmented.len(),
            }),
            stage.means.fallback_classes.clone(),
        ),
        None => (None, None, None, Vec::new()),
    };
    Ok(RunReport {
        config: cfg.clone(),
        seed: cfg.seed,
        variant: cfg.variant.name().to_string(),
        epochs,
        avg_last10_acc,
        final_acc: acc.last().copied().unwrap_or(0.0),
        clean_frac_at_t_update: clean_at_update,
        relabel,
        sizes,
        fallback_classes: fallback,
        pretext_skipped: trace.pretext_skipped,
        wall_clock_seconds,
    })
}

/// The features.csv export: one row per train sample with its loss, split
/// membership, labels, re-label outcome, and the feature vector. Small-loss
/// rows carry pseudo_label -1 and confidence 0.
pub fn features_csv(stage: &RelabelStage, dataset: &Dataset) -> Result<String> {
    let features = stage.features.as_ref().ok_or_else(|| {
        Error::RejectedInput("feature matrix was not captured for this run".into())
    })?;
    let fdim = features.row_len();
    let truth = dataset.truth();
    let n = dataset.len();

    let mut is_small = vec![false; n];
    for &i in &stage.split.small {
        is_small[i] = true;
    }
    let mut pseudo = vec![-1i64; n];
    let mut confidence = vec![0.0f64; n];
    let mut kept = vec![false; n];
    for (pos, &i) in stage.split.large.iter().enumerate() {
        pseudo[i] = stage.relabeling.pseudo[pos] as i64;
        confidence[i] = stage.relabeling.confidence[pos];
        kept[i] = stage.relabeling.kept[pos];
    }

    let mut out = String::from("sample_index,loss,is_small,given_label,true_label,pseudo_label,confidence,kept");
    for d in 0..fdim {
        let _ = write!(out, ",f_{d}");
    }
    out.push('\n');
    for i in 0..n {
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},{}",
            i,
            stage.losses[i],
            is_small[i],
            dataset.given_labels()[i],
            truth.labels()[i],
            pseudo[i],
            confidence[i],
            kept[i]
        );
        for v in features.row(i) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    Ok(out)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Run one experiment end to end: validate, load data, train, post-process,
/// and (when an output directory is set) write report.json, epochs.csv,
/// checkpoints, and optionally features.csv.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let start = Instant::now();
    let (train, test) = load_datasets(cfg)?;
    let pcfg = pipeline_config(cfg)?;
    let trace = run_pipeline(&pcfg, &train, &test)?;
    let report = build_report(cfg, &trace, &train, start.elapsed().as_secs_f64())?;

    if let Some(dir) = &cfg.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = serde_json::to_string_pretty(&report)
            .map_err(|e| Error::Config(format!("report serialization failed: {e}")))?;
        write_file(&dir.join("report.json"), &json)?;
        write_file(&dir.join("epochs.csv"), &report.epochs_csv())?;
        save_weights(&trace.network, &dir.join("final.nlwt"))?;
        if let Some(net) = &trace.t_update_net {
            save_weights(net, &dir.join("t_update.nlwt"))?;
        }
        if let Some(net) = &trace.pretext_net {
            save_weights(net, &dir.join("pretext.nlwt"))?;
        }
        if cfg.export_features {
            if let Some(stage) = &trace.relabel {
                write_file(&dir.join("features.csv"), &features_csv(stage, &train)?)?;
            }
        }
    }
    Ok(report)
}

/// One comparison row: avg-last-10 accuracy aggregated over seeds.
#[derive(Debug, Clone, Serialize)]
pub struct CompareRow {
    pub variant: String,
    pub mean: f64,
    pub std: f64,
    pub per_seed: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareTable {
    pub rows: Vec<CompareRow>,
    pub seeds: Vec<u64>,
}

impl CompareTable {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<12} {:>10} {:>10}  per-seed", "variant", "mean", "std");
        for r in &self.rows {
            let per: Vec<String> = r.per_seed.iter().map(|a| format!("{:.4}", a)).collect();
            let _ = writeln!(
                out,
                "{:<12} {:>10.4} {:>10.4}  [{}]",
                r.variant,
                r.mean,
                r.std,
                per.join(", ")
            );
        }
        out
    }
}

/// Run each variant over each seed and tabulate avg-last-10 accuracy.
pub fn compare_baselines(
    base: &ExperimentConfig,
    variants: &[Variant],
    seeds: &[u64],
) -> Result<CompareTable> {
    if variants.len() < 2 {
        return Err(Error::Config("compare needs at least 2 variants".into()));
    }
    if seeds.is_empty() {
        return Err(Error::Config("compare needs at least 1 seed".into()));
    }
    let mut rows = Vec::new();
    for &variant in variants {
        let mut per_seed = Vec::new();
        for &seed in seeds {
            let mut cfg = base.clone();
            cfg.variant = variant;
            cfg.seed = seed;
            cfg.out_dir = None;
            cfg.export_features = false;
            per_seed.push(run_experiment(&cfg)?.avg_last10_acc);
        }
        let mean = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
        let var =
            per_seed.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / per_seed.len() as f64;
        rows.push(CompareRow {
            variant: variant.name().to_string(),
            mean,
            std: var.sqrt(),
            per_seed,
        });
    }
    Ok(CompareTable {
        rows,
        seeds: seeds.to_vec(),
    })
}

/// Cartesian sweep over `key=v1,v2,...` parameter lists. Returns one
/// (assignment description, report) pair per combination.
pub fn sweep(
    base: &ExperimentConfig,
    params: &[(String, Vec<String>)],
) -> Result<Vec<(String, RunReport)>> {
    if params.is_empty() {
        return Err(Error::Config("sweep needs at least one --param".into()));
    }
    let mut combos: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for (key, values) in params {
        let mut next = Vec::new();
        for combo in &combos {
            for v in values {
                let mut c = combo.clone();
                c.push((key.clone(), v.clone()));
                next.push(c);
            }
        }
        combos = next;
    }
    let mut out = Vec::with_capacity(combos.len());
    for combo in combos {
        let mut cfg = base.clone();
        let mut desc_parts = Vec::new();
        for (k, v) in &combo {
            cfg.set_key(k, v)?;
            desc_parts.push(format!("{k}={v}"));
        }
        let desc = desc_parts.join(",");
        if let Some(dir) = &base.out_dir {
            let slug: String = desc
                .chars()
                .map(|c| if c.is_alphanumeric() { c } else { '-' })
                .collect();
            cfg.out_dir = Some(dir.join(slug));
        }
        let report = run_experiment(&cfg)?;
        out.push((desc, report));
    }
    Ok(out)
}
