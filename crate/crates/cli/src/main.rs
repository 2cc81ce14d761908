//! `mct` — noisy-label training experiments from the command line.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use mct_core::experiment::{
    compare_baselines, features_csv, load_datasets, pipeline_config, run_experiment, sweep,
    ExperimentConfig, RunReport,
};
use mct_core::nn::build_network;
use mct_core::pipeline::{compute_relabel_stage, Variant};
use mct_core::rng::stream;
use mct_core::weights::load_weights;

#[derive(Parser)]
#[command(
    name = "mct",
    about = "Noisy-label training: co-teaching, self-supervised pretraining, re-labeling",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a single experiment from a config file.
    Run(RunArgs),
    /// Run the cartesian product of parameter lists.
    Sweep(SweepArgs),
    /// Run several variants over several seeds and tabulate them.
    Compare(CompareArgs),
    /// Write the re-label stage feature table (features.csv).
    ExportFeatures(ExportArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Override one config key, e.g. --set train.kappa=0.8 (repeatable;
    /// flags win over the file).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Root seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Variant override: standard | coteaching | mct-r | mct-s2r.
    #[arg(long)]
    variant: Option<String>,
    /// Output directory override.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::from_toml_file(&self.config)
            .with_context(|| format!("loading {}", self.config.display()))?;
        for kv in &self.sets {
            let (key, value) = kv
                .split_once('=')
                .with_context(|| format!("--set needs KEY=VALUE, got {kv:?}"))?;
            cfg.set_key(key.trim(), value.trim())?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(v) = &self.variant {
            cfg.set_key("variant", v)?;
        }
        if let Some(dir) = &self.out_dir {
            cfg.out_dir = Some(dir.clone());
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Parameter list, e.g. --param schedule.t_update=10,20,30 (repeatable;
    /// the sweep runs the cartesian product).
    #[arg(long = "param", value_name = "KEY=V1,V2,...", required = true)]
    params: Vec<String>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Comma-separated variants to compare.
    #[arg(long, value_delimiter = ',', default_value = "standard,coteaching,mct-r,mct-s2r")]
    variants: Vec<String>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    seeds: Vec<u64>,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Destination CSV path.
    #[arg(long)]
    out: PathBuf,
    /// NLWT checkpoint to evaluate instead of training (e.g. the
    /// t_update.nlwt a previous run wrote).
    #[arg(long)]
    weights: Option<PathBuf>,
}

fn parse_variant(s: &str) -> Result<Variant> {
    Ok(match s {
        "standard" => Variant::Standard,
        "coteaching" => Variant::Coteaching,
        "mct-r" => Variant::MctR,
        "mct-s2r" => Variant::MctS2r,
        other => bail!("unknown variant {other:?}"),
    })
}

fn print_summary(report: &RunReport) {
    println!(
        "variant={} seed={} epochs={}",
        report.variant,
        report.seed,
        report.epochs.len()
    );
    println!(
        "final test acc {:.4} | avg last-10 {:.4} | wall clock {:.1}s",
        report.final_acc, report.avg_last10_acc, report.wall_clock_seconds
    );
    if let Some(sizes) = &report.sizes {
        println!(
            "small {} | large {} | re-labeled kept {} | augmented {}",
            sizes.small, sizes.large, sizes.relabeled_kept, sizes.augmented
        );
    }
    if let Some(clean) = report.clean_frac_at_t_update {
        println!("small-loss clean fraction at t_update: {clean:.4}");
    }
    if let Some(rq) = &report.relabel {
        println!(
            "re-label precision {:.4} | recall {:.4} ({} kept of {} large)",
            rq.precision, rq.recall, rq.kept, rq.large
        );
    }
    if report.pretext_skipped {
        println!("note: pretext stage skipped (input not square images)");
    }
    if !report.fallback_classes.is_empty() {
        println!(
            "note: class-mean fallback used for classes {:?}",
            report.fallback_classes
        );
    }
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let cfg = args.config.load()?;
    let report = run_experiment(&cfg)?;
    print_summary(&report);
    if let Some(dir) = &cfg.out_dir {
        println!("outputs in {}", dir.display());
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let cfg = args.config.load()?;
    let mut params = Vec::new();
    for p in &args.params {
        let (key, values) = p
            .split_once('=')
            .with_context(|| format!("--param needs KEY=V1,V2,..., got {p:?}"))?;
        let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).collect();
        params.push((key.trim().to_string(), values));
    }
    let runs = sweep(&cfg, &params)?;
    let mut summary = String::from("assignment,avg_last10_acc,final_acc\n");
    println!("{:<48} {:>12} {:>10}", "assignment", "avg-last10", "final");
    for (desc, report) in &runs {
        println!(
            "{:<48} {:>12.4} {:>10.4}",
            desc, report.avg_last10_acc, report.final_acc
        );
        summary.push_str(&format!(
            "\"{}\",{},{}\n",
            desc, report.avg_last10_acc, report.final_acc
        ));
    }
    if let Some(dir) = &cfg.out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("sweep.csv"), summary)?;
        println!("summary written to {}", dir.join("sweep.csv").display());
    }
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<()> {
    let cfg = args.config.load()?;
    let variants: Vec<Variant> = args
        .variants
        .iter()
        .map(|v| parse_variant(v))
        .collect::<Result<_>>()?;
    let table = compare_baselines(&cfg, &variants, &args.seeds)?;
    print!("{}", table.render());
    if let Some(dir) = &cfg.out_dir {
        std::fs::create_dir_all(dir)?;
        let mut csv = String::from("variant,mean_avg_last10,std,per_seed\n");
        for row in &table.rows {
            let per: Vec<String> = row.per_seed.iter().map(|a| a.to_string()).collect();
            csv.push_str(&format!(
                "{},{},{},\"{}\"\n",
                row.variant,
                row.mean,
                row.std,
                per.join(";")
            ));
        }
        std::fs::write(dir.join("compare.csv"), csv)?;
        println!("table written to {}", dir.join("compare.csv").display());
    }
    Ok(())
}

fn cmd_export_features(args: ExportArgs) -> Result<()> {
    let mut cfg = args.config.load()?;
    cfg.validate()?;
    match &args.weights {
        Some(weights) => {
            // evaluate a checkpoint without training
            let (train, _test) = load_datasets(&cfg)?;
            let mut net = build_network(
                cfg.train.arch,
                train.sample_shape(),
                train.k(),
                &mut stream(cfg.seed, "export-init"),
            )?;
            load_weights(&mut net, weights)?;
            let sched = cfg.resolved_schedule()?;
            let stage = compute_relabel_stage(
                &net,
                &train,
                sched.forget_rate(sched.t_update),
                sched.t_update,
                cfg.train.n_top,
                cfg.train.kappa,
                true,
            )?;
            std::fs::write(&args.out, features_csv(&stage, &train)?)?;
        }
        None => {
            // full run with feature capture, then place the table at --out
            cfg.export_features = true;
            let pcfg = pipeline_config(&cfg)?;
            let (train, test) = load_datasets(&cfg)?;
            let trace = mct_core::pipeline::run_pipeline(&pcfg, &train, &test)?;
            let stage = trace
                .relabel
                .as_ref()
                .context("this variant has no re-label stage; use mct-r or mct-s2r")?;
            std::fs::write(&args.out, features_csv(stage, &train)?)?;
        }
    }
    println!("features written to {}", args.out.display());
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Run(args) => cmd_run(args),
        Cmd::Sweep(args) => cmd_sweep(args),
        Cmd::Compare(args) => cmd_compare(args),
        Cmd::ExportFeatures(args) => cmd_export_features(args),
    }
}
