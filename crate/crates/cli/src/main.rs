//! Command-line front end: resolves a config (profile defaults, optional
//! file, flag overrides) and dispatches one experiment stage against it.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use myelin::config::{ExperimentConfig, Profile};
use myelin::experiment::{
    cmd_embed, cmd_evaluate, cmd_explain, cmd_finetune, cmd_prepare, cmd_pretrain, cmd_probe,
    ClassifierStage, ProbeInit, RunPaths,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProfileArg {
    Paper,
    Tiny,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Paper => Profile::Paper,
            ProfileArg::Tiny => Profile::Tiny,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StageArg {
    Probe,
    ProbeRandom,
    Finetune,
}

impl From<StageArg> for ClassifierStage {
    fn from(s: StageArg) -> Self {
        match s {
            StageArg::Probe => ClassifierStage::Probe,
            StageArg::ProbeRandom => ClassifierStage::ProbeRandom,
            StageArg::Finetune => ClassifierStage::Finetune,
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "myelin",
    version,
    about = "Self-supervised representation learning on small grayscale image corpora"
)]
struct Cli {
    /// Key-value config file applied over the profile defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override experiment.seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Baseline defaults: `paper` (published scale) or `tiny` (desk scale).
    #[arg(long, global = true, value_enum, default_value_t = ProfileArg::Paper)]
    profile: ProfileArg,

    /// Override data.workers.
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,

    /// Override experiment.out_dir.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Print the fully resolved config in canonical order and exit.
    #[arg(long, global = true)]
    print_config: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Scan or generate the dataset, balance classes, and write split manifests.
    Prepare,
    /// Self-supervised pretraining on the train split.
    Pretrain,
    /// Train a linear classifier on frozen encoder features.
    Probe {
        /// Use a freshly initialized encoder instead of the pretrained one
        /// (the control for how much pretraining bought).
        #[arg(long)]
        random_init: bool,
    },
    /// Fine-tune the pretrained encoder and a fresh head jointly.
    Finetune,
    /// Test-split metrics for a trained classifier.
    Evaluate {
        /// Which trained classifier to score.
        #[arg(long, value_enum, default_value_t = StageArg::Finetune)]
        stage: StageArg,
    },
    /// Class-activation-map overlays for a sample of test images.
    Explain {
        /// Which trained classifier to explain.
        #[arg(long, value_enum, default_value_t = StageArg::Finetune)]
        stage: StageArg,
    },
    /// 2-D projection of encoder features with cluster/label agreement.
    Embed,
}

fn resolve_config(cli: &Cli) -> Result<ExperimentConfig> {
    let profile = Profile::from(cli.profile);
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path, profile)
            .with_context(|| format!("reading config {}", path.display()))?,
        None => ExperimentConfig::defaults(profile),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(workers) = cli.workers {
        cfg.workers = workers;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    let cfg = resolve_config(&cli)?;

    if cli.print_config {
        print!("{}", cfg.dump());
        return Ok(());
    }

    let Some(command) = cli.command else {
        bail!("no subcommand given; run `myelin --help` for the stage list");
    };

    cfg.validate()?;
    let run_dir = RunPaths::new(&cfg).root;
    log::info!("run directory: {}", run_dir.display());

    match command {
        Command::Prepare => {
            let report = cmd_prepare(&cfg)?;
            println!("prepared {} classes under {}", report.classes.len(), run_dir.display());
            println!(
                "records: {} -> {} after balancing",
                report.counts_before.iter().sum::<usize>(),
                report.counts_after.iter().sum::<usize>()
            );
            println!(
                "split: train {} / val {} / test {}",
                report.train_total, report.val_total, report.test_total
            );
        }
        Command::Pretrain => {
            let outcome = cmd_pretrain(&cfg)?;
            match outcome.best {
                Some((epoch, val)) => println!(
                    "pretrained {} for {} epochs (best val {:.6} at epoch {}{})",
                    cfg.method.as_str(),
                    outcome.curve.len(),
                    val,
                    epoch,
                    if outcome.stopped_early { ", stopped early" } else { "" }
                ),
                None => println!("pretraining ran no epochs"),
            }
        }
        Command::Probe { random_init } => {
            let init = if random_init { ProbeInit::Random } else { ProbeInit::Pretrained };
            let report = cmd_probe(&cfg, init)?;
            println!(
                "probe ({}) val accuracy {:.4}, weighted F1 {:.4}",
                if random_init { "random init" } else { "pretrained" },
                report.val.accuracy,
                report.val.f1_weighted
            );
        }
        Command::Finetune => {
            let report = cmd_finetune(&cfg)?;
            println!(
                "finetune val accuracy {:.4}, weighted F1 {:.4}{}",
                report.val.accuracy,
                report.val.f1_weighted,
                if report.outcome.stopped_early { " (stopped early)" } else { "" }
            );
        }
        Command::Evaluate { stage } => {
            let report = cmd_evaluate(&cfg, stage.into())?;
            println!("test accuracy  {:.4}", report.accuracy);
            println!("weighted prec  {:.4}", report.precision_weighted);
            println!("weighted rec   {:.4}", report.recall_weighted);
            println!("weighted F1    {:.4}", report.f1_weighted);
            println!("macro F1       {:.4}", report.f1_macro);
            println!("samples        {}", report.total);
        }
        Command::Explain { stage } => {
            let report = cmd_explain(&cfg, stage.into())?;
            println!(
                "wrote {} activation-map sets under {}",
                report.entries.len(),
                run_dir.join("explain").display()
            );
        }
        Command::Embed => {
            let report = cmd_embed(&cfg)?;
            println!(
                "projected {} points into {} clusters; adjusted Rand index {:.4}",
                report.points, report.clusters, report.adjusted_rand_index
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
