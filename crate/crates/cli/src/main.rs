use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hpinn_core::checkpoint::Checkpoint;
use hpinn_core::config::RunConfig;
use hpinn_core::data::{parse_subset, Subset};
use hpinn_core::model::Ablation;
use hpinn_core::pipeline::{evaluate_checkpoints, export_hidden, run_trial, ExportSplit};
use hpinn_core::prepared::PreparedDataset;
use hpinn_core::synthetic::{generate, write_subset, SyntheticSpec};
use hpinn_core::CoreError;

#[derive(Parser, Debug)]
#[command(name = "hpinn", version, about = "Remaining-useful-life prediction on C-MAPSS")]
struct Cli {
    /// Repeat for more log output (-v debug, -vv trace).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse a raw subset, drop constant sensors, normalize and write a prepared dataset.
    Prepare {
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        subset: Option<Subset>,
        /// Output file (default: <output.dir>/<subset>.prepared.csv).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train one trial and write checkpoint.bin, history.jsonl and config.toml.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, conflicts_with = "trials")]
        seed: Option<u64>,
        /// Train seeds 1..=N, one trial directory `seed<k>` each under --out.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        trials: Option<u64>,
        #[arg(long)]
        ablation: Option<Ablation>,
        /// Trial directory (default: <output.dir>/<subset>-<ablation>-seed<seed>,
        /// or <output.dir>/<subset>-<ablation> with --trials).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Prepared dataset; its subset overrides the config.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score checkpoints on the last window of every test unit.
    Evaluate {
        #[arg(long, required = true, num_args = 1..)]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        data_dir: PathBuf,
        /// Directory for report.json and per_unit.csv.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Report raw predictions instead of clamping them to [0, 125].
        #[arg(long)]
        no_clamp: bool,
    },
    /// Write hidden states and predictions per window as CSV.
    ExportHidden {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Prepared dataset (default: the one named in the checkpoint's config).
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// test, train-all, train or validation.
        #[arg(long, default_value = "test")]
        split: ExportSplit,
        /// Output file (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic fleet in the raw C-MAPSS file layout.
    GenerateSynthetic {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "FD001")]
        subset: Subset,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// A dozen short units instead of the published unit counts.
        #[arg(long)]
        small: bool,
    },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, CoreError> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn prepare(data_dir: Option<PathBuf>, subset: Option<Subset>, out: Option<PathBuf>, config: Option<PathBuf>) -> Result<(), CoreError> {
    let mut cfg = load_config(config.as_deref())?;
    if let Some(d) = data_dir {
        cfg.data.data_dir = d;
    }
    if let Some(s) = subset {
        cfg.data.subset = s;
    }
    let cfg = cfg.validated()?;
    let out = out.unwrap_or_else(|| cfg.prepared_path());
    let raw = parse_subset(&cfg.data.data_dir, cfg.data.subset)?;
    let data = PreparedDataset::prepare(&raw, cfg.data.subset, cfg.data.validation_fraction, cfg.data.split_seed)?;
    data.write(&out)?;
    let summary = data.summary()?;
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    log::info!("wrote {}", out.display());
    Ok(())
}

struct TrainArgs {
    config: Option<PathBuf>,
    seed: Option<u64>,
    trials: Option<u64>,
    ablation: Option<Ablation>,
    out: Option<PathBuf>,
    dataset: Option<PathBuf>,
    epochs: Option<usize>,
}

fn train(args: TrainArgs) -> Result<(), CoreError> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(a) = args.ablation {
        cfg.model.ablation = a;
    }
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    let mut cfg = cfg.validated()?;
    let dataset = args.dataset.unwrap_or_else(|| cfg.prepared_path());
    let data = PreparedDataset::read(&dataset)?;
    if data.header.subset != cfg.data.subset {
        log::info!("using subset {} from {}", data.header.subset, dataset.display());
        cfg.data.subset = data.header.subset;
    }
    cfg.data.prepared = Some(dataset);
    let runs: Vec<(u64, PathBuf)> = match args.trials {
        None => {
            let out = args.out.unwrap_or_else(|| {
                cfg.output.dir.join(format!("{}-{}-seed{}", cfg.data.subset, cfg.model.ablation, cfg.seed))
            });
            vec![(cfg.seed, out)]
        }
        Some(n) => {
            let root = args.out.unwrap_or_else(|| cfg.output.dir.join(format!("{}-{}", cfg.data.subset, cfg.model.ablation)));
            (1..=n).map(|k| (k, root.join(format!("seed{k}")))).collect()
        }
    };
    for (seed, out) in runs {
        cfg.seed = seed;
        println!("# effective configuration\n{}", cfg.to_toml());
        let art = run_trial(&cfg, &data, seed, &out)?;
        println!(
            "best epoch {} of {}: validation RMSE {:.4}\ncheckpoint {}\nhistory {}",
            art.best_epoch,
            art.epochs_run,
            art.best_val_rmse,
            art.checkpoint.display(),
            art.history.display()
        );
    }
    Ok(())
}

fn evaluate(checkpoints: Vec<PathBuf>, data_dir: PathBuf, out: Option<PathBuf>, no_clamp: bool) -> Result<(), CoreError> {
    let report = evaluate_checkpoints(&checkpoints, &data_dir, !no_clamp)?;
    print!("{}", report.summary());
    if let Some(dir) = out {
        fs::create_dir_all(&dir).map_err(|e| CoreError::Io { path: dir.clone(), source: e })?;
        report.write_json(&dir.join("report.json"))?;
        report.write_unit_csv(&dir.join("per_unit.csv"))?;
        log::info!("wrote report.json and per_unit.csv to {}", dir.display());
    }
    Ok(())
}

fn export(checkpoint: PathBuf, dataset: Option<PathBuf>, split: ExportSplit, out: Option<PathBuf>) -> Result<(), CoreError> {
    let ck = Checkpoint::load(&checkpoint)?;
    let dataset = dataset.unwrap_or_else(|| ck.header.config.prepared_path());
    let data = PreparedDataset::read(&dataset)?;
    let csv = export_hidden(&ck, &data, split)?;
    match out {
        Some(p) => fs::write(&p, csv).map_err(|e| CoreError::Io { path: p, source: e }),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn synthesize(out: PathBuf, subset: Subset, seed: u64, small: bool) -> Result<(), CoreError> {
    let spec = if small { SyntheticSpec::small(seed) } else { SyntheticSpec::like(subset, seed) };
    let data = generate(&spec);
    write_subset(&out, subset, &data)?;
    println!("wrote {} training and {} test units for {subset} to {}", data.train.len(), data.test.len(), out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), CoreError> {
    match cli.command {
        Command::Prepare { data_dir, subset, out, config } => prepare(data_dir, subset, out, config),
        Command::Train { config, seed, trials, ablation, out, dataset, epochs } => {
            train(TrainArgs { config, seed, trials, ablation, out, dataset, epochs })
        }
        Command::Evaluate { checkpoints, data_dir, out, no_clamp } => evaluate(checkpoints, data_dir, out, no_clamp),
        Command::ExportHidden { checkpoint, dataset, split, out } => export(checkpoint, dataset, split, out),
        Command::GenerateSynthetic { out, subset, seed, small } => synthesize(out, subset, seed, small),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).format_timestamp_secs().init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
