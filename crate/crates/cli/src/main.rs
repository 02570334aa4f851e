//! `gvcl`: generate synthetic scenes, build trajectory sets, train and evaluate
//! model variants, and tabulate reports.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use gvcl::report::MetricsReport;
use gvcl::scenegen::{build_dataset, read_dataset, write_dataset, GeneratorConfig, RecordFormat, SplitFractions};
use gvcl::tasks::{run_matrix, ExperimentConfig, ExperimentMatrix, ModelArtifact, Prepared, RunControl};
use gvcl::trajset::{build_cover, TrajectorySet};

const OUTPUT_ROOT_ENV: &str = "GVCL_OUTPUT_ROOT";

#[derive(Parser, Debug)]
#[command(
    name = "gvcl",
    version,
    about = "Informed continual learning for trajectory prediction"
)]
struct Cli {
    /// Root directory for relative output paths.
    #[arg(long, env = OUTPUT_ROOT_ENV, global = true)]
    output_root: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Format {
    Binary,
    Jsonl,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum ReportFormat {
    Table,
    Csv,
    Json,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic scene dataset.
    Generate {
        /// Number of scenes.
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Dataset directory to create.
        #[arg(long)]
        out: PathBuf,
        /// Scene record encoding.
        #[arg(long, value_enum, default_value = "binary")]
        format: Format,
        /// Train, validation and test fractions.
        #[arg(long, num_args = 3, value_names = ["TRAIN", "VAL", "TEST"])]
        split: Option<Vec<f64>>,
        /// Generator settings (TOML); defaults otherwise.
        #[arg(long)]
        generator: Option<PathBuf>,
    },
    /// Build a trajectory set over the training futures of a dataset.
    Trajset {
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// Coverage bound in meters.
        #[arg(long)]
        epsilon: f64,
        /// Trajectory set file (JSON).
        #[arg(long)]
        out: PathBuf,
    },
    /// Train every seed of an experiment config; resumes from epoch snapshots.
    Train {
        /// Experiment config (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Dataset directory; overrides the config.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output directory; overrides the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Train only this seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Stop after this many epochs, keeping the snapshot for a later resume.
        #[arg(long)]
        stop_after_epochs: Option<usize>,
    },
    /// Evaluate a trained model on the test split.
    Eval {
        /// Model artifact written by `train`.
        #[arg(long)]
        model: PathBuf,
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// Trajectory set the model was trained on.
        #[arg(long)]
        trajset: PathBuf,
        /// Report file (JSON).
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a grid of experiments and write JSON, CSV and table reports.
    Matrix {
        /// Experiment matrix config (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Dataset directory; overrides the config.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output directory; overrides the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Print a saved report.
    Report {
        /// Report file written by `eval` or `matrix`.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "table")]
        format: ReportFormat,
    },
}

struct Paths {
    root: Option<PathBuf>,
}

impl Paths {
    fn output(&self, p: &Path) -> PathBuf {
        match &self.root {
            Some(root) if p.is_relative() => root.join(p),
            _ => p.to_path_buf(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let paths = Paths { root: cli.output_root };
    match run(cli.command, &paths) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (code, kind) = classify(&err);
            let message = format!("{err:#}").replace(['\n', '\r'], " ");
            eprintln!("error kind={kind} code={code} message={message:?}");
            ExitCode::from(code)
        }
    }
}

/// Exit code and category: 2 for configuration, 3 for numeric divergence, 4 for I/O.
fn classify(err: &anyhow::Error) -> (u8, &'static str) {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<gvcl::Error>() {
            let code = match e {
                gvcl::Error::NonFinite(_) | gvcl::Error::Diverged { .. } => 3,
                gvcl::Error::Io { .. } | gvcl::Error::Format(_) => 4,
                _ => 2,
            };
            return (code, e.kind());
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return (4, "io");
        }
    }
    (2, "config")
}

fn run(command: Command, paths: &Paths) -> Result<()> {
    match command {
        Command::Generate {
            n,
            seed,
            out,
            format,
            split,
            generator,
        } => cmd_generate(n, seed, &paths.output(&out), format, split, generator.as_deref()),
        Command::Trajset { data, epsilon, out } => cmd_trajset(&data, epsilon, &paths.output(&out)),
        Command::Train {
            config,
            data,
            out,
            seed,
            stop_after_epochs,
        } => cmd_train(&config, data, out, seed, stop_after_epochs, paths),
        Command::Eval {
            model,
            data,
            trajset,
            out,
        } => cmd_eval(&model, &data, &trajset, &paths.output(&out)),
        Command::Matrix {
            config,
            data,
            out,
            jobs,
        } => cmd_matrix(&config, data, out, jobs, paths),
        Command::Report { input, format } => cmd_report(&input, format),
    }
}

fn cmd_generate(
    n: usize,
    seed: u64,
    out: &Path,
    format: Format,
    split: Option<Vec<f64>>,
    generator: Option<&Path>,
) -> Result<()> {
    let split = match split.as_deref() {
        Some(&[train, val, test]) => SplitFractions { train, val, test },
        Some(_) => bail!(gvcl::Error::Config("--split takes three fractions".into())),
        None => SplitFractions::default(),
    };
    let cfg = match generator {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| gvcl::Error::Io {
                path: path.to_path_buf(),
                source: e,
            })?;
            toml::from_str::<GeneratorConfig>(&text).map_err(|e| gvcl::Error::Config(e.to_string()))?
        }
        None => GeneratorConfig::default(),
    };
    let ds = build_dataset(n, seed, split, &cfg)?;
    let format = match format {
        Format::Binary => RecordFormat::Binary,
        Format::Jsonl => RecordFormat::Jsonl,
    };
    write_dataset(&ds, out, format)?;
    println!(
        "wrote {} scenes ({} train, {} val, {} test) to {}",
        ds.manifest.n_scenes,
        ds.train.len(),
        ds.val.len(),
        ds.test.len(),
        out.display()
    );
    Ok(())
}

fn cmd_trajset(data: &Path, epsilon: f64, out: &Path) -> Result<()> {
    let ds = read_dataset(data)?;
    let set = build_cover(&ds.train_futures(), epsilon)?;
    set.save(out)?;
    println!("{} modes at epsilon {epsilon} -> {}", set.len(), out.display());
    Ok(())
}

fn require(value: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    value.ok_or_else(|| gvcl::Error::Config(format!("no {what} given by flag or config")).into())
}

fn cell_dir(variant: &str, epsilon: f64, fraction: f64, seed: u64) -> PathBuf {
    PathBuf::from(format!("{variant}-eps{epsilon}-frac{fraction}-seed{seed}"))
}

fn cmd_train(
    config: &Path,
    data: Option<PathBuf>,
    out: Option<PathBuf>,
    only_seed: Option<u64>,
    stop_after_epochs: Option<usize>,
    paths: &Paths,
) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let data = require(data.or_else(|| cfg.dataset_path.clone()), "dataset path")?;
    let out = paths.output(&require(out.or_else(|| cfg.output_dir.clone()), "output directory")?);
    let variant = cfg.model_variant()?;
    let seeds: Vec<u64> = match only_seed {
        Some(s) if cfg.seeds.contains(&s) => vec![s],
        Some(s) => bail!(gvcl::Error::Config(format!("seed {s} is not listed in the config"))),
        None => cfg.seeds.clone(),
    };
    let ds = read_dataset(&data)?;
    let prepared = Prepared::new(&ds, cfg.epsilon)?;
    prepared.set.save(&out.join("trajset.json"))?;
    for seed in seeds {
        let dir = out.join(cell_dir(variant.name.as_str(), cfg.epsilon, cfg.fraction, seed));
        let snapshot = dir.join("snapshot.json");
        let control = RunControl {
            snapshot: Some(snapshot.clone()),
            stop_after_epochs,
        };
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        match prepared.train(&variant, cfg.fraction, seed, &control)? {
            Some(artifact) => {
                artifact.save(&dir.join("model.json"))?;
                gvcl::io::write_json(&dir.join("train_log.json"), &artifact.log)?;
                std::fs::remove_file(&snapshot).with_context(|| format!("removing {}", snapshot.display()))?;
                println!("seed {seed}: trained -> {}", dir.join("model.json").display());
            }
            None => println!("seed {seed}: stopped, resume from {}", snapshot.display()),
        }
    }
    Ok(())
}

fn cmd_eval(model: &Path, data: &Path, trajset: &Path, out: &Path) -> Result<()> {
    let artifact = ModelArtifact::load(model)?;
    let set = TrajectorySet::load(trajset)?;
    let ds = read_dataset(data)?;
    let prepared = Prepared::with_set(&ds, set.epsilon, set)?;
    let row = prepared.row(&artifact)?;
    let echo = serde_json::json!({
        "model": model,
        "trajset": trajset,
        "dataset": data,
        "variant": artifact.variant,
    });
    let report = MetricsReport::from_rows(echo, vec![row])?;
    report.save(out)?;
    print!("{}", report.to_table());
    Ok(())
}

fn cmd_matrix(config: &Path, data: Option<PathBuf>, out: Option<PathBuf>, jobs: usize, paths: &Paths) -> Result<()> {
    let matrix = ExperimentMatrix::load(config)?;
    let data = require(data.or_else(|| matrix.dataset_path.clone()), "dataset path")?;
    let out = paths.output(&require(out.or_else(|| matrix.output_dir.clone()), "output directory")?);
    let ds = read_dataset(&data)?;
    let report = run_matrix(&matrix, &ds, jobs)?;
    report.save(&out.join("report.json"))?;
    write_text(&out.join("report.csv"), &report.to_csv())?;
    let table = report.to_table();
    write_text(&out.join("report.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| gvcl::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn cmd_report(input: &Path, format: ReportFormat) -> Result<()> {
    let report = MetricsReport::load(input)?;
    match format {
        ReportFormat::Table => print!("{}", report.to_table()),
        ReportFormat::Csv => print!("{}", report.to_csv()),
        ReportFormat::Json => {
            println!(
                "{}",
                serde_json::to_string_pretty(&report).context("serializing report")?
            )
        }
    }
    Ok(())
}
