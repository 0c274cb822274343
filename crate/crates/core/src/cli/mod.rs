//! Command-line front end: `search`, `retrain`, `params` and `plot`.

mod config;
mod plot;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use crate::data::{
    load_cifar10_split, resolve_data_dir, split_train_val, synthetic_dataset, BatchStream, CifarSplit, ImageBatch,
};
use crate::engine::{self, format_sig, init_network, run_search, SearchData, SearchOutcome, Trajectory};
use crate::error::{Error, Result};
use crate::searchspace::{build_supernet, count_params, format_millions, CountMode, FinalArchitecture, Scope};
use crate::tensor::Element;

pub use config::{
    load_config, parse_config, parse_pairs, DatasetKind, Precision, Preset, RunConfig, CIFAR10_MEAN, CIFAR10_STD,
    KEYS,
};
pub use plot::emit_plot_svg;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const ARCHITECTURE_FILE: &str = "final_architecture.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const RETRAIN_METRICS_FILE: &str = "retrain_metrics.csv";
pub const RESOLVED_FILE: &str = "run_config.resolved";

#[derive(Parser, Debug)]
#[command(name = "scoped-dnas", version, about = "Scoped differentiable architecture search over ResNet-50")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Search the supernet and export the argmax architecture.
    Search(Common),
    /// Train an exported architecture from scratch.
    Retrain {
        #[command(flatten)]
        common: Common,
        /// Architecture JSON [default: <out>/final_architecture.json]
        #[arg(long)]
        arch: Option<PathBuf>,
    },
    /// Print parameter counts of a model, optionally with a search scope.
    Params {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        classes: Option<usize>,
    },
    /// Write one SVG chart per block of a trajectory.
    Plot {
        #[command(flatten)]
        common: Common,
        /// Trajectory CSV [default: <out>/trajectory.csv]
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Default)]
struct Common {
    /// key=value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Search scope: s, m, l or f
    #[arg(long)]
    scope: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Named preset (desk or full)
    #[arg(long)]
    preset: Option<String>,
    /// CIFAR-10 binary directory [env: SCOPED_DNAS_DATA]
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Any other config key, as KEY=VALUE (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn overrides(&self) -> Result<Vec<(String, String)>> {
        let mut v = Vec::new();
        for s in &self.set {
            let (k, val) = s
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{s}`")))?;
            v.push((k.trim().to_string(), val.trim().to_string()));
        }
        let mut push = |k: &str, val: Option<String>| {
            if let Some(val) = val {
                v.push((k.to_string(), val));
            }
        };
        push("scope", self.scope.clone());
        push("epochs", self.epochs.map(|e| e.to_string()));
        push("seed", self.seed.map(|s| s.to_string()));
        push("preset", self.preset.clone());
        push("data_dir", self.data_dir.as_ref().map(|p| p.display().to_string()));
        push("out", self.out.as_ref().map(|p| p.display().to_string()));
        Ok(v)
    }

    fn resolve(&self, extra: Vec<(String, String)>) -> Result<RunConfig> {
        let mut flags = self.overrides()?;
        flags.extend(extra);
        load_config(self.config.as_deref(), &flags)
    }
}

/// Exit status for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io { .. } | Error::Format { .. } => EXIT_IO,
        Error::NonFinite(_) | Error::DegenerateVariance(_) => EXIT_DIVERGED,
        _ => EXIT_CONFIG,
    }
}

/// Parses arguments, runs the command and returns the process exit status.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Search(common) => {
            let config = common.resolve(Vec::new())?;
            match config.precision {
                Precision::F32 => search::<f32>(&config),
                Precision::F64 => search::<f64>(&config),
            }
        }
        Command::Retrain { common, arch } => {
            let config = common.resolve(Vec::new())?;
            let arch = arch.unwrap_or_else(|| config.out.join(ARCHITECTURE_FILE));
            match config.precision {
                Precision::F32 => retrain::<f32>(&config, &arch),
                Precision::F64 => retrain::<f64>(&config, &arch),
            }
        }
        Command::Params { common, model, classes } => {
            let mut extra = Vec::new();
            if let Some(m) = model {
                extra.push(("model".to_string(), m));
            }
            if let Some(c) = classes {
                extra.push(("classes".to_string(), c.to_string()));
            }
            let scope_given = common.scope.is_some();
            let config = common.resolve(extra)?;
            print!("{}", params_report(&config, scope_given)?);
            Ok(())
        }
        Command::Plot { common, trajectory } => {
            let config = common.resolve(Vec::new())?;
            let path = trajectory.unwrap_or_else(|| config.out.join(TRAJECTORY_FILE));
            for written in plot_trajectory(&path, &config.out)? {
                println!("{}", written.display());
            }
            Ok(())
        }
    }
}

/// Text printed by `params`.
pub fn params_report(config: &RunConfig, include_scope: bool) -> Result<String> {
    let base = config.base_architecture()?;
    let baseline = count_params(&base, CountMode::SinglePathMax);
    let mut s = String::new();
    let scope = if include_scope { config.search.scope } else { Scope::None };
    let _ = writeln!(s, "model: {} classes={} scope={}", config.model, config.classes, scope);
    let _ = writeln!(s, "params: {baseline} ({})", format_millions(baseline));
    if scope != Scope::None {
        let supernet = build_supernet(&base, scope)?;
        let max = count_params(&supernet, CountMode::SinglePathMax);
        let all = count_params(&supernet, CountMode::AllPaths);
        let _ = writeln!(s, "search_blocks: {}", supernet.search_block_indices().len());
        let _ = writeln!(s, "single_path_max: {max} ({})", format_millions(max));
        let _ = writeln!(s, "all_paths: {all} ({})", format_millions(all));
        let _ = writeln!(s, "search_space: {}", supernet.search_space_size());
    }
    Ok(s)
}

fn write(dir: &Path, name: &str, body: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(name);
    fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn cifar_root(config: &RunConfig) -> Result<PathBuf> {
    resolve_data_dir(config.data_dir.as_deref()).ok_or_else(|| {
        Error::io(
            config.data_dir.clone().unwrap_or_else(|| PathBuf::from("$SCOPED_DNAS_DATA")),
            std::io::Error::new(
                std::io::ErrorKind::NotFound,
                "no CIFAR-10 directory: pass --data-dir or set SCOPED_DNAS_DATA",
            ),
        )
    })
}

fn limited(batch: ImageBatch, limit: usize) -> ImageBatch {
    if limit > 0 && limit < batch.len() {
        batch.truncate(limit)
    } else {
        batch
    }
}

/// Training pool for search (split into train/validation) and retraining.
fn training_pool(config: &RunConfig) -> Result<ImageBatch> {
    match config.dataset {
        DatasetKind::Synthetic => synthetic_dataset(&config.synthetic_spec()),
        DatasetKind::Cifar10 => Ok(limited(
            load_cifar10_split(&cifar_root(config)?, CifarSplit::Train)?,
            config.train_limit,
        )),
    }
}

fn search<T: Element>(config: &RunConfig) -> Result<()> {
    let pool = Arc::new(training_pool(config)?);
    let (train, val) = split_train_val(pool, config.train_fraction, config.search.seed, config.search.batch_size)?;
    let mut data = SearchData {
        train,
        val,
        augment: config.augment.clone(),
    };
    let supernet = build_supernet(&config.base_architecture()?, config.search.scope)?;
    let mut net = init_network::<T>(&supernet, config.search.seed)?;
    let outcome = run_search(&mut net, &config.search, &mut data)?;
    let out = &config.out;
    write(out, RESOLVED_FILE, &config.to_resolved())?;
    write(out, TRAJECTORY_FILE, &outcome.trajectory.to_csv())?;
    write(out, ARCHITECTURE_FILE, &outcome.final_architecture.to_json())?;
    write(out, METRICS_FILE, &metrics_csv(&outcome))?;
    write(out, TIMING_FILE, &timing_csv(&outcome))?;
    let labels: Vec<String> = outcome.final_architecture.choices.iter().map(|c| c.label()).collect();
    println!(
        "searched {} epochs ({:?}); chosen: {}",
        outcome.metrics.len(),
        outcome.decision,
        labels.join(" ")
    );
    println!("wrote {}", out.display());
    Ok(())
}

/// Per-epoch search metrics; contains no wall-clock values so identical
/// runs give identical bytes.
pub fn metrics_csv(outcome: &SearchOutcome) -> String {
    let mut s = String::from(
        "epoch,weight_steps,arch_steps,train_loss,train_accuracy,val_loss,macs_per_image,min_top_probability\n",
    );
    for m in &outcome.metrics {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            m.epoch,
            m.weight_steps,
            m.arch_steps,
            format_sig(m.train_loss),
            format_sig(m.train_accuracy),
            format_sig(m.val_loss),
            m.macs_per_image,
            format_sig(m.min_top_probability)
        );
    }
    s
}

fn timing_csv(outcome: &SearchOutcome) -> String {
    let mut s = String::from("epoch,seconds\n");
    for (e, t) in outcome.epoch_seconds.iter().enumerate() {
        let _ = writeln!(s, "{e},{t:.6}");
    }
    s
}

fn retrain<T: Element>(config: &RunConfig, arch_path: &Path) -> Result<()> {
    let arch = FinalArchitecture::from_json(&read(arch_path)?)?;
    let pool = Arc::new(training_pool(config)?);
    let batch = config.search.batch_size;
    let (mut train, eval) = match config.dataset {
        DatasetKind::Synthetic => {
            let (train, val) = split_train_val(pool.clone(), config.train_fraction, config.search.seed, batch)?;
            (train, pool.select(val.indices()))
        }
        DatasetKind::Cifar10 => {
            let all: Vec<usize> = (0..pool.len()).collect();
            let train = BatchStream::new(pool, all, batch, config.search.seed)?;
            let test = load_cifar10_split(&cifar_root(config)?, CifarSplit::Test)?;
            (train, limited(test, config.eval_limit))
        }
    };
    let (_, metrics) = engine::retrain::<T>(&arch, &config.search, &mut train, &eval, config.augment.as_ref())?;
    let mut s = String::from("epoch,train_loss,train_accuracy,eval_accuracy\n");
    for m in &metrics {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            m.epoch,
            format_sig(m.train_loss),
            format_sig(m.train_accuracy),
            format_sig(m.eval_accuracy)
        );
    }
    write(&config.out, RESOLVED_FILE, &config.to_resolved())?;
    let path = write(&config.out, RETRAIN_METRICS_FILE, &s)?;
    if let Some(last) = metrics.last() {
        println!("final eval accuracy {:.4}", last.eval_accuracy);
    }
    println!("wrote {}", path.display());
    Ok(())
}

/// Reads a trajectory CSV and writes `trajectory_block_<id>.svg` per block
/// into `out`; returns the written paths.
pub fn plot_trajectory(csv: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let trajectory = Trajectory::from_csv(&read(csv)?)?;
    if trajectory.is_empty() {
        return Err(Error::format("trajectory csv", format!("{} has no rows", csv.display())));
    }
    let mut written = Vec::new();
    for block in trajectory.block_ids() {
        let rows: Vec<_> = trajectory.rows().iter().filter(|r| r.block_id == block).copied().collect();
        let svg = emit_plot_svg(&rows)?;
        written.push(write(out, &format!("trajectory_block_{block}.svg"), &svg)?);
    }
    Ok(written)
}
