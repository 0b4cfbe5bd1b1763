//! `dtaf` command line: training, evaluation, sweeps and analysis driven by
//! a TOML run config.

pub mod config;
mod output;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dtaf::data::{SeriesDataset, SplitName};
use dtaf::eval::{self, SweepParam, SweepSpec};
use dtaf::{checkpoint, train, DataError, DtafError};
use thiserror::Error;

pub use config::RunConfig;
use output::Table;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config, data or checkpoint.
    #[error("{0}")]
    User(String),
    /// Training or evaluation failed.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::User(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<DtafError> for CliError {
    fn from(e: DtafError) -> Self {
        if e.is_user_error() {
            CliError::User(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "dtaf", version, about = "Dual-branch time-series forecaster")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model; writes the checkpoint, history and metrics.
    Train(Common),
    /// Evaluate a checkpoint on the validation and test splits.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Defaults to the checkpoint in the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train and test once per value of one hyperparameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// NAME=V1,V2,... with NAME one of topk, patch_len, input_len.
        #[arg(long)]
        sweep: String,
    },
    /// Write router weights, patch divergences and spectral picks.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Number of test windows to sample.
        #[arg(long, default_value_t = 3)]
        windows: usize,
    },
}

#[derive(Args, Debug)]
pub struct Common {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, overriding `[output] dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed, overriding `[train] seed` and `seeds`.
    #[arg(long)]
    pub seed: Option<u64>,
}

pub const CHECKPOINT: &str = "checkpoint.txt";

struct Run {
    cfg: RunConfig,
    hash: String,
    out: PathBuf,
}

impl Run {
    fn open(common: &Common) -> Result<Self, CliError> {
        let mut cfg = RunConfig::load(&common.config)?;
        if let Some(seed) = common.seed {
            cfg.override_seed(seed);
        }
        let out = common.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
        std::fs::create_dir_all(&out)
            .map_err(|e| CliError::User(format!("cannot create {}: {e}", out.display())))?;
        Ok(Self {
            hash: cfg.hash(),
            cfg,
            out,
        })
    }

    fn dataset(&self) -> Result<SeriesDataset, CliError> {
        let path = &self.cfg.data.path;
        if !path.is_file() {
            return Err(CliError::User(format!("dataset {} does not exist", path.display())));
        }
        let load = || -> Result<SeriesDataset, DataError> {
            let ds = SeriesDataset::load_csv(path)?.split(self.cfg.split())?;
            if self.cfg.data.standardize {
                ds.standardize()
            } else {
                Ok(ds)
            }
        };
        load().map_err(|e| CliError::User(format!("{}: {e}", path.display())))
    }

    fn write(&self, name: &str, table: &Table) -> Result<(), CliError> {
        table.write(&self.out.join(name), &self.hash)
    }

    fn checkpoint_path(&self, flag: &Option<PathBuf>) -> PathBuf {
        flag.clone().unwrap_or_else(|| self.out.join(CHECKPOINT))
    }
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(common) => cmd_train(&Run::open(&common)?),
        Command::Eval { common, checkpoint } => cmd_eval(&Run::open(&common)?, &checkpoint),
        Command::Sweep { common, sweep } => cmd_sweep(&Run::open(&common)?, &sweep),
        Command::Analyze {
            common,
            checkpoint,
            windows,
        } => cmd_analyze(&Run::open(&common)?, &checkpoint, windows),
    }
}

/// Entry point of the binary: parses `args` (program name first), runs
/// the command and maps failures to exit codes 2 and 3.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dtaf: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn metrics_table(ds: &SeriesDataset, params: &dtaf::DtafParams, cfg: &dtaf::ModelConfig) -> Result<Table, CliError> {
    let mut t = Table::new(&["split", "horizon", "mse", "mae"]);
    for split in [SplitName::Val, SplitName::Test] {
        let m = train::evaluate(ds, split, params, cfg)?;
        t.row([split.to_string(), cfg.horizon.to_string(), m.mse.to_string(), m.mae.to_string()]);
    }
    Ok(t)
}

fn cmd_train(run: &Run) -> Result<(), CliError> {
    let ds = run.dataset()?;
    let cfg = run.cfg.model_config();
    let outcome = train::train(&ds, &cfg, &run.cfg.train_options())?;

    let mut history = Table::new(&["epoch", "task", "stable", "robust", "total", "val_mse", "val_mae"]);
    for h in &outcome.history {
        history.row([
            h.epoch.to_string(),
            h.task.to_string(),
            h.stable.to_string(),
            h.robust.to_string(),
            h.total.to_string(),
            h.val_mse.to_string(),
            h.val_mae.to_string(),
        ]);
    }
    let mut steps = Table::new(&["epoch", "batch", "task", "stable", "robust", "total", "alpha", "beta"]);
    for s in &outcome.steps {
        let l = &s.loss;
        steps.row([
            s.epoch.to_string(),
            s.batch.to_string(),
            l.task.to_string(),
            l.stable.to_string(),
            l.robust.to_string(),
            l.total.to_string(),
            l.alpha.to_string(),
            l.beta.to_string(),
        ]);
    }
    let metrics = metrics_table(&ds, &outcome.params, &cfg)?;
    run.write("history.csv", &history)?;
    run.write("steps.csv", &steps)?;
    run.write("metrics.csv", &metrics)?;
    checkpoint::save_with_comment(
        &outcome.params,
        &run.out.join(CHECKPOINT),
        &format!("config_hash={}", run.hash),
    )?;
    println!(
        "trained {} epochs, best epoch {} with val mse {}; outputs in {}",
        outcome.history.len(),
        outcome.state.best_epoch,
        outcome.state.best_val_mse,
        run.out.display()
    );
    Ok(())
}

fn cmd_eval(run: &Run, ckpt: &Option<PathBuf>) -> Result<(), CliError> {
    let cfg = run.cfg.model_config();
    let params = load_checkpoint(&run.checkpoint_path(ckpt), &cfg)?;
    let ds = run.dataset()?;
    run.write("eval_metrics.csv", &metrics_table(&ds, &params, &cfg)?)?;
    println!("wrote {}", run.out.join("eval_metrics.csv").display());
    Ok(())
}

fn load_checkpoint(path: &Path, cfg: &dtaf::ModelConfig) -> Result<dtaf::DtafParams, CliError> {
    if !path.is_file() {
        return Err(CliError::User(format!("checkpoint {} does not exist", path.display())));
    }
    Ok(checkpoint::load(path, cfg)?)
}

/// Parses `NAME=V1,V2,...`.
pub fn parse_sweep(arg: &str) -> Result<(SweepParam, Vec<usize>), CliError> {
    let legal = SweepParam::NAMES.join(", ");
    let (name, list) = arg
        .split_once('=')
        .ok_or_else(|| CliError::User(format!("--sweep expects NAME=V1,V2,..., got {arg:?}")))?;
    let param = SweepParam::parse(name.trim()).ok_or_else(|| {
        CliError::User(format!("unknown sweep parameter {name:?}; expected one of {legal}"))
    })?;
    let values = list
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| {
            v.parse::<usize>()
                .map_err(|_| CliError::User(format!("sweep value {v:?} is not a non-negative integer")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if values.is_empty() {
        return Err(CliError::User(format!("sweep over {} has no values", param.name())));
    }
    Ok((param, values))
}

/// Worker count: `DTAF_THREADS` if set, else the available cores.
fn sweep_threads() -> Result<usize, CliError> {
    match std::env::var("DTAF_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CliError::User(format!("DTAF_THREADS must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn cmd_sweep(run: &Run, arg: &str) -> Result<(), CliError> {
    let (param, values) = parse_sweep(arg)?;
    let spec = SweepSpec {
        param,
        values,
        base: run.cfg.model_config(),
        horizons: run.cfg.horizons().to_vec(),
        seeds: run.cfg.seeds().to_vec(),
        train: run.cfg.train_options(),
    };
    spec.validate()?;
    let threads = sweep_threads()?;
    let ds = run.dataset()?;
    let table = eval::run_sweep(&ds, &spec, threads)?;

    let name = param.name();
    let mut rows = Table::new(&[name, "horizon", "seed", "mse", "mae"]);
    for r in &table.rows {
        rows.row([r.value.to_string(), r.horizon.to_string(), r.seed.to_string(), r.mse.to_string(), r.mae.to_string()]);
    }
    let mut cells = Table::new(&[name, "horizon", "runs", "mse", "mae"]);
    for c in &table.cells {
        cells.row([c.value.to_string(), c.horizon.to_string(), c.runs.to_string(), c.mse.to_string(), c.mae.to_string()]);
    }
    let mut failures = Table::new(&[name, "horizon", "seed", "error"]);
    for f in &table.failures {
        failures.row([f.value.to_string(), f.horizon.to_string(), f.seed.to_string(), f.error.clone()]);
        eprintln!("dtaf: {name}={} horizon {} seed {} failed: {}", f.value, f.horizon, f.seed, f.error);
    }
    run.write(&format!("sweep_{name}.csv"), &rows)?;
    run.write(&format!("sweep_{name}_summary.csv"), &cells)?;
    run.write(&format!("sweep_{name}_failures.csv"), &failures)?;
    if table.rows.is_empty() {
        return Err(CliError::Runtime(format!("every run of the {name} sweep failed")));
    }
    println!("{} of {} runs finished; outputs in {}", table.rows.len(), table.rows.len() + table.failures.len(), run.out.display());
    Ok(())
}

fn cmd_analyze(run: &Run, ckpt: &Option<PathBuf>, n_windows: usize) -> Result<(), CliError> {
    let cfg = run.cfg.model_config();
    let params = load_checkpoint(&run.checkpoint_path(ckpt), &cfg)?;
    let ds = run.dataset()?;
    let windows = eval::sample_windows(&ds, &cfg, n_windows, run.cfg.train.seed)?;
    let bundle = eval::analyze(&ds, &params, &cfg, &windows)?;

    let mut router = Table::new(&["window", "channel", "origin", "patch", "expert", "weight"]);
    let mut kl = Table::new(&["window", "stage", "i", "j", "kl"]);
    let mut summary = Table::new(&["window", "channel", "origin", "mean_kl_before", "mean_kl_after"]);
    let mut picks = Table::new(&["window", "patch", "rank", "bin", "magnitude"]);
    for (w, a) in bundle.windows.iter().enumerate() {
        let (ch, origin) = (a.window.channel.to_string(), a.window.origin.to_string());
        for (i, row) in a.router.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                router.row([w.to_string(), ch.clone(), origin.clone(), i.to_string(), j.to_string(), v.to_string()]);
            }
        }
        for (stage, m) in [("before", &a.kl_before), ("after", &a.kl_after)] {
            for (i, row) in m.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    kl.row([w.to_string(), stage.to_string(), i.to_string(), j.to_string(), v.to_string()]);
                }
            }
        }
        summary.row([
            w.to_string(),
            ch,
            origin,
            eval::mean_off_diagonal(&a.kl_before).to_string(),
            eval::mean_off_diagonal(&a.kl_after).to_string(),
        ]);
        for (i, bins) in a.picks.iter().enumerate() {
            for (rank, (bin, mag)) in bins.iter().enumerate() {
                picks.row([w.to_string(), i.to_string(), rank.to_string(), bin.to_string(), mag.to_string()]);
            }
        }
    }
    run.write("router_weights.csv", &router)?;
    run.write("residual_kl.csv", &kl)?;
    run.write("kl_summary.csv", &summary)?;
    run.write("spectral_picks.csv", &picks)?;
    let (before, after) = bundle.mean_kl();
    println!(
        "analyzed {} windows: mean patch divergence {before} before filtering, {after} after",
        bundle.windows.len()
    );
    Ok(())
}
