//! Command-line front end.
//!
//! Every subcommand accepts `--config <file.json>`; keys match the long flag
//! names (with underscores), and flags given on the command line win.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use symavg_core::metrics::ScoringMode;
use symavg_core::surrogate::{LrSchedule, StencilConfig, TrainConfig};

use crate::commands::{self, EvalSettings, TrainSettings, VariantSpec};
use crate::dataset::{DatasetSpec, Split};
use crate::error::{Error, Result};
use crate::io;

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "SYMAVG_THREADS";

#[derive(Debug, Parser)]
#[command(name = "symavg", version, about = "Test-time group averaging benchmark for Gray-Scott surrogates")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a Gray-Scott dataset.
    Generate(GenerateArgs),
    /// Train the stencil surrogate on a dataset's training split.
    Train(TrainArgs),
    /// Roll out baseline and group-averaged variants and write loss tables.
    Eval(EvalArgs),
    /// Render loss tables as Markdown.
    Report(ReportArgs),
}

macro_rules! merge {
    ($dst:ident, $src:ident; $($f:ident),+ $(,)?) => {
        $( if $dst.$f.is_none() { $dst.$f = $src.$f.take(); } )+
    };
}

fn load_config<C: Default + for<'de> Deserialize<'de>>(path: Option<&Path>) -> Result<C> {
    match path {
        None => Ok(C::default()),
        Some(p) => io::read_json(p).map_err(|e| Error::Usage(format!("config: {e}"))),
    }
}

fn required<T>(v: Option<T>, flag: &str) -> Result<T> {
    v.ok_or_else(|| Error::Usage(format!("--{flag} is required")))
}

#[derive(Debug, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateArgs {
    /// JSON file with defaults for any of these flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Cells per side.
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub trajectories: Option<usize>,
    /// Saved frames per trajectory, including the initial condition.
    #[arg(long)]
    pub frames: Option<usize>,
    /// Master seed; trajectory i uses seed + i.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    /// Solver steps per saved frame.
    #[arg(long)]
    pub substeps: Option<usize>,
    /// Output dataset directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl GenerateArgs {
    pub fn resolve(mut self) -> Result<(DatasetSpec, PathBuf)> {
        let mut file: GenerateArgs = load_config(self.config.as_deref())?;
        merge!(self, file; grid, trajectories, frames, seed, test_fraction, substeps, out);
        let d = DatasetSpec::default();
        let spec = DatasetSpec {
            grid: self.grid.unwrap_or(d.grid),
            trajectories: self.trajectories.unwrap_or(d.trajectories),
            frames: self.frames.unwrap_or(d.frames),
            seed: self.seed.unwrap_or(d.seed),
            test_fraction: self.test_fraction.unwrap_or(d.test_fraction),
            substeps: self.substeps.or(d.substeps),
        };
        if spec.trajectories < 2 {
            return Err(Error::Usage("--trajectories must be at least 2".into()));
        }
        if !(spec.test_fraction > 0.0 && spec.test_fraction < 1.0) {
            return Err(Error::Usage("--test-fraction must lie in (0, 1)".into()));
        }
        if spec.frames == 0 {
            return Err(Error::Usage("--frames must be at least 1".into()));
        }
        Ok((spec, required(self.out, "out")?))
    }
}

#[derive(Debug, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Output model file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Loss-curve CSV (defaults to `<out>.loss.csv`).
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
    /// Window length k.
    #[arg(long)]
    pub history: Option<usize>,
    /// Stencil radius p.
    #[arg(long)]
    pub radius: Option<usize>,
    /// Hidden units (0 = linear).
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Predict the change from the last frame.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub residual: Option<bool>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub steps_per_epoch: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub eval_batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    /// `cosine` or `constant`.
    #[arg(long)]
    pub schedule: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl TrainArgs {
    pub fn resolve(mut self) -> Result<TrainSettings> {
        let mut file: TrainArgs = load_config(self.config.as_deref())?;
        merge!(self, file; dataset, out, loss_csv, history, radius, hidden, residual, epochs,
            steps_per_epoch, batch, eval_batch, lr, momentum, schedule, seed);
        let (sd, td) = (StencilConfig::default(), TrainConfig::default());
        let seed = self.seed.unwrap_or(0);
        let schedule = match self.schedule.as_deref() {
            None => td.schedule,
            Some("cosine") => LrSchedule::Cosine,
            Some("constant") => LrSchedule::Constant,
            Some(other) => return Err(Error::Usage(format!("unknown schedule {other:?}"))),
        };
        let stencil = StencilConfig {
            history: self.history.unwrap_or(sd.history),
            radius: self.radius.unwrap_or(sd.radius),
            hidden: self.hidden.unwrap_or(sd.hidden),
            residual: self.residual.unwrap_or(sd.residual),
            seed,
        };
        if stencil.history == 0 || stencil.radius == 0 {
            return Err(Error::Usage("--history and --radius must be at least 1".into()));
        }
        let train = TrainConfig {
            lr: self.lr.unwrap_or(td.lr),
            momentum: self.momentum.unwrap_or(td.momentum),
            epochs: self.epochs.unwrap_or(td.epochs),
            steps_per_epoch: self.steps_per_epoch.unwrap_or(td.steps_per_epoch),
            batch: self.batch.unwrap_or(td.batch),
            eval_batch: self.eval_batch.unwrap_or(td.eval_batch),
            schedule,
            seed,
        };
        if !(train.lr >= 0.0) || !(0.0..1.0).contains(&train.momentum) {
            return Err(Error::Usage("--lr must be >= 0 and --momentum in [0, 1)".into()));
        }
        let model_out = required(self.out, "out")?;
        Ok(TrainSettings {
            dataset: required(self.dataset, "dataset")?,
            loss_csv: self.loss_csv.unwrap_or_else(|| commands::default_loss_csv(&model_out)),
            model_out,
            stencil,
            train,
        })
    }
}

#[derive(Debug, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Output directory for CSVs and dumps.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated variants, e.g. `d4,torus:mc:n=1`. The baseline is always run.
    #[arg(long, value_delimiter = ',')]
    pub groups: Option<Vec<String>>,
    /// Comma-separated start offsets (last frame of the initial window).
    #[arg(long, value_delimiter = ',')]
    pub starts: Option<Vec<usize>>,
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Comma-separated Monte-Carlo seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// `test` (default), `train` or `all`.
    #[arg(long)]
    pub split: Option<String>,
    /// Also evaluate trajectories flagged as steady.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub include_steady: Option<bool>,
    /// Write predicted and true frames for every run.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub dump: Option<bool>,
    /// `grouped` (default) or `per-component`.
    #[arg(long)]
    pub scoring: Option<String>,
}

impl EvalArgs {
    pub fn resolve(mut self) -> Result<EvalSettings> {
        let mut file: EvalArgs = load_config(self.config.as_deref())?;
        merge!(self, file; dataset, model, out, groups, starts, horizon, seeds, split, include_steady, dump, scoring);
        let variants = self
            .groups
            .unwrap_or_default()
            .iter()
            .filter(|g| !g.trim().is_empty())
            .map(|g| g.parse::<VariantSpec>())
            .collect::<Result<Vec<_>>>()?;
        let scoring = match self.scoring.as_deref() {
            None | Some("grouped") => ScoringMode::Grouped,
            Some("per-component") => ScoringMode::PerComponent,
            Some(other) => return Err(Error::Usage(format!("unknown scoring {other:?}"))),
        };
        let horizon = self.horizon.unwrap_or(15);
        if horizon == 0 {
            return Err(Error::Usage("--horizon must be at least 1".into()));
        }
        Ok(EvalSettings {
            dataset: required(self.dataset, "dataset")?,
            model: required(self.model, "model")?,
            out: required(self.out, "out")?,
            variants,
            starts: self.starts.unwrap_or_else(|| vec![10, 50]),
            horizon,
            seeds: self.seeds.unwrap_or_else(|| vec![0]),
            split: self.split.as_deref().map_or(Ok(Split::Test), str::parse)?,
            include_steady: self.include_steady.unwrap_or(false),
            dump: self.dump.unwrap_or(false),
            scoring,
        })
    }
}

#[derive(Debug, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Eval output directory, or a per-step CSV.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Steps shown as columns.
    #[arg(long, value_delimiter = ',')]
    pub steps: Option<Vec<usize>>,
    /// Markdown file to write (stdout if absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| Error::Usage(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
        // a second configuration attempt in the same process is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Generate(args) => {
            let (spec, out) = args.resolve()?;
            let done = commands::generate(&spec, &out)?;
            let (train, test) = done.manifest.counts();
            let steady = done.manifest.trajectories.iter().filter(|e| e.steady).count();
            println!(
                "wrote {} trajectories ({train} train / {test} test, {steady} steady) of {} frames on {}x{} to {}",
                done.manifest.trajectories.len(),
                done.manifest.frames,
                spec.grid,
                spec.grid,
                out.display()
            );
            println!("manifest sha256: {}", done.sha256);
        }
        Command::Train(args) => {
            let settings = args.resolve()?;
            if settings.train.lr == 0.0 {
                eprintln!("warning: --lr 0 leaves the initial parameters unchanged");
            }
            let (_, report) = commands::train(&settings)?;
            println!(
                "trained {} epochs: loss {:.4e} -> {:.4e}; model {} ; curve {}",
                settings.train.epochs,
                report.initial(),
                report.last(),
                settings.model_out.display(),
                settings.loss_csv.display()
            );
        }
        Command::Eval(args) => {
            let settings = args.resolve()?;
            let outcome = commands::evaluate(&settings)?;
            for r in &outcome.rollouts {
                println!(
                    "start {:>4}  {:<16} rollout {:.4}  (n={}, excluded {})",
                    r.start, r.variant, r.rollout, r.n_trajectories, r.excluded
                );
            }
        }
        Command::Report(mut args) => {
            let mut file: ReportArgs = load_config(args.config.as_deref())?;
            merge!(args, file; input, steps, out);
            let input = required(args.input, "input")?;
            let steps = args.steps.unwrap_or_else(|| vec![1, 5, 10, 15]);
            let md = commands::report(&input, &steps)?;
            match args.out {
                Some(path) => std::fs::write(&path, &md).map_err(Error::io(&path))?,
                None => print!("{md}"),
            }
        }
    }
    Ok(())
}

/// Parses `args` and runs; returns the process exit code (0 ok, 1 usage, 2 runtime).
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
