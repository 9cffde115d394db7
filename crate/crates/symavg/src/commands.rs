//! The generate / train / eval / report pipeline as library calls.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use symavg_core::metrics::{self, LossTable, MetricConfig, ScoringMode};
use symavg_core::reynolds::{self, AveragingConfig, AveragingMode};
use symavg_core::surrogate::{self, Normalization, StencilConfig, StencilModel, TrainConfig, TrainReport};
use symavg_core::{simulate, FieldSet, GroupKind, GroupSpec, Trajectory};

use crate::dataset::{self, Dataset, DatasetSpec, Manifest, Split};
use crate::error::{Error, Result};
use crate::io;
use crate::model_file;
use crate::tables::{self, LossCurveRow, RolloutRow, StepRow, TrajectoryRow};

pub const BASELINE: &str = "baseline";

/// One averaged evaluation variant, written `group`, `group:full` or
/// `group:mc:n=N[:fixed]` (for example `d4` or `torus:mc:n=1`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VariantSpec {
    pub group: GroupKind,
    pub mode: VariantMode,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VariantMode {
    Full,
    MonteCarlo { samples: usize, resample_per_step: bool },
}

impl VariantSpec {
    /// Column label, e.g. `d4`, `torus-mc1`, `d4-mc2-fixed`.
    pub fn label(&self) -> String {
        match self.mode {
            VariantMode::Full => self.group.label().to_string(),
            VariantMode::MonteCarlo { samples, resample_per_step } => {
                let fixed = if resample_per_step { "" } else { "-fixed" };
                format!("{}-mc{samples}{fixed}", self.group.label())
            }
        }
    }

    pub fn averaging(&self, group: GroupSpec, seed: u64) -> AveragingConfig {
        match self.mode {
            VariantMode::Full => AveragingConfig::full(group),
            VariantMode::MonteCarlo { samples, resample_per_step } => AveragingConfig {
                group,
                mode: AveragingMode::MonteCarlo { samples, seed, resample_per_step },
            },
        }
    }

    fn is_monte_carlo(&self) -> bool {
        matches!(self.mode, VariantMode::MonteCarlo { .. })
    }
}

impl FromStr for VariantSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |why: &str| Error::Usage(format!("bad group spec {s:?}: {why}"));
        let mut parts = s.trim().split(':');
        let group: GroupKind = parts
            .next()
            .unwrap_or_default()
            .parse()
            .map_err(|_| bad("unknown group (expected d1, d2, d4, circle or torus)"))?;
        let mode = match parts.next() {
            None | Some("full") => VariantMode::Full,
            Some("mc") => {
                let mut samples = None;
                let mut resample_per_step = true;
                for p in parts.by_ref() {
                    if let Some(n) = p.strip_prefix("n=") {
                        samples = Some(n.parse::<usize>().map_err(|_| bad("n must be a positive integer"))?);
                    } else if p == "fixed" {
                        resample_per_step = false;
                    } else {
                        return Err(bad("unknown Monte-Carlo option"));
                    }
                }
                match samples {
                    Some(n) if n > 0 => VariantMode::MonteCarlo { samples: n, resample_per_step },
                    _ => return Err(bad("Monte-Carlo needs n=N with N >= 1")),
                }
            }
            Some(_) => return Err(bad("mode must be full or mc")),
        };
        if parts.next().is_some() {
            return Err(bad("trailing fields"));
        }
        Ok(Self { group, mode })
    }
}

impl fmt::Display for VariantSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

// ---------------------------------------------------------------- generate

pub struct GenerateOutcome {
    pub manifest: Manifest,
    pub sha256: String,
}

pub fn generate(spec: &DatasetSpec, out: &Path) -> Result<GenerateOutcome> {
    let manifest = dataset::make_dataset(spec, out)?;
    let sha256 = dataset::manifest_hash(out)?;
    Ok(GenerateOutcome { manifest, sha256 })
}

// ---------------------------------------------------------------- train

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSettings {
    pub dataset: PathBuf,
    pub model_out: PathBuf,
    pub loss_csv: PathBuf,
    pub stencil: StencilConfig,
    pub train: TrainConfig,
}

/// Default location of the loss curve next to a model file.
pub fn default_loss_csv(model: &Path) -> PathBuf {
    model.with_extension("loss.csv")
}

/// Fits normalization on the training split, trains, and writes the model and loss curve.
pub fn train(settings: &TrainSettings) -> Result<(StencilModel<f32>, TrainReport)> {
    let ds = Dataset::open(&settings.dataset)?;
    let data: Vec<Trajectory<f32>> = ds.load_split(Split::Train)?.into_iter().map(|(_, t)| t).collect();
    if data.is_empty() {
        return Err(Error::Runtime("dataset has no training trajectories".into()));
    }
    let norm = Normalization::fit(&data)?;
    let mut model = StencilModel::new(settings.stencil.clone(), simulate::gray_scott_schema(), norm)?;
    let report = surrogate::train(&mut model, &data, &settings.train)?;
    model_file::save_model(&settings.model_out, &model, Some(&settings.train))?;
    let rows: Vec<LossCurveRow> =
        report.loss_curve.iter().enumerate().map(|(epoch, &loss)| LossCurveRow { epoch, loss }).collect();
    tables::write_csv(&settings.loss_csv, &rows)?;
    Ok((model, report))
}

// ---------------------------------------------------------------- eval

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSettings {
    pub dataset: PathBuf,
    pub model: PathBuf,
    pub out: PathBuf,
    pub variants: Vec<VariantSpec>,
    pub starts: Vec<usize>,
    pub horizon: usize,
    /// Monte-Carlo seeds; every MC variant is run once per seed.
    pub seeds: Vec<u64>,
    pub split: Split,
    pub include_steady: bool,
    pub dump: bool,
    pub scoring: ScoringMode,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalOutcome {
    pub steps: Vec<StepRow>,
    pub rollouts: Vec<RolloutRow>,
    pub trajectories: Vec<TrajectoryRow>,
}

impl EvalOutcome {
    pub fn rollout(&self, variant: &str, start: usize) -> Option<&RolloutRow> {
        self.rollouts.iter().find(|r| r.variant == variant && r.start == start)
    }
}

/// Per-run seed derived from the user seed, trajectory position and start.
pub fn run_seed(seed: u64, trajectory: usize, start: usize) -> u64 {
    let mut z = seed ^ ((trajectory as u64) << 32) ^ (start as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Job {
    start: usize,
    variant: Option<usize>,
    traj: usize,
    seed: u64,
}

enum RunResult {
    Ok { table: LossTable, predicted: Vec<FieldSet<f32>> },
    Diverged,
    Steady,
}

pub fn evaluate(settings: &EvalSettings) -> Result<EvalOutcome> {
    if settings.horizon == 0 {
        return Err(Error::Usage("horizon must be at least 1".into()));
    }
    if settings.starts.is_empty() {
        return Err(Error::Usage("at least one start offset is required".into()));
    }
    let ds = Dataset::open(&settings.dataset)?;
    let model = model_file::load_model(&settings.model)?;
    let k = model.config().history;
    let grid = ds.manifest().grid;
    let data = ds.load_split(settings.split)?;
    if data.is_empty() {
        return Err(Error::Runtime(format!("split {} is empty", settings.split)));
    }
    for (entry, traj) in &data {
        for &start in &settings.starts {
            if start + 1 < k || start + settings.horizon >= traj.len() {
                return Err(Error::Runtime(format!(
                    "{}: {} frames cannot hold a {k}-frame window ending at {start} plus {} predicted steps",
                    entry.name,
                    traj.len(),
                    settings.horizon
                )));
            }
        }
    }
    let groups: Vec<GroupSpec> = settings
        .variants
        .iter()
        .map(|v| GroupSpec::new(v.group, &grid))
        .collect::<std::result::Result<_, _>>()?;
    let metric = MetricConfig {
        rollout_steps: settings.horizon.min(metrics::DEFAULT_ROLLOUT_STEPS),
        starts: settings.starts.clone(),
        scoring: settings.scoring,
        ..MetricConfig::default()
    };
    let mc_seeds: &[u64] = if settings.seeds.is_empty() { &[0] } else { &settings.seeds };

    let mut jobs = Vec::new();
    for &start in &settings.starts {
        let variants = std::iter::once(None).chain((0..settings.variants.len()).map(Some));
        for variant in variants {
            let seeds: &[u64] = match variant {
                Some(v) if settings.variants[v].is_monte_carlo() => mc_seeds,
                _ => &[0],
            };
            for traj in 0..data.len() {
                for &seed in seeds {
                    jobs.push(Job { start, variant, traj, seed });
                }
            }
        }
    }

    let results: Vec<RunResult> = jobs
        .par_iter()
        .map(|job| -> Result<RunResult> {
            let (entry, traj) = &data[job.traj];
            if entry.steady && !settings.include_steady {
                return Ok(RunResult::Steady);
            }
            let window = traj.window_ending_at(job.start, k)?;
            let cfg = job
                .variant
                .map(|v| settings.variants[v].averaging(groups[v], run_seed(job.seed, job.traj, job.start)));
            match reynolds::rollout(&model, window, settings.horizon, cfg.as_ref()) {
                Ok(r) => {
                    let table = metrics::evaluate_rollout(&r.predicted, traj, &metric)?;
                    if !table.rollout.is_finite() {
                        return Ok(RunResult::Diverged);
                    }
                    let predicted = if settings.dump { r.predicted } else { Vec::new() };
                    Ok(RunResult::Ok { table, predicted })
                }
                Err(symavg_core::Error::NonFinitePrediction { .. }) => Ok(RunResult::Diverged),
                Err(e) => Err(e.into()),
            }
        })
        .collect::<Result<_>>()?;

    let label = |v: Option<usize>| v.map_or_else(|| BASELINE.to_string(), |v| settings.variants[v].label());
    let mut out = EvalOutcome::default();
    let mut i = 0;
    while i < jobs.len() {
        let (start, variant) = (jobs[i].start, jobs[i].variant);
        let name = label(variant);
        let mut kept: Vec<(&LossTable, bool)> = Vec::new();
        let mut excluded = 0;
        while i < jobs.len() && jobs[i].start == start && jobs[i].variant == variant {
            let job = &jobs[i];
            let entry = &data[job.traj].0;
            let (rollout, status) = match &results[i] {
                RunResult::Ok { table, .. } => {
                    kept.push((table, false));
                    (Some(table.rollout), "ok")
                }
                RunResult::Diverged => {
                    excluded += 1;
                    (None, "diverged")
                }
                RunResult::Steady => {
                    excluded += 1;
                    (None, "steady")
                }
            };
            out.trajectories.push(TrajectoryRow {
                variant: name.clone(),
                start,
                trajectory: entry.name.clone(),
                seed: job.seed,
                rollout,
                status: status.into(),
            });
            i += 1;
        }
        if kept.is_empty() {
            return Err(Error::Runtime(format!("{name} at start {start}: every rollout was excluded")));
        }
        let mean = metrics::aggregate(&kept, false)?;
        for (s, row) in mean.per_step.iter().enumerate() {
            for (var, &v) in mean.variables.iter().zip(row) {
                out.steps.push(StepRow { variant: name.clone(), start, step: s + 1, variable: var.clone(), vrmse: v });
            }
        }
        out.rollouts.push(RolloutRow {
            variant: name,
            start,
            rollout: mean.rollout,
            n_trajectories: mean.count,
            excluded,
        });
    }

    tables::write_csv(&settings.out.join(tables::PER_STEP_CSV), &out.steps)?;
    tables::write_csv(&settings.out.join(tables::ROLLOUT_CSV), &out.rollouts)?;
    tables::write_csv(&settings.out.join(tables::PER_TRAJECTORY_CSV), &out.trajectories)?;

    if settings.dump {
        for (job, result) in jobs.iter().zip(&results) {
            if let RunResult::Ok { predicted, .. } = result {
                let (entry, truth) = &data[job.traj];
                let dir = dump_dir(&settings.out, &label(job.variant), job.start, &entry.name, job.seed);
                let pred = Trajectory::new(predicted.clone(), truth.dt())?;
                io::write_trajectory(&dir.join("pred"), &pred)?;
                let lo = job.start + 1;
                let truth_frames = truth.frames()[lo..lo + settings.horizon].to_vec();
                io::write_trajectory(&dir.join("truth"), &Trajectory::new(truth_frames, truth.dt())?)?;
            }
        }
    }
    Ok(out)
}

/// `out/dumps/<variant>/start_<S>/<trajectory>_seed<seed>`, holding `pred/` and `truth/`.
pub fn dump_dir(out: &Path, variant: &str, start: usize, trajectory: &str, seed: u64) -> PathBuf {
    out.join("dumps")
        .join(variant)
        .join(format!("start_{start}"))
        .join(format!("{trajectory}_seed{seed}"))
}

// ---------------------------------------------------------------- report

/// Renders the Markdown table for an eval output directory (or a per-step CSV path).
pub fn report(input: &Path, steps: &[usize]) -> Result<String> {
    let (per_step, rollout) = if input.is_dir() {
        (input.join(tables::PER_STEP_CSV), input.join(tables::ROLLOUT_CSV))
    } else {
        let dir = input.parent().unwrap_or(Path::new("."));
        (input.to_path_buf(), dir.join(tables::ROLLOUT_CSV))
    };
    tables::report_from_files(&per_step, &rollout, steps)
}
