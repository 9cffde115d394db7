//! Gray-Scott datasets: `manifest.json` plus `train/` and `test/` trajectory directories.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use symavg_core::simulate::{self, GrayScottParams, InitialCondition, STEADY_STATE_VARIANCE};
use symavg_core::{GridSpec, Trajectory};

use crate::error::{Error, Result};
use crate::io;

pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    All,
}

impl Split {
    fn contains(self, other: Split) -> bool {
        self == Split::All || self == other
    }

    fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::All => ".",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "all" => Ok(Split::All),
            _ => Err(Error::Usage(format!("unknown split {s:?} (expected train, test or all)"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::All => "all",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    /// Cells per side of the periodic unit square.
    pub grid: usize,
    pub trajectories: usize,
    pub frames: usize,
    /// Trajectory `i` uses seed `seed + i`.
    pub seed: u64,
    pub test_fraction: f64,
    /// Solver steps per saved frame; `None` keeps the desk default.
    pub substeps: Option<usize>,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self { grid: 64, trajectories: 20, frames: 200, seed: 0, test_fraction: 0.1, substeps: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEntry {
    pub name: String,
    pub split: Split,
    pub seed: u64,
    pub initial_condition: InitialCondition,
    /// Final frame has converged (variance below the steady-state threshold).
    pub steady: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub grid: GridSpec,
    pub params: GrayScottParams,
    pub master_seed: u64,
    pub frames: usize,
    pub test_fraction: f64,
    pub dtype: String,
    pub steady_threshold: f64,
    pub trajectories: Vec<TrajectoryEntry>,
}

impl Manifest {
    pub fn entries(&self, split: Split) -> impl Iterator<Item = &TrajectoryEntry> {
        self.trajectories.iter().filter(move |e| split.contains(e.split))
    }

    pub fn counts(&self) -> (usize, usize) {
        let test = self.trajectories.iter().filter(|e| e.split == Split::Test).count();
        (self.trajectories.len() - test, test)
    }
}

/// Initial condition of trajectory `i`: even runs use Gaussian clusters, odd runs
/// random Fourier series.
pub fn initial_condition(i: usize, seed: u64) -> InitialCondition {
    if i % 2 == 0 {
        InitialCondition::GaussianClusters { count: 6, width: 2.0, amplitude: 1.0, seed }
    } else {
        InitialCondition::RandomFourier { modes: 4, amplitude: 1.0, seed }
    }
}

/// Integrates every trajectory (in parallel, double precision), stores them as
/// `f32`, and writes the manifest last.
pub fn make_dataset(spec: &DatasetSpec, out: &Path) -> Result<Manifest> {
    if spec.frames == 0 {
        return Err(Error::Usage("frames must be at least 1".into()));
    }
    let grid = GridSpec::periodic_square(spec.grid)?;
    let mut params = GrayScottParams::desk_default(&grid);
    if let Some(s) = spec.substeps {
        params.substeps = s;
    }
    params.validate(&grid)?;
    let (n_train, _) = simulate::split_counts(spec.trajectories, spec.test_fraction)?;

    let entries: Vec<TrajectoryEntry> = (0..spec.trajectories)
        .into_par_iter()
        .map(|i| -> Result<TrajectoryEntry> {
            let seed = spec.seed.wrapping_add(i as u64);
            let ic = initial_condition(i, seed);
            let traj: Trajectory<f32> = simulate::generate_trajectory::<f64>(&grid, &params, &ic, spec.frames)?.cast();
            let split = if i < n_train { Split::Train } else { Split::Test };
            let name = format!("traj_{i:03}");
            io::write_trajectory(&out.join(split.dir_name()).join(&name), &traj)?;
            Ok(TrajectoryEntry { name, split, seed, initial_condition: ic, steady: simulate::is_steady(&traj, STEADY_STATE_VARIANCE) })
        })
        .collect::<Result<_>>()?;

    let manifest = Manifest {
        format_version: DATASET_FORMAT_VERSION,
        grid,
        params,
        master_seed: spec.seed,
        frames: spec.frames,
        test_fraction: spec.test_fraction,
        dtype: "f32".into(),
        steady_threshold: STEADY_STATE_VARIANCE,
        trajectories: entries,
    };
    io::write_json(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

pub struct Dataset {
    root: PathBuf,
    manifest: Manifest,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let manifest: Manifest = io::read_json(&path)?;
        if manifest.format_version != DATASET_FORMAT_VERSION {
            return Err(Error::Version { path, found: manifest.format_version, expected: DATASET_FORMAT_VERSION });
        }
        Ok(Self { root: root.to_path_buf(), manifest })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn trajectory_dir(&self, entry: &TrajectoryEntry) -> PathBuf {
        self.root.join(entry.split.dir_name()).join(&entry.name)
    }

    pub fn load(&self, entry: &TrajectoryEntry) -> Result<Trajectory<f32>> {
        io::read_trajectory(&self.trajectory_dir(entry))
    }

    /// Loads a split in manifest order.
    pub fn load_split(&self, split: Split) -> Result<Vec<(TrajectoryEntry, Trajectory<f32>)>> {
        let entries: Vec<&TrajectoryEntry> = self.manifest.entries(split).collect();
        entries
            .into_par_iter()
            .map(|e| Ok((e.clone(), self.load(e)?)))
            .collect()
    }
}

/// Hex SHA-256 of the manifest file.
pub fn manifest_hash(root: &Path) -> Result<String> {
    let path = root.join(MANIFEST_FILE);
    let bytes = fs::read(&path).map_err(Error::io(&path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> DatasetSpec {
        DatasetSpec { grid: 12, trajectories: 10, frames: 6, seed, test_fraction: 0.1, substeps: Some(2) }
    }

    #[test]
    fn split_and_seeds() {
        let dir = tempfile::tempdir().unwrap();
        let m = make_dataset(&small(3), dir.path()).unwrap();
        assert_eq!(m.counts(), (9, 1));
        let seeds: Vec<u64> = m.trajectories.iter().map(|e| e.seed).collect();
        assert_eq!(seeds, (3..13).collect::<Vec<_>>());
        assert_eq!(m.trajectories[9].split, Split::Test);
        let ds = Dataset::open(dir.path()).unwrap();
        let test = ds.load_split(Split::Test).unwrap();
        assert_eq!(test.len(), 1);
        assert_eq!(test[0].1.len(), 6);
        assert_eq!(ds.load_split(Split::All).unwrap().len(), 10);
    }

    #[test]
    fn regeneration_reproduces_the_manifest_hash() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        make_dataset(&small(5), a.path()).unwrap();
        make_dataset(&small(5), b.path()).unwrap();
        assert_eq!(manifest_hash(a.path()).unwrap(), manifest_hash(b.path()).unwrap());
        let fa = fs::read(a.path().join("train/traj_004/frames.bin")).unwrap();
        let fb = fs::read(b.path().join("train/traj_004/frames.bin")).unwrap();
        assert_eq!(fa, fb);
        let c = tempfile::tempdir().unwrap();
        make_dataset(&small(6), c.path()).unwrap();
        assert_ne!(manifest_hash(a.path()).unwrap(), manifest_hash(c.path()).unwrap());
    }

    #[test]
    fn single_frame_trajectories() {
        let dir = tempfile::tempdir().unwrap();
        let spec = DatasetSpec { frames: 1, trajectories: 2, ..small(0) };
        make_dataset(&spec, dir.path()).unwrap();
        let ds = Dataset::open(dir.path()).unwrap();
        let all = ds.load_split(Split::All).unwrap();
        assert!(all.iter().all(|(_, t)| t.len() == 1));
    }

    #[test]
    fn too_few_trajectories() {
        let dir = tempfile::tempdir().unwrap();
        let spec = DatasetSpec { trajectories: 1, ..small(0) };
        assert!(make_dataset(&spec, dir.path()).is_err());
    }
}
