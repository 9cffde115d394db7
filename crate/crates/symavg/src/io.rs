//! On-disk trajectory directories.
//!
//! A trajectory directory holds `meta.json` and `frames.bin`. The binary file
//! stores every frame in time order; within a frame, component planes follow
//! the schema order and each plane is row-major (`iy * nx + ix`). Values are
//! little-endian in the dtype named by the metadata.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use symavg_core::{FieldSet, GridSpec, Real, Schema, Trajectory};

use crate::error::{Error, Result};

pub const TRAJECTORY_FORMAT_VERSION: u32 = 1;
pub const META_FILE: &str = "meta.json";
pub const FRAMES_FILE: &str = "frames.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub format_version: u32,
    pub grid: GridSpec,
    pub schema: Schema,
    pub dt: f64,
    pub frames: usize,
    pub first_time_index: i64,
    pub dtype: String,
    pub endianness: String,
}

pub fn write_json<V: Serialize>(path: &Path, value: &V) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(Error::json(path))?;
    text.push('\n');
    fs::write(path, text).map_err(Error::io(path))
}

pub fn read_json<V: for<'de> Deserialize<'de>>(path: &Path) -> Result<V> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    serde_json::from_str(&text).map_err(Error::json(path))
}

pub fn write_trajectory<T: Real>(dir: &Path, traj: &Trajectory<T>) -> Result<()> {
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let meta = TrajectoryMeta {
        format_version: TRAJECTORY_FORMAT_VERSION,
        grid: *traj.grid(),
        schema: (**traj.schema()).clone(),
        dt: traj.dt(),
        frames: traj.len(),
        first_time_index: traj.first_time_index(),
        dtype: T::DTYPE.to_string(),
        endianness: "little".to_string(),
    };
    let mut bytes = Vec::with_capacity(traj.len() * traj.frames()[0].data().len() * T::SIZE);
    for frame in traj.frames() {
        for &v in frame.data() {
            v.write_le(&mut bytes);
        }
    }
    let bin = dir.join(FRAMES_FILE);
    fs::write(&bin, bytes).map_err(Error::io(&bin))?;
    write_json(&dir.join(META_FILE), &meta)
}

pub fn read_meta(dir: &Path) -> Result<TrajectoryMeta> {
    let path = dir.join(META_FILE);
    let meta: TrajectoryMeta = read_json(&path)?;
    if meta.format_version != TRAJECTORY_FORMAT_VERSION {
        return Err(Error::Version { path, found: meta.format_version, expected: TRAJECTORY_FORMAT_VERSION });
    }
    if meta.endianness != "little" {
        return Err(Error::format(path, format!("unsupported endianness {:?}", meta.endianness)));
    }
    if meta.frames == 0 {
        return Err(Error::format(path, "trajectory has no frames"));
    }
    Ok(meta)
}

/// Reads a trajectory, converting from the stored dtype to `T` if they differ.
pub fn read_trajectory<T: Real>(dir: &Path) -> Result<Trajectory<T>> {
    let meta = read_meta(dir)?;
    match meta.dtype.as_str() {
        "f32" => decode::<f32, T>(dir, &meta),
        "f64" => decode::<f64, T>(dir, &meta),
        other => Err(Error::format(dir.join(META_FILE), format!("unsupported dtype {other:?}"))),
    }
}

fn decode<S: Real, T: Real>(dir: &Path, meta: &TrajectoryMeta) -> Result<Trajectory<T>> {
    let path = dir.join(FRAMES_FILE);
    let bytes = fs::read(&path).map_err(Error::io(&path))?;
    let per_frame = meta.grid.cells() * meta.schema.components();
    let expected = meta.frames * per_frame * S::SIZE;
    if bytes.len() != expected {
        return Err(Error::format(&path, format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let schema = Arc::new(meta.schema.clone());
    let mut frames = Vec::with_capacity(meta.frames);
    for (i, chunk) in bytes.chunks_exact(per_frame * S::SIZE).enumerate() {
        let data: Vec<T> = chunk.chunks_exact(S::SIZE).map(|b| T::narrow(S::read_le(b).widen())).collect();
        let t = meta.first_time_index + i as i64;
        frames.push(FieldSet::new(meta.grid, Arc::clone(&schema), data, t).map_err(|e| Error::format(&path, e.to_string()))?);
    }
    Ok(Trajectory::new(frames, meta.dt)?)
}
