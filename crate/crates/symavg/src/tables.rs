//! Loss tables as CSV files and the Markdown summary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PER_STEP_CSV: &str = "per_step.csv";
pub const ROLLOUT_CSV: &str = "rollout.csv";
pub const PER_TRAJECTORY_CSV: &str = "per_trajectory.csv";

/// Mean VRMSE of one variable at one step, averaged over included runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub variant: String,
    pub start: usize,
    /// 1 is the first predicted frame.
    pub step: usize,
    pub variable: String,
    pub vrmse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutRow {
    pub variant: String,
    pub start: usize,
    pub rollout: f64,
    /// Runs included in the mean (trajectory × Monte-Carlo seed).
    pub n_trajectories: usize,
    /// Runs left out: steady-state or diverged.
    pub excluded: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub variant: String,
    pub start: usize,
    pub trajectory: String,
    pub seed: u64,
    pub rollout: Option<f64>,
    /// `ok`, `steady` or `diverged`.
    pub status: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossCurveRow {
    pub epoch: usize,
    pub loss: f64,
}

pub fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(Error::csv(path))?;
    for r in rows {
        w.serialize(r).map_err(Error::csv(path))?;
    }
    w.flush().map_err(Error::io(path))
}

pub fn read_csv<R: DeserializeOwned>(path: &Path) -> Result<Vec<R>> {
    let mut r = csv::Reader::from_path(path).map_err(Error::csv(path))?;
    r.deserialize().map(|row| row.map_err(Error::csv(path))).collect()
}

fn fmt_cell(v: f64, bold: bool) -> String {
    if bold {
        format!("**{v:.4}**")
    } else {
        format!("{v:.4}")
    }
}

/// Markdown table with one row per (start, variant): the variable-mean VRMSE at
/// each requested step and the rollout sum. Within a start group of two or more
/// rows, the smallest value of every column is bold.
pub fn markdown_report(step_rows: &[StepRow], rollout_rows: &[RolloutRow], steps: &[usize]) -> String {
    // (start, variant order) -> step -> (sum, count)
    let mut order: Vec<(usize, String)> = Vec::new();
    let mut means: BTreeMap<(usize, String), BTreeMap<usize, (f64, usize)>> = BTreeMap::new();
    let mut note = |start: usize, variant: &str| {
        let key = (start, variant.to_string());
        if !order.contains(&key) {
            order.push(key);
        }
    };
    for r in rollout_rows {
        note(r.start, &r.variant);
    }
    for r in step_rows {
        note(r.start, &r.variant);
        let e = means.entry((r.start, r.variant.clone())).or_default().entry(r.step).or_insert((0.0, 0));
        e.0 += r.vrmse;
        e.1 += 1;
    }
    let present: Vec<usize> = steps
        .iter()
        .copied()
        .filter(|s| means.values().any(|m| m.contains_key(s)))
        .collect();
    let rollout: BTreeMap<(usize, String), f64> =
        rollout_rows.iter().map(|r| ((r.start, r.variant.clone()), r.rollout)).collect();

    let mut starts: Vec<usize> = order.iter().map(|(s, _)| *s).collect();
    starts.sort_unstable();
    starts.dedup();

    let mut out = String::from("| Start | Variant |");
    for s in &present {
        let _ = write!(out, " Step {s} |");
    }
    out.push_str(" Rollout |\n|---|---|");
    for _ in &present {
        out.push_str("---|");
    }
    out.push_str("---|\n");

    for start in starts {
        let rows: Vec<&String> = order.iter().filter(|(s, _)| *s == start).map(|(_, v)| v).collect();
        let mut cols: Vec<Vec<Option<f64>>> = Vec::new();
        for v in &rows {
            let key = (start, (*v).clone());
            let mut cells: Vec<Option<f64>> = present
                .iter()
                .map(|s| means.get(&key).and_then(|m| m.get(s)).map(|(sum, n)| sum / *n as f64))
                .collect();
            cells.push(rollout.get(&key).copied());
            cols.push(cells);
        }
        let width = present.len() + 1;
        let minima: Vec<Option<f64>> = (0..width)
            .map(|c| cols.iter().filter_map(|r| r[c]).fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.min(v)))))
            .collect();
        let bolding = rows.len() >= 2;
        for (v, cells) in rows.iter().zip(&cols) {
            let _ = write!(out, "| {start} | {v} |");
            for (c, cell) in cells.iter().enumerate() {
                match cell {
                    Some(x) => {
                        let bold = bolding && minima[c] == Some(*x);
                        let _ = write!(out, " {} |", fmt_cell(*x, bold));
                    }
                    None => out.push_str(" - |"),
                }
            }
            out.push('\n');
        }
    }
    out
}

/// Reads the per-step and rollout CSVs and renders [`markdown_report`].
pub fn report_from_files(per_step: &Path, rollout: &Path, steps: &[usize]) -> Result<String> {
    let step_rows: Vec<StepRow> = read_csv(per_step)?;
    if step_rows.is_empty() {
        return Err(Error::NoRows(per_step.into()));
    }
    let rollout_rows: Vec<RolloutRow> = if rollout.exists() { read_csv(rollout)? } else { Vec::new() };
    Ok(markdown_report(&step_rows, &rollout_rows, steps))
}
