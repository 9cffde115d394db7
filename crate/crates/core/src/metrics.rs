//! Variance-scaled RMSE and rollout loss tables.
//!
//! `vrmse(u, v) = sqrt(mean|u - v|² / (mean|v - mean v|² + eps))`, with `v` the
//! ground truth. For vector and tensor channels `|·|²` sums over components
//! before the spatial mean, so each channel is one state variable; the
//! per-component mode scores every plane separately instead.

use alloc::{format, string::String, vec, vec::Vec};

use serde::{Deserialize, Serialize};

use crate::{
    field::{plane_mean, FieldSet, Schema, Trajectory},
    Error, Real, Result,
};

pub const DEFAULT_EPSILON: f64 = 1e-7;
pub const DEFAULT_ROLLOUT_STEPS: usize = 15;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoringMode {
    /// One variable per channel, squared norms summed over components.
    #[default]
    Grouped,
    /// One variable per component plane.
    PerComponent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub epsilon: f64,
    pub rollout_steps: usize,
    pub starts: Vec<usize>,
    #[serde(default)]
    pub scoring: ScoringMode,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            rollout_steps: DEFAULT_ROLLOUT_STEPS,
            starts: vec![10, 50],
            scoring: ScoringMode::Grouped,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidParams(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.rollout_steps == 0 {
            return Err(Error::InvalidParams("rollout_steps must be positive".into()));
        }
        Ok(())
    }
}

fn vrmse_planes<T: Real>(pred: &[&[T]], truth: &[&[T]], eps: f64) -> f64 {
    let n = truth[0].len() as f64;
    let mut err = 0.0;
    let mut var = 0.0;
    for (p, t) in pred.iter().zip(truth) {
        let mean = plane_mean(t);
        let mut e = 0.0;
        let mut v = 0.0;
        for (a, b) in p.iter().zip(t.iter()) {
            let (a, b) = (a.widen(), b.widen());
            e += (a - b) * (a - b);
            v += (b - mean) * (b - mean);
        }
        err += e;
        var += v;
    }
    sqrt(err / n / (var / n + eps))
}

#[inline]
fn sqrt(x: f64) -> f64 {
    num_traits::Float::sqrt(x)
}

/// VRMSE of one named channel; `truth` provides the variance in the denominator.
pub fn vrmse<T: Real>(pred: &FieldSet<T>, truth: &FieldSet<T>, channel: &str, eps: f64) -> Result<f64> {
    pred.check_layout(truth)?;
    let group = truth.schema().group(channel)?;
    let p: Vec<&[T]> = group.planes().map(|c| pred.plane(c)).collect();
    let t: Vec<&[T]> = group.planes().map(|c| truth.plane(c)).collect();
    Ok(vrmse_planes(&p, &t, eps))
}

/// Names of the scored state variables, in schema order.
pub fn variable_names(schema: &Schema, mode: ScoringMode) -> Vec<String> {
    let mut names = Vec::new();
    for g in schema.groups() {
        match mode {
            ScoringMode::Grouped => names.push(String::from(g.name())),
            ScoringMode::PerComponent => {
                for suffix in g.kind().component_suffixes() {
                    names.push(format!("{}_{}", g.name(), suffix));
                }
            }
        }
    }
    names
}

/// VRMSE of every state variable for one frame.
pub fn frame_vrmse<T: Real>(pred: &FieldSet<T>, truth: &FieldSet<T>, mode: ScoringMode, eps: f64) -> Result<Vec<f64>> {
    pred.check_layout(truth)?;
    let mut out = Vec::new();
    for g in truth.schema().groups() {
        match mode {
            ScoringMode::Grouped => {
                let p: Vec<&[T]> = g.planes().map(|c| pred.plane(c)).collect();
                let t: Vec<&[T]> = g.planes().map(|c| truth.plane(c)).collect();
                out.push(vrmse_planes(&p, &t, eps));
            }
            ScoringMode::PerComponent => {
                for c in g.planes() {
                    out.push(vrmse_planes(&[pred.plane(c)], &[truth.plane(c)], eps));
                }
            }
        }
    }
    Ok(out)
}

/// Per-step, per-variable losses of one rollout (or their mean over many).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossTable {
    pub variables: Vec<String>,
    /// `per_step[step][variable]`, step 0 being the first predicted frame.
    pub per_step: Vec<Vec<f64>>,
    /// Mean over variables at every step.
    pub step_means: Vec<f64>,
    /// Sum of the first `rollout_steps` entries of `step_means`.
    pub rollout: f64,
    pub rollout_steps: usize,
    /// Number of trajectories averaged into this table.
    pub count: usize,
}

impl LossTable {
    /// Builds a table from raw per-step values, deriving means and the rollout sum.
    pub fn from_steps(variables: Vec<String>, per_step: Vec<Vec<f64>>, rollout_steps: usize, count: usize) -> Self {
        let step_means: Vec<f64> = per_step.iter().map(|row| row.iter().sum::<f64>() / row.len() as f64).collect();
        let rollout = rollout_sum(&step_means, rollout_steps);
        Self { variables, per_step, step_means, rollout, rollout_steps, count }
    }

    pub fn steps(&self) -> usize {
        self.per_step.len()
    }
}

/// Compensated (Neumaier) sum of the first `steps` values, in order.
pub fn rollout_sum(step_means: &[f64], steps: usize) -> f64 {
    let mut sum = 0.0f64;
    let mut carry = 0.0f64;
    for &v in step_means.iter().take(steps) {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            carry += (sum - t) + v;
        } else {
            carry += (v - t) + sum;
        }
        sum = t;
    }
    sum + carry
}

/// Scores predicted frames against the truth frames carrying the same time indices.
pub fn evaluate_rollout<T: Real>(pred: &[FieldSet<T>], truth: &Trajectory<T>, cfg: &MetricConfig) -> Result<LossTable> {
    cfg.validate()?;
    if pred.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut per_step = Vec::with_capacity(pred.len());
    for p in pred {
        let t = truth.frame_at_time(p.time_index()).ok_or_else(|| {
            Error::Misaligned(format!("no truth frame at time index {}", p.time_index()))
        })?;
        if !p.same_layout(t) {
            return Err(Error::Misaligned(format!("layout differs at time index {}", p.time_index())));
        }
        per_step.push(frame_vrmse(p, t, cfg.scoring, cfg.epsilon)?);
    }
    Ok(LossTable::from_steps(variable_names(truth.schema(), cfg.scoring), per_step, cfg.rollout_steps, 1))
}

/// Elementwise mean of per-trajectory tables, optionally skipping flagged ones.
///
/// The rollout of the result is the sum of its averaged step means.
pub fn aggregate(tables: &[(&LossTable, bool)], exclude_flagged: bool) -> Result<LossTable> {
    let kept: Vec<&LossTable> = tables
        .iter()
        .filter(|(_, flagged)| !(exclude_flagged && *flagged))
        .map(|(t, _)| *t)
        .collect();
    let first = *kept.first().ok_or(Error::EmptyInput)?;
    let (steps, vars) = (first.steps(), first.variables.len());
    for t in &kept {
        if t.variables != first.variables || t.steps() != steps || t.rollout_steps != first.rollout_steps {
            return Err(Error::Misaligned("loss tables have different shapes".into()));
        }
    }
    let n = kept.len() as f64;
    let mut per_step = vec![vec![0.0f64; vars]; steps];
    for t in &kept {
        for (acc, row) in per_step.iter_mut().zip(&t.per_step) {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
    }
    for row in &mut per_step {
        for v in row.iter_mut() {
            *v /= n;
        }
    }
    Ok(LossTable::from_steps(first.variables.clone(), per_step, first.rollout_steps, kept.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{ChannelKind, GridSpec};
    use crate::group::{apply, GroupKind, GroupSpec};
    use alloc::sync::Arc;
    use proptest::prelude::*;

    fn scalar_schema() -> Arc<Schema> {
        Arc::new(Schema::new([("u", ChannelKind::Scalar)]).unwrap())
    }

    fn field(grid: GridSpec, schema: Arc<Schema>, data: Vec<f64>, t: i64) -> FieldSet<f64> {
        FieldSet::new(grid, schema, data, t).unwrap()
    }

    #[test]
    fn identical_fields_score_zero() {
        let grid = GridSpec::periodic_square(4).unwrap();
        let f = field(grid, scalar_schema(), (0..16).map(|v| v as f64).collect(), 0);
        assert_eq!(vrmse(&f, &f, "u", DEFAULT_EPSILON).unwrap(), 0.0);
    }

    #[test]
    fn constant_truth_is_dominated_by_epsilon() {
        let grid = GridSpec::periodic_square(4).unwrap();
        let truth = field(grid, scalar_schema(), vec![3.0; 16], 0);
        let pred = field(grid, scalar_schema(), vec![4.0; 16], 0);
        let got = vrmse(&pred, &truth, "u", 1e-7).unwrap();
        let want = 1.0 / 1e-7f64.sqrt();
        assert!((got - want).abs() <= 1e-9 * want, "{got}");
    }

    #[test]
    fn two_cell_case() {
        let grid = GridSpec::new(2, 2, 1.0, 1.0, crate::Boundary::PeriodicBoth).unwrap();
        // truth alternates 0/2 so every cell pair mirrors the 2-cell example
        let truth = field(grid, scalar_schema(), vec![0.0, 2.0, 0.0, 2.0], 0);
        let pred = field(grid, scalar_schema(), vec![1.0, 3.0, 1.0, 3.0], 0);
        let got = vrmse(&pred, &truth, "u", 1e-7).unwrap();
        let want = (1.0f64 / (1.0 + 1e-7)).sqrt();
        assert!((got - want).abs() <= 1e-12, "{got} vs {want}");
    }

    #[test]
    fn predicting_the_mean_scores_about_one() {
        let grid = GridSpec::periodic_square(8).unwrap();
        let data: Vec<f64> = (0..64).map(|i| ((i * 37) % 11) as f64 * 0.3).collect();
        let truth = field(grid, scalar_schema(), data, 0);
        let mean = truth.spatial_mean("u").unwrap()[0];
        let pred = field(grid, scalar_schema(), vec![mean; 64], 0);
        let got = vrmse(&pred, &truth, "u", 1e-7).unwrap();
        assert!((got - 1.0).abs() < 1e-6, "{got}");
    }

    #[test]
    fn vector_channel_sums_components() {
        let grid = GridSpec::new(2, 2, 1.0, 1.0, crate::Boundary::PeriodicBoth).unwrap();
        let schema = Arc::new(Schema::new([("v", ChannelKind::Vector)]).unwrap());
        let truth = field(grid, schema.clone(), vec![0.0, 2.0, 0.0, 2.0, 1.0, 1.0, 1.0, 1.0], 0);
        let pred = field(grid, schema.clone(), vec![1.0, 3.0, 1.0, 3.0, 2.0, 2.0, 2.0, 2.0], 0);
        // mean |e|² = 1 + 1, variance = 1 + 0
        let got = vrmse(&pred, &truth, "v", 1e-7).unwrap();
        assert!((got - (2.0f64 / (1.0 + 1e-7)).sqrt()).abs() < 1e-12);
        let per = frame_vrmse(&pred, &truth, ScoringMode::PerComponent, 1e-7).unwrap();
        assert_eq!(per.len(), 2);
        assert!((per[1] - 1.0 / 1e-7f64.sqrt()).abs() < 1e-6);
        assert_eq!(variable_names(&schema, ScoringMode::PerComponent), ["v_x", "v_y"]);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = field(GridSpec::periodic_square(4).unwrap(), scalar_schema(), vec![0.0; 16], 0);
        let b = field(GridSpec::periodic_square(5).unwrap(), scalar_schema(), vec![0.0; 25], 0);
        assert!(vrmse(&a, &b, "u", 1e-7).is_err());
        assert!(matches!(vrmse(&a, &a, "w", 1e-7), Err(Error::UnknownChannel(_))));
    }

    #[test]
    fn fifteen_tenths_sum_to_one_and_a_half() {
        let t = LossTable::from_steps(vec!["u".into()], vec![vec![0.1]; 20], 15, 1);
        assert_eq!(t.rollout, 1.5);
        assert_eq!(t.rollout, rollout_sum(&t.step_means, 15));
        // naive left-to-right addition drifts by one ulp here
        assert_ne!(t.step_means[..15].iter().fold(0.0, |a, v| a + v), 1.5);
    }

    fn trajectory(values: &[f64], start: i64) -> Trajectory<f64> {
        let grid = GridSpec::periodic_square(2).unwrap();
        let frames = values
            .iter()
            .enumerate()
            .map(|(i, v)| field(grid, scalar_schema(), vec![*v, v + 1.0, v - 1.0, *v], start + i as i64))
            .collect();
        Trajectory::new(frames, 1.0).unwrap()
    }

    #[test]
    fn perfect_rollout_scores_zero() {
        let truth = trajectory(&[0.0, 1.0, 2.0, 3.0, 4.0], 0);
        let pred: Vec<_> = truth.frames()[2..].to_vec();
        let t = evaluate_rollout(&pred, &truth, &MetricConfig::default()).unwrap();
        assert_eq!(t.steps(), 3);
        assert!(t.per_step.iter().flatten().all(|&v| v == 0.0));
        assert_eq!(t.rollout, 0.0);
    }

    #[test]
    fn misaligned_rollout_is_rejected() {
        let truth = trajectory(&[0.0, 1.0, 2.0], 0);
        let pred = vec![truth.frames()[2].clone().with_time_index(7)];
        assert!(matches!(evaluate_rollout(&pred, &truth, &MetricConfig::default()), Err(Error::Misaligned(_))));
    }

    fn table(rows: &[[f64; 2]]) -> LossTable {
        LossTable::from_steps(vec!["a".into(), "b".into()], rows.iter().map(|r| r.to_vec()).collect(), 15, 1)
    }

    #[test]
    fn aggregate_single_and_pair() {
        let a = table(&[[0.2, 0.4], [0.6, 0.8]]);
        let b = table(&[[0.4, 0.0], [0.2, 0.2]]);
        let one = aggregate(&[(&a, false)], true).unwrap();
        assert_eq!(one.per_step, a.per_step);
        assert_eq!(one.rollout, a.rollout);
        let two = aggregate(&[(&a, false), (&b, false)], true).unwrap();
        for (s, row) in two.per_step.iter().enumerate() {
            for (v, x) in row.iter().enumerate() {
                assert_eq!(*x, (a.per_step[s][v] + b.per_step[s][v]) / 2.0);
            }
        }
        assert_eq!(two.count, 2);
    }

    #[test]
    fn aggregate_matches_grand_mean() {
        let a = table(&[[0.1, 0.3], [0.5, 0.7], [0.2, 0.9]]);
        let b = table(&[[0.4, 0.2], [0.8, 0.6], [1.0, 0.1]]);
        let agg = aggregate(&[(&a, false), (&b, false)], false).unwrap();
        for s in 0..3 {
            let grand = (a.per_step[s][0] + a.per_step[s][1] + b.per_step[s][0] + b.per_step[s][1]) / 4.0;
            assert!((agg.step_means[s] - grand).abs() < 1e-15);
        }
        let mean_rollout = (a.rollout + b.rollout) / 2.0;
        assert!((agg.rollout - mean_rollout).abs() < 1e-14);
    }

    #[test]
    fn exclusion_changes_the_denominator() {
        let a = table(&[[1.0, 1.0]]);
        let b = table(&[[3.0, 3.0]]);
        let c = table(&[[8.0, 8.0]]);
        let rows = [(&a, false), (&b, false), (&c, true)];
        let kept = aggregate(&rows, true).unwrap();
        assert_eq!(kept.count, 2);
        assert_eq!(kept.per_step[0][0], 2.0);
        let all = aggregate(&rows, false).unwrap();
        assert_eq!(all.count, 3);
        assert_eq!(all.per_step[0][0], 4.0);
        assert!(matches!(aggregate(&[(&c, true)], true), Err(Error::EmptyInput)));
        assert!(matches!(aggregate(&[], false), Err(Error::EmptyInput)));
    }

    proptest! {
        #[test]
        fn invariant_under_common_group_action(
            truth in prop::collection::vec(-2.0f64..2.0, 36),
            noise in prop::collection::vec(-0.5f64..0.5, 36),
            idx in 0usize..36,
        ) {
            let grid = GridSpec::periodic_square(6).unwrap();
            let pred: Vec<f64> = truth.iter().zip(&noise).map(|(a, b)| a + b).collect();
            let t = field(grid, scalar_schema(), truth, 0);
            let p = field(grid, scalar_schema(), pred, 0);
            let base = vrmse(&p, &t, "u", 1e-7).unwrap();
            let d4 = GroupSpec::new(GroupKind::D4, &grid).unwrap();
            let torus = GroupSpec::new(GroupKind::Torus, &grid).unwrap();
            for g in [d4.element(idx % 8), torus.element(idx)] {
                let got = vrmse(&apply(g, &p).unwrap(), &apply(g, &t).unwrap(), "u", 1e-7).unwrap();
                prop_assert!((got - base).abs() <= 1e-12 * base.max(1.0));
            }
        }

        #[test]
        fn constant_offsets_scale_linearly(
            truth in prop::collection::vec(-2.0f64..2.0, 16),
            delta in 0.01f64..3.0,
            k in 1.0f64..5.0,
        ) {
            let grid = GridSpec::periodic_square(4).unwrap();
            prop_assume!(truth.iter().any(|v| (v - truth[0]).abs() > 1e-3));
            let t = field(grid, scalar_schema(), truth.clone(), 0);
            let shifted = |d: f64| field(grid, scalar_schema(), truth.iter().map(|v| v + d).collect(), 0);
            let one = vrmse(&shifted(delta), &t, "u", 1e-7).unwrap();
            let many = vrmse(&shifted(k * delta), &t, "u", 1e-7).unwrap();
            prop_assert!((many - k * one).abs() <= 1e-9 * many);
        }
    }
}
