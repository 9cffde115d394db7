//! A shared-weight local stencil network used as the trainable surrogate.
//!
//! Every cell sees the `k × s × (2p+1)²` patch of normalized inputs around it
//! (periodic padding, mirrored along a Neumann axis), passes it through an
//! optional `tanh` hidden layer, and emits `s` outputs. Because weights are
//! shared across cells the model commutes with lattice shifts; nothing ties
//! the weights to rotations or reflections, so it is generally not
//! dihedral-equivariant.
//!
//! Parameters are laid out as `[W1 (h × n_in), b1 (h), W2 (s × h), b2 (s)]`,
//! or `[W (s × n_in), b (s)]` when `hidden == 0`.

use alloc::{format, sync::Arc, vec, vec::Vec};

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{
    field::{FieldSet, Schema, Trajectory, Window},
    reynolds::Surrogate,
    Error, Real, Result,
};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StencilConfig {
    /// Window length `k`.
    pub history: usize,
    /// Patch radius `p`; the receptive field is `(2p+1)²` cells.
    pub radius: usize,
    /// Hidden units per cell; 0 gives a linear model.
    pub hidden: usize,
    /// Predict the change from the last frame instead of the next frame itself.
    #[serde(default)]
    pub residual: bool,
    pub seed: u64,
}

impl Default for StencilConfig {
    fn default() -> Self {
        Self { history: 4, radius: 1, hidden: 8, residual: false, seed: 0 }
    }
}

impl StencilConfig {
    pub fn validate(&self) -> Result<()> {
        if self.history == 0 || self.radius == 0 {
            return Err(Error::InvalidParams("stencil needs history >= 1 and radius >= 1".into()));
        }
        Ok(())
    }

    pub fn patch_cells(&self) -> usize {
        (2 * self.radius + 1).pow(2)
    }

    pub fn inputs(&self, components: usize) -> usize {
        self.history * components * self.patch_cells()
    }

    /// `s·k·(2p+1)²·h + h + h·s + s`, or `s·k·(2p+1)²·s + s` for the linear model.
    pub fn parameter_count(&self, components: usize) -> usize {
        let n_in = self.inputs(components);
        let s = components;
        match self.hidden {
            0 => s * n_in + s,
            h => n_in * h + h + h * s + s,
        }
    }
}

/// Per-component affine input/output scaling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn identity(components: usize) -> Self {
        Self { mean: vec![0.0; components], std: vec![1.0; components] }
    }

    /// Mean and standard deviation of every component over all frames and cells.
    pub fn fit<T: Real>(trajectories: &[Trajectory<T>]) -> Result<Self> {
        let first = trajectories.first().ok_or(Error::EmptyInput)?;
        let s = first.schema().components();
        let mut sum = vec![0.0f64; s];
        let mut sq = vec![0.0f64; s];
        let mut count = 0usize;
        for traj in trajectories {
            if traj.schema().components() != s {
                return Err(Error::LayoutMismatch("trajectories disagree on schema".into()));
            }
            for f in traj.frames() {
                for c in 0..s {
                    for v in f.plane(c) {
                        let v = v.widen();
                        sum[c] += v;
                        sq[c] += v * v;
                    }
                }
                count += f.cells();
            }
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|v| v / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / n - m * m).max(0.0);
                // constant channels keep unit scale
                if var > 1e-12 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    fn validate(&self, components: usize) -> Result<()> {
        if self.mean.len() != components || self.std.len() != components {
            return Err(Error::ModelMismatch(format!(
                "normalization has {}/{} entries for {components} components",
                self.mean.len(),
                self.std.len()
            )));
        }
        if self.std.iter().any(|s| !(*s > 0.0 && s.is_finite())) || self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::ModelMismatch("normalization must be finite with positive scales".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StencilModel<T> {
    config: StencilConfig,
    schema: Arc<Schema>,
    norm: Normalization,
    params: Vec<T>,
}

/// One supervised cell: predict `target` at `cell` from `history` (oldest first).
#[derive(Clone, Copy, Debug)]
pub struct CellSample<'a, T> {
    pub history: &'a [FieldSet<T>],
    pub target: &'a FieldSet<T>,
    pub cell: usize,
}

struct Scratch {
    x: Vec<f64>,
    a: Vec<f64>,
    o: Vec<f64>,
}

impl<T: Real> StencilModel<T> {
    /// Randomly initialized model (`W1 ~ U(±√(3/n_in))`, small `W2`, zero biases),
    /// or all zeros for the linear variant.
    pub fn new(config: StencilConfig, schema: Arc<Schema>, norm: Normalization) -> Result<Self> {
        config.validate()?;
        norm.validate(schema.components())?;
        let s = schema.components();
        let n_in = config.inputs(s);
        let h = config.hidden;
        let mut params = vec![T::zero(); config.parameter_count(s)];
        if h > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let a = (3.0 / n_in as f64).sqrt();
            for w in &mut params[..h * n_in] {
                *w = T::narrow(rng.gen_range(-a..a));
            }
            let b = 0.1 * (3.0 / h as f64).sqrt();
            let w2 = h * n_in + h;
            for w in &mut params[w2..w2 + h * s] {
                *w = T::narrow(rng.gen_range(-b..b));
            }
        }
        Ok(Self { config, schema, norm, params })
    }

    pub fn from_parts(config: StencilConfig, schema: Arc<Schema>, norm: Normalization, params: Vec<T>) -> Result<Self> {
        config.validate()?;
        norm.validate(schema.components())?;
        let expected = config.parameter_count(schema.components());
        if params.len() != expected {
            return Err(Error::ModelMismatch(format!("expected {expected} parameters, got {}", params.len())));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::ModelMismatch("non-finite parameter".into()));
        }
        Ok(Self { config, schema, norm, params })
    }

    /// Linear model that copies the last frame at the centre cell.
    pub fn persistence(history: usize, radius: usize, schema: Arc<Schema>) -> Result<Self> {
        let config = StencilConfig { history, radius, hidden: 0, residual: false, seed: 0 };
        let s = schema.components();
        let norm = Normalization::identity(s);
        let mut model = Self::new(config, schema, norm)?;
        let n_in = model.config.inputs(s);
        let patch = model.config.patch_cells();
        let centre = patch / 2;
        for c in 0..s {
            let i = ((history - 1) * s + c) * patch + centre;
            model.params[c * n_in + i] = T::one();
        }
        Ok(model)
    }

    pub fn config(&self) -> &StencilConfig {
        &self.config
    }

    pub fn schema(&self) -> &Arc<Schema> {
        &self.schema
    }

    pub fn normalization(&self) -> &Normalization {
        &self.norm
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    fn check_frames(&self, history: &[FieldSet<T>]) -> Result<()> {
        if history.len() != self.config.history {
            return Err(Error::ModelMismatch(format!(
                "model expects {} frames, got {}",
                self.config.history,
                history.len()
            )));
        }
        for f in history {
            if !(Arc::ptr_eq(f.schema(), &self.schema) || **f.schema() == *self.schema) {
                return Err(Error::ModelMismatch("window schema differs from the model's".into()));
            }
        }
        Ok(())
    }

    fn scratch(&self) -> Scratch {
        let s = self.schema.components();
        Scratch {
            x: vec![0.0; self.config.inputs(s)],
            a: vec![0.0; self.config.hidden],
            o: vec![0.0; s],
        }
    }

    /// Fills `x` with the normalized patch around `cell`.
    fn gather(&self, history: &[FieldSet<T>], cell: usize, x: &mut [f64]) {
        let grid = history[0].grid();
        let (nx, ny) = (grid.nx() as i64, grid.ny() as i64);
        let periodic_y = grid.boundary().periodic_y();
        let (ix, iy) = ((cell as i64) % nx, (cell as i64) / nx);
        let p = self.config.radius as i64;
        let s = self.schema.components();
        let mut i = 0;
        for frame in history {
            for c in 0..s {
                let plane = frame.plane(c);
                let (mean, inv) = (self.norm.mean[c], 1.0 / self.norm.std[c]);
                for dy in -p..=p {
                    let y = iy + dy;
                    let y = if periodic_y { y.rem_euclid(ny) } else { mirror(y, ny) };
                    let row = (y * nx) as usize;
                    for dx in -p..=p {
                        let x_ = (ix + dx).rem_euclid(nx) as usize;
                        x[i] = (plane[row + x_].widen() - mean) * inv;
                        i += 1;
                    }
                }
            }
        }
    }

    /// Normalized outputs `o` for the gathered input `x`; fills hidden activations.
    fn forward(&self, sc: &mut Scratch) {
        let s = self.schema.components();
        let n_in = sc.x.len();
        let h = self.config.hidden;
        let p = &self.params;
        if h == 0 {
            for c in 0..s {
                let w = &p[c * n_in..(c + 1) * n_in];
                sc.o[c] = p[s * n_in + c].widen() + dot(w, &sc.x);
            }
            return;
        }
        let (b1, w2, b2) = (h * n_in, h * n_in + h, h * n_in + h + h * s);
        for j in 0..h {
            let z = p[b1 + j].widen() + dot(&p[j * n_in..(j + 1) * n_in], &sc.x);
            sc.a[j] = Float::tanh(z);
        }
        for c in 0..s {
            sc.o[c] = p[b2 + c].widen() + dot(&p[w2 + c * h..w2 + (c + 1) * h], &sc.a);
        }
    }

    /// Target in the model's output coordinates.
    fn scaled_target(&self, history: &[FieldSet<T>], target: &FieldSet<T>, cell: usize, c: usize) -> f64 {
        let n = target.cells();
        let t = target.data()[c * n + cell].widen();
        let base = if self.config.residual {
            history[history.len() - 1].data()[c * n + cell].widen()
        } else {
            self.norm.mean[c]
        };
        (t - base) / self.norm.std[c]
    }

    /// Mean squared error in normalized units over all samples and components,
    /// and its exact gradient with respect to every parameter.
    pub fn loss_and_gradient(&self, batch: &[CellSample<'_, T>]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::EmptyInput);
        }
        let s = self.schema.components();
        let n_in = self.config.inputs(s);
        let h = self.config.hidden;
        let mut grad = vec![0.0f64; self.params.len()];
        let mut sc = self.scratch();
        let mut loss = 0.0;
        let denom = (batch.len() * s) as f64;
        let mut g_out = vec![0.0f64; s];
        for sample in batch {
            self.check_frames(sample.history)?;
            sample.history[0].check_layout(sample.target)?;
            if sample.cell >= sample.target.cells() {
                return Err(Error::ModelMismatch(format!("cell {} out of range", sample.cell)));
            }
            self.gather(sample.history, sample.cell, &mut sc.x);
            self.forward(&mut sc);
            for c in 0..s {
                let r = sc.o[c] - self.scaled_target(sample.history, sample.target, sample.cell, c);
                loss += r * r;
                g_out[c] = 2.0 * r / denom;
            }
            if h == 0 {
                for c in 0..s {
                    let g = g_out[c];
                    axpy(g, &sc.x, &mut grad[c * n_in..(c + 1) * n_in]);
                    grad[s * n_in + c] += g;
                }
                continue;
            }
            let (b1, w2, b2) = (h * n_in, h * n_in + h, h * n_in + h + h * s);
            for c in 0..s {
                let g = g_out[c];
                axpy(g, &sc.a, &mut grad[w2 + c * h..w2 + (c + 1) * h]);
                grad[b2 + c] += g;
            }
            for j in 0..h {
                let mut ga = 0.0;
                for c in 0..s {
                    ga += g_out[c] * self.params[w2 + c * h + j].widen();
                }
                let gz = ga * (1.0 - sc.a[j] * sc.a[j]);
                axpy(gz, &sc.x, &mut grad[j * n_in..(j + 1) * n_in]);
                grad[b1 + j] += gz;
            }
        }
        Ok((loss / denom, grad))
    }

    /// Loss only (same definition as [`loss_and_gradient`](Self::loss_and_gradient)).
    pub fn loss(&self, batch: &[CellSample<'_, T>]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::EmptyInput);
        }
        let s = self.schema.components();
        let mut sc = self.scratch();
        let mut loss = 0.0;
        for sample in batch {
            self.check_frames(sample.history)?;
            self.gather(sample.history, sample.cell, &mut sc.x);
            self.forward(&mut sc);
            for c in 0..s {
                let r = sc.o[c] - self.scaled_target(sample.history, sample.target, sample.cell, c);
                loss += r * r;
            }
        }
        Ok(loss / (batch.len() * s) as f64)
    }

    fn predict_frames(&self, history: &[FieldSet<T>]) -> Result<FieldSet<T>> {
        self.check_frames(history)?;
        let last = &history[history.len() - 1];
        let n = last.cells();
        let s = self.schema.components();
        let mut out = vec![T::zero(); n * s];
        let mut sc = self.scratch();
        for cell in 0..n {
            self.gather(history, cell, &mut sc.x);
            self.forward(&mut sc);
            for c in 0..s {
                let base = if self.config.residual {
                    last.data()[c * n + cell].widen()
                } else {
                    self.norm.mean[c]
                };
                out[c * n + cell] = T::narrow(base + sc.o[c] * self.norm.std[c]);
            }
        }
        FieldSet::new(*last.grid(), Arc::clone(last.schema()), out, last.time_index() + 1)
    }
}

impl<T: Real> Surrogate<T> for StencilModel<T> {
    fn history(&self) -> usize {
        self.config.history
    }

    fn predict(&self, window: &Window<T>) -> Result<FieldSet<T>> {
        self.predict_frames(window.frames())
    }
}

#[inline]
fn dot<T: Real>(w: &[T], x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(w, x)| w.widen() * x).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (y, x) in y.iter_mut().zip(x) {
        *y += alpha * x;
    }
}

/// Reflects an out-of-range index back into `0..n` (ghost cell equals edge cell).
fn mirror(i: i64, n: i64) -> i64 {
    let period = 2 * n;
    let m = i.rem_euclid(period);
    if m < n {
        m
    } else {
        period - 1 - m
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    /// Cells per update.
    pub batch: usize,
    /// Size of the fixed batch used for the loss curve.
    pub eval_batch: usize,
    #[serde(default)]
    pub schedule: LrSchedule,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine decay from `lr` to zero over all updates.
    #[default]
    Cosine,
}

impl LrSchedule {
    fn factor(self, update: usize, total: usize) -> f64 {
        match self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine => 0.5 * (1.0 + Float::cos(core::f64::consts::PI * update as f64 / total as f64)),
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.05,
            momentum: 0.9,
            epochs: 40,
            steps_per_epoch: 200,
            batch: 256,
            eval_batch: 4096,
            schedule: LrSchedule::Cosine,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Loss on the fixed evaluation batch before training and after each epoch.
    pub loss_curve: Vec<f64>,
}

impl TrainReport {
    pub fn initial(&self) -> f64 {
        self.loss_curve[0]
    }

    pub fn last(&self) -> f64 {
        *self.loss_curve.last().expect("curve has at least the initial entry")
    }
}

/// All `(trajectory, window end)` pairs that have a next frame.
fn training_pairs<T: Real>(data: &[Trajectory<T>], k: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for (ti, traj) in data.iter().enumerate() {
        for end in k.saturating_sub(1)..traj.len().saturating_sub(1) {
            pairs.push((ti, end));
        }
    }
    pairs
}

fn draw_batch<'a, T: Real, R: Rng>(
    data: &'a [Trajectory<T>],
    pairs: &[(usize, usize)],
    k: usize,
    n: usize,
    rng: &mut R,
) -> Vec<CellSample<'a, T>> {
    (0..n)
        .map(|_| {
            let (ti, end) = pairs[rng.gen_range(0..pairs.len())];
            let frames = data[ti].frames();
            CellSample {
                history: &frames[end + 1 - k..=end],
                target: &frames[end + 1],
                cell: rng.gen_range(0..frames[0].cells()),
            }
        })
        .collect()
}

/// Minibatch SGD with heavy-ball momentum on random `(window, next frame, cell)` draws.
///
/// Deterministic given `cfg.seed`. Aborts if a batch loss exceeds `1e3 ×` the initial loss.
pub fn train<T: Real>(model: &mut StencilModel<T>, data: &[Trajectory<T>], cfg: &TrainConfig) -> Result<TrainReport> {
    if !(cfg.lr >= 0.0 && cfg.lr.is_finite()) || !(0.0..1.0).contains(&cfg.momentum) {
        return Err(Error::InvalidParams(format!("bad learning rate {} or momentum {}", cfg.lr, cfg.momentum)));
    }
    if cfg.batch == 0 || cfg.eval_batch == 0 {
        return Err(Error::InvalidParams("batch sizes must be positive".into()));
    }
    let k = model.config.history;
    let pairs = training_pairs(data, k);
    if pairs.is_empty() {
        return Err(Error::InvalidParams(format!("no training pairs: trajectories need more than {k} frames")));
    }
    let mut eval_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    eval_rng.set_stream(1);
    let eval = draw_batch(data, &pairs, k, cfg.eval_batch, &mut eval_rng);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let initial = model.loss(&eval)?;
    let mut curve = vec![initial];
    let mut velocity = vec![0.0f64; model.params.len()];
    let mut update = 0usize;
    let total = cfg.epochs * cfg.steps_per_epoch;
    for _ in 0..cfg.epochs {
        for _ in 0..cfg.steps_per_epoch {
            let lr = cfg.lr * cfg.schedule.factor(update, total);
            update += 1;
            let batch = draw_batch(data, &pairs, k, cfg.batch, &mut rng);
            let (loss, grad) = model.loss_and_gradient(&batch)?;
            if !loss.is_finite() || loss > 1e3 * initial {
                return Err(Error::Diverged { update, loss, initial });
            }
            for ((p, v), g) in model.params.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = cfg.momentum * *v + g;
                *p = T::narrow(p.widen() - lr * *v);
            }
        }
        curve.push(model.loss(&eval)?);
    }
    Ok(TrainReport { loss_curve: curve })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{ChannelKind, GridSpec};
    use crate::group::{GroupKind, GroupSpec, Shift};
    use crate::reynolds::check_equivariance;
    use crate::simulate::{generate_trajectory, gray_scott_schema, GrayScottParams, InitialCondition};

    fn schema() -> Arc<Schema> {
        Arc::new(Schema::new([("a", ChannelKind::Scalar), ("b", ChannelKind::Scalar)]).unwrap())
    }

    fn random_frames<T: Real>(grid: GridSpec, n: usize, seed: u64) -> Vec<FieldSet<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|t| {
                let data = (0..2 * grid.cells()).map(|_| T::narrow(rng.gen_range(-1.0..1.0))).collect();
                FieldSet::new(grid, schema(), data, t as i64).unwrap()
            })
            .collect()
    }

    fn randomized<T: Real>(cfg: StencilConfig, seed: u64) -> StencilModel<T> {
        let norm = Normalization { mean: vec![0.1, -0.2], std: vec![0.7, 1.3] };
        let mut m = StencilModel::new(cfg, schema(), norm).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in m.params_mut() {
            *p = T::narrow(rng.gen_range(-0.4..0.4));
        }
        m
    }

    #[test]
    fn parameter_count_formula() {
        let cfg = StencilConfig { history: 4, radius: 1, hidden: 8, residual: false, seed: 0 };
        assert_eq!(cfg.parameter_count(2), 2 * 4 * 9 * 8 + 8 + 8 * 2 + 2);
        let m: StencilModel<f32> = StencilModel::new(cfg, schema(), Normalization::identity(2)).unwrap();
        assert_eq!(m.params().len(), 602);
        let lin = StencilConfig { hidden: 0, ..StencilConfig::default() };
        assert_eq!(lin.parameter_count(2), 2 * 72 + 2);
    }

    #[test]
    fn zero_linear_model_predicts_zero() {
        let grid = GridSpec::periodic_square(5).unwrap();
        let cfg = StencilConfig { history: 2, radius: 1, hidden: 0, residual: false, seed: 0 };
        let m: StencilModel<f32> = StencilModel::new(cfg, schema(), Normalization::identity(2)).unwrap();
        let w = Window::new(random_frames(grid, 2, 1)).unwrap();
        let out = m.predict(&w).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
        assert_eq!(out.time_index(), 2);
    }

    #[test]
    fn persistence_weights_copy_last_frame() {
        let grid = GridSpec::periodic_square(6).unwrap();
        let m: StencilModel<f32> = StencilModel::persistence(3, 1, schema()).unwrap();
        let w = Window::new(random_frames(grid, 3, 2)).unwrap();
        assert_eq!(m.predict(&w).unwrap().data(), w.last().data());
    }

    #[test]
    fn rejects_mismatched_windows() {
        let grid = GridSpec::periodic_square(4).unwrap();
        let m: StencilModel<f32> = StencilModel::persistence(2, 1, schema()).unwrap();
        let w = Window::new(random_frames(grid, 3, 2)).unwrap();
        assert!(matches!(m.predict(&w), Err(Error::ModelMismatch(_))));
        let other = Arc::new(Schema::new([("v", ChannelKind::Vector)]).unwrap());
        let f = FieldSet::new(grid, other, vec![0.0f32; 32], 0).unwrap();
        let w = Window::new(vec![f.clone(), f.with_time_index(1)]).unwrap();
        assert!(matches!(m.predict(&w), Err(Error::ModelMismatch(_))));
    }

    #[test]
    fn asymmetric_stencil_breaks_reflection_symmetry() {
        let grid = GridSpec::periodic_square(8).unwrap();
        let cfg = StencilConfig { history: 1, radius: 1, hidden: 0, residual: false, seed: 0 };
        let mut m: StencilModel<f64> = StencilModel::new(cfg, schema(), Normalization::identity(2)).unwrap();
        // patch index for (dy, dx) is (dy+1)*3 + (dx+1); centre = 4
        for c in 0..2 {
            let row = c * 18;
            let own = c * 9;
            m.params_mut()[row + own + 4] = 1.0;
            m.params_mut()[row + own + 5] = 0.5; // dx = +1
            m.params_mut()[row + own + 3] = -0.2; // dx = -1
        }
        let probes: Vec<Window<f64>> = (0..4).map(|s| Window::new(random_frames(grid, 1, s)).unwrap()).collect();
        let d1 = GroupSpec::new(GroupKind::D1, &grid).unwrap();
        let rep = check_equivariance(&m, &d1, &probes, 1e-6).unwrap();
        assert!(rep.max_deviation > 0.1, "{rep:?}");
        assert!(!rep.passed);
    }

    #[test]
    fn shifts_commute_with_prediction() {
        let grid = GridSpec::periodic_square(7).unwrap();
        let m: StencilModel<f32> = randomized(StencilConfig { history: 2, radius: 2, hidden: 5, residual: false, seed: 1 }, 4);
        let w = Window::new(random_frames(grid, 2, 8)).unwrap();
        let torus = GroupSpec::new(GroupKind::Torus, &grid).unwrap();
        let rep = check_equivariance(&m, &torus, &[w], 1e-6).unwrap();
        assert!(rep.passed, "{rep:?}");
        let _ = Shift::new(0, 0, 7, 7);
    }

    #[test]
    fn neumann_axis_uses_mirrored_padding() {
        assert_eq!(mirror(-1, 4), 0);
        assert_eq!(mirror(-2, 4), 1);
        assert_eq!(mirror(4, 4), 3);
        assert_eq!(mirror(5, 4), 2);
        assert_eq!(mirror(2, 4), 2);
    }

    fn fd_check(cfg: StencilConfig) {
        let grid = GridSpec::periodic_square(6).unwrap();
        let mut m: StencilModel<f64> = randomized(cfg.clone(), 21);
        let frames = random_frames::<f64>(grid, cfg.history + 1, 5);
        let batch: Vec<CellSample<'_, f64>> = (0..12)
            .map(|i| CellSample { history: &frames[..cfg.history], target: &frames[cfg.history], cell: (i * 7) % 36 })
            .collect();
        let (_, grad) = m.loss_and_gradient(&batch).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let step = 1e-4;
        for _ in 0..20 {
            let i = rng.gen_range(0..grad.len());
            let orig = m.params()[i];
            m.params_mut()[i] = orig + step;
            let up = m.loss(&batch).unwrap();
            m.params_mut()[i] = orig - step;
            let down = m.loss(&batch).unwrap();
            m.params_mut()[i] = orig;
            let fd = (up - down) / (2.0 * step);
            let rel = (fd - grad[i]).abs() / grad[i].abs().max(fd.abs()).max(1e-6);
            assert!(rel <= 1e-6, "param {i}: analytic {} vs fd {fd} (rel {rel})", grad[i]);
        }
    }

    #[test]
    fn gradient_matches_finite_differences_hidden() {
        fd_check(StencilConfig { history: 2, radius: 1, hidden: 6, residual: false, seed: 0 });
    }

    #[test]
    fn gradient_matches_finite_differences_linear_residual() {
        fd_check(StencilConfig { history: 3, radius: 1, hidden: 0, residual: true, seed: 0 });
    }

    #[test]
    fn perfect_prediction_has_zero_loss_and_gradient() {
        let grid = GridSpec::periodic_square(5).unwrap();
        let frames = random_frames::<f64>(grid, 2, 1);
        let target = frames[1].clone().with_time_index(2);
        let m: StencilModel<f64> = StencilModel::persistence(2, 1, schema()).unwrap();
        let batch: Vec<CellSample<'_, f64>> =
            (0..25).map(|cell| CellSample { history: &frames, target: &target, cell }).collect();
        let (loss, grad) = m.loss_and_gradient(&batch).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn doubling_residuals_quadruples_loss() {
        let grid = GridSpec::periodic_square(5).unwrap();
        let frames = random_frames::<f64>(grid, 3, 7);
        let m: StencilModel<f64> = StencilModel::persistence(2, 1, schema()).unwrap();
        let last = &frames[1];
        let t1 = frames[2].clone();
        // target' = last + 2 (target - last)
        let doubled: Vec<f64> = last.data().iter().zip(t1.data()).map(|(l, t)| l + 2.0 * (t - l)).collect();
        let t2 = FieldSet::new(grid, schema(), doubled, 2).unwrap();
        let b1: Vec<_> = (0..25).map(|cell| CellSample { history: &frames[..2], target: &t1, cell }).collect();
        let b2: Vec<_> = (0..25).map(|cell| CellSample { history: &frames[..2], target: &t2, cell }).collect();
        let (l1, l2) = (m.loss(&b1).unwrap(), m.loss(&b2).unwrap());
        assert!((l2 - 4.0 * l1).abs() <= 1e-12 * l2);
    }

    fn small_dataset() -> Vec<Trajectory<f32>> {
        let grid = GridSpec::periodic_square(16).unwrap();
        let mut p = GrayScottParams::desk_default(&grid);
        p.substeps = 10;
        (0..5)
            .map(|s| {
                let ic = InitialCondition::GaussianClusters { count: 4, width: 1.5, amplitude: 1.0, seed: s };
                generate_trajectory::<f64>(&grid, &p, &ic, 24).unwrap().cast()
            })
            .collect()
    }

    #[test]
    fn training_reduces_loss() {
        let data = small_dataset();
        let norm = Normalization::fit(&data).unwrap();
        let mut m = StencilModel::new(StencilConfig::default(), gray_scott_schema(), norm).unwrap();
        let cfg = TrainConfig { epochs: 20, steps_per_epoch: 50, batch: 128, eval_batch: 1024, ..TrainConfig::default() };
        let rep = train(&mut m, &data, &cfg).unwrap();
        assert_eq!(rep.loss_curve.len(), 21);
        assert!(rep.last() < 0.5 * rep.initial(), "{:?}", rep.loss_curve);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let data = small_dataset();
        let norm = Normalization::fit(&data).unwrap();
        let mut m = StencilModel::new(StencilConfig::default(), gray_scott_schema(), norm).unwrap();
        let before = m.clone();
        let cfg = TrainConfig { lr: 0.0, epochs: 2, steps_per_epoch: 5, ..TrainConfig::default() };
        train(&mut m, &data, &cfg).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn training_is_deterministic() {
        let data = small_dataset();
        let norm = Normalization::fit(&data).unwrap();
        let cfg = TrainConfig { epochs: 2, steps_per_epoch: 10, ..TrainConfig::default() };
        let run = || {
            let mut m = StencilModel::new(StencilConfig::default(), gray_scott_schema(), norm.clone()).unwrap();
            train(&mut m, &data, &cfg).unwrap();
            m
        };
        let (a, b) = (run(), run());
        assert!(a.params().iter().zip(b.params()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn divergence_aborts() {
        let data = small_dataset();
        let norm = Normalization::fit(&data).unwrap();
        let mut m = StencilModel::new(StencilConfig::default(), gray_scott_schema(), norm).unwrap();
        let cfg = TrainConfig { lr: 50.0, momentum: 0.99, epochs: 5, steps_per_epoch: 50, ..TrainConfig::default() };
        assert!(matches!(train(&mut m, &data, &cfg), Err(Error::Diverged { .. })));
    }
}
