//! Group-averaged prediction and autoregressive rollouts.
//!
//! For a surrogate `M` and a set of group elements `g₁ … g_m` (all of `G`, or
//! Monte-Carlo draws), the averaged predictor is
//!
//! ```text
//! v̂ = (1/m) Σⱼ gⱼ⁻¹ · M(gⱼ · V)
//! ```
//!
//! where `gⱼ · V` acts identically on every frame of the input window. With the
//! full group the result is exactly equivariant. The sum runs in element order
//! and accumulates in `f64`, so results are reproducible bit for bit.

use alloc::{format, sync::Arc, vec, vec::Vec};

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{
    field::{FieldSet, Window},
    group::{self, GroupElement, GroupSpec},
    Error, Real, Result,
};

/// An autoregressive model mapping a `k`-frame window to the next frame.
///
/// Implementations must be deterministic and keep grid and schema unchanged.
pub trait Surrogate<T: Real> {
    /// Window length `k`.
    fn history(&self) -> usize;

    fn predict(&self, window: &Window<T>) -> Result<FieldSet<T>>;
}

impl<T: Real, M: Surrogate<T> + ?Sized> Surrogate<T> for &M {
    fn history(&self) -> usize {
        (**self).history()
    }

    fn predict(&self, window: &Window<T>) -> Result<FieldSet<T>> {
        (**self).predict(window)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AveragingMode {
    /// Sum over every element of the group.
    Full,
    /// `samples` uniform draws with replacement.
    MonteCarlo {
        samples: usize,
        seed: u64,
        /// Draw fresh elements at every rollout step; otherwise draw once per rollout.
        resample_per_step: bool,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AveragingConfig {
    pub group: GroupSpec,
    pub mode: AveragingMode,
}

impl AveragingConfig {
    pub fn full(group: GroupSpec) -> Self {
        Self { group, mode: AveragingMode::Full }
    }

    /// Monte-Carlo averaging with fresh draws every step.
    pub fn monte_carlo(group: GroupSpec, samples: usize, seed: u64) -> Self {
        Self {
            group,
            mode: AveragingMode::MonteCarlo { samples, seed, resample_per_step: true },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let AveragingMode::MonteCarlo { samples: 0, .. } = self.mode {
            return Err(Error::EmptySample);
        }
        Ok(())
    }

    /// Elements for one averaged prediction.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<GroupElement>> {
        match self.mode {
            AveragingMode::Full => Ok(self.group.enumerate()),
            AveragingMode::MonteCarlo { samples, .. } => self.group.sample(samples, rng),
        }
    }

    fn seed(&self) -> u64 {
        match self.mode {
            AveragingMode::Full => 0,
            AveragingMode::MonteCarlo { seed, .. } => seed,
        }
    }
}

/// Uniform average of `g⁻¹ · M(g · w)` over `elements`, in the given order.
pub fn average_over<T, M>(model: &M, window: &Window<T>, elements: &[GroupElement]) -> Result<FieldSet<T>>
where
    T: Real,
    M: Surrogate<T> + ?Sized,
{
    if elements.is_empty() {
        return Err(Error::EmptySample);
    }
    let template = window.last();
    let mut acc = vec![0.0f64; template.data().len()];
    for &g in elements {
        let transformed = group::apply_window(g, window)?;
        let raw = model.predict(&transformed)?;
        template.check_layout(&raw)?;
        let back = group::apply(g.inverse(), &raw)?;
        for (a, v) in acc.iter_mut().zip(back.data()) {
            *a += v.widen();
        }
    }
    let scale = 1.0 / elements.len() as f64;
    let data: Vec<T> = acc.into_iter().map(|a| T::narrow(a * scale)).collect();
    FieldSet::new(
        *template.grid(),
        Arc::clone(template.schema()),
        data,
        template.time_index() + 1,
    )
}

/// One group-averaged prediction; Monte-Carlo draws come from `rng`.
pub fn averaged_predict<T, M, R>(model: &M, window: &Window<T>, cfg: &AveragingConfig, rng: &mut R) -> Result<FieldSet<T>>
where
    T: Real,
    M: Surrogate<T> + ?Sized,
    R: Rng + ?Sized,
{
    cfg.validate()?;
    cfg.group.check_grid(window.grid())?;
    let elements = cfg.draw(rng)?;
    average_over(model, window, &elements)
}

/// A surrogate wrapped with a fixed set of averaging elements.
///
/// With the full group this is the projection of `model` onto equivariant maps,
/// and is itself a [`Surrogate`] (so it can be checked, rolled out, or wrapped again).
#[derive(Clone, Debug)]
pub struct GroupAveraged<M> {
    model: M,
    elements: Vec<GroupElement>,
}

impl<M> GroupAveraged<M> {
    pub fn full(model: M, group: &GroupSpec) -> Self {
        Self { model, elements: group.enumerate() }
    }

    pub fn with_elements(model: M, elements: Vec<GroupElement>) -> Result<Self> {
        if elements.is_empty() {
            return Err(Error::EmptySample);
        }
        Ok(Self { model, elements })
    }

    pub fn elements(&self) -> &[GroupElement] {
        &self.elements
    }

    pub fn inner(&self) -> &M {
        &self.model
    }
}

impl<T: Real, M: Surrogate<T>> Surrogate<T> for GroupAveraged<M> {
    fn history(&self) -> usize {
        self.model.history()
    }

    fn predict(&self, window: &Window<T>) -> Result<FieldSet<T>> {
        average_over(&self.model, window, &self.elements)
    }
}

#[derive(Clone, Debug)]
pub struct RolloutResult<T> {
    /// Predicted frames for steps `1..=horizon`, time indices continuing the initial window.
    pub predicted: Vec<FieldSet<T>>,
    /// Elements averaged at each step (empty for plain rollouts).
    pub elements_used: Vec<Vec<GroupElement>>,
}

/// Feeds predictions back into the window for `horizon` steps.
///
/// Without `cfg` the model is applied directly. With `cfg` every step is
/// group-averaged, and the averaged prediction is what re-enters the window.
/// Monte-Carlo draws come from a ChaCha stream seeded by the config.
pub fn rollout<T, M>(model: &M, init: Window<T>, horizon: usize, cfg: Option<&AveragingConfig>) -> Result<RolloutResult<T>>
where
    T: Real,
    M: Surrogate<T> + ?Sized,
{
    if horizon == 0 {
        return Err(Error::ZeroHorizon);
    }
    if init.len() != model.history() {
        return Err(Error::ModelMismatch(format!(
            "model expects {} frames, window has {}",
            model.history(),
            init.len()
        )));
    }
    if let Some(cfg) = cfg {
        cfg.validate()?;
        cfg.group.check_grid(init.grid())?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.map_or(0, |c| c.seed()));
    let fixed: Option<Vec<GroupElement>> = match cfg {
        Some(c) if matches!(c.mode, AveragingMode::MonteCarlo { resample_per_step: false, .. }) => Some(c.draw(&mut rng)?),
        Some(c) if c.mode == AveragingMode::Full => Some(c.group.enumerate()),
        _ => None,
    };

    let mut window = init;
    let mut predicted = Vec::with_capacity(horizon);
    let mut elements_used = Vec::with_capacity(horizon);
    for step in 1..=horizon {
        let next_time = window.last().time_index() + 1;
        let (pred, used) = match cfg {
            None => (model.predict(&window), Vec::new()),
            Some(c) => {
                let elements = match &fixed {
                    Some(e) => e.clone(),
                    None => c.draw(&mut rng)?,
                };
                (average_over(model, &window, &elements), elements)
            }
        };
        let pred = match pred {
            Ok(p) if p.all_finite() => p.with_time_index(next_time),
            Ok(_) | Err(Error::NonFinite { .. }) => return Err(Error::NonFinitePrediction { step }),
            Err(e) => return Err(e),
        };
        window = window.slide(pred.clone())?;
        predicted.push(pred);
        elements_used.push(used);
    }
    Ok(RolloutResult { predicted, elements_used })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EquivarianceReport {
    /// Largest relative deviation `‖g·f(x) − f(g·x)‖ / ‖f(x)‖` seen.
    pub max_deviation: f64,
    /// Element and probe index attaining it.
    pub worst: Option<(GroupElement, usize)>,
    pub tolerance: f64,
    pub passed: bool,
}

/// Measures how far `model` is from satisfying `f(g·x) = g·f(x)` on the probes.
///
/// Norms are Euclidean over all components and cells, in `f64`. When `‖f(x)‖ = 0`
/// the absolute deviation is reported.
pub fn check_equivariance<T, M>(model: &M, group: &GroupSpec, probes: &[Window<T>], tolerance: f64) -> Result<EquivarianceReport>
where
    T: Real,
    M: Surrogate<T> + ?Sized,
{
    check_equivariance_on(model, &group.enumerate(), probes, tolerance)
}

/// As [`check_equivariance`], over an explicit element list.
pub fn check_equivariance_on<T, M>(
    model: &M,
    elements: &[GroupElement],
    probes: &[Window<T>],
    tolerance: f64,
) -> Result<EquivarianceReport>
where
    T: Real,
    M: Surrogate<T> + ?Sized,
{
    let mut max_deviation = 0.0f64;
    let mut worst = None;
    for (p, probe) in probes.iter().enumerate() {
        let base = model.predict(probe)?;
        let norm = base.data().iter().map(|v| v.widen() * v.widen()).sum::<f64>();
        let norm = Float::sqrt(norm);
        for &g in elements {
            let expected = group::apply(g, &base)?;
            let actual = model.predict(&group::apply_window(g, probe)?)?;
            let diff = expected
                .data()
                .iter()
                .zip(actual.data())
                .map(|(a, b)| {
                    let d = a.widen() - b.widen();
                    d * d
                })
                .sum::<f64>();
            let diff = Float::sqrt(diff);
            let dev = if norm > 0.0 { diff / norm } else { diff };
            if dev > max_deviation || worst.is_none() {
                max_deviation = dev;
                worst = Some((g, p));
            }
        }
    }
    Ok(EquivarianceReport {
        max_deviation,
        worst,
        tolerance,
        passed: max_deviation <= tolerance,
    })
}
