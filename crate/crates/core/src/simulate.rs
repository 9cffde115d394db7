//! Gray-Scott reaction-diffusion on a periodic grid.
//!
//! ```text
//! ∂A/∂t = D_A ∇²A − AB² + f(1 − A)
//! ∂B/∂t = D_B ∇²B + AB² − (f + k)B
//! ```
//!
//! integrated with explicit Euler and the 5-point periodic Laplacian. Both
//! commute exactly with lattice permutations, so the solver is equivariant
//! under every dihedral element and shift of a square torus.

use alloc::{format, sync::Arc, vec, vec::Vec};
use core::f64::consts::PI;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{
    field::{ChannelKind, FieldSet, GridSpec, Schema, Trajectory},
    Error, Real, Result,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrayScottParams {
    pub diff_a: f64,
    pub diff_b: f64,
    pub feed: f64,
    pub kill: f64,
    /// Solver step.
    pub dt: f64,
    /// Solver steps per saved frame.
    pub substeps: usize,
}

/// Largest default step for the reaction terms alone.
pub const MAX_REACTION_DT: f64 = 1.0;

impl GrayScottParams {
    /// Spot-forming regime (`f = 0.028`, `k = 0.062`, `D_A = 2e-5`, `D_B = 1e-5`)
    /// with `dt` at half the explicit stability bound of `grid`, capped at
    /// [`MAX_REACTION_DT`] so the reaction terms stay stable on coarse grids.
    pub fn desk_default(grid: &GridSpec) -> Self {
        let mut p = Self {
            diff_a: 2e-5,
            diff_b: 1e-5,
            feed: 0.028,
            kill: 0.062,
            dt: 0.0,
            substeps: 20,
        };
        p.dt = (0.5 * p.stability_bound(grid)).min(MAX_REACTION_DT);
        p
    }

    /// Largest stable explicit-Euler step, `1 / (2 D_max (1/dx² + 1/dy²))`
    /// (equal to `dx² / (4 D_max)` on a square grid).
    pub fn stability_bound(&self, grid: &GridSpec) -> f64 {
        let d = self.diff_a.max(self.diff_b);
        1.0 / (2.0 * d * (1.0 / (grid.dx() * grid.dx()) + 1.0 / (grid.dy() * grid.dy())))
    }

    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        let named = [
            ("diff_a", self.diff_a),
            ("diff_b", self.diff_b),
            ("feed", self.feed),
            ("kill", self.kill),
            ("dt", self.dt),
        ];
        for (name, v) in named {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        if self.substeps == 0 {
            return Err(Error::InvalidParams("substeps must be at least 1".into()));
        }
        let bound = self.stability_bound(grid);
        if self.dt > bound {
            return Err(Error::Unstable { dt: self.dt, bound });
        }
        Ok(())
    }
}

/// Two scalar channels, `A` then `B`.
pub fn gray_scott_schema() -> Arc<Schema> {
    Arc::new(Schema::new([("A", ChannelKind::Scalar), ("B", ChannelKind::Scalar)]).expect("static schema"))
}

fn check_state<T: Real>(state: &FieldSet<T>) -> Result<()> {
    if !state.grid().boundary().periodic_y() {
        return Err(Error::InvalidParams("Gray-Scott solver needs a doubly periodic grid".into()));
    }
    let g = state.schema().groups();
    if g.len() != 2 || g.iter().any(|c| c.kind() != ChannelKind::Scalar) {
        return Err(Error::InvalidParams("Gray-Scott state needs exactly two scalar channels".into()));
    }
    Ok(())
}

/// One explicit Euler substep from `src` (planes `A`, `B`) into `dst`.
fn euler_substep<T: Real>(grid: &GridSpec, p: &GrayScottParams, src: &[T], dst: &mut [T]) {
    let (nx, ny) = (grid.nx(), grid.ny());
    let n = nx * ny;
    let (a, b) = src.split_at(n);
    let (da, db) = dst.split_at_mut(n);
    let idx2 = 1.0 / (grid.dx() * grid.dx());
    let idy2 = 1.0 / (grid.dy() * grid.dy());
    let (dt, f, k) = (p.dt, p.feed, p.kill);
    for iy in 0..ny {
        let up = if iy == 0 { ny - 1 } else { iy - 1 };
        let down = if iy + 1 == ny { 0 } else { iy + 1 };
        for ix in 0..nx {
            let left = if ix == 0 { nx - 1 } else { ix - 1 };
            let right = if ix + 1 == nx { 0 } else { ix + 1 };
            let c = iy * nx + ix;
            let lap = |u: &[T]| {
                let uc = u[c].widen();
                let xx = u[iy * nx + left].widen() + u[iy * nx + right].widen() - 2.0 * uc;
                let yy = u[up * nx + ix].widen() + u[down * nx + ix].widen() - 2.0 * uc;
                xx * idx2 + yy * idy2
            };
            let (av, bv) = (a[c].widen(), b[c].widen());
            let reaction = av * bv * bv;
            let dadt = p.diff_a * lap(a) - reaction + f * (1.0 - av);
            let dbdt = p.diff_b * lap(b) + reaction - (f + k) * bv;
            da[c] = T::narrow(av + dt * dadt);
            db[c] = T::narrow(bv + dt * dbdt);
        }
    }
}

/// One explicit Euler substep of the Gray-Scott system.
pub fn gray_scott_step<T: Real>(state: &FieldSet<T>, p: &GrayScottParams) -> Result<FieldSet<T>> {
    check_state(state)?;
    p.validate(state.grid())?;
    let mut out = vec![T::zero(); state.data().len()];
    euler_substep(state.grid(), p, state.data(), &mut out);
    FieldSet::new(*state.grid(), Arc::clone(state.schema()), out, state.time_index())
        .map_err(|_| Error::BlowUp { step: 1 })
}

/// Advances `steps` substeps, reusing two buffers.
pub fn integrate<T: Real>(state: &FieldSet<T>, p: &GrayScottParams, steps: usize) -> Result<FieldSet<T>> {
    check_state(state)?;
    p.validate(state.grid())?;
    let grid = *state.grid();
    let mut cur = state.data().to_vec();
    let mut next = vec![T::zero(); cur.len()];
    for s in 0..steps {
        euler_substep(&grid, p, &cur, &mut next);
        core::mem::swap(&mut cur, &mut next);
        if !cur.iter().all(|v| v.is_finite()) {
            return Err(Error::BlowUp { step: s + 1 });
        }
    }
    Ok(FieldSet::from_parts(grid, Arc::clone(state.schema()), cur, state.time_index()))
}

/// Initial-condition families whose distributions are invariant under lattice
/// shifts and the symmetries of the square: phases and positions are uniform
/// on the torus, and mode sets and kernels are isotropic.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitialCondition {
    /// `B ∝ max(φ, 0)` for a random Fourier series `φ` over `|kx|, |ky| ≤ modes`.
    RandomFourier { modes: usize, amplitude: f64, seed: u64 },
    /// `B` = sum of `count` periodic Gaussians of the given width (in cells).
    GaussianClusters { count: usize, width: f64, amplitude: f64, seed: u64 },
}

impl InitialCondition {
    pub fn seed(&self) -> u64 {
        match *self {
            InitialCondition::RandomFourier { seed, .. } | InitialCondition::GaussianClusters { seed, .. } => seed,
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        match self {
            InitialCondition::RandomFourier { modes, amplitude, .. } => {
                InitialCondition::RandomFourier { modes, amplitude, seed }
            }
            InitialCondition::GaussianClusters { count, width, amplitude, .. } => {
                InitialCondition::GaussianClusters { count, width, amplitude, seed }
            }
        }
    }

    /// Draws `(A, B)` with `B` clamped to `[0, 1]` and `A = 1 − B`.
    pub fn sample<T: Real>(&self, grid: &GridSpec) -> Result<FieldSet<T>> {
        let (nx, ny) = (grid.nx(), grid.ny());
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed());
        let mut b = vec![0.0f64; nx * ny];
        match *self {
            InitialCondition::RandomFourier { modes, amplitude, .. } => {
                if modes == 0 {
                    return Err(Error::InvalidParams("random Fourier initial condition needs modes >= 1".into()));
                }
                let m = modes as i64;
                for ky in -m..=m {
                    for kx in -m..=m {
                        if kx == 0 && ky == 0 {
                            continue;
                        }
                        let coeff: f64 = rng.gen_range(-1.0..1.0);
                        let phase: f64 = rng.gen_range(0.0..2.0 * PI);
                        for iy in 0..ny {
                            for ix in 0..nx {
                                let arg = 2.0 * PI * (kx as f64 * ix as f64 / nx as f64 + ky as f64 * iy as f64 / ny as f64);
                                b[iy * nx + ix] += coeff * Float::cos(arg + phase);
                            }
                        }
                    }
                }
                let peak = b.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
                let scale = if peak > 0.0 { amplitude / peak } else { 0.0 };
                for v in &mut b {
                    *v = (v.max(0.0) * scale).clamp(0.0, 1.0);
                }
            }
            InitialCondition::GaussianClusters { count, width, amplitude, .. } => {
                if count == 0 || !(width > 0.0) {
                    return Err(Error::InvalidParams("Gaussian clusters need count >= 1 and width > 0".into()));
                }
                let inv = 1.0 / (2.0 * width * width);
                for _ in 0..count {
                    let cx: f64 = rng.gen_range(0.0..nx as f64);
                    let cy: f64 = rng.gen_range(0.0..ny as f64);
                    for iy in 0..ny {
                        let dy = periodic_distance(iy as f64, cy, ny as f64);
                        for ix in 0..nx {
                            let dx = periodic_distance(ix as f64, cx, nx as f64);
                            b[iy * nx + ix] += amplitude * Float::exp(-(dx * dx + dy * dy) * inv);
                        }
                    }
                }
                for v in &mut b {
                    *v = v.clamp(0.0, 1.0);
                }
            }
        }
        let mut data: Vec<T> = b.iter().map(|&v| T::narrow(1.0 - v)).collect();
        data.extend(b.iter().map(|&v| T::narrow(v)));
        FieldSet::new(*grid, gray_scott_schema(), data, 0)
    }
}

fn periodic_distance(a: f64, b: f64, period: f64) -> f64 {
    let d = (a - b).abs() % period;
    d.min(period - d)
}

/// Integrates from a sampled initial condition and keeps `frames` snapshots,
/// one every `p.substeps` solver steps (the first is the initial condition).
pub fn generate_trajectory<T: Real>(
    grid: &GridSpec,
    p: &GrayScottParams,
    ic: &InitialCondition,
    frames: usize,
) -> Result<Trajectory<T>> {
    if frames == 0 {
        return Err(Error::InvalidParams("need at least one frame".into()));
    }
    p.validate(grid)?;
    let mut state: FieldSet<T> = ic.sample(grid)?;
    let mut out = Vec::with_capacity(frames);
    out.push(state.clone());
    for t in 1..frames {
        state = integrate(&state, p, p.substeps)
            .map_err(|e| match e {
                Error::BlowUp { step } => Error::BlowUp { step: (t - 1) * p.substeps + step },
                other => other,
            })?
            .with_time_index(t as i64);
        out.push(state.clone());
    }
    Trajectory::new(out, p.dt * p.substeps as f64)
}

/// A trajectory is steady when every channel of its last frame has spatial
/// variance below `threshold`.
pub fn is_steady<T: Real>(traj: &Trajectory<T>, threshold: f64) -> bool {
    let last = traj.frames().last().expect("trajectory is never empty");
    (0..last.components()).all(|c| plane_variance(last.plane(c)) < threshold)
}

pub(crate) fn plane_variance<T: Real>(plane: &[T]) -> f64 {
    let n = plane.len() as f64;
    let mean = plane.iter().map(|v| v.widen()).sum::<f64>() / n;
    plane.iter().map(|v| (v.widen() - mean).powi(2)).sum::<f64>() / n
}

/// Variance threshold below which a final frame counts as converged.
pub const STEADY_STATE_VARIANCE: f64 = 1e-8;

/// `(train, test)` trajectory counts: `round(fraction · n)` test runs, at least
/// one of each.
pub fn split_counts(n: usize, test_fraction: f64) -> Result<(usize, usize)> {
    if n < 2 {
        return Err(Error::InvalidParams(format!("need at least 2 trajectories, got {n}")));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidParams(format!("test fraction must be in (0, 1), got {test_fraction}")));
    }
    let test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
    Ok((n - test, test))
}
