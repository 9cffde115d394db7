//! Test-time group averaging for autoregressive surrogates on 2D grids.
//!
//! The crate is `no_std` (it needs `alloc`). It provides:
//!
//! - [`field`]: channel-typed snapshots, windows and trajectories on a uniform grid,
//! - [`group`]: dihedral and lattice-shift actions on those fields,
//! - [`reynolds`]: the group-averaged predictor and autoregressive rollouts,
//! - [`simulate`]: an explicit Gray-Scott solver used as ground truth,
//! - [`surrogate`]: a small shared-weight stencil network with analytic gradients,
//! - [`metrics`]: variance-scaled RMSE and rollout loss tables.
//!
//! File formats, dataset management and the command-line front end live in the
//! `symavg` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

mod error;
mod real;

pub mod field;
pub mod group;
pub mod metrics;
pub mod reynolds;
pub mod simulate;
pub mod surrogate;

pub use error::{Error, Result};
pub use field::{Boundary, ChannelGroup, ChannelKind, FieldSet, GridSpec, Schema, Trajectory, Window};
pub use group::{Dihedral, GroupElement, GroupKind, GroupSpec, Shift};
pub use real::Real;
pub use reynolds::{AveragingConfig, AveragingMode, GroupAveraged, Surrogate};
