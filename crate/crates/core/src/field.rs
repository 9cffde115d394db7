//! Snapshots of `s` stacked state channels on a uniform 2D grid.
//!
//! Storage is channel-major, `[s][ny][nx]`: `x` indexes columns and varies
//! fastest, `y` indexes rows. Vector channels store `(x, y)`, tensor channels
//! store `(xx, xy, yx, yy)`.

use alloc::{
    format,
    string::{String, ToString},
    sync::Arc,
    vec::Vec,
};
use serde::{Deserialize, Serialize};

use crate::{Error, Real, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    PeriodicBoth,
    /// Periodic along x, Neumann (reflecting) along y.
    PeriodicXNeumannY,
}

impl Boundary {
    pub fn periodic_x(self) -> bool {
        true
    }

    pub fn periodic_y(self) -> bool {
        matches!(self, Boundary::PeriodicBoth)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridRepr")]
pub struct GridSpec {
    nx: usize,
    ny: usize,
    dx: f64,
    dy: f64,
    boundary: Boundary,
}

#[derive(Deserialize)]
struct GridRepr {
    nx: usize,
    ny: usize,
    dx: f64,
    dy: f64,
    boundary: Boundary,
}

impl TryFrom<GridRepr> for GridSpec {
    type Error = Error;

    fn try_from(r: GridRepr) -> Result<Self> {
        GridSpec::new(r.nx, r.ny, r.dx, r.dy, r.boundary)
    }
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, dx: f64, dy: f64, boundary: Boundary) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2x2 cells, got {nx}x{ny}")));
        }
        if !(dx > 0.0 && dy > 0.0 && dx.is_finite() && dy.is_finite()) {
            return Err(Error::InvalidGrid(format!("spacings must be positive, got dx={dx}, dy={dy}")));
        }
        Ok(Self { nx, ny, dx, dy, boundary })
    }

    /// Square doubly periodic grid on the unit torus (`dx = dy = 1/n`).
    pub fn periodic_square(n: usize) -> Result<Self> {
        Self::new(n, n, 1.0 / n as f64, 1.0 / n as f64, Boundary::PeriodicBoth)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn dy(&self) -> f64 {
        self.dy
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    /// Number of cells, `N_D`.
    pub fn cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_square(&self) -> bool {
        self.nx == self.ny && self.dx == self.dy
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelKind {
    Scalar,
    Vector,
    Tensor,
}

impl ChannelKind {
    pub fn components(self) -> usize {
        match self {
            ChannelKind::Scalar => 1,
            ChannelKind::Vector => 2,
            ChannelKind::Tensor => 4,
        }
    }

    pub fn component_suffixes(self) -> &'static [&'static str] {
        match self {
            ChannelKind::Scalar => &[""],
            ChannelKind::Vector => &["x", "y"],
            ChannelKind::Tensor => &["xx", "xy", "yx", "yy"],
        }
    }
}

/// A named state variable occupying `kind.components()` consecutive planes.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ChannelGroup {
    name: String,
    kind: ChannelKind,
    offset: usize,
}

impl ChannelGroup {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> ChannelKind {
        self.kind
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn components(&self) -> usize {
        self.kind.components()
    }

    pub fn planes(&self) -> core::ops::Range<usize> {
        self.offset..self.offset + self.components()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct ChannelDecl {
    name: String,
    kind: ChannelKind,
}

/// Ordered channel groups with contiguous offsets.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<ChannelDecl>", into = "Vec<ChannelDecl>")]
pub struct Schema {
    groups: Vec<ChannelGroup>,
    components: usize,
}

impl TryFrom<Vec<ChannelDecl>> for Schema {
    type Error = Error;

    fn try_from(decls: Vec<ChannelDecl>) -> Result<Self> {
        Schema::new(decls.into_iter().map(|d| (d.name, d.kind)))
    }
}

impl From<Schema> for Vec<ChannelDecl> {
    fn from(s: Schema) -> Self {
        s.groups
            .into_iter()
            .map(|g| ChannelDecl { name: g.name, kind: g.kind })
            .collect()
    }
}

impl Schema {
    pub fn new<I, S>(channels: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, ChannelKind)>,
        S: Into<String>,
    {
        let mut groups: Vec<ChannelGroup> = Vec::new();
        let mut offset = 0;
        for (name, kind) in channels {
            let name = name.into();
            if name.is_empty() {
                return Err(Error::InvalidSchema("empty channel name".into()));
            }
            if groups.iter().any(|g| g.name == name) {
                return Err(Error::InvalidSchema(format!("duplicate channel `{name}`")));
            }
            groups.push(ChannelGroup { name, kind, offset });
            offset += kind.components();
        }
        if groups.is_empty() {
            return Err(Error::InvalidSchema("schema has no channels".into()));
        }
        Ok(Self { groups, components: offset })
    }

    /// Total number of component planes, `s`.
    pub fn components(&self) -> usize {
        self.components
    }

    pub fn groups(&self) -> &[ChannelGroup] {
        &self.groups
    }

    pub fn group(&self, name: &str) -> Result<&ChannelGroup> {
        self.groups
            .iter()
            .find(|g| g.name == name)
            .ok_or_else(|| Error::UnknownChannel(name.to_string()))
    }
}

/// One time snapshot `u_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldSet<T> {
    grid: GridSpec,
    schema: Arc<Schema>,
    data: Vec<T>,
    time_index: i64,
}

impl<T: Real> FieldSet<T> {
    /// Validates shape and finiteness.
    pub fn new(grid: GridSpec, schema: impl Into<Arc<Schema>>, data: Vec<T>, time_index: i64) -> Result<Self> {
        let schema = schema.into();
        let expected = schema.components() * grid.cells();
        if data.len() != expected {
            return Err(Error::ShapeMismatch { expected, actual: data.len() });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { grid, schema, data, time_index })
    }

    pub fn zeros(grid: GridSpec, schema: impl Into<Arc<Schema>>, time_index: i64) -> Self {
        let schema = schema.into();
        let data = alloc::vec![T::zero(); schema.components() * grid.cells()];
        Self { grid, schema, data, time_index }
    }

    /// Builds a field whose data is already known to be finite and correctly sized.
    pub(crate) fn from_parts(grid: GridSpec, schema: Arc<Schema>, data: Vec<T>, time_index: i64) -> Self {
        debug_assert_eq!(data.len(), schema.components() * grid.cells());
        Self { grid, schema, data, time_index }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn schema(&self) -> &Arc<Schema> {
        &self.schema
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn time_index(&self) -> i64 {
        self.time_index
    }

    pub fn with_time_index(mut self, time_index: i64) -> Self {
        self.time_index = time_index;
        self
    }

    pub fn components(&self) -> usize {
        self.schema.components()
    }

    pub fn cells(&self) -> usize {
        self.grid.cells()
    }

    /// Component plane `c`, laid out row-major `[ny][nx]`.
    pub fn plane(&self, c: usize) -> &[T] {
        let n = self.grid.cells();
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn at(&self, c: usize, ix: usize, iy: usize) -> T {
        self.data[c * self.grid.cells() + self.grid.index(ix, iy)]
    }

    /// Same grid and schema.
    pub fn same_layout(&self, other: &FieldSet<T>) -> bool {
        self.grid == other.grid && (Arc::ptr_eq(&self.schema, &other.schema) || self.schema == other.schema)
    }

    pub fn check_layout(&self, other: &FieldSet<T>) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::LayoutMismatch(format!(
                "grid {}x{} vs {}x{}",
                self.grid.nx, self.grid.ny, other.grid.nx, other.grid.ny
            )));
        }
        if *self.schema != *other.schema {
            return Err(Error::LayoutMismatch("schemas differ".into()));
        }
        Ok(())
    }

    /// Bitwise equality of the data and time index (distinguishes `-0.0` from `0.0`).
    pub fn bit_eq(&self, other: &FieldSet<T>) -> bool {
        self.same_layout(other)
            && self.time_index == other.time_index
            && self.data.iter().zip(&other.data).all(|(a, b)| a.bits() == b.bits())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Arithmetic mean over all cells, one value per component of `channel`.
    pub fn spatial_mean(&self, channel: &str) -> Result<Vec<f64>> {
        let group = self.schema.group(channel)?;
        Ok(group.planes().map(|c| plane_mean(self.plane(c))).collect())
    }
}

pub(crate) fn plane_mean<T: Real>(plane: &[T]) -> f64 {
    plane.iter().map(|v| v.widen()).sum::<f64>() / plane.len() as f64
}

/// `k` consecutive snapshots `U_t`, oldest first.
#[derive(Clone, Debug, PartialEq)]
pub struct Window<T> {
    frames: Vec<FieldSet<T>>,
}

impl<T: Real> Window<T> {
    pub fn new(frames: Vec<FieldSet<T>>) -> Result<Self> {
        let first = frames.first().ok_or(Error::EmptyWindow)?;
        for pair in frames.windows(2) {
            first.check_layout(&pair[1])?;
            let expected = pair[0].time_index + 1;
            if pair[1].time_index != expected {
                return Err(Error::TimeIndexGap { expected, actual: pair[1].time_index });
            }
        }
        Ok(Self { frames })
    }

    pub(crate) fn from_frames_unchecked(frames: Vec<FieldSet<T>>) -> Self {
        Self { frames }
    }

    /// Window length `k`.
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[FieldSet<T>] {
        &self.frames
    }

    pub fn last(&self) -> &FieldSet<T> {
        self.frames.last().expect("window is never empty")
    }

    pub fn grid(&self) -> &GridSpec {
        self.last().grid()
    }

    pub fn schema(&self) -> &Arc<Schema> {
        self.last().schema()
    }

    /// Drops the oldest frame and appends `next`.
    pub fn slide(mut self, next: FieldSet<T>) -> Result<Self> {
        let last = self.last();
        last.check_layout(&next)?;
        let expected = last.time_index + 1;
        if next.time_index != expected {
            return Err(Error::TimeIndexGap { expected, actual: next.time_index });
        }
        self.frames.remove(0);
        self.frames.push(next);
        Ok(self)
    }

    pub fn bit_eq(&self, other: &Window<T>) -> bool {
        self.len() == other.len() && self.frames.iter().zip(&other.frames).all(|(a, b)| a.bit_eq(b))
    }
}

/// A time-ordered run of snapshots sharing grid and schema.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T> {
    frames: Vec<FieldSet<T>>,
    dt: f64,
}

impl<T: Real> Trajectory<T> {
    pub fn new(frames: Vec<FieldSet<T>>, dt: f64) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::Misaligned("trajectory has no frames".into()));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParams(format!("trajectory dt must be positive, got {dt}")));
        }
        for pair in frames.windows(2) {
            frames[0].check_layout(&pair[1])?;
            let expected = pair[0].time_index + 1;
            if pair[1].time_index != expected {
                return Err(Error::TimeIndexGap { expected, actual: pair[1].time_index });
            }
        }
        Ok(Self { frames, dt })
    }

    pub fn grid(&self) -> &GridSpec {
        self.frames[0].grid()
    }

    pub fn schema(&self) -> &Arc<Schema> {
        self.frames[0].schema()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[FieldSet<T>] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<FieldSet<T>> {
        self.frames
    }

    pub fn first_time_index(&self) -> i64 {
        self.frames[0].time_index
    }

    /// Frame with the given time index, if present.
    pub fn frame_at_time(&self, time_index: i64) -> Option<&FieldSet<T>> {
        let offset = time_index.checked_sub(self.first_time_index())?;
        usize::try_from(offset).ok().and_then(|i| self.frames.get(i))
    }

    /// The `k` frames ending at position `end` (inclusive).
    pub fn window_ending_at(&self, end: usize, k: usize) -> Result<Window<T>> {
        if k == 0 {
            return Err(Error::EmptyWindow);
        }
        if end >= self.frames.len() || end + 1 < k {
            return Err(Error::Misaligned(format!(
                "window of {k} frames ending at {end} does not fit a trajectory of {} frames",
                self.frames.len()
            )));
        }
        Ok(Window::from_frames_unchecked(self.frames[end + 1 - k..=end].to_vec()))
    }

    /// Converts every value to another precision.
    pub fn cast<U: Real>(&self) -> Trajectory<U> {
        Trajectory {
            frames: self.frames.iter().map(|f| f.cast()).collect(),
            dt: self.dt,
        }
    }
}

impl<T: Real> FieldSet<T> {
    /// Converts to another precision. Finite values may round to infinity when narrowing.
    pub fn cast<U: Real>(&self) -> FieldSet<U> {
        FieldSet {
            grid: self.grid,
            schema: self.schema.clone(),
            data: self.data.iter().map(|v| U::narrow(v.widen())).collect(),
            time_index: self.time_index,
        }
    }
}
