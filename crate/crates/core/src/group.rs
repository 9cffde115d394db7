//! Dihedral and lattice-shift actions on fields.
//!
//! A dihedral element is stored as `I^flip · R^rot` with
//! `R = [[0, -1], [1, 0]]` (a quarter turn) and `I = diag(-1, 1)` (x-inversion).
//! On the grid, `R` sends cell `(ix, iy)` to `(ny-1-iy, ix)` and `I` sends it to
//! `(nx-1-ix, iy)`. Components mix through the same matrix: vectors as `φv`,
//! tensors as `φDφᵀ`. Shifts move the whole field periodically and never mix
//! components.
//!
//! Every action is an index permutation plus sign flips, so transforms are
//! exact in floating point.

use alloc::{
    format,
    string::{String, ToString},
    sync::Arc,
    vec::Vec,
};
use core::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{
    field::{ChannelKind, FieldSet, GridSpec, Window},
    Error, Real, Result,
};

/// `I^flip · R^rot` in canonical form.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Dihedral {
    rot: u8,
    flip: bool,
}

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral { rot: 0, flip: false };
    pub const R: Dihedral = Dihedral { rot: 1, flip: false };
    pub const I: Dihedral = Dihedral { rot: 0, flip: true };

    pub fn new(rot: u8, flip: bool) -> Self {
        Self { rot: rot % 4, flip }
    }

    pub fn rot(self) -> u8 {
        self.rot
    }

    pub fn flip(self) -> bool {
        self.flip
    }

    /// `self · other`, using `R^r I = I R^{-r}`.
    pub fn compose(self, other: Dihedral) -> Dihedral {
        let r = if other.flip { (4 - self.rot) % 4 } else { self.rot };
        Dihedral { rot: (r + other.rot) % 4, flip: self.flip ^ other.flip }
    }

    pub fn inverse(self) -> Dihedral {
        if self.flip {
            // every reflection is an involution
            self
        } else {
            Dihedral { rot: (4 - self.rot) % 4, flip: false }
        }
    }

    /// Odd powers of `R` exchange the x and y axes.
    pub fn swaps_axes(self) -> bool {
        self.rot % 2 == 1
    }

    /// The 2×2 integer matrix `φ(g)`.
    pub fn matrix(self) -> [[i8; 2]; 2] {
        let mut m = [[1i8, 0], [0, 1]];
        for _ in 0..self.rot {
            // R · m
            m = [[-m[1][0], -m[1][1]], [m[0][0], m[0][1]]];
        }
        if self.flip {
            m[0] = [-m[0][0], -m[0][1]];
        }
        m
    }

    /// For each output component `a`: the input component it reads and whether it is negated.
    fn signed_permutation(self) -> [(usize, bool); 2] {
        let m = self.matrix();
        let mut out = [(0usize, false); 2];
        for (a, row) in m.iter().enumerate() {
            let b = if row[0] != 0 { 0 } else { 1 };
            out[a] = (b, row[b] < 0);
        }
        out
    }
}

/// A periodic lattice translation by `(sx, sy)` on an `nx × ny` grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shift {
    sx: usize,
    sy: usize,
    nx: usize,
    ny: usize,
}

impl Shift {
    /// Shifts are reduced modulo the grid size; negative offsets wrap.
    pub fn new(sx: i64, sy: i64, nx: usize, ny: usize) -> Self {
        Self {
            sx: sx.rem_euclid(nx as i64) as usize,
            sy: sy.rem_euclid(ny as i64) as usize,
            nx,
            ny,
        }
    }

    pub fn sx(self) -> usize {
        self.sx
    }

    pub fn sy(self) -> usize {
        self.sy
    }

    pub fn moduli(self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn inverse(self) -> Shift {
        Shift {
            sx: (self.nx - self.sx) % self.nx,
            sy: (self.ny - self.sy) % self.ny,
            ..self
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GroupElement {
    Dihedral(Dihedral),
    Shift(Shift),
}

impl GroupElement {
    pub fn compose(self, other: GroupElement) -> Result<GroupElement> {
        match (self, other) {
            (GroupElement::Dihedral(a), GroupElement::Dihedral(b)) => Ok(GroupElement::Dihedral(a.compose(b))),
            (GroupElement::Shift(a), GroupElement::Shift(b)) if a.moduli() == b.moduli() => {
                Ok(GroupElement::Shift(Shift {
                    sx: (a.sx + b.sx) % a.nx,
                    sy: (a.sy + b.sy) % a.ny,
                    ..a
                }))
            }
            (a, b) => Err(Error::MixedGroups(a.to_string(), b.to_string())),
        }
    }

    pub fn inverse(self) -> GroupElement {
        match self {
            GroupElement::Dihedral(d) => GroupElement::Dihedral(d.inverse()),
            GroupElement::Shift(s) => GroupElement::Shift(s.inverse()),
        }
    }

    pub fn is_identity(self) -> bool {
        match self {
            GroupElement::Dihedral(d) => d == Dihedral::IDENTITY,
            GroupElement::Shift(s) => s.sx == 0 && s.sy == 0,
        }
    }

    /// The component-mixing matrix `φ(g)`; identity for shifts.
    pub fn matrix(self) -> [[i8; 2]; 2] {
        match self {
            GroupElement::Dihedral(d) => d.matrix(),
            GroupElement::Shift(_) => [[1, 0], [0, 1]],
        }
    }

    /// Checks that this element acts on `grid` by a permutation that respects its boundary.
    pub fn check_grid(self, grid: &GridSpec) -> Result<()> {
        match self {
            GroupElement::Dihedral(d) => {
                if d.swaps_axes() && !(grid.is_square() && grid.boundary().periodic_y()) {
                    return Err(Error::IncompatibleGroup(format!(
                        "`{self}` exchanges axes and needs a square doubly periodic grid, got {}x{}",
                        grid.nx(),
                        grid.ny()
                    )));
                }
                Ok(())
            }
            GroupElement::Shift(s) => {
                if s.moduli() != (grid.nx(), grid.ny()) {
                    return Err(Error::IncompatibleGroup(format!(
                        "shift defined on {}x{} applied to {}x{} grid",
                        s.nx,
                        s.ny,
                        grid.nx(),
                        grid.ny()
                    )));
                }
                if s.sy != 0 && !grid.boundary().periodic_y() {
                    return Err(Error::IncompatibleGroup("y-shift on a non-periodic y axis".into()));
                }
                Ok(())
            }
        }
    }

    /// Parses the text encoding (`e`, `r`, `r2`, `r3`, `i`, `ir`, `ir2`, `ir3`,
    /// `t(sx,sy)`). Shifts need the grid they act on.
    pub fn parse(text: &str, grid: &GridSpec) -> Result<GroupElement> {
        let t = text.trim();
        let dihedral = match t {
            "e" => Some(Dihedral::new(0, false)),
            "r" => Some(Dihedral::new(1, false)),
            "r2" => Some(Dihedral::new(2, false)),
            "r3" => Some(Dihedral::new(3, false)),
            "i" => Some(Dihedral::new(0, true)),
            "ir" => Some(Dihedral::new(1, true)),
            "ir2" => Some(Dihedral::new(2, true)),
            "ir3" => Some(Dihedral::new(3, true)),
            _ => None,
        };
        if let Some(d) = dihedral {
            return Ok(GroupElement::Dihedral(d));
        }
        let bad = || Error::ParseElement(text.to_string());
        let inner = t.strip_prefix("t(").and_then(|s| s.strip_suffix(')')).ok_or_else(bad)?;
        let (a, b) = inner.split_once(',').ok_or_else(bad)?;
        let sx: i64 = a.trim().parse().map_err(|_| bad())?;
        let sy: i64 = b.trim().parse().map_err(|_| bad())?;
        Ok(GroupElement::Shift(Shift::new(sx, sy, grid.nx(), grid.ny())))
    }
}

impl From<Dihedral> for GroupElement {
    fn from(d: Dihedral) -> Self {
        GroupElement::Dihedral(d)
    }
}

impl From<Shift> for GroupElement {
    fn from(s: Shift) -> Self {
        GroupElement::Shift(s)
    }
}

impl fmt::Display for GroupElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            GroupElement::Dihedral(d) => {
                let base = if d.flip { "i" } else { "" };
                match (d.flip, d.rot) {
                    (false, 0) => f.write_str("e"),
                    (_, 0) => f.write_str(base),
                    (_, 1) => write!(f, "{base}r"),
                    (_, r) => write!(f, "{base}r{r}"),
                }
            }
            GroupElement::Shift(s) => write!(f, "t({},{})", s.sx, s.sy),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupKind {
    /// `{e, I}`.
    D1,
    /// `{e, R², I, IR²}`: the even powers of `R`, valid on rectangles.
    D2,
    /// All eight symmetries of the square.
    D4,
    /// Cyclic shifts along x, `C_nx`.
    CircleX,
    /// All lattice shifts, `C_nx × C_ny`.
    Torus,
}

impl GroupKind {
    pub fn label(self) -> &'static str {
        match self {
            GroupKind::D1 => "d1",
            GroupKind::D2 => "d2",
            GroupKind::D4 => "d4",
            GroupKind::CircleX => "circle",
            GroupKind::Torus => "torus",
        }
    }
}

impl core::str::FromStr for GroupKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "d1" => Ok(GroupKind::D1),
            "d2" => Ok(GroupKind::D2),
            "d4" => Ok(GroupKind::D4),
            "circle" | "circlex" | "s1" => Ok(GroupKind::CircleX),
            "torus" | "t2" => Ok(GroupKind::Torus),
            other => Err(Error::IncompatibleGroup(format!("unknown group `{other}`"))),
        }
    }
}

/// A finite group bound to the grid it acts on. Its Haar measure is uniform, `1/|G|`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GroupSpec {
    kind: GroupKind,
    nx: usize,
    ny: usize,
}

const D4_ORDER: [Dihedral; 8] = [
    Dihedral { rot: 0, flip: false },
    Dihedral { rot: 1, flip: false },
    Dihedral { rot: 2, flip: false },
    Dihedral { rot: 3, flip: false },
    Dihedral { rot: 0, flip: true },
    Dihedral { rot: 1, flip: true },
    Dihedral { rot: 2, flip: true },
    Dihedral { rot: 3, flip: true },
];
const D2_ORDER: [Dihedral; 4] = [D4_ORDER[0], D4_ORDER[2], D4_ORDER[4], D4_ORDER[6]];
const D1_ORDER: [Dihedral; 2] = [D4_ORDER[0], D4_ORDER[4]];

impl GroupSpec {
    pub fn new(kind: GroupKind, grid: &GridSpec) -> Result<Self> {
        match kind {
            GroupKind::D4 if !(grid.is_square() && grid.boundary().periodic_y()) => {
                return Err(Error::IncompatibleGroup(format!(
                    "D4 needs a square doubly periodic grid, got {}x{} ({:?})",
                    grid.nx(),
                    grid.ny(),
                    grid.boundary()
                )))
            }
            GroupKind::Torus if !grid.boundary().periodic_y() => {
                return Err(Error::IncompatibleGroup("torus shifts need periodic boundaries on both axes".into()))
            }
            _ => {}
        }
        Ok(Self { kind, nx: grid.nx(), ny: grid.ny() })
    }

    pub fn kind(&self) -> GroupKind {
        self.kind
    }

    /// Fails unless this group was built for (a grid equivalent to) `grid`.
    pub fn check_grid(&self, grid: &GridSpec) -> Result<()> {
        let here = GroupSpec::new(self.kind, grid)?;
        if here != *self {
            return Err(Error::IncompatibleGroup(format!(
                "{} built for {}x{} applied to {}x{} grid",
                self.kind.label(),
                self.nx,
                self.ny,
                grid.nx(),
                grid.ny()
            )));
        }
        Ok(())
    }

    /// `|G|`.
    pub fn order(&self) -> usize {
        match self.kind {
            GroupKind::D1 => 2,
            GroupKind::D2 => 4,
            GroupKind::D4 => 8,
            GroupKind::CircleX => self.nx,
            GroupKind::Torus => self.nx * self.ny,
        }
    }

    pub fn identity(&self) -> GroupElement {
        self.element(0)
    }

    /// The `index`-th element in enumeration order. Panics if `index >= order()`.
    pub fn element(&self, index: usize) -> GroupElement {
        assert!(index < self.order(), "element index {index} out of range for |G| = {}", self.order());
        match self.kind {
            GroupKind::D1 => D1_ORDER[index].into(),
            GroupKind::D2 => D2_ORDER[index].into(),
            GroupKind::D4 => D4_ORDER[index].into(),
            GroupKind::CircleX => Shift::new(index as i64, 0, self.nx, self.ny).into(),
            GroupKind::Torus => {
                Shift::new((index % self.nx) as i64, (index / self.nx) as i64, self.nx, self.ny).into()
            }
        }
    }

    /// All `|G|` elements, identity first.
    pub fn enumerate(&self) -> Vec<GroupElement> {
        (0..self.order()).map(|i| self.element(i)).collect()
    }

    pub fn contains(&self, g: GroupElement) -> bool {
        match (self.kind, g) {
            (GroupKind::D4, GroupElement::Dihedral(_)) => true,
            (GroupKind::D2, GroupElement::Dihedral(d)) => d.rot % 2 == 0,
            (GroupKind::D1, GroupElement::Dihedral(d)) => d.rot == 0,
            (GroupKind::CircleX, GroupElement::Shift(s)) => s.moduli() == (self.nx, self.ny) && s.sy == 0,
            (GroupKind::Torus, GroupElement::Shift(s)) => s.moduli() == (self.nx, self.ny),
            _ => false,
        }
    }

    /// `n` independent uniform draws, with replacement, in draw order.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<GroupElement>> {
        if n == 0 {
            return Err(Error::EmptySample);
        }
        let order = self.order();
        Ok((0..n).map(|_| self.element(rng.gen_range(0..order))).collect())
    }

    /// `n ≤ |G|` distinct uniform draws (partial Fisher–Yates).
    pub fn sample_distinct<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<GroupElement>> {
        if n == 0 {
            return Err(Error::EmptySample);
        }
        let order = self.order();
        if n > order {
            return Err(Error::InvalidParams(format!("cannot draw {n} distinct elements from |G| = {order}")));
        }
        let mut idx: Vec<usize> = (0..order).collect();
        for i in 0..n {
            let j = rng.gen_range(i..order);
            idx.swap(i, j);
        }
        Ok(idx[..n].iter().map(|&i| self.element(i)).collect())
    }
}

impl fmt::Display for GroupSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.kind.label())
    }
}

/// For every output cell, the input cell whose value lands there.
fn source_indices(g: GroupElement, grid: &GridSpec) -> Vec<usize> {
    let (nx, ny) = (grid.nx(), grid.ny());
    let mut src = Vec::with_capacity(nx * ny);
    match g {
        GroupElement::Dihedral(d) => {
            // Doubled centred coordinates keep the half-cell centre integral.
            // out(o) = in(φ⁻¹ o) and φ⁻¹ = φᵀ.
            let m = d.matrix();
            for oy in 0..ny {
                for ox in 0..nx {
                    let x = 2 * ox as i64 - (nx as i64 - 1);
                    let y = 2 * oy as i64 - (ny as i64 - 1);
                    let sx = m[0][0] as i64 * x + m[1][0] as i64 * y;
                    let sy = m[0][1] as i64 * x + m[1][1] as i64 * y;
                    let ix = ((sx + nx as i64 - 1) / 2) as usize;
                    let iy = ((sy + ny as i64 - 1) / 2) as usize;
                    src.push(grid.index(ix, iy));
                }
            }
        }
        GroupElement::Shift(s) => {
            for oy in 0..ny {
                let iy = (oy + ny - s.sy) % ny;
                for ox in 0..nx {
                    let ix = (ox + nx - s.sx) % nx;
                    src.push(grid.index(ix, iy));
                }
            }
        }
    }
    src
}

#[inline]
fn signed<T: Real>(v: T, negate: bool) -> T {
    if negate {
        -v
    } else {
        v
    }
}

/// `φ(g) f`: relocate every cell and mix components by kind.
pub fn apply<T: Real>(g: GroupElement, field: &FieldSet<T>) -> Result<FieldSet<T>> {
    g.check_grid(field.grid())?;
    let src = source_indices(g, field.grid());
    Ok(apply_with(g, &src, field))
}

fn apply_with<T: Real>(g: GroupElement, src: &[usize], field: &FieldSet<T>) -> FieldSet<T> {
    let n = field.cells();
    let perm = match g {
        GroupElement::Dihedral(d) => d.signed_permutation(),
        GroupElement::Shift(_) => [(0, false), (1, false)],
    };
    let mut out: Vec<T> = Vec::with_capacity(field.data().len());
    for group in field.schema().groups() {
        let base = group.offset();
        match group.kind() {
            ChannelKind::Scalar => {
                let plane = field.plane(base);
                out.extend(src.iter().map(|&i| plane[i]));
            }
            ChannelKind::Vector => {
                for &(b, neg) in &perm {
                    let plane = field.plane(base + b);
                    out.extend(src.iter().map(|&i| signed(plane[i], neg)));
                }
            }
            ChannelKind::Tensor => {
                // D'_{ab} = s_a s_b D_{π(a) π(b)}
                for &(pa, na) in &perm {
                    for &(pb, nb) in &perm {
                        let plane = field.plane(base + 2 * pa + pb);
                        out.extend(src.iter().map(|&i| signed(plane[i], na ^ nb)));
                    }
                }
            }
        }
    }
    debug_assert_eq!(out.len(), n * field.components());
    FieldSet::from_parts(*field.grid(), Arc::clone(field.schema()), out, field.time_index())
}

/// Applies the same element to every frame of a window.
pub fn apply_window<T: Real>(g: GroupElement, window: &Window<T>) -> Result<Window<T>> {
    g.check_grid(window.grid())?;
    let src = source_indices(g, window.grid());
    Ok(Window::from_frames_unchecked(
        window.frames().iter().map(|f| apply_with(g, &src, f)).collect(),
    ))
}

/// Human-readable group description for diagnostics.
pub fn describe(elements: &[GroupElement]) -> String {
    let mut s = String::new();
    for (i, g) in elements.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        s.push_str(&g.to_string());
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{Boundary, Schema};
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn d4() -> Vec<Dihedral> {
        D4_ORDER.to_vec()
    }

    fn mat_mul(a: [[i8; 2]; 2], b: [[i8; 2]; 2]) -> [[i8; 2]; 2] {
        let mut c = [[0i8; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        c
    }

    fn mixed_schema() -> Arc<Schema> {
        Arc::new(
            Schema::new([
                ("c", ChannelKind::Scalar),
                ("v", ChannelKind::Vector),
                ("D", ChannelKind::Tensor),
            ])
            .unwrap(),
        )
    }

    fn random_field(grid: GridSpec, seed: u64) -> FieldSet<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let schema = mixed_schema();
        let data = (0..schema.components() * grid.cells()).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        FieldSet::new(grid, schema, data, 3).unwrap()
    }

    #[test]
    fn presentation_relations() {
        let r = Dihedral::R;
        let i = Dihedral::I;
        let r4 = r.compose(r).compose(r).compose(r);
        assert_eq!(r4, Dihedral::IDENTITY);
        assert_eq!(i.compose(i), Dihedral::IDENTITY);
        let ir = i.compose(r);
        assert_eq!(ir.compose(ir), Dihedral::IDENTITY);
        assert_eq!(r.compose(Dihedral::new(3, false)), Dihedral::IDENTITY);
    }

    #[test]
    fn matrices_match_generators() {
        assert_eq!(Dihedral::R.matrix(), [[0, -1], [1, 0]]);
        assert_eq!(Dihedral::I.matrix(), [[-1, 0], [0, 1]]);
        // canonical form I^i R^r has matrix I^i · R^r, and composition is a homomorphism
        for a in d4() {
            for b in d4() {
                assert_eq!(a.compose(b).matrix(), mat_mul(a.matrix(), b.matrix()));
            }
        }
    }

    #[test]
    fn inverses() {
        assert_eq!(Dihedral::R.inverse(), Dihedral::new(3, false));
        assert_eq!(Dihedral::I.inverse(), Dihedral::I);
        let s = Shift::new(3, 1, 8, 5);
        assert_eq!(s.inverse(), Shift::new(5, 4, 8, 5));
        let e = GroupElement::from(s).compose(s.inverse().into()).unwrap();
        assert!(e.is_identity());
    }

    #[test]
    fn shift_composition_wraps() {
        let nx = 10;
        let a = GroupElement::from(Shift::new(3, 0, nx, 4));
        let b = GroupElement::from(Shift::new(nx as i64 - 3, 0, nx, 4));
        assert!(a.compose(b).unwrap().is_identity());
        let other = GroupElement::from(Shift::new(1, 0, 6, 4));
        assert!(matches!(a.compose(other), Err(Error::MixedGroups(..))));
        assert!(matches!(a.compose(Dihedral::R.into()), Err(Error::MixedGroups(..))));
    }

    #[test]
    fn enumeration_orders() {
        let sq = GridSpec::periodic_square(4).unwrap();
        let g = GroupSpec::new(GroupKind::D4, &sq).unwrap();
        let names: Vec<String> = g.enumerate().iter().map(|e| e.to_string()).collect();
        assert_eq!(names, ["e", "r", "r2", "r3", "i", "ir", "ir2", "ir3"]);
        let d2 = GroupSpec::new(GroupKind::D2, &sq).unwrap();
        let names: Vec<String> = d2.enumerate().iter().map(|e| e.to_string()).collect();
        assert_eq!(names, ["e", "r2", "i", "ir2"]);
        assert_eq!(GroupSpec::new(GroupKind::D1, &sq).unwrap().order(), 2);
        let torus = GroupSpec::new(GroupKind::Torus, &sq).unwrap().enumerate();
        assert_eq!(torus.len(), 16);
        assert!(torus[0].is_identity());
        let mut uniq = torus.clone();
        uniq.sort_by_key(|g| g.to_string());
        uniq.dedup();
        assert_eq!(uniq.len(), 16);
    }

    #[test]
    fn group_spec_grid_compatibility() {
        let rect = GridSpec::new(8, 4, 1.0, 1.0, Boundary::PeriodicXNeumannY).unwrap();
        assert!(GroupSpec::new(GroupKind::D4, &rect).is_err());
        assert!(GroupSpec::new(GroupKind::Torus, &rect).is_err());
        assert_eq!(GroupSpec::new(GroupKind::D2, &rect).unwrap().order(), 4);
        assert_eq!(GroupSpec::new(GroupKind::CircleX, &rect).unwrap().order(), 8);
    }

    #[test]
    fn parse_round_trip() {
        let grid = GridSpec::periodic_square(6).unwrap();
        for text in ["e", "r", "r2", "r3", "i", "ir", "ir2", "ir3", "t(2,5)"] {
            let g = GroupElement::parse(text, &grid).unwrap();
            assert_eq!(g.to_string(), text);
        }
        assert_eq!(GroupElement::parse("t(-1,7)", &grid).unwrap().to_string(), "t(5,1)");
        assert!(GroupElement::parse("x", &grid).is_err());
        assert!(GroupElement::parse("t(1)", &grid).is_err());
    }

    #[test]
    fn rotation_of_uniform_vector() {
        let grid = GridSpec::periodic_square(3).unwrap();
        let schema = Arc::new(Schema::new([("v", ChannelKind::Vector)]).unwrap());
        let mut data = vec![1.0f32; 9];
        data.extend(vec![0.0f32; 9]);
        let f = FieldSet::new(grid, schema, data, 0).unwrap();
        let out = apply(Dihedral::R.into(), &f).unwrap();
        assert!(out.plane(0).iter().all(|&v| v == 0.0));
        assert!(out.plane(1).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn rotation_of_tensor_matches_r_d_rt() {
        let grid = GridSpec::periodic_square(2).unwrap();
        let schema = Arc::new(Schema::new([("D", ChannelKind::Tensor)]).unwrap());
        let (a, b, c, d) = (1.5f64, -2.0, 3.25, 7.0);
        let mut data = Vec::new();
        for v in [a, b, c, d] {
            data.extend(vec![v; 4]);
        }
        let f = FieldSet::new(grid, schema, data, 0).unwrap();
        let out = apply(Dihedral::R.into(), &f).unwrap();
        let got: Vec<f64> = (0..4).map(|k| out.plane(k)[0]).collect();
        assert_eq!(got, vec![d, -c, -b, a]);
    }

    #[test]
    fn shift_of_small_scalar() {
        let grid = GridSpec::periodic_square(2).unwrap();
        let schema = Arc::new(Schema::new([("c", ChannelKind::Scalar)]).unwrap());
        let f = FieldSet::new(grid, schema, vec![0.0f32, 1.0, 2.0, 3.0], 0).unwrap();
        let out = apply(Shift::new(1, 0, 2, 2).into(), &f).unwrap();
        // brute-force remap: out(ix, iy) = in(ix - 1 mod 2, iy)
        let mut expect = vec![0.0f32; 4];
        for iy in 0..2 {
            for ix in 0..2 {
                expect[iy * 2 + ix] = f.at(0, (ix + 1) % 2, iy);
            }
        }
        assert_eq!(out.data(), expect.as_slice());
        assert_eq!(out.data(), &[1.0, 0.0, 3.0, 2.0]);
    }

    #[test]
    fn rotation_moves_cells_as_documented() {
        let grid = GridSpec::periodic_square(4).unwrap();
        let schema = Arc::new(Schema::new([("c", ChannelKind::Scalar)]).unwrap());
        let data: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let f = FieldSet::new(grid, schema, data, 0).unwrap();
        let r = apply(Dihedral::R.into(), &f).unwrap();
        let i = apply(Dihedral::I.into(), &f).unwrap();
        for iy in 0..4 {
            for ix in 0..4 {
                assert_eq!(r.at(0, 3 - iy, ix), f.at(0, ix, iy));
                assert_eq!(i.at(0, 3 - ix, iy), f.at(0, ix, iy));
            }
        }
    }

    #[test]
    fn identity_is_bit_exact() {
        let grid = GridSpec::periodic_square(5).unwrap();
        let f = random_field(grid, 1);
        assert!(apply(GroupElement::Dihedral(Dihedral::IDENTITY), &f).unwrap().bit_eq(&f));
        assert!(apply(Shift::new(0, 0, 5, 5).into(), &f).unwrap().bit_eq(&f));
    }

    #[test]
    fn homomorphism_over_d4_pairs() {
        let grid = GridSpec::periodic_square(5).unwrap();
        let f = random_field(grid, 2);
        for a in d4() {
            for b in d4() {
                let lhs = apply(a.compose(b).into(), &f).unwrap();
                let rhs = apply(a.into(), &apply(b.into(), &f).unwrap()).unwrap();
                assert!(lhs.bit_eq(&rhs), "{a:?} {b:?}");
            }
        }
    }

    #[test]
    fn scalar_values_preserved_as_multiset() {
        let grid = GridSpec::periodic_square(4).unwrap();
        let f = random_field(grid, 9);
        let mut before: Vec<u64> = f.plane(0).iter().map(|v| v.bits()).collect();
        before.sort_unstable();
        for g in GroupSpec::new(GroupKind::D4, &grid).unwrap().enumerate() {
            let out = apply(g, &f).unwrap();
            let mut after: Vec<u64> = out.plane(0).iter().map(|v| v.bits()).collect();
            after.sort_unstable();
            assert_eq!(before, after);
        }
    }

    #[test]
    fn d2_on_rectangle() {
        let grid = GridSpec::new(6, 3, 1.0, 1.0, Boundary::PeriodicXNeumannY).unwrap();
        let f = random_field(grid, 4);
        for g in GroupSpec::new(GroupKind::D2, &grid).unwrap().enumerate() {
            let back = apply(g.inverse(), &apply(g, &f).unwrap()).unwrap();
            assert!(back.bit_eq(&f));
        }
        assert!(matches!(apply(Dihedral::R.into(), &f), Err(Error::IncompatibleGroup(_))));
        assert!(apply(Shift::new(1, 0, 6, 3).into(), &f).is_ok());
        assert!(apply(Shift::new(0, 1, 6, 3).into(), &f).is_err());
        assert!(apply(Shift::new(1, 0, 5, 3).into(), &f).is_err());
    }

    #[test]
    fn window_action_is_framewise() {
        let grid = GridSpec::periodic_square(4).unwrap();
        let frames: Vec<FieldSet<f32>> = (0..4)
            .map(|t| random_field(grid, 10 + t as u64).with_time_index(t))
            .collect();
        let w = Window::new(frames.clone()).unwrap();
        let g = GroupElement::Dihedral(Dihedral::new(3, true));
        let out = apply_window(g, &w).unwrap();
        for (a, b) in out.frames().iter().zip(&frames) {
            assert!(a.bit_eq(&apply(g, b).unwrap()));
        }
        let back = apply_window(g, &apply_window(g.inverse(), &w).unwrap()).unwrap();
        assert!(back.bit_eq(&w));

        let w1 = Window::new(vec![frames[0].clone()]).unwrap();
        assert!(apply_window(g, &w1).unwrap().frames()[0].bit_eq(&apply(g, &frames[0]).unwrap()));
    }

    #[test]
    fn sampling_is_seeded_and_checks_n() {
        let grid = GridSpec::periodic_square(128).unwrap();
        let torus = GroupSpec::new(GroupKind::Torus, &grid).unwrap();
        let a = torus.sample(1, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = torus.sample(1, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(torus.sample(0, &mut ChaCha8Rng::seed_from_u64(5)).unwrap_err(), Error::EmptySample);
        let circle = GroupSpec::new(GroupKind::CircleX, &grid).unwrap();
        let s = circle.sample(8, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(s.len(), 8);
        assert!(s.iter().all(|&g| circle.contains(g)));
    }

    #[test]
    fn sample_distinct_covers_group() {
        let grid = GridSpec::periodic_square(3).unwrap();
        let torus = GroupSpec::new(GroupKind::Torus, &grid).unwrap();
        let mut s = torus.sample_distinct(9, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        s.sort_by_key(|g| g.to_string());
        s.dedup();
        assert_eq!(s.len(), 9);
        assert!(torus.sample_distinct(10, &mut ChaCha8Rng::seed_from_u64(3)).is_err());
    }

    #[test]
    fn d4_sampling_is_uniform() {
        let grid = GridSpec::periodic_square(4).unwrap();
        let g = GroupSpec::new(GroupKind::D4, &grid).unwrap();
        let n = 100_000usize;
        let draws = g.sample(n, &mut ChaCha8Rng::seed_from_u64(2024)).unwrap();
        let mut counts = [0usize; 8];
        for d in draws {
            let idx = g.enumerate().iter().position(|&e| e == d).unwrap();
            counts[idx] += 1;
        }
        let p = 1.0 / 8.0;
        let mean = n as f64 * p;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        let mut chi2 = 0.0;
        for c in counts {
            assert!((c as f64 - mean).abs() <= 3.0 * sigma, "{counts:?}");
            chi2 += (c as f64 - mean).powi(2) / mean;
        }
        // 7 degrees of freedom, 99.9th percentile
        assert!(chi2 < 24.32, "chi2 = {chi2}");
    }
}
