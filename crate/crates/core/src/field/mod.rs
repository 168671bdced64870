//! Regular-grid scalar fields and their interpolants.
//!
//! # Layout
//!
//! Every field in the crate shares one node ordering: axis 0 (`x`) varies
//! fastest, then `y`, then `z`, so node `(i, j, k)` lives at flat index
//! `(k * ny + j) * nx + i`. Two-dimensional grids carry `nz = 1`. The binary
//! field format, the CSV importer and the system-matrix columns all use this
//! ordering through [`GridSpec::flat_index`].

mod bilinear;
mod bspline;
pub mod io;

pub use bilinear::{grid_gradient, Bilinear};
pub use bspline::BSpline;

use crate::{Hessian, Point};
use thiserror::Error;

/// Smallest per-axis node count: one cubic B-spline stencil.
pub const MIN_COUNT: usize = 4;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("point ({:.6}, {:.6}, {:.6}) lies outside the grid", .0.x, .0.y, .0.z)]
    OutOfDomain(Point),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid field values: {0}")]
    InvalidValues(String),
    #[error("malformed field file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Isotropic regular grid in two or three dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    dim: usize,
    origin: Point,
    spacing: f64,
    counts: [usize; 3],
}

impl GridSpec {
    /// `origin` and `counts` must have `dim` entries.
    pub fn new(dim: usize, origin: &[f64], spacing: f64, counts: &[usize]) -> Result<Self, FieldError> {
        if dim != 2 && dim != 3 {
            return Err(FieldError::InvalidGrid(format!("dimension must be 2 or 3, got {dim}")));
        }
        if origin.len() != dim || counts.len() != dim {
            return Err(FieldError::InvalidGrid(format!(
                "expected {dim} origin and count entries, got {} and {}",
                origin.len(),
                counts.len()
            )));
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(FieldError::InvalidGrid(format!("spacing must be positive, got {spacing}")));
        }
        if let Some(c) = counts.iter().find(|&&c| c < MIN_COUNT) {
            return Err(FieldError::InvalidGrid(format!("every axis needs at least {MIN_COUNT} nodes, got {c}")));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(FieldError::InvalidGrid("origin must be finite".into()));
        }
        let mut o = Point::zeros();
        let mut n = [1usize; 3];
        for a in 0..dim {
            o[a] = origin[a];
            n[a] = counts[a];
        }
        Ok(Self { dim, origin: o, spacing, counts: n })
    }

    /// Grid of nodes spaced `spacing` apart covering the box `[lo, hi]`.
    ///
    /// The box is widened outward to whole multiples of `spacing`, so the
    /// coordinate origin is always a node of the resulting grid.
    pub fn covering(dim: usize, lo: &[f64], hi: &[f64], spacing: f64) -> Result<Self, FieldError> {
        let mut origin = Vec::with_capacity(dim);
        let mut counts = Vec::with_capacity(dim);
        for a in 0..dim {
            let first = (lo[a] / spacing).floor();
            let last = (hi[a] / spacing).ceil();
            origin.push(first * spacing);
            counts.push(((last - first) as usize + 1).max(MIN_COUNT));
        }
        Self::new(dim, &origin, spacing, &counts)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn origin(&self) -> &Point {
        &self.origin
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Per-axis node counts; the `z` count is 1 for 2D grids.
    pub fn counts(&self) -> [usize; 3] {
        self.counts
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Physical length `(count - 1) * spacing` along `axis`.
    pub fn extent(&self, axis: usize) -> f64 {
        (self.counts[axis] - 1) as f64 * self.spacing
    }

    /// Upper corner of the domain.
    pub fn upper(&self) -> Point {
        let mut u = self.origin;
        for a in 0..self.dim {
            u[a] += self.extent(a);
        }
        u
    }

    pub fn flat_index(&self, idx: [usize; 3]) -> usize {
        (idx[2] * self.counts[1] + idx[1]) * self.counts[0] + idx[0]
    }

    pub fn multi_index(&self, flat: usize) -> [usize; 3] {
        let nx = self.counts[0];
        let ny = self.counts[1];
        [flat % nx, (flat / nx) % ny, flat / (nx * ny)]
    }

    pub fn node_position(&self, idx: [usize; 3]) -> Point {
        let mut p = self.origin;
        for (a, &i) in idx.iter().enumerate().take(self.dim) {
            p[a] += i as f64 * self.spacing;
        }
        p
    }

    /// Positions of all nodes in flat order.
    pub fn node_positions(&self) -> impl Iterator<Item = Point> + '_ {
        (0..self.len()).map(move |f| self.node_position(self.multi_index(f)))
    }

    /// Closed-box membership test on the active axes.
    pub fn contains(&self, x: &Point) -> bool {
        (0..self.dim).all(|a| {
            let u = (x[a] - self.origin[a]) / self.spacing;
            u >= 0.0 && u <= (self.counts[a] - 1) as f64
        })
    }

    /// Cell index and fractional offset in `[0, 1]` along each active axis.
    pub(crate) fn locate(&self, x: &Point) -> Result<([usize; 3], [f64; 3]), FieldError> {
        let mut cell = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..self.dim {
            let u = (x[a] - self.origin[a]) / self.spacing;
            let last = (self.counts[a] - 1) as f64;
            if !(u >= 0.0 && u <= last) {
                return Err(FieldError::OutOfDomain(*x));
            }
            let i = (u.floor() as usize).min(self.counts[a] - 2);
            cell[a] = i;
            frac[a] = u - i as f64;
        }
        Ok((cell, frac))
    }
}

/// What a field's samples mean physically.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    RefractiveIndex,
    SoundSpeed,
    Slowness,
    AbsorptionCoefficient,
}

impl FieldKind {
    fn requires_positive(self) -> bool {
        !matches!(self, FieldKind::AbsorptionCoefficient)
    }
}

/// Scalar samples on a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    spec: GridSpec,
    values: Vec<f64>,
    kind: FieldKind,
}

impl ScalarField {
    pub fn new(spec: GridSpec, values: Vec<f64>, kind: FieldKind) -> Result<Self, FieldError> {
        if values.len() != spec.len() {
            return Err(FieldError::InvalidValues(format!(
                "grid has {} nodes but {} values were supplied",
                spec.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(FieldError::InvalidValues(format!("non-finite value at node {i}")));
        }
        if kind.requires_positive() {
            if let Some(i) = values.iter().position(|&v| v <= 0.0) {
                return Err(FieldError::InvalidValues(format!(
                    "{kind:?} must be strictly positive, node {i} holds {}",
                    values[i]
                )));
            }
        }
        Ok(Self { spec, values, kind })
    }

    /// Evaluate `f` at every node.
    pub fn from_fn(spec: GridSpec, kind: FieldKind, f: impl Fn(&Point) -> f64) -> Result<Self, FieldError> {
        let values = spec.node_positions().map(|p| f(&p)).collect();
        Self::new(spec, values, kind)
    }

    pub fn constant(spec: GridSpec, kind: FieldKind, value: f64) -> Result<Self, FieldError> {
        let n = spec.len();
        Self::new(spec, vec![value; n], kind)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn kind(&self) -> FieldKind {
        self.kind
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_uniform(&self) -> bool {
        let first = self.values[0];
        self.values.iter().all(|&v| v == first)
    }

    /// Elementwise reciprocal, e.g. sound speed to slowness.
    pub fn reciprocal(&self, kind: FieldKind) -> Result<Self, FieldError> {
        Self::new(self.spec.clone(), self.values.iter().map(|v| 1.0 / v).collect(), kind)
    }
}

/// Interpolated value with first and (for the B-spline backend) second derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterpSample {
    pub value: f64,
    pub gradient: Point,
    pub hessian: Option<Hessian>,
}

/// Interpolation scheme used for grid-to-ray and ray-to-grid transfers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Backend {
    /// Multilinear weights over the enclosing cell; gradients interpolated from nodal differences.
    #[default]
    Bilinear,
    /// Tensor-product cubic B-spline with analytic gradient and Hessian.
    BSpline,
}

/// Anything the tracer can query for a refractive-index-like quantity.
pub trait FieldSampler: Sync {
    fn dim(&self) -> usize;

    fn contains(&self, x: &Point) -> bool;

    fn sample(&self, x: &Point) -> Result<InterpSample, FieldError>;

    fn value(&self, x: &Point) -> Result<f64, FieldError> {
        Ok(self.sample(x)?.value)
    }

    /// True when the medium is known to be homogeneous, so rays are straight.
    fn is_uniform(&self) -> bool {
        false
    }
}

impl<S: FieldSampler + ?Sized> FieldSampler for &S {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn contains(&self, x: &Point) -> bool {
        (**self).contains(x)
    }
    fn sample(&self, x: &Point) -> Result<InterpSample, FieldError> {
        (**self).sample(x)
    }
    fn value(&self, x: &Point) -> Result<f64, FieldError> {
        (**self).value(x)
    }
    fn is_uniform(&self) -> bool {
        (**self).is_uniform()
    }
}

/// Runtime choice between the two grid interpolants.
#[derive(Debug, Clone)]
pub enum Interpolator {
    Bilinear(Bilinear),
    BSpline(BSpline),
}

impl Interpolator {
    pub fn new(field: ScalarField, backend: Backend) -> Self {
        match backend {
            Backend::Bilinear => Self::Bilinear(Bilinear::new(field)),
            Backend::BSpline => Self::BSpline(BSpline::new(field)),
        }
    }

    pub fn backend(&self) -> Backend {
        match self {
            Self::Bilinear(_) => Backend::Bilinear,
            Self::BSpline(_) => Backend::BSpline,
        }
    }

    pub fn field(&self) -> &ScalarField {
        match self {
            Self::Bilinear(b) => b.field(),
            Self::BSpline(b) => b.field(),
        }
    }

    pub fn spec(&self) -> &GridSpec {
        self.field().spec()
    }
}

impl FieldSampler for Interpolator {
    fn dim(&self) -> usize {
        self.spec().dim()
    }
    fn contains(&self, x: &Point) -> bool {
        self.spec().contains(x)
    }
    fn sample(&self, x: &Point) -> Result<InterpSample, FieldError> {
        match self {
            Self::Bilinear(b) => b.sample(x),
            Self::BSpline(b) => b.sample(x),
        }
    }
    fn value(&self, x: &Point) -> Result<f64, FieldError> {
        match self {
            Self::Bilinear(b) => b.value(x),
            Self::BSpline(b) => b.value(x),
        }
    }
    fn is_uniform(&self) -> bool {
        match self {
            Self::Bilinear(b) => b.is_uniform(),
            Self::BSpline(b) => b.is_uniform(),
        }
    }
}

/// Interpolation weights of the nodes that influence `x`.
///
/// The same weights interpolate nodal data onto the ray and scatter ray
/// quantities back onto the grid. For the B-spline backend these are the raw
/// basis weights (nodal values treated as control points); stencil entries in
/// the replicate padding fold onto the adjacent boundary node.
pub fn interp_weights(spec: &GridSpec, x: &Point, backend: Backend) -> Result<Vec<(usize, f64)>, FieldError> {
    match backend {
        Backend::Bilinear => bilinear::weights(spec, x),
        Backend::BSpline => bspline::weights(spec, x),
    }
}

/// Closed-form medium, used as an interpolation-free oracle.
pub struct AnalyticField<F> {
    dim: usize,
    lo: Point,
    hi: Point,
    f: F,
}

impl<F> AnalyticField<F>
where
    F: Fn(&Point) -> InterpSample + Sync,
{
    /// `f` must return value, gradient and Hessian; the domain is the box `[lo, hi]`.
    pub fn new(dim: usize, lo: Point, hi: Point, f: F) -> Self {
        Self { dim, lo, hi, f }
    }
}

impl<F> FieldSampler for AnalyticField<F>
where
    F: Fn(&Point) -> InterpSample + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn contains(&self, x: &Point) -> bool {
        (0..self.dim).all(|a| x[a] >= self.lo[a] && x[a] <= self.hi[a])
    }
    fn sample(&self, x: &Point) -> Result<InterpSample, FieldError> {
        if !self.contains(x) {
            return Err(FieldError::OutOfDomain(*x));
        }
        Ok((self.f)(x))
    }
}
