//! Off-grid ray integration.
//!
//! Rays follow `d/ds (n dx/ds) = grad n` written for a unit direction `d`:
//!
//! ```text
//! dx/ds = d
//! dd/ds = (grad n - (grad n . d) d) / n
//! ```
//!
//! The right-hand side is invariant under a constant rescaling of `n`, so any
//! field proportional to the refractive index (slowness in particular) traces
//! the same rays. Every scheme renormalises `d` after each step.

use crate::field::{interp_weights, Backend, FieldError, FieldSampler, GridSpec, InterpSample};
use crate::Point;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("non-positive index {value} at ({:.6}, {:.6}, {:.6})", .at.x, .at.y, .at.z)]
    NonPositiveIndex { value: f64, at: Point },
    #[error("step size must be positive and finite, got {0}")]
    BadStep(f64),
}

impl TraceError {
    fn is_domain_exit(&self) -> bool {
        matches!(self, TraceError::Field(FieldError::OutOfDomain(_)))
    }
}

/// Position and unit direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayState {
    pub x: Point,
    pub d: Point,
}

impl RayState {
    /// Normalises `d`.
    pub fn new(x: Point, d: Point) -> Self {
        Self { x, d: d.normalize() }
    }
}

/// Stepping scheme for the ray equations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub enum StepAlgorithm {
    /// Momentum `n d` updated twice per step, half a step before and after
    /// the position advance.
    DualUpdate,
    /// Position advanced along the old direction, direction updated at the new point.
    MixedStep,
    /// Second-order Taylor position update, first-order direction update.
    Characteristics,
    /// Heun predictor-corrector.
    #[default]
    RungeKutta2,
}

impl StepAlgorithm {
    pub const ALL: [StepAlgorithm; 4] = [
        StepAlgorithm::DualUpdate,
        StepAlgorithm::MixedStep,
        StepAlgorithm::Characteristics,
        StepAlgorithm::RungeKutta2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StepAlgorithm::DualUpdate => "dual-update",
            StepAlgorithm::MixedStep => "mixed-step",
            StepAlgorithm::Characteristics => "characteristics",
            StepAlgorithm::RungeKutta2 => "runge-kutta-2",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }
}

/// Why a trace stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    BoundaryExit,
    ClosedLoop,
    MaxSteps,
    ReceiverCapture,
}

/// Ordered ray samples with their arc-length coordinates.
///
/// Forward traces have uniform gaps `ds` except the final one, `ds_last <= ds`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<Point>,
    pub directions: Vec<Point>,
    /// Arc length of each sample from the first one.
    pub arc: Vec<f64>,
    pub ds: f64,
    pub ds_last: f64,
    /// Trapezoidal integral of the tracing field along the samples.
    pub acoustic_length: f64,
    pub termination: Termination,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn total_arc(&self) -> f64 {
        self.arc.last().copied().unwrap_or(0.0)
    }

    pub fn end(&self) -> Point {
        *self.samples.last().expect("trajectory is never empty")
    }

    /// Same path walked backwards: samples and directions reversed, arc measured from the old end.
    pub fn reversed(&self) -> Trajectory {
        let total = self.total_arc();
        Trajectory {
            samples: self.samples.iter().rev().copied().collect(),
            directions: self.directions.iter().rev().map(|d| -d).collect(),
            arc: self.arc.iter().rev().map(|s| total - s).collect(),
            ds: self.ds,
            ds_last: self.ds_last,
            acoustic_length: self.acoustic_length,
            termination: self.termination,
        }
    }

    /// Trapezoidal weight of each sample.
    pub fn quadrature_weights(&self) -> Vec<f64> {
        trapezoid_weights(&self.arc)
    }
}

/// Weights of the trapezoidal rule on arbitrary sample positions.
///
/// For uniform gaps `ds` and a final gap `ds'` this is
/// `ds/2, ds, ..., ds, (ds + ds')/2, ds'/2`.
pub fn trapezoid_weights(arc: &[f64]) -> Vec<f64> {
    let n = arc.len();
    let gap = |i: usize| if i == 0 || i >= n { 0.0 } else { arc[i] - arc[i - 1] };
    (0..n).map(|m| 0.5 * (gap(m) + gap(m + 1))).collect()
}

/// Unit-speed ray curvature `(grad n - (grad n . d) d) / n`.
pub fn ray_rhs(sample: &InterpSample, d: &Point) -> Result<Point, TraceError> {
    if !(sample.value > 0.0) {
        return Err(TraceError::NonPositiveIndex { value: sample.value, at: Point::zeros() });
    }
    let g = sample.gradient;
    Ok((g - g.dot(d) * d) / sample.value)
}

fn rhs_at<S: FieldSampler + ?Sized>(sampler: &S, x: &Point, d: &Point) -> Result<Point, TraceError> {
    let s = sampler.sample(x)?;
    ray_rhs(&s, d).map_err(|e| match e {
        TraceError::NonPositiveIndex { value, .. } => TraceError::NonPositiveIndex { value, at: *x },
        e => e,
    })
}

fn positive_sample<S: FieldSampler + ?Sized>(sampler: &S, x: &Point) -> Result<InterpSample, TraceError> {
    let s = sampler.sample(x)?;
    if !(s.value > 0.0) {
        return Err(TraceError::NonPositiveIndex { value: s.value, at: *x });
    }
    Ok(s)
}

/// Advance one step of length `ds`.
pub fn step<S: FieldSampler + ?Sized>(
    sampler: &S,
    state: &RayState,
    ds: f64,
    algorithm: StepAlgorithm,
) -> Result<RayState, TraceError> {
    let RayState { x, d } = *state;
    let next = match algorithm {
        StepAlgorithm::DualUpdate => {
            // leapfrog on the ray momentum p = n d, with dp/ds = grad n
            let s0 = positive_sample(sampler, &x)?;
            let ph = s0.value * d + 0.5 * ds * s0.gradient;
            let x1 = x + ds * ph.normalize();
            let g1 = positive_sample(sampler, &x1)?.gradient;
            RayState { x: x1, d: (ph + 0.5 * ds * g1).normalize() }
        }
        StepAlgorithm::MixedStep => {
            let x1 = x + ds * d;
            let f1 = rhs_at(sampler, &x1, &d)?;
            RayState { x: x1, d: (d + ds * f1).normalize() }
        }
        StepAlgorithm::Characteristics => {
            let f0 = rhs_at(sampler, &x, &d)?;
            RayState { x: x + ds * d + 0.5 * ds * ds * f0, d: (d + ds * f0).normalize() }
        }
        StepAlgorithm::RungeKutta2 => {
            let f0 = rhs_at(sampler, &x, &d)?;
            let xp = x + ds * d;
            let dp = (d + ds * f0).normalize();
            let fp = rhs_at(sampler, &xp, &dp)?;
            RayState { x: x + 0.5 * ds * (d + dp), d: (d + 0.5 * ds * (f0 + fp)).normalize() }
        }
    };
    if !sampler.contains(&next.x) {
        return Err(FieldError::OutOfDomain(next.x).into());
    }
    Ok(next)
}

/// When to stop a trace (besides leaving the grid or running out of steps).
#[derive(Debug, Clone, PartialEq)]
pub enum StopCondition {
    /// Run until the ray leaves the grid.
    BoundaryExit,
    /// Stop at the first sample within `ds` of the start, once more than `2 ds` of arc is covered.
    ClosedLoop,
    /// Stop when the ray crosses the sphere (circle in 2D) outward; the final sample is
    /// snapped onto the surface.
    Surface { center: Point, radius: f64 },
    /// Stop at the first sample within `ds` of `point` (after `2 ds` of arc) and append
    /// `point` itself as the final sample.
    Target { point: Point },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceConfig {
    pub ds: f64,
    pub algorithm: StepAlgorithm,
    pub max_steps: usize,
}

impl TraceConfig {
    pub fn new(ds: f64, algorithm: StepAlgorithm) -> Self {
        Self { ds, algorithm, max_steps: 1_000_000 }
    }
}

/// Exit parameter `t in (0, 1]` where `p0 + t (p1 - p0)` leaves the sphere.
fn surface_exit(p0: &Point, p1: &Point, center: &Point, radius: f64) -> Option<f64> {
    let e = p1 - p0;
    let w = p0 - center;
    let a = e.norm_squared();
    let b = w.dot(&e);
    let c = w.norm_squared() - radius * radius;
    let disc = b * b - a * c;
    if a == 0.0 || disc < 0.0 {
        return None;
    }
    let t = (-b + disc.sqrt()) / a;
    (t > 1e-9).then_some(t.min(1.0))
}

/// Integrate from `start` until `stop` fires, the ray leaves the grid, or `max_steps` is hit.
pub fn trace<S: FieldSampler + ?Sized>(
    sampler: &S,
    start: RayState,
    config: &TraceConfig,
    stop: &StopCondition,
) -> Result<Trajectory, TraceError> {
    let ds = config.ds;
    if !(ds > 0.0 && ds.is_finite()) {
        return Err(TraceError::BadStep(ds));
    }
    let start = RayState::new(start.x, start.d);
    let s0 = sampler.sample(&start.x)?;
    ray_rhs(&s0, &start.d).map_err(|_| TraceError::NonPositiveIndex { value: s0.value, at: start.x })?;

    let mut samples = vec![start.x];
    let mut directions = vec![start.d];
    let mut arc = vec![0.0];
    let mut ds_last = ds;
    let mut state = start;
    let mut termination = Termination::MaxSteps;

    for m in 0..config.max_steps {
        if let StopCondition::Target { point } = stop {
            let dist = (state.x - point).norm();
            if m > 2 && dist < ds {
                samples.push(*point);
                directions.push(state.d);
                arc.push(arc[m] + dist);
                ds_last = dist;
                termination = Termination::ReceiverCapture;
                break;
            }
        }
        let next = match step(sampler, &state, ds, config.algorithm) {
            Ok(n) => n,
            Err(e) if e.is_domain_exit() => {
                termination = Termination::BoundaryExit;
                break;
            }
            Err(e) => return Err(e),
        };
        if let StopCondition::Surface { center, radius } = stop {
            if (next.x - center).norm() >= *radius {
                if let Some(t) = surface_exit(&state.x, &next.x, center, *radius) {
                    let hit = state.x + t * (next.x - state.x);
                    let gap = (hit - state.x).norm();
                    samples.push(hit);
                    directions.push(next.d);
                    arc.push(arc[m] + gap);
                    ds_last = gap;
                    termination = Termination::ReceiverCapture;
                    break;
                }
            }
        }
        samples.push(next.x);
        directions.push(next.d);
        arc.push((m + 1) as f64 * ds);
        state = next;
        if matches!(stop, StopCondition::ClosedLoop) && m + 1 > 2 && (state.x - start.x).norm() < ds {
            termination = Termination::ClosedLoop;
            break;
        }
    }

    let mut traj = Trajectory {
        samples,
        directions,
        arc,
        ds,
        ds_last,
        acoustic_length: 0.0,
        termination,
    };
    traj.acoustic_length = acoustic_length(&traj, sampler)?;
    Ok(traj)
}

/// Take exactly the steps `gaps` from `start`; stops early (returning fewer samples)
/// if the ray leaves the grid.
pub fn trace_steps<S: FieldSampler + ?Sized>(
    sampler: &S,
    start: RayState,
    gaps: &[f64],
    algorithm: StepAlgorithm,
) -> Result<Trajectory, TraceError> {
    let start = RayState::new(start.x, start.d);
    sampler.sample(&start.x)?;
    let mut samples = vec![start.x];
    let mut directions = vec![start.d];
    let mut arc = vec![0.0];
    let mut state = start;
    let mut termination = Termination::MaxSteps;
    for &h in gaps {
        match step(sampler, &state, h, algorithm) {
            Ok(n) => state = n,
            Err(e) if e.is_domain_exit() => {
                termination = Termination::BoundaryExit;
                break;
            }
            Err(e) => return Err(e),
        }
        samples.push(state.x);
        directions.push(state.d);
        arc.push(arc.last().unwrap() + h);
    }
    let ds = gaps.first().copied().unwrap_or(0.0);
    let ds_last = gaps.get(samples.len().saturating_sub(2)).copied().unwrap_or(ds);
    let mut traj = Trajectory { samples, directions, arc, ds, ds_last, acoustic_length: 0.0, termination };
    traj.acoustic_length = acoustic_length(&traj, sampler)?;
    Ok(traj)
}

/// Trapezoidal line integral of `sampler` along the trajectory samples.
pub fn acoustic_length<S: FieldSampler + ?Sized>(traj: &Trajectory, sampler: &S) -> Result<f64, FieldError> {
    integrate(traj, |x| sampler.value(x))
}

/// Trapezoidal integral of `1 / c` along the trajectory.
pub fn travel_time<S: FieldSampler + ?Sized>(traj: &Trajectory, sound_speed: &S) -> Result<f64, FieldError> {
    integrate(traj, |x| sound_speed.value(x).map(|c| 1.0 / c))
}

pub(crate) fn integrate(traj: &Trajectory, mut f: impl FnMut(&Point) -> Result<f64, FieldError>) -> Result<f64, FieldError> {
    let w = traj.quadrature_weights();
    let mut acc = 0.0;
    for (x, w) in traj.samples.iter().zip(w) {
        if w != 0.0 {
            acc += w * f(x)?;
        }
    }
    Ok(acc)
}

/// Running trapezoidal integral of `values` over `arc`, starting at zero.
pub fn integrate_cumulative(arc: &[f64], values: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for m in 0..values.len() {
        if m > 0 {
            acc += 0.5 * (arc[m] - arc[m - 1]) * (values[m - 1] + values[m]);
        }
        out.push(acc);
    }
    out
}

/// Sparse ray-to-grid weights (metres) of one system-matrix row, sorted by node.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseRow {
    pub entries: Vec<(usize, f64)>,
}

impl SparseRow {
    pub fn dot(&self, nodal: &[f64]) -> f64 {
        self.entries.iter().map(|&(j, a)| a * nodal[j]).sum()
    }

    pub fn sum(&self) -> f64 {
        self.entries.iter().map(|e| e.1).sum()
    }

    pub fn coefficient(&self, node: usize) -> f64 {
        self.entries
            .binary_search_by_key(&node, |e| e.0)
            .map(|i| self.entries[i].1)
            .unwrap_or(0.0)
    }
}

/// Scatter each sample's trapezoidal weight onto the grid with the interpolation weights.
///
/// `row . nodal_values` equals the trapezoidal integral of the interpolated field
/// (exactly so for the bilinear backend).
pub fn system_row(traj: &Trajectory, spec: &GridSpec, backend: Backend) -> Result<SparseRow, FieldError> {
    let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
    for (x, w) in traj.samples.iter().zip(traj.quadrature_weights()) {
        if w == 0.0 {
            continue;
        }
        for (node, iw) in interp_weights(spec, x, backend)? {
            *acc.entry(node).or_insert(0.0) += w * iw;
        }
    }
    Ok(SparseRow { entries: acc.into_iter().collect() })
}
