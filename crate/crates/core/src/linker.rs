//! Two-point ray linking by shooting.
//!
//! A pair is linked when the ray launched from the emitter crosses the
//! detection circle (sphere in 3D) within `tolerance` of the receiver. The
//! launch direction is the unknown; the residual is the angular position of
//! the interception relative to the receiver, seen from the array centre.
//!
//! 2D launch angles are global direction angles. 3D launch angles live in a
//! frame attached to the pair: `(phi, theta) = (0, pi/2)` aims straight at the
//! receiver, `phi` turns within the plane through emitter, receiver and centre,
//! `theta` tilts out of it. The 3D residual is (azimuth, elevation) of the
//! interception in a frame whose pole points at the receiver.

use crate::field::FieldSampler;
use crate::tracer::{trace, RayState, StopCondition, Termination, TraceConfig, TraceError, Trajectory};
use crate::Point;
use nalgebra::{Matrix2, Vector2};
use rayon::prelude::*;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinkError {
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("residuals at the bracket ends have the same sign ({0:e}, {1:e})")]
    SameSign(f64, f64),
    #[error("no sign change found after expanding the bracket")]
    Unbracketed,
    #[error("ray did not reach the detection surface")]
    NonFinite,
    #[error("secant denominator vanished")]
    FlatSecant,
    #[error("Jacobian estimate is singular")]
    Singular,
    #[error("emitter and receiver coincide")]
    Coincident,
    #[error("invalid link problem: {0}")]
    Invalid(String),
}

/// Wrap to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Launch angles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AngleParam {
    /// Direction `(cos theta, sin theta)`, `theta in (-pi, pi]`.
    Planar { theta: f64 },
    /// Pair-frame azimuth `phi in (-pi, pi]` and polar angle `theta in [0, pi]`.
    Spherical { phi: f64, theta: f64 },
}

impl AngleParam {
    pub fn planar(theta: f64) -> Self {
        AngleParam::Planar { theta: wrap_angle(theta) }
    }

    pub fn spherical(phi: f64, theta: f64) -> Self {
        let t = theta.rem_euclid(2.0 * PI);
        let (phi, theta) = if t > PI { (phi + PI, 2.0 * PI - t) } else { (phi, t) };
        AngleParam::Spherical { phi: wrap_angle(phi), theta }
    }

    /// `[theta, 0]` in 2D, `[phi, theta]` in 3D.
    pub fn to_array(self) -> [f64; 2] {
        match self {
            AngleParam::Planar { theta } => [theta, 0.0],
            AngleParam::Spherical { phi, theta } => [phi, theta],
        }
    }
}

/// Transducer positions on a ring (2D) or sphere (3D).
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    pub dim: usize,
    pub center: Point,
    pub radius: f64,
    pub emitters: Vec<Point>,
    pub receivers: Vec<Point>,
}

impl ArrayGeometry {
    /// Emitters at angles `2 pi i / n_e`, receivers at `2 pi j / n_r + offset`.
    pub fn ring(center: Point, radius: f64, n_emitters: usize, n_receivers: usize, receiver_offset: f64) -> Self {
        let on_ring = |n: usize, off: f64| -> Vec<Point> {
            (0..n)
                .map(|i| {
                    let a = 2.0 * PI * i as f64 / n as f64 + off;
                    center + radius * Point::new(a.cos(), a.sin(), 0.0)
                })
                .collect()
        };
        Self {
            dim: 2,
            center: Point::new(center.x, center.y, 0.0),
            radius,
            emitters: on_ring(n_emitters, 0.0),
            receivers: on_ring(n_receivers, receiver_offset),
        }
    }

    /// Ring with receivers half a pitch away from the emitters, so no pair coincides
    /// when the counts are equal.
    pub fn interleaved_ring(center: Point, radius: f64, n_emitters: usize, n_receivers: usize) -> Self {
        Self::ring(center, radius, n_emitters, n_receivers, PI / n_receivers as f64)
    }

    /// Fibonacci-lattice points; receivers are rotated about `z` by half the golden angle.
    pub fn sphere(center: Point, radius: f64, n_emitters: usize, n_receivers: usize) -> Self {
        let golden = PI * (3.0 - 5f64.sqrt());
        let lattice = |n: usize, off: f64| -> Vec<Point> {
            (0..n)
                .map(|i| {
                    let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
                    let r = (1.0 - z * z).sqrt();
                    let a = golden * i as f64 + off;
                    center + radius * Point::new(r * a.cos(), r * a.sin(), z)
                })
                .collect()
        };
        Self {
            dim: 3,
            center,
            radius,
            emitters: lattice(n_emitters, 0.0),
            receivers: lattice(n_receivers, 0.5 * golden),
        }
    }

    pub fn validate(&self) -> Result<(), LinkError> {
        if self.dim != 2 && self.dim != 3 {
            return Err(LinkError::Invalid(format!("dimension {}", self.dim)));
        }
        if !(self.radius > 0.0) {
            return Err(LinkError::Invalid("radius must be positive".into()));
        }
        if self.emitters.len() < 2 || self.receivers.len() < 2 {
            return Err(LinkError::Invalid("need at least two emitters and two receivers".into()));
        }
        let tol = 1e-9 * self.radius;
        for p in self.emitters.iter().chain(&self.receivers) {
            if ((p - self.center).norm() - self.radius).abs() > tol {
                return Err(LinkError::Invalid(format!("transducer {p:?} is off the detection surface")));
            }
        }
        Ok(())
    }

    pub fn pair_count(&self) -> usize {
        self.emitters.len() * self.receivers.len()
    }

    /// `(emitter, receiver)` of pair index `e * n_r + r`.
    pub fn pair(&self, index: usize) -> (usize, usize) {
        (index / self.receivers.len(), index % self.receivers.len())
    }
}

/// Shooting method for the 2D scalar residual. 3D always uses Broyden.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LinkMethod {
    #[default]
    Secant,
    RegulaFalsi,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkConfig {
    pub trace: TraceConfig,
    /// Maximum interception-to-receiver distance (m).
    pub tolerance: f64,
    pub max_iterations: usize,
    pub method: LinkMethod,
}

impl LinkConfig {
    /// Tolerance defaults to the grid spacing.
    pub fn new(trace: TraceConfig, grid_spacing: f64) -> Self {
        Self { trace, tolerance: grid_spacing, max_iterations: 30, method: LinkMethod::Secant }
    }
}

/// One emitter-receiver boundary-value problem with its launch and residual frames.
#[derive(Debug, Clone)]
pub struct LinkProblem {
    pub dim: usize,
    pub emitter: Point,
    pub receiver: Point,
    pub center: Point,
    pub radius: f64,
    pub config: LinkConfig,
    /// Launch frame: aim, in-plane normal, out-of-plane normal.
    launch: [Point; 3],
    /// Receiver frame: pole, in-plane tangent, out-of-plane tangent.
    target: [Point; 3],
}

/// Any unit vector orthogonal to `v`.
pub fn perpendicular(v: &Point) -> Point {
    let trial = if v.x.abs() < 0.9 { Point::x() } else { Point::y() };
    (trial - trial.dot(v) * v).normalize()
}

/// Unit part of `a` orthogonal to the unit vector `v`, or any perpendicular if `a` is parallel.
fn orthogonal_part(a: &Point, v: &Point) -> Point {
    let p = a - a.dot(v) * v;
    if p.norm() > 1e-9 * a.norm().max(1e-300) {
        p.normalize()
    } else {
        perpendicular(v)
    }
}

/// Launch directions within this angle of the inward normal are admitted.
const MAX_LAUNCH_TILT: f64 = PI / 2.0 - 0.1 * PI / 180.0;

impl LinkProblem {
    pub fn new(geometry: &ArrayGeometry, emitter: usize, receiver: usize, config: LinkConfig) -> Result<Self, LinkError> {
        Self::from_points(
            geometry.dim,
            geometry.emitters[emitter],
            geometry.receivers[receiver],
            geometry.center,
            geometry.radius,
            config,
        )
    }

    pub fn from_points(
        dim: usize,
        emitter: Point,
        receiver: Point,
        center: Point,
        radius: f64,
        config: LinkConfig,
    ) -> Result<Self, LinkError> {
        if !(config.tolerance > 0.0) {
            return Err(LinkError::Invalid("tolerance must be positive".into()));
        }
        if dim != 2 && dim != 3 {
            return Err(LinkError::Invalid(format!("dimension {dim}")));
        }
        if (receiver - emitter).norm() <= 1e-9 * radius {
            return Err(LinkError::Coincident);
        }
        let aim = (receiver - emitter).normalize();
        let u = orthogonal_part(&(center - emitter), &aim);
        let launch = [aim, u, aim.cross(&u)];
        let pole = (receiver - center).normalize();
        let t1 = orthogonal_part(&(emitter - center), &pole);
        let target = [pole, t1, pole.cross(&t1)];
        Ok(Self { dim, emitter, receiver, center, radius, config, launch, target })
    }

    /// Straight-line aim at the receiver.
    pub fn aim(&self) -> AngleParam {
        match self.dim {
            2 => AngleParam::planar(self.launch[0].y.atan2(self.launch[0].x)),
            _ => AngleParam::spherical(0.0, PI / 2.0),
        }
    }

    pub fn direction(&self, angles: &AngleParam) -> Point {
        match *angles {
            AngleParam::Planar { theta } => Point::new(theta.cos(), theta.sin(), 0.0),
            AngleParam::Spherical { phi, theta } => {
                let [w, u, v] = self.launch;
                theta.sin() * phi.cos() * w + theta.sin() * phi.sin() * u + theta.cos() * v
            }
        }
    }

    fn inward(&self) -> Point {
        (self.center - self.emitter).normalize()
    }

    /// Clamp a 2D launch angle to inward directions.
    fn clamp_planar(&self, theta: f64) -> f64 {
        let n = self.inward();
        let normal = n.y.atan2(n.x);
        normal + wrap_angle(theta - normal).clamp(-MAX_LAUNCH_TILT, MAX_LAUNCH_TILT)
    }

    /// Angular coordinates of `hit` relative to the receiver, seen from the centre.
    pub fn chart(&self, hit: &Point) -> [f64; 2] {
        let h = hit - self.center;
        let [pole, t1, t2] = self.target;
        match self.dim {
            2 => {
                let cross = pole.x * h.y - pole.y * h.x;
                [cross.atan2(pole.dot(&h)), 0.0]
            }
            _ => {
                let hn = h.normalize();
                [hn.dot(&t1).atan2(hn.dot(&pole)), hn.dot(&t2).clamp(-1.0, 1.0).asin()]
            }
        }
    }

    /// Where the straight line from the emitter along `d` leaves the detection surface.
    pub fn straight_interception(&self, d: &Point) -> Point {
        let w = self.emitter - self.center;
        let b = w.dot(d);
        let c = w.norm_squared() - self.radius * self.radius;
        let t = -b + (b * b - c).max(0.0).sqrt();
        self.emitter + t * d
    }

    /// Residual of the straight ray; the homogeneous-medium model.
    pub fn straight_residual(&self, angles: &AngleParam) -> [f64; 2] {
        self.chart(&self.straight_interception(&self.direction(angles)))
    }

    /// Jacobian of the straight-ray residual with respect to the 3D pair-frame angles.
    pub fn straight_jacobian(&self, angles: &AngleParam) -> Matrix2<f64> {
        let [phi, theta] = angles.to_array();
        let h = 1e-6;
        let g = |p: f64, t: f64| {
            let r = self.straight_residual(&AngleParam::Spherical { phi: p, theta: t });
            Vector2::new(r[0], r[1])
        };
        let c0 = (g(phi + h, theta) - g(phi - h, theta)) / (2.0 * h);
        let c1 = (g(phi, theta + h) - g(phi, theta - h)) / (2.0 * h);
        Matrix2::from_columns(&[c0, c1])
    }

    fn stop(&self) -> StopCondition {
        StopCondition::Surface { center: self.center, radius: self.radius }
    }
}

/// One shooting attempt.
#[derive(Debug, Clone)]
pub struct Shot {
    pub angles: AngleParam,
    pub trajectory: Trajectory,
    /// NaN when the ray never reached the detection surface.
    pub residual: [f64; 2],
    /// Interception-to-receiver distance (infinite when not captured).
    pub miss: f64,
}

impl Shot {
    pub fn captured(&self) -> bool {
        self.trajectory.termination == Termination::ReceiverCapture
    }
}

/// Trace from the emitter with `angles` and measure the interception residual.
pub fn link_residual<S: FieldSampler + ?Sized>(
    sampler: &S,
    problem: &LinkProblem,
    angles: AngleParam,
) -> Result<Shot, LinkError> {
    let d = problem.direction(&angles);
    let traj = trace(sampler, RayState::new(problem.emitter, d), &problem.config.trace, &problem.stop())?;
    let (residual, miss) = if traj.termination == Termination::ReceiverCapture {
        let hit = traj.end();
        (problem.chart(&hit), (hit - problem.receiver).norm())
    } else {
        ([f64::NAN; 2], f64::INFINITY)
    };
    Ok(Shot { angles, trajectory: traj, residual, miss })
}

/// Outcome of a root finder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Root<T> {
    pub x: T,
    /// Function evaluations after the first.
    pub iterations: usize,
    pub converged: bool,
}

/// Secant iteration on a scalar residual. `f` returns `None` for a non-finite
/// residual and `(g, done)` otherwise.
pub fn secant<F>(mut f: F, x0: f64, x1: f64, max_iter: usize) -> Result<Root<f64>, LinkError>
where
    F: FnMut(f64) -> Option<(f64, bool)>,
{
    let (mut g0, done) = f(x0).ok_or(LinkError::NonFinite)?;
    if done {
        return Ok(Root { x: x0, iterations: 0, converged: true });
    }
    let (mut x0, mut x1) = (x0, x1);
    let (mut g1, done) = f(x1).ok_or(LinkError::NonFinite)?;
    let mut it = 1;
    if done {
        return Ok(Root { x: x1, iterations: it, converged: true });
    }
    let mut retried = false;
    while it < max_iter {
        let denom = g1 - g0;
        if denom.abs() < 1e-14 {
            if retried {
                return Err(LinkError::FlatSecant);
            }
            retried = true;
            x0 = x1 + 1e-3 * (1.0 + x1.abs());
            let (g, done) = f(x0).ok_or(LinkError::NonFinite)?;
            it += 1;
            if done {
                return Ok(Root { x: x0, iterations: it, converged: true });
            }
            g0 = g;
            continue;
        }
        let mut x2 = x1 - g1 * (x1 - x0) / denom;
        let mut e = f(x2);
        it += 1;
        // back off toward the last good point while the ray misses the surface
        let mut tries = 0;
        while e.is_none() && tries < 5 && it < max_iter {
            x2 = 0.5 * (x1 + x2);
            e = f(x2);
            it += 1;
            tries += 1;
        }
        let (g2, done) = e.ok_or(LinkError::NonFinite)?;
        if done {
            return Ok(Root { x: x2, iterations: it, converged: true });
        }
        (x0, g0, x1, g1) = (x1, g1, x2, g2);
    }
    Ok(Root { x: x1, iterations: it, converged: false })
}

/// Illinois-modified regula falsi on a sign-changing bracket `[a, b]`.
pub fn regula_falsi<F>(mut f: F, a: f64, b: f64, max_iter: usize, xtol: f64) -> Result<Root<f64>, LinkError>
where
    F: FnMut(f64) -> Option<(f64, bool)>,
{
    let (mut ga, done) = f(a).ok_or(LinkError::NonFinite)?;
    if done {
        return Ok(Root { x: a, iterations: 0, converged: true });
    }
    let (mut gb, done) = f(b).ok_or(LinkError::NonFinite)?;
    if done {
        return Ok(Root { x: b, iterations: 1, converged: true });
    }
    if ga * gb > 0.0 {
        return Err(LinkError::SameSign(ga, gb));
    }
    let (mut a, mut b) = (a, b);
    let mut it = 1;
    while it < max_iter {
        let c = (a * gb - b * ga) / (gb - ga);
        let (gc, done) = f(c).ok_or(LinkError::NonFinite)?;
        it += 1;
        if done {
            return Ok(Root { x: c, iterations: it, converged: true });
        }
        if gc * gb < 0.0 {
            a = b;
            ga = gb;
        } else {
            ga *= 0.5;
        }
        b = c;
        gb = gc;
        if (b - a).abs() < xtol {
            return Ok(Root { x: b, iterations: it, converged: true });
        }
    }
    Ok(Root { x: b, iterations: it, converged: false })
}

/// Good Broyden iteration on a 2-vector residual, one evaluation per update.
/// A singular estimate is reset to `j0`.
pub fn broyden<F>(mut f: F, u0: Vector2<f64>, j0: Matrix2<f64>, max_iter: usize) -> Result<Root<Vector2<f64>>, LinkError>
where
    F: FnMut(Vector2<f64>) -> Option<(Vector2<f64>, bool)>,
{
    let solve = |j: &Matrix2<f64>, g: &Vector2<f64>| -> Option<Vector2<f64>> {
        let scale = j.norm_squared();
        if !(j.determinant().abs() > 1e-14 * scale) {
            return None;
        }
        j.try_inverse().map(|inv| -(inv * g))
    };
    let (mut g, done) = f(u0).ok_or(LinkError::NonFinite)?;
    if done {
        return Ok(Root { x: u0, iterations: 0, converged: true });
    }
    let mut u = u0;
    let mut j = j0;
    let mut it = 0;
    while it < max_iter {
        let du = match solve(&j, &g) {
            Some(du) => du,
            None => {
                j = j0;
                solve(&j, &g).ok_or(LinkError::Singular)?
            }
        };
        let mut step = du;
        let mut e = f(u + step);
        it += 1;
        let mut tries = 0;
        while e.is_none() && tries < 5 && it < max_iter {
            step *= 0.5;
            e = f(u + step);
            it += 1;
            tries += 1;
        }
        let (g1, done) = e.ok_or(LinkError::NonFinite)?;
        u += step;
        if done {
            return Ok(Root { x: u, iterations: it, converged: true });
        }
        let dg = g1 - g;
        let ss = step.norm_squared();
        if ss > 0.0 {
            j += (dg - j * step) * step.transpose() / ss;
        }
        g = g1;
    }
    Ok(Root { x: u, iterations: it, converged: false })
}

/// Linked ray for one pair.
#[derive(Debug, Clone)]
pub struct LinkResult {
    pub emitter: usize,
    pub receiver: usize,
    pub angles: AngleParam,
    /// Best ray found (smallest miss); `None` only if nothing could be traced.
    pub trajectory: Option<Trajectory>,
    pub residual: [f64; 2],
    pub miss: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Failure description for unconverged pairs.
    pub failure: Option<String>,
}

impl LinkResult {
    pub fn residual_norm(&self) -> f64 {
        self.residual[0].hypot(self.residual[1])
    }

    fn failed(emitter: usize, receiver: usize, angles: AngleParam, err: &LinkError) -> Self {
        Self {
            emitter,
            receiver,
            angles,
            trajectory: None,
            residual: [f64::NAN; 2],
            miss: f64::INFINITY,
            iterations: 0,
            converged: false,
            failure: Some(err.to_string()),
        }
    }
}

/// Tracks the closest shot seen while a root finder drives the residual.
struct Shooter<'a, S: ?Sized> {
    sampler: &'a S,
    problem: &'a LinkProblem,
    best: Option<Shot>,
    error: Option<LinkError>,
}

impl<'a, S: FieldSampler + ?Sized> Shooter<'a, S> {
    fn new(sampler: &'a S, problem: &'a LinkProblem) -> Self {
        Self { sampler, problem, best: None, error: None }
    }

    fn shoot(&mut self, angles: AngleParam) -> Option<[f64; 2]> {
        match link_residual(self.sampler, self.problem, angles) {
            Ok(shot) => {
                let r = shot.residual;
                if self.best.as_ref().is_none_or(|b| shot.miss < b.miss) {
                    self.best = Some(shot);
                }
                r[0].is_finite().then_some(r)
            }
            Err(e) => {
                self.error = Some(e);
                None
            }
        }
    }

    fn done(&self) -> bool {
        self.best.as_ref().is_some_and(|b| b.miss <= self.problem.config.tolerance)
    }

    fn finish(self, emitter: usize, receiver: usize, iterations: usize, failure: Option<LinkError>) -> LinkResult {
        let tolerance = self.problem.config.tolerance;
        match self.best {
            Some(shot) => {
                let converged = shot.miss <= tolerance;
                let failure = if converged {
                    None
                } else {
                    Some(failure.or(self.error).map_or_else(
                        || format!("miss {:.3e} m exceeds tolerance after {iterations} iterations", shot.miss),
                        |e| e.to_string(),
                    ))
                };
                LinkResult {
                    emitter,
                    receiver,
                    angles: shot.angles,
                    residual: shot.residual,
                    miss: shot.miss,
                    trajectory: Some(shot.trajectory),
                    iterations,
                    converged,
                    failure,
                }
            }
            None => {
                let err = failure.or(self.error).unwrap_or(LinkError::NonFinite);
                LinkResult { iterations, ..LinkResult::failed(emitter, receiver, self.problem.aim(), &err) }
            }
        }
    }
}

fn planar_theta(a: &AngleParam) -> f64 {
    a.to_array()[0]
}

/// 2D secant shooting from two seed angles.
pub fn link_secant<S: FieldSampler + ?Sized>(
    sampler: &S,
    problem: &LinkProblem,
    seeds: (AngleParam, AngleParam),
) -> LinkResult {
    let mut shooter = Shooter::new(sampler, problem);
    let (t0, t1) = (planar_theta(&seeds.0), planar_theta(&seeds.1));
    // unwrap the second seed next to the first so the secant sees a continuous variable
    let t1 = t0 + wrap_angle(t1 - t0);
    let res = secant(
        |t| {
            let r = shooter.shoot(AngleParam::planar(problem.clamp_planar(t)))?;
            Some((r[0], shooter.done()))
        },
        t0,
        t1,
        problem.config.max_iterations,
    );
    match res {
        Ok(root) => shooter.finish(0, 0, root.iterations, None),
        Err(e) => shooter.finish(0, 0, problem.config.max_iterations, Some(e)),
    }
}

/// 2D regula falsi shooting on a bracket of launch angles.
pub fn link_regula_falsi<S: FieldSampler + ?Sized>(
    sampler: &S,
    problem: &LinkProblem,
    bracket: (AngleParam, AngleParam),
) -> Result<LinkResult, LinkError> {
    let mut shooter = Shooter::new(sampler, problem);
    let a = planar_theta(&bracket.0);
    let b = a + wrap_angle(planar_theta(&bracket.1) - a);
    let res = regula_falsi(
        |t| {
            let r = shooter.shoot(AngleParam::planar(problem.clamp_planar(t)))?;
            Some((r[0], shooter.done()))
        },
        a,
        b,
        problem.config.max_iterations,
        1e-12,
    );
    match res {
        Ok(root) => Ok(shooter.finish(0, 0, root.iterations, None)),
        Err(e @ LinkError::SameSign(..)) => Err(e),
        Err(e) => Ok(shooter.finish(0, 0, problem.config.max_iterations, Some(e))),
    }
}

/// Regula falsi on the straight aim +-10 degrees, doubling the half-width up to three times.
pub fn link_regula_falsi_expanding<S: FieldSampler + ?Sized>(sampler: &S, problem: &LinkProblem) -> Result<LinkResult, LinkError> {
    let aim = planar_theta(&problem.aim());
    let mut half = 10f64.to_radians();
    let mut spent = 0;
    for _ in 0..4 {
        let bracket = (AngleParam::planar(aim - half), AngleParam::planar(aim + half));
        match link_regula_falsi(sampler, problem, bracket) {
            Ok(mut r) => {
                r.iterations += spent;
                return Ok(r);
            }
            Err(LinkError::SameSign(..) | LinkError::NonFinite) => spent += 2,
            Err(e) => return Err(e),
        }
        half *= 2.0;
    }
    Err(LinkError::Unbracketed)
}

/// 3D good-Broyden shooting from `start`, one trace per update.
pub fn link_broyden<S: FieldSampler + ?Sized>(sampler: &S, problem: &LinkProblem, start: AngleParam) -> LinkResult {
    let mut shooter = Shooter::new(sampler, problem);
    let u0 = Vector2::from(start.to_array());
    let j0 = problem.straight_jacobian(&start);
    let res = broyden(
        |u| {
            let angles = AngleParam::spherical(u[0], u[1]);
            if problem.direction(&angles).dot(&problem.inward()) < MAX_LAUNCH_TILT.cos() {
                return None;
            }
            let r = shooter.shoot(angles)?;
            Some((Vector2::from(r), shooter.done()))
        },
        u0,
        j0,
        problem.config.max_iterations,
    );
    match res {
        Ok(root) => shooter.finish(0, 0, root.iterations, None),
        Err(e) => shooter.finish(0, 0, problem.config.max_iterations, Some(e)),
    }
}

/// Link one pair, warm-starting from `warm` when given.
///
/// 2D runs the configured method (secant falls back to an expanding regula
/// falsi bracket when it fails); 3D runs Broyden.
pub fn link_pair<S: FieldSampler + ?Sized>(sampler: &S, problem: &LinkProblem, warm: Option<AngleParam>) -> LinkResult {
    let start = warm.unwrap_or_else(|| problem.aim());
    if problem.dim == 3 {
        return link_broyden(sampler, problem, start);
    }
    let second = AngleParam::planar(planar_theta(&start) + 0.5f64.to_radians());
    match problem.config.method {
        LinkMethod::Secant => {
            let first = link_secant(sampler, problem, (start, second));
            if first.converged {
                return first;
            }
            match link_regula_falsi_expanding(sampler, problem) {
                Ok(mut r) => {
                    r.iterations += first.iterations + 1;
                    if r.converged || r.miss < first.miss {
                        r
                    } else {
                        LinkResult { iterations: r.iterations, ..first }
                    }
                }
                Err(_) => first,
            }
        }
        LinkMethod::RegulaFalsi => match link_regula_falsi_expanding(sampler, problem) {
            Ok(r) => r,
            Err(e) => LinkResult::failed(0, 0, start, &e),
        },
    }
}

/// Link every emitter-receiver pair; results are in pair order `e * n_r + r`.
///
/// Homogeneous media short-circuit to the straight aim with zero iterations.
/// `warm` holds per-pair starting angles from an earlier linking.
pub fn link_all<S: FieldSampler + ?Sized>(
    geometry: &ArrayGeometry,
    sampler: &S,
    config: &LinkConfig,
    warm: Option<&[Option<AngleParam>]>,
) -> Vec<LinkResult> {
    let uniform = sampler.is_uniform();
    (0..geometry.pair_count())
        .into_par_iter()
        .map(|p| {
            let (e, r) = geometry.pair(p);
            let problem = match LinkProblem::new(geometry, e, r, *config) {
                Ok(pr) => pr,
                Err(err) => {
                    let dummy = if geometry.dim == 2 { AngleParam::planar(0.0) } else { AngleParam::spherical(0.0, PI / 2.0) };
                    return LinkResult::failed(e, r, dummy, &err);
                }
            };
            let mut out = if uniform {
                let mut shooter = Shooter::new(sampler, &problem);
                shooter.shoot(problem.aim());
                shooter.finish(e, r, 0, None)
            } else {
                link_pair(sampler, &problem, warm.and_then(|w| w.get(p).copied().flatten()))
            };
            out.emitter = e;
            out.receiver = r;
            out
        })
        .collect()
}

/// Fraction of converged pairs.
pub fn converged_fraction(results: &[LinkResult]) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    results.iter().filter(|r| r.converged).count() as f64 / results.len() as f64
}

/// Median iteration count over all pairs.
pub fn median_iterations(results: &[LinkResult]) -> f64 {
    let mut it: Vec<usize> = results.iter().map(|r| r.iterations).collect();
    if it.is_empty() {
        return 0.0;
    }
    it.sort_unstable();
    let n = it.len();
    if n % 2 == 1 {
        it[n / 2] as f64
    } else {
        0.5 * (it[n / 2 - 1] + it[n / 2]) as f64
    }
}

/// Converged angles as a warm-start table.
pub fn warm_table(results: &[LinkResult]) -> Vec<Option<AngleParam>> {
    results.iter().map(|r| r.converged.then_some(r.angles)).collect()
}
