//! Ray Jacobians and ray-approximated Green's function parameters.
//!
//! A paraxial ray is the first-order perturbation `(dx, dd)` of a reference
//! ray under a perturbation of its launch direction. It obeys the
//! linearisation of the tracer's right-hand side `f(x, d)`:
//!
//! ```text
//! dx' = dd
//! dd' = [P (H dx) - f (g . dx)] / n  -  [(g . dd) d + (g . d) dd] / n
//! ```
//!
//! with `g`, `H` the gradient and Hessian of `n` and `P` the projection
//! orthogonal to `d`. After every step the perturbation is re-referenced to
//! the transverse plane of the reference ray, so `dx . d = 0`.

use crate::field::{FieldError, FieldSampler};
use crate::linker::perpendicular;
use crate::tracer::{integrate_cumulative, trace_steps, RayState, StepAlgorithm, Trajectory};
use crate::Point;
use num_complex::Complex64;
use std::f64::consts::FRAC_PI_2;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ParaxialError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Trace(#[from] crate::tracer::TraceError),
    #[error("paraxial tracing needs field Hessians; use the B-spline backend")]
    UnsupportedBackend,
    #[error("sample {0} lies on a caustic (J = 0); use a neighbouring sample")]
    Caustic(usize),
    #[error("negative absorption coefficient {value} at sample {index}")]
    NegativeAbsorption { index: usize, value: f64 },
    #[error("reference ray has fewer than two samples")]
    TooShort,
}

/// Position and direction perturbation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParaxialState {
    pub dx: Point,
    pub dd: Point,
}

impl ParaxialState {
    /// Point source: no position offset, direction perturbed by `dd`.
    pub fn point_source(dd: Point) -> Self {
        Self { dx: Point::zeros(), dd }
    }
}

/// Linearised right-hand side at one reference sample.
struct Linearisation {
    n: f64,
    g: Point,
    h: crate::Hessian,
    d: Point,
    f: Point,
}

impl Linearisation {
    fn at<S: FieldSampler + ?Sized>(sampler: &S, x: &Point, d: &Point) -> Result<Self, ParaxialError> {
        let s = sampler.sample(x)?;
        let h = s.hessian.ok_or(ParaxialError::UnsupportedBackend)?;
        let (n, g) = (s.value, s.gradient);
        let f = (g - g.dot(d) * d) / n;
        Ok(Self { n, g, h, d: *d, f })
    }

    fn apply(&self, p: &ParaxialState) -> ParaxialState {
        let Self { n, g, h, d, f } = self;
        let hx = h * p.dx;
        let ddx = (hx - d.dot(&hx) * d - f * g.dot(&p.dx)) / *n;
        let ddd = -(g.dot(&p.dd) * d + g.dot(d) * p.dd) / *n;
        ParaxialState { dx: p.dd, dd: ddx + ddd }
    }

    /// Shift the perturbation along the reference ray so it lies in the transverse plane.
    fn transverse(&self, p: &mut ParaxialState) {
        let alpha = p.dx.dot(&self.d);
        p.dx -= alpha * self.d;
        p.dd -= alpha * self.f;
        p.dd -= p.dd.dot(&self.d) * self.d;
    }
}

/// Heun integration of the paraxial system over the reference samples.
pub fn trace_paraxial<S: FieldSampler + ?Sized>(
    sampler: &S,
    reference: &Trajectory,
    init: ParaxialState,
) -> Result<Vec<ParaxialState>, ParaxialError> {
    let lin = linearisations(sampler, reference)?;
    Ok(propagate(&lin, reference, init))
}

fn linearisations<S: FieldSampler + ?Sized>(sampler: &S, reference: &Trajectory) -> Result<Vec<Linearisation>, ParaxialError> {
    if reference.len() < 2 {
        return Err(ParaxialError::TooShort);
    }
    reference
        .samples
        .iter()
        .zip(&reference.directions)
        .map(|(x, d)| Linearisation::at(sampler, x, d))
        .collect()
}

fn propagate(lin: &[Linearisation], reference: &Trajectory, init: ParaxialState) -> Vec<ParaxialState> {
    let mut out = Vec::with_capacity(lin.len());
    let mut p = init;
    lin[0].transverse(&mut p);
    out.push(p);
    for m in 0..lin.len() - 1 {
        let h = reference.arc[m + 1] - reference.arc[m];
        let k1 = lin[m].apply(&p);
        let pred = ParaxialState { dx: p.dx + h * k1.dx, dd: p.dd + h * k1.dd };
        let k2 = lin[m + 1].apply(&pred);
        p = ParaxialState { dx: p.dx + 0.5 * h * (k1.dx + k2.dx), dd: p.dd + 0.5 * h * (k1.dd + k2.dd) };
        lin[m + 1].transverse(&mut p);
        out.push(p);
    }
    out
}

/// Ray Jacobian along a ray, per unit launch angle (per steradian in 3D).
#[derive(Debug, Clone, PartialEq)]
pub struct RayJacobian {
    pub arc: Vec<f64>,
    pub j: Vec<f64>,
    /// Set when an auxiliary ray left the grid before the reference ray ended.
    pub truncated: bool,
}

/// Signed transverse spreading from one (2D) or two (3D) perturbation fields.
pub fn jacobian_from_states(reference: &Trajectory, solutions: &[&[ParaxialState]]) -> RayJacobian {
    let m = solutions.iter().map(|s| s.len()).min().unwrap_or(0).min(reference.len());
    let j = (0..m)
        .map(|i| {
            let d = reference.directions[i];
            match solutions {
                [a] => d.cross(&a[i].dx).z,
                [a, b] => a[i].dx.cross(&b[i].dx).dot(&d),
                _ => f64::NAN,
            }
        })
        .collect();
    RayJacobian { arc: reference.arc[..m].to_vec(), j, truncated: m < reference.len() }
}

/// Unit transverse launch perturbations: one in 2D (left-hand normal), two in 3D.
fn launch_basis(d0: &Point, dim: usize) -> Vec<Point> {
    if dim == 2 {
        vec![Point::new(-d0.y, d0.x, 0.0)]
    } else {
        let e1 = perpendicular(d0);
        vec![e1, d0.cross(&e1)]
    }
}

/// Ray Jacobian from point-source paraxial rays.
pub fn ray_jacobian_paraxial<S: FieldSampler + ?Sized>(sampler: &S, reference: &Trajectory) -> Result<RayJacobian, ParaxialError> {
    let lin = linearisations(sampler, reference)?;
    let sols: Vec<Vec<ParaxialState>> = launch_basis(&reference.directions[0], sampler.dim())
        .into_iter()
        .map(|e| propagate(&lin, reference, ParaxialState::point_source(e)))
        .collect();
    let refs: Vec<&[ParaxialState]> = sols.iter().map(|s| s.as_slice()).collect();
    Ok(jacobian_from_states(reference, &refs))
}

/// Ray Jacobian from auxiliary rays launched at `+-dtheta` about the reference
/// direction and traced with the reference step sizes (two rays in 2D, four in 3D).
pub fn ray_jacobian_auxiliary<S: FieldSampler + ?Sized>(
    sampler: &S,
    reference: &Trajectory,
    dtheta: f64,
    algorithm: StepAlgorithm,
) -> Result<RayJacobian, ParaxialError> {
    if reference.len() < 2 {
        return Err(ParaxialError::TooShort);
    }
    let x0 = reference.samples[0];
    let d0 = reference.directions[0];
    let gaps: Vec<f64> = reference.arc.windows(2).map(|w| w[1] - w[0]).collect();
    let mut fields: Vec<Vec<ParaxialState>> = Vec::new();
    for e in launch_basis(&d0, sampler.dim()) {
        let launch = |sign: f64| {
            let d = d0 * dtheta.cos() + sign * e * dtheta.sin();
            trace_steps(sampler, RayState::new(x0, d), &gaps, algorithm)
        };
        let (plus, minus) = (launch(1.0)?, launch(-1.0)?);
        let m = plus.len().min(minus.len());
        let field = (0..m)
            .map(|i| {
                let d = reference.directions[i];
                let mut dx = (plus.samples[i] - minus.samples[i]) / (2.0 * dtheta);
                dx -= dx.dot(&d) * d;
                ParaxialState { dx, dd: Point::zeros() }
            })
            .collect();
        fields.push(field);
    }
    let refs: Vec<&[ParaxialState]> = fields.iter().map(|s| s.as_slice()).collect();
    Ok(jacobian_from_states(reference, &refs))
}

/// Linear interpolation of `values` at arc length `s` (clamped to the ends).
fn interp_at(arc: &[f64], values: &[f64], s: f64) -> f64 {
    let k = arc.partition_point(|&a| a < s);
    if k == 0 {
        return values[0];
    }
    if k >= arc.len() {
        return values[arc.len() - 1];
    }
    let t = (s - arc[k - 1]) / (arc[k] - arc[k - 1]);
    values[k - 1] + t * (values[k] - values[k - 1])
}

/// `A(s) = sqrt(n(s_ref) J(s_ref) / (n(s) J(s)))`, infinite where `J = 0`.
pub fn geometric_amplitude(jacobian: &RayJacobian, n: &[f64], s_ref: f64) -> Vec<f64> {
    let nj: Vec<f64> = jacobian.j.iter().zip(n).map(|(j, n)| (n * j).abs()).collect();
    let reference = interp_at(&jacobian.arc, &nj, s_ref);
    nj.iter().map(|&v| if v == 0.0 { f64::INFINITY } else { (reference / v).sqrt() }).collect()
}

/// Running count of sign changes of `J`; zeros do not count as a sign.
pub fn caustic_count(j: &[f64]) -> Vec<u32> {
    let mut last = 0.0f64;
    let mut count = 0;
    j.iter()
        .map(|&v| {
            if v != 0.0 {
                if last != 0.0 && v.signum() != last.signum() {
                    count += 1;
                }
                last = v;
            }
            count
        })
        .collect()
}

/// `phi = omega T - kappa pi / 2`.
pub fn accumulate_phase(travel_time: &[f64], kappa: &[u32], omega: f64) -> Vec<f64> {
    travel_time.iter().zip(kappa).map(|(t, k)| omega * t - *k as f64 * FRAC_PI_2).collect()
}

/// Running trapezoidal `int alpha0 ds`; negative coefficients are rejected.
pub fn absorption_integral<S: FieldSampler + ?Sized>(traj: &Trajectory, alpha0: &S) -> Result<Vec<f64>, ParaxialError> {
    let mut values = Vec::with_capacity(traj.len());
    for (index, x) in traj.samples.iter().enumerate() {
        let value = alpha0.value(x)?;
        if value < 0.0 {
            return Err(ParaxialError::NegativeAbsorption { index, value });
        }
        values.push(value);
    }
    Ok(integrate_cumulative(&traj.arc, &values))
}

/// `A_abs(s) = exp(-omega^y int alpha0 ds)`.
pub fn accumulate_absorption<S: FieldSampler + ?Sized>(
    traj: &Trajectory,
    alpha0: &S,
    y: f64,
    omega: f64,
) -> Result<Vec<f64>, ParaxialError> {
    let w = omega.powf(y);
    Ok(absorption_integral(traj, alpha0)?.into_iter().map(|i| (-w * i).exp()).collect())
}

/// Per-sample Green's function parameters along one ray.
#[derive(Debug, Clone, PartialEq)]
pub struct GreensParams {
    pub arc: Vec<f64>,
    /// Travel time from the first sample (s).
    pub travel_time: Vec<f64>,
    pub jacobian: Vec<f64>,
    pub amplitude: Vec<f64>,
    /// `int alpha0 ds`.
    pub attenuation: Vec<f64>,
    pub caustics: Vec<u32>,
    pub s_ref: f64,
    pub y: f64,
}

impl GreensParams {
    pub fn len(&self) -> usize {
        self.arc.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arc.is_empty()
    }

    pub fn phase(&self, omega: f64) -> Vec<f64> {
        accumulate_phase(&self.travel_time, &self.caustics, omega)
    }

    pub fn absorption(&self, omega: f64) -> Vec<f64> {
        let w = omega.powf(self.y);
        self.attenuation.iter().map(|i| (-w * i).exp()).collect()
    }
}

/// Green's function parameters along `reference`, which must have been traced
/// in (a field proportional to) `slowness`. `slowness` needs Hessians.
pub fn greens_params<S: FieldSampler + ?Sized>(
    reference: &Trajectory,
    slowness: &S,
    alpha0: Option<&dyn FieldSampler>,
    s_ref: f64,
    y: f64,
) -> Result<GreensParams, ParaxialError> {
    let jac = ray_jacobian_paraxial(slowness, reference)?;
    let n: Vec<f64> = reference.samples.iter().map(|x| slowness.value(x)).collect::<Result<_, _>>()?;
    let travel_time = integrate_cumulative(&reference.arc, &n);
    let attenuation = match alpha0 {
        Some(a) => absorption_integral(reference, a)?,
        None => vec![0.0; reference.len()],
    };
    let amplitude = geometric_amplitude(&jac, &n, s_ref);
    let caustics = caustic_count(&jac.j);
    Ok(GreensParams { arc: jac.arc, travel_time, jacobian: jac.j, amplitude, attenuation, caustics, s_ref, y })
}

/// Parameters for the same ray walked from the receiver back to the emitter.
///
/// Travel time and attenuation restart at the receiver and the Jacobian comes
/// from a paraxial ray re-traced along the reversed path.
pub fn reverse_ray<S: FieldSampler + ?Sized>(
    reference: &Trajectory,
    forward: &GreensParams,
    slowness: &S,
    alpha0: Option<&dyn FieldSampler>,
) -> Result<(Trajectory, GreensParams), ParaxialError> {
    let back = reference.reversed();
    let params = greens_params(&back, slowness, alpha0, forward.s_ref, forward.y)?;
    Ok((back, params))
}

/// `A_geom A_abs exp(i phi)` at sample `index`.
pub fn greens_value(params: &GreensParams, index: usize, omega: f64) -> Result<Complex64, ParaxialError> {
    let a = params.amplitude[index];
    if params.jacobian[index] == 0.0 || !a.is_finite() {
        return Err(ParaxialError::Caustic(index));
    }
    let phase = omega * params.travel_time[index] - params.caustics[index] as f64 * FRAC_PI_2;
    let abs = (-omega.powf(params.y) * params.attenuation[index]).exp();
    Ok(Complex64::from_polar(a * abs, phase))
}
