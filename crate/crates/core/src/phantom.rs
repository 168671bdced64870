//! Analytic media and their exact reference quantities.

use crate::field::{FieldError, FieldKind, GridSpec, InterpSample, ScalarField};
use crate::{Hessian, Point};
use std::f64::consts::PI;

/// Gaussian sound-speed inclusion `amplitude * exp(-|x - center|^2 / (2 sigma^2))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub center: Point,
    pub sigma: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Phantom {
    /// Maxwell fish-eye lens, refractive index `n0 / (1 + (r / a)^2)`.
    FishEye { a: f64, n0: f64 },
    /// Uniform sound speed (m/s).
    Homogeneous { c0: f64 },
    /// Background sound speed plus weak Gaussian inclusions.
    Blobs { c0: f64, blobs: Vec<Blob> },
}

impl Phantom {
    pub fn validate(&self) -> Result<(), FieldError> {
        let bad = |m: String| Err(FieldError::InvalidValues(m));
        match self {
            Phantom::FishEye { a, n0 } => {
                if !(*a > 0.0 && *n0 > 0.0) {
                    return bad(format!("fish-eye needs a > 0 and n0 > 0, got a = {a}, n0 = {n0}"));
                }
            }
            Phantom::Homogeneous { c0 } => {
                if !(*c0 > 0.0) {
                    return bad(format!("c0 must be positive, got {c0}"));
                }
            }
            Phantom::Blobs { c0, blobs } => {
                if !(*c0 > 0.0) {
                    return bad(format!("c0 must be positive, got {c0}"));
                }
                if blobs.iter().any(|b| !(b.sigma > 0.0) || !b.amplitude.is_finite()) {
                    return bad("blob widths must be positive and amplitudes finite".into());
                }
                let total: f64 = blobs.iter().map(|b| b.amplitude.abs()).sum();
                if total >= 0.5 * c0 {
                    return bad(format!("blob amplitudes (sum {total}) exceed the weak-contrast limit c0 / 2"));
                }
            }
        }
        Ok(())
    }

    pub fn kind(&self) -> FieldKind {
        match self {
            Phantom::FishEye { .. } => FieldKind::RefractiveIndex,
            _ => FieldKind::SoundSpeed,
        }
    }

    pub fn value(&self, x: &Point) -> f64 {
        match self {
            Phantom::FishEye { a, n0 } => fisheye_index(x, *a, *n0),
            Phantom::Homogeneous { c0 } => *c0,
            Phantom::Blobs { c0, blobs } => {
                c0 + blobs
                    .iter()
                    .map(|b| b.amplitude * (-(x - b.center).norm_squared() / (2.0 * b.sigma * b.sigma)).exp())
                    .sum::<f64>()
            }
        }
    }

    /// Closed-form value, gradient and Hessian restricted to the first `dim` axes.
    pub fn sample(&self, x: &Point, dim: usize) -> InterpSample {
        let (value, mut gradient, mut hessian) = match self {
            Phantom::FishEye { a, n0 } => {
                let a2 = a * a;
                let q = 1.0 + x.norm_squared() / a2;
                let n = n0 / q;
                let g = -2.0 * n0 / (a2 * q * q) * x;
                let h = 8.0 * n0 / (a2 * a2 * q * q * q) * (x * x.transpose())
                    - 2.0 * n0 / (a2 * q * q) * Hessian::identity();
                (n, g, h)
            }
            Phantom::Homogeneous { c0 } => (*c0, Point::zeros(), Hessian::zeros()),
            Phantom::Blobs { c0, blobs } => {
                let mut v = *c0;
                let mut g = Point::zeros();
                let mut h = Hessian::zeros();
                for b in blobs {
                    let r = x - b.center;
                    let s2 = b.sigma * b.sigma;
                    let e = b.amplitude * (-r.norm_squared() / (2.0 * s2)).exp();
                    v += e;
                    g -= e / s2 * r;
                    h += e * ((r * r.transpose()) / (s2 * s2) - Hessian::identity() / s2);
                }
                (v, g, h)
            }
        };
        for a in dim..3 {
            gradient[a] = 0.0;
            for b in 0..3 {
                hessian[(a, b)] = 0.0;
                hessian[(b, a)] = 0.0;
            }
        }
        InterpSample { value, gradient, hessian: Some(hessian) }
    }
}

/// Maxwell fish-eye refractive index.
pub fn fisheye_index(x: &Point, a: f64, n0: f64) -> f64 {
    n0 / (1.0 + x.norm_squared() / (a * a))
}

/// Nodal evaluation of `phantom` on `spec`.
pub fn rasterize(phantom: &Phantom, spec: GridSpec) -> Result<ScalarField, FieldError> {
    phantom.validate()?;
    ScalarField::from_fn(spec, phantom.kind(), |p| phantom.value(p))
}

/// Which fish-eye validation run a reference belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    /// Closed circular loops; deviation of the distance to the expected centre.
    Radius,
    /// Rays between conjugate points; deviation of the acoustic length.
    Length,
}

/// Exact quantities for the fish-eye validation runs.
#[derive(Debug, Clone, PartialEq)]
pub struct FisheyeAnalytic {
    pub dim: usize,
    pub a: f64,
    /// Expected distance of every ray point to `center`, `sqrt(dim) * a`.
    pub r_true: f64,
    /// Expected acoustic length from `start` to `target`, `n0 * a * (dim - 1) * pi / 2`.
    pub l_true: f64,
    /// Launch point `x_p`.
    pub start: Point,
    /// Expected centre `x_c` (radius runs) or axis reference point (length runs).
    pub center: Point,
    /// Interception point `p+`: the conjugate point in 2D, the launch point in 3D.
    pub target: Point,
    /// Bounding box of the analytic trajectories, without margin.
    pub bounds: (Point, Point),
}

pub fn fisheye_reference(dim: usize, a: f64, n0: f64, experiment: Experiment) -> FisheyeAnalytic {
    assert!(dim == 2 || dim == 3, "dimension must be 2 or 3");
    let r_true = (dim as f64).sqrt() * a;
    let l_true = n0 * a * (dim as f64 - 1.0) * PI / 2.0;
    let (start, center, target, bounds) = match (dim, experiment) {
        (2, Experiment::Radius) => {
            let c = Point::new(a, 0.0, 0.0);
            let r = Point::new(r_true, r_true, 0.0);
            (Point::new(0.0, a, 0.0), c, Point::new(0.0, a, 0.0), (c - r, c + r))
        }
        (2, Experiment::Length) => {
            // Arcs through (0, a) and (0, -a) launched within pi/3 of the axis;
            // the widest bulges to |x| = a (2 / sqrt(3) - 1 / sqrt(3)).
            let w = a / 3f64.sqrt();
            (
                Point::new(0.0, a, 0.0),
                Point::zeros(),
                Point::new(0.0, -a, 0.0),
                (Point::new(-w, -a, 0.0), Point::new(w, a, 0.0)),
            )
        }
        _ => {
            // All 3D rays lie on the sphere of radius sqrt(3) a about (a, a, 0).
            let c = Point::new(a, a, 0.0);
            let r = Point::repeat(r_true);
            let p = Point::new(0.0, 0.0, a);
            (p, c, p, (c - r, c + r))
        }
    };
    FisheyeAnalytic { dim, a, r_true, l_true, start, center, target, bounds }
}
