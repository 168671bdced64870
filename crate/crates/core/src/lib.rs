//! Bent-ray transmission ultrasound tomography.
//!
//! The crate is organised bottom-up:
//!
//! - [`field`]: regular-grid scalar fields with bilinear and cubic B-spline
//!   interpolation (values, gradients, Hessians) and the binary/CSV field formats.
//! - [`phantom`]: analytic media (Maxwell fish-eye lens, homogeneous water,
//!   Gaussian inclusions) and their exact reference quantities.
//! - [`tracer`]: off-grid ray integration with four stepping schemes, trapezoidal
//!   acoustic length / travel time, and ray-to-grid system-matrix rows.
//! - [`linker`]: two-point ray linking by shooting (secant, regula falsi, Broyden).
//! - [`paraxial`]: ray Jacobians from paraxial or auxiliary rays and the
//!   ray-approximated Green's function parameters.
//! - [`tof`]: iteratively linearised time-of-flight inversion with SART or CGLS.
//! - [`validate`]: fish-eye accuracy experiments (radius and acoustic-length deviation).

pub mod field;
pub mod linker;
pub mod paraxial;
pub mod phantom;
pub mod tof;
pub mod tracer;
pub mod validate;

/// Cartesian position or direction. Two-dimensional quantities keep `z = 0`.
pub type Point = nalgebra::Vector3<f64>;

/// Symmetric second-derivative matrix; the unused rows/columns are zero in 2D.
pub type Hessian = nalgebra::Matrix3<f64>;

pub use field::{Backend, FieldKind, FieldSampler, GridSpec, InterpSample, Interpolator, ScalarField};
pub use tracer::{RayState, StepAlgorithm, Trajectory};
