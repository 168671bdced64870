//! Fish-eye accuracy experiments.
//!
//! Every ray launched in the Maxwell fish-eye lens is an exact circle, so the
//! gridded tracer can be scored against closed forms:
//!
//! - radius runs trace closed loops and report the mean relative deviation of
//!   the distance to the analytic circle centre (`RE_rd`, percent);
//! - length runs trace between conjugate points and report the relative error
//!   of the acoustic length (`RE_al`, percent, signed).
//!
//! The grid spacing is one degree of arc on the lens, `dx = 2 pi a / 360`.

use crate::field::{Backend, FieldError, GridSpec, Interpolator};
use crate::phantom::{fisheye_reference, rasterize, Experiment, FisheyeAnalytic, Phantom};
use crate::tracer::{trace, RayState, StepAlgorithm, StopCondition, Termination, TraceConfig, TraceError, Trajectory};
use crate::Point;
use rayon::prelude::*;
use std::f64::consts::PI;
use std::io::Write;

/// Rays per 3D experiment, spread over a full turn about the launch normal.
pub const RAYS_3D: usize = 21;
/// Rays in the 2D length experiment, launched within `pi/3` of the axis.
pub const RAYS_2D_LENGTH: usize = 101;
/// Grid margin around the analytic trajectories, in grid spacings.
pub const MARGIN: f64 = 12.0;

pub const DEFAULT_RATIOS: [f64; 6] = [4.0, 2.0, 1.0, 0.5, 0.25, 0.125];

/// `mean_m |(|x_m - c| - R)| / R`, in percent.
pub fn radius_deviation(samples: &[Point], center: &Point, r_true: f64) -> f64 {
    let sum: f64 = samples.iter().map(|x| ((x - center).norm() - r_true).abs() / r_true).sum();
    100.0 * sum / samples.len() as f64
}

/// `(L - L_true) / L_true`, in percent.
pub fn length_deviation(length: f64, l_true: f64) -> f64 {
    100.0 * (length - l_true) / l_true
}

#[derive(Debug, Clone, PartialEq)]
pub struct RayOutcome {
    pub index: usize,
    /// Per-ray `RE_rd` or `RE_al` (percent); `None` for failed rays.
    pub metric: Option<f64>,
    pub termination: Termination,
    pub samples: usize,
    pub acoustic_length: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricResult {
    pub dim: usize,
    pub experiment: Experiment,
    pub algorithm: StepAlgorithm,
    pub ratio: f64,
    /// Mean over the successful rays (percent).
    pub value: f64,
    pub rays: Vec<RayOutcome>,
}

impl MetricResult {
    pub fn ray_count(&self) -> usize {
        self.rays.len()
    }

    pub fn failures(&self) -> Vec<usize> {
        self.rays.iter().filter(|r| r.metric.is_none()).map(|r| r.index).collect()
    }
}

/// Rasterised lens plus its analytic references, shared by all runs of one experiment.
pub struct FisheyeBench {
    pub dim: usize,
    pub experiment: Experiment,
    pub n0: f64,
    pub dx: f64,
    pub reference: FisheyeAnalytic,
    pub field: Interpolator,
}

impl FisheyeBench {
    pub fn new(dim: usize, a: f64, n0: f64, experiment: Experiment, backend: Backend) -> Result<Self, FieldError> {
        if dim != 2 && dim != 3 {
            return Err(FieldError::InvalidGrid(format!("dimension {dim}")));
        }
        let reference = fisheye_reference(dim, a, n0, experiment);
        let dx = 2.0 * PI * a / 360.0;
        let (lo, hi) = reference.bounds;
        let m = Point::repeat(MARGIN * dx);
        let (lo, hi) = (lo - m, hi + m);
        let spec = GridSpec::covering(dim, &lo.as_slice()[..dim], &hi.as_slice()[..dim], dx)?;
        let field = Interpolator::new(rasterize(&Phantom::FishEye { a, n0 }, spec)?, backend);
        Ok(Self { dim, experiment, n0, dx, reference, field })
    }

    /// Launch states of the experiment.
    pub fn launches(&self) -> Vec<RayState> {
        let r = &self.reference;
        match (self.dim, self.experiment) {
            // clockwise about the centre (a, 0)
            (2, Experiment::Radius) => vec![RayState::new(r.start, Point::new(1.0, 1.0, 0.0))],
            (2, Experiment::Length) => (0..RAYS_2D_LENGTH)
                .map(|k| {
                    let t = -PI / 3.0 + 2.0 * PI / 3.0 * k as f64 / (RAYS_2D_LENGTH - 1) as f64;
                    RayState::new(r.start, Point::new(t.sin(), -t.cos(), 0.0))
                })
                .collect(),
            _ => {
                // normal to x_c - x_p, uniformly over a full turn
                let axis = (r.center - r.start).normalize();
                let e1 = Point::new(1.0, -1.0, 0.0).normalize();
                let e1 = (e1 - e1.dot(&axis) * axis).normalize();
                let e2 = axis.cross(&e1);
                (0..RAYS_3D)
                    .map(|k| {
                        let phi = 2.0 * PI * k as f64 / RAYS_3D as f64;
                        RayState::new(r.start, phi.cos() * e1 + phi.sin() * e2)
                    })
                    .collect()
            }
        }
    }

    fn stop(&self) -> StopCondition {
        match self.experiment {
            Experiment::Radius => StopCondition::ClosedLoop,
            Experiment::Length => StopCondition::Target { point: self.reference.target },
        }
    }

    /// Trace every launch at `ds = ratio * dx`.
    pub fn rays(&self, algorithm: StepAlgorithm, ratio: f64) -> Vec<Result<Trajectory, TraceError>> {
        let ds = ratio * self.dx;
        // a full loop is at most 2 pi r_true long
        let max_steps = (40.0 * PI * self.reference.r_true / ds).ceil() as usize + 16;
        let cfg = TraceConfig { ds, algorithm, max_steps };
        let stop = self.stop();
        self.launches().into_par_iter().map(|s| trace(&self.field, s, &cfg, &stop)).collect()
    }

    /// Run the bench's experiment for one algorithm and step ratio.
    pub fn run(&self, algorithm: StepAlgorithm, ratio: f64) -> MetricResult {
        let r = &self.reference;
        let want = match self.experiment {
            Experiment::Radius => Termination::ClosedLoop,
            Experiment::Length => Termination::ReceiverCapture,
        };
        let rays: Vec<RayOutcome> = self
            .rays(algorithm, ratio)
            .into_iter()
            .enumerate()
            .map(|(index, t)| match t {
                Ok(t) => {
                    let metric = (t.termination == want).then(|| match self.experiment {
                        Experiment::Radius => radius_deviation(&t.samples, &r.center, r.r_true),
                        Experiment::Length => length_deviation(t.acoustic_length, r.l_true),
                    });
                    RayOutcome { index, metric, termination: t.termination, samples: t.len(), acoustic_length: t.acoustic_length }
                }
                Err(_) => RayOutcome { index, metric: None, termination: Termination::BoundaryExit, samples: 0, acoustic_length: f64::NAN },
            })
            .collect();
        let ok: Vec<f64> = rays.iter().filter_map(|r| r.metric).collect();
        let value = if ok.is_empty() { f64::NAN } else { ok.iter().sum::<f64>() / ok.len() as f64 };
        MetricResult { dim: self.dim, experiment: self.experiment, algorithm, ratio, value, rays }
    }
}

/// One validation configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub dim: usize,
    pub experiment: Experiment,
    pub algorithms: Vec<StepAlgorithm>,
    pub ratios: Vec<f64>,
    pub a: f64,
    pub n0: f64,
}

impl ExperimentSpec {
    pub fn new(dim: usize, experiment: Experiment) -> Self {
        Self { dim, experiment, algorithms: StepAlgorithm::ALL.to_vec(), ratios: DEFAULT_RATIOS.to_vec(), a: 1.0, n0: 1.0 }
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        if self.dim != 2 && self.dim != 3 {
            return Err(FieldError::InvalidGrid(format!("dimension {}", self.dim)));
        }
        if self.ratios.is_empty() || self.ratios.iter().any(|r| !(*r > 0.0)) {
            return Err(FieldError::InvalidValues("ratios must be positive and nonempty".into()));
        }
        if self.algorithms.is_empty() {
            return Err(FieldError::InvalidValues("no algorithms requested".into()));
        }
        Ok(())
    }
}

/// Every (algorithm, ratio) combination, algorithm-major.
pub fn sweep(spec: &ExperimentSpec) -> Result<Vec<MetricResult>, FieldError> {
    spec.validate()?;
    let bench = FisheyeBench::new(spec.dim, spec.a, spec.n0, spec.experiment, Backend::BSpline)?;
    Ok(spec
        .algorithms
        .iter()
        .flat_map(|&alg| spec.ratios.iter().map(move |&r| (alg, r)))
        .map(|(alg, r)| bench.run(alg, r))
        .collect())
}

pub fn experiment_name(e: Experiment) -> &'static str {
    match e {
        Experiment::Radius => "radius",
        Experiment::Length => "length",
    }
}

/// `dim,experiment,algorithm,ratio,metric_percent,rays,failed`.
pub fn write_metrics_csv<W: Write>(w: W, results: &[MetricResult]) -> std::io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["dim", "experiment", "algorithm", "ratio", "metric_percent", "rays", "failed"])?;
    for r in results {
        out.write_record([
            r.dim.to_string(),
            experiment_name(r.experiment).to_string(),
            r.algorithm.name().to_string(),
            format!("{:.16e}", r.ratio),
            format!("{:.16e}", r.value),
            r.ray_count().to_string(),
            r.failures().len().to_string(),
        ])?;
    }
    out.flush()
}
