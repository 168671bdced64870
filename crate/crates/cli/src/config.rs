//! TOML run configuration. Relative paths resolve against the config file's directory.

use anyhow::{anyhow, bail, ensure, Context, Result};
use bentray::field::io::load_field;
use bentray::field::{Backend, FieldKind, GridSpec, ScalarField};
use bentray::linker::{ArrayGeometry, LinkConfig, LinkMethod};
use bentray::phantom::{rasterize, Blob, Experiment, Phantom};
use bentray::tof::{InversionConfig, Solver, TOF_TOLERANCE_FRACTION};
use bentray::tracer::{StepAlgorithm, TraceConfig};
use bentray::Point;
use serde::Deserialize;
use std::path::{Path, PathBuf};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub grid: Option<GridCfg>,
    pub medium: Option<MediumCfg>,
    pub array: Option<ArrayCfg>,
    #[serde(default)]
    pub tracing: TracingCfg,
    pub fisheye: Option<FisheyeCfg>,
    pub trace: Option<TraceCmdCfg>,
    pub link: Option<LinkCmdCfg>,
    pub synth: Option<SynthCfg>,
    pub reconstruct: Option<ReconstructCfg>,
    pub greens: Option<GreensCfg>,
    /// Directory of the config file.
    #[serde(skip)]
    pub base: PathBuf,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridCfg {
    pub dim: usize,
    pub origin: Vec<f64>,
    pub spacing: f64,
    pub counts: Vec<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub enum FieldKindCfg {
    RefractiveIndex,
    SoundSpeed,
    Slowness,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, tag = "type", rename_all = "kebab-case")]
pub enum MediumCfg {
    Fisheye {
        #[serde(default = "one")]
        a: f64,
        #[serde(default = "one")]
        n0: f64,
    },
    Homogeneous {
        c0: f64,
    },
    Blobs {
        c0: f64,
        blobs: Vec<BlobCfg>,
    },
    /// Binary field written by `save_field`.
    File {
        path: PathBuf,
        kind: FieldKindCfg,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobCfg {
    pub center: Vec<f64>,
    pub sigma: f64,
    pub amplitude: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub enum LayoutCfg {
    Ring,
    InterleavedRing,
    Sphere,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayCfg {
    pub layout: LayoutCfg,
    pub center: Vec<f64>,
    pub radius: f64,
    pub emitters: usize,
    pub receivers: usize,
    /// Receiver angular offset (rad) for `ring`.
    #[serde(default)]
    pub offset: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TracingCfg {
    #[serde(default = "default_algorithm")]
    pub algorithm: String,
    /// Step size over grid spacing.
    #[serde(default = "one")]
    pub ratio: f64,
    /// `bspline` or `bilinear`; the subcommand picks the default.
    pub backend: Option<String>,
    /// Link tolerance (m); defaults to the grid spacing, or a thousandth of it for travel-time work.
    pub tolerance: Option<f64>,
    #[serde(default = "default_link_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_method")]
    pub method: String,
    /// Reference sound speed (m/s) relating refractive index and slowness.
    #[serde(default = "default_c_ref")]
    pub c_ref: f64,
}

impl Default for TracingCfg {
    fn default() -> Self {
        Self {
            algorithm: default_algorithm(),
            ratio: 1.0,
            backend: None,
            tolerance: None,
            max_iterations: default_link_iterations(),
            method: default_method(),
            c_ref: default_c_ref(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FisheyeCfg {
    #[serde(default = "default_dims")]
    pub dims: Vec<usize>,
    #[serde(default = "default_experiments")]
    pub experiments: Vec<String>,
    pub algorithms: Option<Vec<String>>,
    pub ratios: Option<Vec<f64>>,
    #[serde(default = "one")]
    pub a: f64,
    #[serde(default = "one")]
    pub n0: f64,
    /// Ratio at which per-sample centre distances are dumped.
    #[serde(default = "one")]
    pub distance_ratio: f64,
    #[serde(default = "default_thin")]
    pub thin: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, tag = "type", rename_all = "kebab-case")]
pub enum StopCfg {
    Boundary,
    ClosedLoop,
    Target { point: Vec<f64> },
    Sphere { center: Vec<f64>, radius: f64 },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceCmdCfg {
    pub start: Vec<f64>,
    pub direction: Vec<f64>,
    pub stop: StopCfg,
    #[serde(default = "default_thin")]
    pub thin: usize,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkCmdCfg {
    /// `[emitter, receiver]` pairs; all pairs when absent.
    pub pairs: Option<Vec<[usize; 2]>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthCfg {
    /// Standard deviation of additive Gaussian noise (s).
    #[serde(default)]
    pub noise_sigma: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructCfg {
    pub tofs: PathBuf,
    pub c0: f64,
    #[serde(default = "default_solver")]
    pub solver: String,
    pub inner_iterations: Option<usize>,
    #[serde(default = "default_outer")]
    pub outer_iterations: usize,
    #[serde(default = "one")]
    pub relaxation: f64,
    #[serde(default = "default_stop")]
    pub stop_threshold: f64,
    /// Optional ground truth for RMSE logging.
    pub truth: Option<PathBuf>,
    pub truth_kind: Option<FieldKindCfg>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GreensCfg {
    pub pairs: Vec<[usize; 2]>,
    /// Reference arc length for amplitude normalisation; defaults to the step size.
    pub s_ref: Option<f64>,
    /// Uniform absorption prefactor `alpha0`; none when absent.
    pub alpha0: Option<f64>,
    #[serde(default = "one")]
    pub y: f64,
    /// Scale of the paraxial overlay `x + scale * dx`.
    #[serde(default = "default_overlay")]
    pub overlay_scale: f64,
}

fn one() -> f64 {
    1.0
}
fn default_algorithm() -> String {
    StepAlgorithm::default().name().into()
}
fn default_method() -> String {
    "secant".into()
}
fn default_link_iterations() -> usize {
    30
}
fn default_c_ref() -> f64 {
    1500.0
}
fn default_dims() -> Vec<usize> {
    vec![2, 3]
}
fn default_experiments() -> Vec<String> {
    vec!["radius".into(), "length".into()]
}
fn default_thin() -> usize {
    4
}
fn default_solver() -> String {
    "sart".into()
}
fn default_outer() -> usize {
    10
}
fn default_stop() -> f64 {
    1e-4
}
fn default_overlay() -> f64 {
    0.01
}

pub fn load(path: &Path) -> Result<Config> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config file {}", path.display()))?;
    let mut cfg: Config = toml::from_str(&text).with_context(|| format!("invalid config file {}", path.display()))?;
    cfg.base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(cfg)
}

pub fn point(v: &[f64], dim: usize, what: &str) -> Result<Point> {
    ensure!(v.len() == dim, "{what} needs {dim} coordinates, got {}", v.len());
    let mut p = Point::zeros();
    p.as_mut_slice()[..dim].copy_from_slice(v);
    Ok(p)
}

pub fn parse_algorithm(s: &str) -> Result<StepAlgorithm> {
    StepAlgorithm::from_name(s).ok_or_else(|| {
        let names: Vec<_> = StepAlgorithm::ALL.iter().map(|a| a.name()).collect();
        anyhow!("unknown algorithm {s:?}; expected one of {}", names.join(", "))
    })
}

pub fn parse_experiment(s: &str) -> Result<Experiment> {
    match s {
        "radius" => Ok(Experiment::Radius),
        "length" => Ok(Experiment::Length),
        _ => bail!("unknown experiment {s:?}; expected radius or length"),
    }
}

impl FieldKindCfg {
    pub fn kind(&self) -> FieldKind {
        match self {
            FieldKindCfg::RefractiveIndex => FieldKind::RefractiveIndex,
            FieldKindCfg::SoundSpeed => FieldKind::SoundSpeed,
            FieldKindCfg::Slowness => FieldKind::Slowness,
        }
    }
}

impl Config {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn section<'a, T>(&self, s: &'a Option<T>, name: &str) -> Result<&'a T> {
        s.as_ref().ok_or_else(|| anyhow!("config is missing the [{name}] section"))
    }

    /// Input files named anywhere in the config; checked before any compute.
    pub fn check_inputs(&self) -> Result<()> {
        let mut inputs = Vec::new();
        if let Some(MediumCfg::File { path, .. }) = &self.medium {
            inputs.push(path);
        }
        if let Some(r) = &self.reconstruct {
            inputs.push(&r.tofs);
            inputs.extend(r.truth.as_ref());
        }
        for p in inputs {
            let full = self.resolve(p);
            ensure!(full.is_file(), "input file {} does not exist", full.display());
        }
        Ok(())
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        let g = self.section(&self.grid, "grid")?;
        Ok(GridSpec::new(g.dim, &g.origin, g.spacing, &g.counts)?)
    }

    pub fn backend(&self, default: Backend) -> Result<Backend> {
        match self.tracing.backend.as_deref() {
            None => Ok(default),
            Some("bspline") => Ok(Backend::BSpline),
            Some("bilinear") => Ok(Backend::Bilinear),
            Some(s) => bail!("unknown backend {s:?}; expected bspline or bilinear"),
        }
    }

    /// Medium field on the configured grid (or the grid stored with a field file).
    pub fn medium_field(&self) -> Result<ScalarField> {
        match self.section(&self.medium, "medium")? {
            MediumCfg::File { path, kind } => {
                let full = self.resolve(path);
                Ok(load_field(&full, kind.kind()).with_context(|| format!("cannot load field {}", full.display()))?)
            }
            m => {
                let spec = self.grid_spec()?;
                let dim = spec.dim();
                let phantom = match m {
                    MediumCfg::Fisheye { a, n0 } => Phantom::FishEye { a: *a, n0: *n0 },
                    MediumCfg::Homogeneous { c0 } => Phantom::Homogeneous { c0: *c0 },
                    MediumCfg::Blobs { c0, blobs } => Phantom::Blobs {
                        c0: *c0,
                        blobs: blobs
                            .iter()
                            .map(|b| Ok(Blob { center: point(&b.center, dim, "blob centre")?, sigma: b.sigma, amplitude: b.amplitude }))
                            .collect::<Result<_>>()?,
                    },
                    MediumCfg::File { .. } => unreachable!(),
                };
                Ok(rasterize(&phantom, spec)?)
            }
        }
    }

    pub fn geometry(&self, dim: usize) -> Result<ArrayGeometry> {
        let a = self.section(&self.array, "array")?;
        let c = point(&a.center, dim, "array centre")?;
        let g = match a.layout {
            LayoutCfg::Ring => ArrayGeometry::ring(c, a.radius, a.emitters, a.receivers, a.offset),
            LayoutCfg::InterleavedRing => ArrayGeometry::interleaved_ring(c, a.radius, a.emitters, a.receivers),
            LayoutCfg::Sphere => ArrayGeometry::sphere(c, a.radius, a.emitters, a.receivers),
        };
        ensure!(g.dim == dim, "{:?} layout is {}D but the grid is {dim}D", a.layout, g.dim);
        g.validate()?;
        Ok(g)
    }

    pub fn trace_config(&self, dx: f64) -> Result<TraceConfig> {
        let t = &self.tracing;
        ensure!(t.ratio > 0.0, "tracing.ratio must be positive");
        Ok(TraceConfig::new(t.ratio * dx, parse_algorithm(&t.algorithm)?))
    }

    /// Link settings; `travel_time` selects the tight default tolerance.
    pub fn link_config(&self, dx: f64, travel_time: bool) -> Result<LinkConfig> {
        let t = &self.tracing;
        let mut cfg = LinkConfig::new(self.trace_config(dx)?, dx);
        cfg.tolerance = t.tolerance.unwrap_or(if travel_time { TOF_TOLERANCE_FRACTION * dx } else { dx });
        ensure!(cfg.tolerance > 0.0, "tracing.tolerance must be positive");
        cfg.max_iterations = t.max_iterations;
        cfg.method = match t.method.as_str() {
            "secant" => LinkMethod::Secant,
            "regula-falsi" => LinkMethod::RegulaFalsi,
            s => bail!("unknown link method {s:?}; expected secant or regula-falsi"),
        };
        Ok(cfg)
    }

    pub fn inversion(&self, dx: f64) -> Result<InversionConfig> {
        let r = self.section(&self.reconstruct, "reconstruct")?;
        let solver = match r.solver.as_str() {
            "sart" => Solver::Sart,
            "cg" => Solver::Cg,
            s => bail!("unknown solver {s:?}; expected sart or cg"),
        };
        let mut cfg = InversionConfig::new(solver, r.c0, self.link_config(dx, true)?);
        if let Some(n) = r.inner_iterations {
            cfg.inner_iterations = n;
        }
        cfg.outer_iterations = r.outer_iterations;
        cfg.relaxation = r.relaxation;
        cfg.stop_threshold = r.stop_threshold;
        cfg.backend = self.backend(Backend::Bilinear)?;
        cfg.validate()?;
        Ok(cfg)
    }
}
