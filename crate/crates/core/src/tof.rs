//! Iteratively linearised time-of-flight inversion.
//!
//! The unknown is nodal slowness `1/c`: along a fixed ray the travel time is
//! the dot product of a system-matrix row with the slowness vector, so each
//! linearised subproblem `A du = t_measured - A s` is linear. Rays are
//! re-linked in the current slowness field at every outer iteration,
//! warm-started from the previous angles.

use crate::field::{Backend, FieldError, FieldKind, GridSpec, Interpolator, ScalarField};
use crate::linker::{converged_fraction, link_all, median_iterations, warm_table, AngleParam, LinkConfig, LinkResult};
use crate::tracer::{system_row, SparseRow};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::io::{Read, Write};
use thiserror::Error;

pub use crate::linker::ArrayGeometry;

#[derive(Debug, Error)]
pub enum ToFError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Link(#[from] crate::linker::LinkError),
    #[error("no usable rows: every pair is unconverged or unmeasured")]
    EmptySystem,
    #[error("invalid ToF table: {0}")]
    Table(String),
    #[error("invalid inversion config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Measured first-arrival times, one optional entry per pair (pair order `e * n_r + r`).
#[derive(Debug, Clone, PartialEq)]
pub struct ToFTable {
    pub n_emitters: usize,
    pub n_receivers: usize,
    pub tof: Vec<Option<f64>>,
}

impl ToFTable {
    pub fn empty(n_emitters: usize, n_receivers: usize) -> Self {
        Self { n_emitters, n_receivers, tof: vec![None; n_emitters * n_receivers] }
    }

    pub fn get(&self, emitter: usize, receiver: usize) -> Option<f64> {
        self.tof[emitter * self.n_receivers + receiver]
    }

    pub fn set(&mut self, emitter: usize, receiver: usize, tof: f64) -> Result<(), ToFError> {
        if emitter >= self.n_emitters || receiver >= self.n_receivers {
            return Err(ToFError::Table(format!("pair ({emitter}, {receiver}) out of range")));
        }
        if !(tof > 0.0 && tof.is_finite()) {
            return Err(ToFError::Table(format!("pair ({emitter}, {receiver}): ToF must be positive, got {tof}")));
        }
        let slot = &mut self.tof[emitter * self.n_receivers + receiver];
        if slot.is_some() {
            return Err(ToFError::Table(format!("pair ({emitter}, {receiver}) given twice")));
        }
        *slot = Some(tof);
        Ok(())
    }

    pub fn valid_count(&self) -> usize {
        self.tof.iter().filter(|t| t.is_some()).count()
    }

    /// `emitter_id,receiver_id,tof_s` for every valid entry.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), ToFError> {
        let mut out = csv::Writer::from_writer(w);
        let csv_err = |e: csv::Error| ToFError::Table(e.to_string());
        out.write_record(["emitter_id", "receiver_id", "tof_s"]).map_err(csv_err)?;
        for (p, t) in self.tof.iter().enumerate() {
            if let Some(t) = t {
                let (e, r) = (p / self.n_receivers, p % self.n_receivers);
                out.write_record([e.to_string(), r.to_string(), format!("{t:.16e}")]).map_err(csv_err)?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, n_emitters: usize, n_receivers: usize) -> Result<Self, ToFError> {
        let mut table = Self::empty(n_emitters, n_receivers);
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        for (line, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| ToFError::Table(e.to_string()))?;
            let bad = |what: &str| ToFError::Table(format!("row {}: bad {what}", line + 1));
            if rec.len() != 3 {
                return Err(bad("column count"));
            }
            let e = rec[0].parse().map_err(|_| bad("emitter id"))?;
            let rc = rec[1].parse().map_err(|_| bad("receiver id"))?;
            let t = rec[2].parse().map_err(|_| bad("time"))?;
            table.set(e, rc, t)?;
        }
        Ok(table)
    }
}

/// Link tolerance for travel-time work, as a fraction of the grid spacing.
/// A miss of `m` metres shifts the modelled time by up to `m / c`.
pub const TOF_TOLERANCE_FRACTION: f64 = 1e-3;

/// Link settings for synthesis and inversion: `ds = dx`, `tau = TOF_TOLERANCE_FRACTION * dx`.
pub fn tof_link_config(algorithm: crate::tracer::StepAlgorithm, grid_spacing: f64) -> LinkConfig {
    let mut cfg = LinkConfig::new(crate::tracer::TraceConfig::new(grid_spacing, algorithm), grid_spacing);
    cfg.tolerance = TOF_TOLERANCE_FRACTION * grid_spacing;
    cfg
}

/// Slowness sampler for a sound-speed field.
pub fn slowness_sampler(sound_speed: &ScalarField, backend: Backend) -> Result<Interpolator, FieldError> {
    let s = match sound_speed.kind() {
        FieldKind::Slowness => sound_speed.clone(),
        _ => sound_speed.reciprocal(FieldKind::Slowness)?,
    };
    Ok(Interpolator::new(s, backend))
}

/// Link all pairs in `truth` and record travel times plus `N(0, noise_sigma)` noise.
/// Unconverged pairs are left out of the table.
pub fn synth_tofs(
    truth: &ScalarField,
    geometry: &ArrayGeometry,
    link: &LinkConfig,
    backend: Backend,
    noise_sigma: f64,
    seed: u64,
) -> Result<(ToFTable, Vec<LinkResult>), ToFError> {
    geometry.validate()?;
    if !(noise_sigma >= 0.0) {
        return Err(ToFError::Config(format!("noise sigma must be non-negative, got {noise_sigma}")));
    }
    let sampler = slowness_sampler(truth, backend)?;
    let links = link_all(geometry, &sampler, link, None);
    let noise = Normal::new(0.0, noise_sigma).expect("sigma checked above");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut table = ToFTable::empty(geometry.emitters.len(), geometry.receivers.len());
    for l in links.iter().filter(|l| l.converged) {
        let t = l.trajectory.as_ref().expect("converged links carry a ray").acoustic_length;
        let eps = if noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        table.set(l.emitter, l.receiver, t + eps)?;
    }
    Ok((table, links))
}

/// Linearised subproblem `A du = residual`.
#[derive(Debug, Clone)]
pub struct SparseSystem {
    pub rows: Vec<SparseRow>,
    /// Pair index of each row.
    pub pairs: Vec<usize>,
    /// Measured minus modelled ToF (s).
    pub residual: Vec<f64>,
    pub n_cols: usize,
    /// Pairs without a row (unconverged link or no measurement).
    pub skipped: Vec<usize>,
}

impl SparseSystem {
    pub fn from_rows(rows: Vec<SparseRow>, residual: Vec<f64>, n_cols: usize) -> Self {
        let pairs = (0..rows.len()).collect();
        Self { rows, pairs, residual, n_cols, skipped: Vec::new() }
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| r.dot(u)).collect()
    }

    pub fn apply_transpose(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_cols];
        for (row, vi) in self.rows.iter().zip(v) {
            for &(j, a) in &row.entries {
                out[j] += a * vi;
            }
        }
        out
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_cols];
        for row in &self.rows {
            for &(j, a) in &row.entries {
                out[j] += a;
            }
        }
        out
    }
}

/// One row per converged, measured pair; `slowness` holds the current nodal values.
pub fn assemble_system(
    links: &[LinkResult],
    measured: &ToFTable,
    spec: &GridSpec,
    backend: Backend,
    slowness: &[f64],
) -> Result<SparseSystem, ToFError> {
    let mut sys = SparseSystem { rows: Vec::new(), pairs: Vec::new(), residual: Vec::new(), n_cols: spec.len(), skipped: Vec::new() };
    for (p, l) in links.iter().enumerate() {
        let t = measured.get(l.emitter, l.receiver);
        match (&l.trajectory, t) {
            (Some(traj), Some(t)) if l.converged => {
                let row = system_row(traj, spec, backend)?;
                sys.residual.push(t - row.dot(slowness));
                sys.rows.push(row);
                sys.pairs.push(p);
            }
            _ => sys.skipped.push(p),
        }
    }
    if sys.rows.is_empty() {
        return Err(ToFError::EmptySystem);
    }
    Ok(sys)
}

/// One SART sweep on `A u = residual`, updating `u` in place.
pub fn sart_step(system: &SparseSystem, u: &mut [f64], relaxation: f64) {
    let au = system.apply(u);
    let weighted: Vec<f64> = system
        .rows
        .iter()
        .zip(system.residual.iter().zip(&au))
        .map(|(row, (b, a))| {
            let rs = row.sum();
            if rs > 0.0 {
                (b - a) / rs
            } else {
                0.0
            }
        })
        .collect();
    let back = system.apply_transpose(&weighted);
    for ((u, b), c) in u.iter_mut().zip(back).zip(system.column_sums()) {
        if c > 0.0 {
            *u += relaxation * b / c;
        }
    }
}

pub fn sart_solve(system: &SparseSystem, sweeps: usize, relaxation: f64) -> Vec<f64> {
    let mut u = vec![0.0; system.n_cols];
    for _ in 0..sweeps {
        sart_step(system, &mut u, relaxation);
    }
    u
}

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub update: Vec<f64>,
    pub iterations: usize,
    /// `||A u - residual||` after each iteration, starting with `u = 0`.
    pub residual_norms: Vec<f64>,
    /// A zero search-direction image ended the iteration early.
    pub breakdown: bool,
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// CGLS on `min ||A u - residual||` from `u = 0`; the iterate stays in the range of `A^T`.
pub fn cg_solve(system: &SparseSystem, iterations: usize) -> CgOutcome {
    let mut u = vec![0.0; system.n_cols];
    let mut r = system.residual.clone();
    let mut s = system.apply_transpose(&r);
    let mut p = s.clone();
    let mut gamma = norm2(&s);
    let gamma0 = gamma;
    let mut norms = vec![norm2(&r).sqrt()];
    let mut breakdown = false;
    let mut done = 0;
    for _ in 0..iterations {
        if gamma <= 1e-32 * gamma0 || gamma == 0.0 {
            break;
        }
        let q = system.apply(&p);
        let delta = norm2(&q);
        if delta == 0.0 {
            breakdown = true;
            break;
        }
        let alpha = gamma / delta;
        for (u, p) in u.iter_mut().zip(&p) {
            *u += alpha * p;
        }
        for (r, q) in r.iter_mut().zip(&q) {
            *r -= alpha * q;
        }
        s = system.apply_transpose(&r);
        let gamma_new = norm2(&s);
        let beta = gamma_new / gamma;
        for (p, s) in p.iter_mut().zip(&s) {
            *p = s + beta * *p;
        }
        gamma = gamma_new;
        done += 1;
        norms.push(norm2(&r).sqrt());
    }
    CgOutcome { update: u, iterations: done, residual_norms: norms, breakdown }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Solver {
    #[default]
    Sart,
    Cg,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InversionConfig {
    pub solver: Solver,
    pub inner_iterations: usize,
    pub outer_iterations: usize,
    /// Initial homogeneous sound speed (m/s).
    pub c0: f64,
    pub relaxation: f64,
    /// Stop when `||du|| / ||s||` falls below this.
    pub stop_threshold: f64,
    pub backend: Backend,
    pub link: LinkConfig,
}

impl InversionConfig {
    /// Five SART sweeps or ten CG iterations per subproblem.
    pub fn new(solver: Solver, c0: f64, link: LinkConfig) -> Self {
        Self {
            solver,
            inner_iterations: if solver == Solver::Sart { 5 } else { 10 },
            outer_iterations: 10,
            c0,
            relaxation: 1.0,
            stop_threshold: 1e-4,
            backend: Backend::Bilinear,
            link,
        }
    }

    pub fn validate(&self) -> Result<(), ToFError> {
        let bad = |m: &str| Err(ToFError::Config(m.into()));
        if self.inner_iterations == 0 || self.outer_iterations == 0 {
            return bad("iteration counts must be at least 1");
        }
        if !(self.relaxation > 0.0 && self.relaxation < 2.0) {
            return bad("relaxation must lie in (0, 2)");
        }
        if !(self.c0 > 0.0) {
            return bad("c0 must be positive");
        }
        Ok(())
    }
}

/// One outer iteration of the run log.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterRecord {
    pub iteration: usize,
    /// `||t_measured - A s||` before the update (s).
    pub residual_norm: f64,
    /// `||du|| / ||s||`.
    pub update_norm: f64,
    /// Relative sound-speed error after the update, when the truth is known.
    pub rmse: Option<f64>,
    pub rows: usize,
    pub converged_fraction: f64,
    pub median_link_iterations: f64,
    /// The divergence guard halved this update.
    pub halved: bool,
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    /// Sound-speed fields: the homogeneous start followed by one per outer iteration.
    pub fields: Vec<ScalarField>,
    pub log: Vec<OuterRecord>,
    /// Relative error of the starting field, when the truth is known.
    pub initial_rmse: Option<f64>,
    pub final_links: Vec<LinkResult>,
}

/// `||c - c_true|| / ||c_true||` over the nodes.
pub fn relative_rmse(c: &ScalarField, truth: &ScalarField) -> f64 {
    let num: f64 = c.values().iter().zip(truth.values()).map(|(a, b)| (a - b) * (a - b)).sum();
    (num / norm2(truth.values())).sqrt()
}

/// Sum of absolute nearest-neighbour differences.
pub fn total_variation(spec: &GridSpec, values: &[f64]) -> f64 {
    let n = spec.counts();
    let mut tv = 0.0;
    for (flat, v) in values.iter().enumerate() {
        let idx = spec.multi_index(flat);
        for a in 0..spec.dim() {
            if idx[a] + 1 < n[a] {
                let mut j = idx;
                j[a] += 1;
                tv += (values[spec.flat_index(j)] - v).abs();
            }
        }
    }
    tv
}

pub fn reconstruct(
    measured: &ToFTable,
    geometry: &ArrayGeometry,
    spec: &GridSpec,
    config: &InversionConfig,
    truth: Option<&ScalarField>,
) -> Result<Reconstruction, ToFError> {
    config.validate()?;
    geometry.validate()?;
    if measured.n_emitters != geometry.emitters.len() || measured.n_receivers != geometry.receivers.len() {
        return Err(ToFError::Table("table size does not match the array".into()));
    }
    if let Some(t) = truth {
        if t.spec() != spec {
            return Err(ToFError::Config("truth field lives on a different grid".into()));
        }
    }
    let mut slowness = vec![1.0 / config.c0; spec.len()];
    let to_speed = |s: &[f64]| ScalarField::new(spec.clone(), s.iter().map(|v| 1.0 / v).collect(), FieldKind::SoundSpeed);
    let first = to_speed(&slowness)?;
    let initial_rmse = truth.map(|t| relative_rmse(&first, t));
    let mut fields = vec![first];
    let mut log: Vec<OuterRecord> = Vec::new();
    let mut warm: Option<Vec<Option<AngleParam>>> = None;
    let mut links = Vec::new();

    for k in 1..=config.outer_iterations {
        let field = ScalarField::new(spec.clone(), slowness.clone(), FieldKind::Slowness)?;
        let sampler = Interpolator::new(field, config.backend);
        links = link_all(geometry, &sampler, &config.link, warm.as_deref());
        let system = assemble_system(&links, measured, spec, config.backend, &slowness)?;
        let residual_norm = norm2(&system.residual).sqrt();
        let mut du = match config.solver {
            Solver::Sart => sart_solve(&system, config.inner_iterations, config.relaxation),
            Solver::Cg => cg_solve(&system, config.inner_iterations).update,
        };
        let rising = |a: &OuterRecord, b: f64| b > a.residual_norm;
        let halved = log.len() >= 2
            && rising(&log[log.len() - 1], residual_norm)
            && rising(&log[log.len() - 2], log[log.len() - 1].residual_norm);
        if halved {
            du.iter_mut().for_each(|v| *v *= 0.5);
        }
        let update_norm = (norm2(&du) / norm2(&slowness)).sqrt();
        for (s, d) in slowness.iter_mut().zip(&du) {
            *s += d;
        }
        if let Some(bad) = slowness.iter().position(|s| !(*s > 0.0)) {
            return Err(ToFError::Field(FieldError::InvalidValues(format!(
                "update drove slowness non-positive at node {bad}"
            ))));
        }
        let c = to_speed(&slowness)?;
        log.push(OuterRecord {
            iteration: k,
            residual_norm,
            update_norm,
            rmse: truth.map(|t| relative_rmse(&c, t)),
            rows: system.n_rows(),
            converged_fraction: converged_fraction(&links),
            median_link_iterations: median_iterations(&links),
            halved,
        });
        fields.push(c);
        warm = Some(warm_table(&links));
        if update_norm < config.stop_threshold {
            break;
        }
    }
    Ok(Reconstruction { fields, log, initial_rmse, final_links: links })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{rasterize, Blob, Phantom};
    use crate::tracer::{StepAlgorithm, TraceConfig};
    use crate::Point;
    use nalgebra::{DMatrix, DVector};

    fn dense(system: &SparseSystem) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(system.n_rows(), system.n_cols);
        for (i, r) in system.rows.iter().enumerate() {
            for &(j, a) in &r.entries {
                m[(i, j)] = a;
            }
        }
        m
    }

    fn toy(rows: &[&[f64]], b: &[f64]) -> SparseSystem {
        let n = rows[0].len();
        let rows = rows
            .iter()
            .map(|r| SparseRow { entries: r.iter().enumerate().filter(|e| *e.1 != 0.0).map(|(j, a)| (j, *a)).collect() })
            .collect();
        SparseSystem::from_rows(rows, b.to_vec(), n)
    }

    fn setup() -> (GridSpec, ArrayGeometry, LinkConfig) {
        let spec = GridSpec::covering(2, &[-0.1, -0.1], &[0.1, 0.1], 0.005).unwrap();
        let geom = ArrayGeometry::interleaved_ring(Point::zeros(), 0.09, 8, 8);
        let link = LinkConfig::new(TraceConfig::new(0.005, StepAlgorithm::RungeKutta2), 0.005);
        (spec, geom, link)
    }

    #[test]
    fn sart_converges_on_consistent_toy() {
        let sys = toy(&[&[2.0, 1.0], &[1.0, 3.0]], &[5.0, 10.0]);
        let u = sart_solve(&sys, 400, 1.0);
        assert!((u[0] - 1.0).abs() < 1e-8 && (u[1] - 3.0).abs() < 1e-8);
        let r: Vec<f64> = sys.apply(&u).iter().zip(&sys.residual).map(|(a, b)| a - b).collect();
        assert!(norm2(&r).sqrt() < 1e-8);
    }

    #[test]
    fn sart_zero_residual_and_single_row() {
        let sys = toy(&[&[2.0, 1.0], &[1.0, 3.0]], &[0.0, 0.0]);
        assert!(sart_solve(&sys, 3, 1.0).iter().all(|&v| v == 0.0));
        // single row a = (1, 3), b = 8: u_j = a_j (b / R) / C_j = b / 4 on each node; a . u = 8
        let one = toy(&[&[1.0, 3.0]], &[8.0]);
        let mut u = vec![0.0; 2];
        sart_step(&one, &mut u, 1.0);
        assert_eq!(u, vec![2.0, 2.0]);
        assert!((one.apply(&u)[0] - 8.0).abs() < 1e-15);
    }

    #[test]
    fn cg_matches_dense_solves() {
        let sq = toy(&[&[4.0, 1.0, 0.0], &[1.0, 3.0, 1.0], &[0.0, 1.0, 2.0]], &[1.0, 2.0, 3.0]);
        let out = cg_solve(&sq, 3);
        let x = dense(&sq).lu().solve(&DVector::from_vec(sq.residual.clone())).unwrap();
        for (a, b) in out.update.iter().zip(x.iter()) {
            assert!((a - b).abs() < 1e-8);
        }
        // overdetermined, consistent
        let truth = [0.5, -1.5];
        let rows: [&[f64]; 4] = [&[1.0, 0.0], &[0.0, 2.0], &[1.0, 1.0], &[3.0, -1.0]];
        let b: Vec<f64> = rows.iter().map(|r| r[0] * truth[0] + r[1] * truth[1]).collect();
        let od = toy(&rows, &b);
        let out = cg_solve(&od, 2);
        assert!((out.update[0] - truth[0]).abs() < 1e-10 && (out.update[1] - truth[1]).abs() < 1e-10);
        for w in out.residual_norms.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
        assert!(cg_solve(&toy(&[&[1.0, 2.0]], &[0.0]), 5).update.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn homogeneous_tofs_are_distances() {
        let (spec, geom, link) = setup();
        let c0 = 1500.0;
        let water = ScalarField::constant(spec, FieldKind::SoundSpeed, c0).unwrap();
        let (table, _) = synth_tofs(&water, &geom, &link, Backend::Bilinear, 0.0, 1).unwrap();
        assert_eq!(table.valid_count(), 64);
        for e in 0..8 {
            for r in 0..8 {
                let d = (geom.emitters[e] - geom.receivers[r]).norm();
                assert!((table.get(e, r).unwrap() - d / c0).abs() < 1e-12 * d / c0);
            }
        }
    }

    #[test]
    fn toy_ring_system_shape_and_consistency() {
        let (spec, _, link) = setup();
        let geom = ArrayGeometry::interleaved_ring(Point::zeros(), 0.09, 4, 4);
        let water = ScalarField::constant(spec.clone(), FieldKind::SoundSpeed, 1500.0).unwrap();
        let (table, links) = synth_tofs(&water, &geom, &link, Backend::Bilinear, 0.0, 1).unwrap();
        let s = vec![1.0 / 1500.0; spec.len()];
        let sys = assemble_system(&links, &table, &spec, Backend::Bilinear, &s).unwrap();
        assert_eq!((sys.n_rows(), sys.n_cols), (16, spec.len()));
        assert!(sys.residual.iter().all(|r| r.abs() < 1e-10));
        assert!(sys.rows.iter().all(|r| r.entries.iter().all(|e| e.1 >= 0.0)));
        let none = ToFTable::empty(4, 4);
        assert!(matches!(assemble_system(&links, &none, &spec, Backend::Bilinear, &s), Err(ToFError::EmptySystem)));
    }

    #[test]
    fn blob_inverse_crime_is_self_consistent() {
        let (spec, geom, link) = setup();
        let ph = Phantom::Blobs { c0: 1500.0, blobs: vec![Blob { center: Point::new(0.01, -0.02, 0.0), sigma: 0.02, amplitude: 45.0 }] };
        let truth = rasterize(&ph, spec.clone()).unwrap();
        let (table, links) = synth_tofs(&truth, &geom, &link, Backend::Bilinear, 0.0, 3).unwrap();
        let s = truth.reciprocal(FieldKind::Slowness).unwrap();
        let sys = assemble_system(&links, &table, &spec, Backend::Bilinear, s.values()).unwrap();
        for (r, p) in sys.residual.iter().zip(&sys.pairs) {
            assert!(r.abs() <= 1e-12 * table.tof[*p].unwrap(), "{r}");
        }
        let mut u = vec![0.0; spec.len()];
        sart_step(&sys, &mut u, 1.0);
        assert!(u.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn noise_statistics() {
        let (spec, _, link) = setup();
        let geom = ArrayGeometry::interleaved_ring(Point::zeros(), 0.09, 24, 24);
        let water = ScalarField::constant(spec, FieldKind::SoundSpeed, 1500.0).unwrap();
        let (clean, _) = synth_tofs(&water, &geom, &link, Backend::Bilinear, 0.0, 9).unwrap();
        let sigma = 10e-9;
        let (noisy, _) = synth_tofs(&water, &geom, &link, Backend::Bilinear, sigma, 9).unwrap();
        let d: Vec<f64> = clean.tof.iter().zip(&noisy.tof).map(|(a, b)| b.unwrap() - a.unwrap()).collect();
        let n = d.len() as f64;
        let mean = d.iter().sum::<f64>() / n;
        let sd = (d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(mean.abs() < 4.0 * sigma / n.sqrt());
        assert!((sd / sigma - 1.0).abs() < 0.15, "{sd}");
        let (again, _) = synth_tofs(&water, &geom, &link, Backend::Bilinear, sigma, 9).unwrap();
        assert_eq!(again, noisy);
    }

    #[test]
    fn csv_round_trip() {
        let mut t = ToFTable::empty(3, 2);
        t.set(0, 1, 1.25e-4).unwrap();
        t.set(2, 0, 9.999999999999999e-5).unwrap();
        assert!(t.set(0, 1, 1.0).is_err());
        assert!(t.set(0, 0, -1.0).is_err());
        assert!(t.set(3, 0, 1.0).is_err());
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("emitter_id,receiver_id,tof_s\n0,1,1.2500000000000000e-4\n"));
        assert_eq!(ToFTable::read_csv(&buf[..], 3, 2).unwrap(), t);
    }

    #[test]
    fn homogeneous_truth_is_a_fixed_point() {
        let (spec, geom, link) = setup();
        let water = ScalarField::constant(spec.clone(), FieldKind::SoundSpeed, 1500.0).unwrap();
        let (table, _) = synth_tofs(&water, &geom, &link, Backend::Bilinear, 0.0, 1).unwrap();
        let cfg = InversionConfig::new(Solver::Sart, 1500.0, link);
        let rec = reconstruct(&table, &geom, &spec, &cfg, Some(&water)).unwrap();
        assert_eq!(rec.log.len(), 1);
        assert!(rec.log[0].update_norm < 1e-10);
        assert!(rec.log[0].rmse.unwrap() < 1e-10);
    }

    #[test]
    fn config_validation() {
        let (_, _, link) = setup();
        let mut cfg = InversionConfig::new(Solver::Cg, 1500.0, link);
        assert_eq!(cfg.inner_iterations, 10);
        cfg.validate().unwrap();
        cfg.relaxation = 2.0;
        assert!(cfg.validate().is_err());
    }
}
