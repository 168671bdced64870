//! Subcommands. Each returns the list of partial failures (failed rays or pairs).

use crate::config::{parse_algorithm, parse_experiment, point, Config, StopCfg};
use crate::output::{axis_names, coords, num, opt, thinned, writer};
use anyhow::{bail, ensure, Context, Result};
use bentray::field::io::{load_field, save_field};
use bentray::field::{Backend, FieldKind, FieldSampler, Interpolator, ScalarField};
use bentray::linker::{link_all, link_pair, perpendicular, AngleParam, ArrayGeometry, LinkProblem, LinkResult};
use bentray::paraxial::{greens_params, trace_paraxial, ParaxialState};
use bentray::phantom::Experiment;
use bentray::tof::{reconstruct, synth_tofs, ToFTable};
use bentray::tracer::{trace, StopCondition, Trajectory};
use bentray::validate::{sweep, write_metrics_csv, ExperimentSpec, FisheyeBench};
use bentray::{RayState, StepAlgorithm};
use rayon::prelude::*;
use std::fs::File;
use std::path::Path;

pub type Failures = Vec<String>;

/// Sampler the rays are traced in: refractive index or slowness.
fn ray_medium(field: &ScalarField, backend: Backend) -> Result<Interpolator> {
    let f = match field.kind() {
        FieldKind::RefractiveIndex | FieldKind::Slowness => field.clone(),
        FieldKind::SoundSpeed => field.reciprocal(FieldKind::Slowness)?,
        FieldKind::AbsorptionCoefficient => bail!("cannot trace rays through an absorption map"),
    };
    Ok(Interpolator::new(f, backend))
}

/// `(travel time, acoustic length)` from the integral of the ray medium.
fn times(kind: FieldKind, integral: f64, c_ref: f64) -> (f64, f64) {
    match kind {
        FieldKind::RefractiveIndex => (integral / c_ref, integral),
        _ => (integral, integral * c_ref),
    }
}

fn angle_names(dim: usize) -> Vec<&'static str> {
    if dim == 2 {
        vec!["theta"]
    } else {
        vec!["phi", "theta"]
    }
}

fn angle_values(a: &AngleParam) -> Vec<String> {
    match a {
        AngleParam::Planar { theta } => vec![num(*theta)],
        AngleParam::Spherical { phi, theta } => vec![num(*phi), num(*theta)],
    }
}

fn pair_failure(l: &LinkResult) -> String {
    let why = l.failure.clone().unwrap_or_else(|| format!("miss {:.3e} m after {} iterations", l.miss, l.iterations));
    format!("pair ({}, {}): {why}", l.emitter, l.receiver)
}

fn link_listed<S: FieldSampler + ?Sized>(
    geometry: &ArrayGeometry,
    sampler: &S,
    cfg: &bentray::linker::LinkConfig,
    pairs: &[[usize; 2]],
) -> Result<Vec<LinkResult>> {
    let problems = pairs
        .iter()
        .map(|&[e, r]| {
            ensure!(e < geometry.emitters.len() && r < geometry.receivers.len(), "pair ({e}, {r}) is outside the array");
            Ok(LinkProblem::new(geometry, e, r, *cfg)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(problems
        .par_iter()
        .zip(pairs)
        .map(|(p, &[e, r])| LinkResult { emitter: e, receiver: r, ..link_pair(sampler, p, None) })
        .collect())
}

pub fn validate_fisheye(cfg: &Config, out: &Path) -> Result<Failures> {
    let f = cfg.section(&cfg.fisheye, "fisheye")?;
    let algorithms = match &f.algorithms {
        Some(names) => names.iter().map(|n| parse_algorithm(n)).collect::<Result<Vec<_>>>()?,
        None => StepAlgorithm::ALL.to_vec(),
    };
    let experiments = f.experiments.iter().map(|e| parse_experiment(e)).collect::<Result<Vec<_>>>()?;
    let mut specs = Vec::new();
    for &dim in &f.dims {
        for &experiment in &experiments {
            let mut s = ExperimentSpec::new(dim, experiment);
            s.algorithms = algorithms.clone();
            if let Some(r) = &f.ratios {
                s.ratios = r.clone();
            }
            s.a = f.a;
            s.n0 = f.n0;
            s.validate()?;
            specs.push(s);
        }
    }

    let mut results = Vec::new();
    let mut failures = Vec::new();
    let mut dist = writer(&out.join("distances.csv"))?;
    dist.write_record(["dim", "algorithm", "ray", "index", "s", "distance"])?;
    for s in &specs {
        let rows = sweep(s)?;
        for m in &rows {
            let bad = m.failures();
            if !bad.is_empty() {
                failures.push(format!("{}D {:?} {} ratio {}: rays {bad:?} failed", m.dim, m.experiment, m.algorithm.name(), m.ratio));
            }
        }
        results.extend(rows);
        if s.experiment == Experiment::Radius {
            // one ray per algorithm; in 3D the last azimuth
            let bench = FisheyeBench::new(s.dim, s.a, s.n0, Experiment::Radius, Backend::BSpline)?;
            for &alg in &s.algorithms {
                let rays = bench.rays(alg, f.distance_ratio);
                let k = rays.len() - 1;
                let Ok(t) = &rays[k] else { continue };
                for i in thinned(t.len(), f.thin) {
                    let d = (t.samples[i] - bench.reference.center).norm();
                    dist.write_record([s.dim.to_string(), alg.name().into(), k.to_string(), i.to_string(), num(t.arc[i]), num(d)])?;
                }
            }
        }
    }
    dist.flush()?;
    let path = out.join("metrics.csv");
    write_metrics_csv(File::create(&path).with_context(|| format!("cannot create {}", path.display()))?, &results)?;
    Ok(failures)
}

pub fn trace_ray(cfg: &Config, out: &Path) -> Result<Failures> {
    let t = cfg.section(&cfg.trace, "trace")?;
    let field = cfg.medium_field()?;
    let spec = field.spec().clone();
    let dim = spec.dim();
    let sampler = ray_medium(&field, cfg.backend(Backend::BSpline)?)?;
    let start = RayState::new(point(&t.start, dim, "trace.start")?, point(&t.direction, dim, "trace.direction")?);
    let stop = match &t.stop {
        StopCfg::Boundary => StopCondition::BoundaryExit,
        StopCfg::ClosedLoop => StopCondition::ClosedLoop,
        StopCfg::Target { point: p } => StopCondition::Target { point: point(p, dim, "stop.point")? },
        StopCfg::Sphere { center, radius } => StopCondition::Surface { center: point(center, dim, "stop.center")?, radius: *radius },
    };
    let traj = trace(&sampler, start, &cfg.trace_config(spec.spacing())?, &stop)?;
    write_trajectory(&out.join("trajectory.csv"), &traj, dim, t.thin)?;
    let (time, length) = times(field.kind(), traj.acoustic_length, cfg.tracing.c_ref);
    eprintln!("{:?} after {} samples; travel time {time:.6e} s, acoustic length {length:.6e}", traj.termination, traj.len());
    Ok(Vec::new())
}

fn write_trajectory(path: &Path, traj: &Trajectory, dim: usize, thin: usize) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["index".to_string(), "s".into()];
    header.extend(axis_names("", dim));
    w.write_record(&header)?;
    for i in thinned(traj.len(), thin) {
        let mut row = vec![i.to_string(), num(traj.arc[i])];
        row.extend(coords(&traj.samples[i], dim));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn link(cfg: &Config, out: &Path) -> Result<Failures> {
    let field = cfg.medium_field()?;
    let spec = field.spec().clone();
    let sampler = ray_medium(&field, cfg.backend(Backend::BSpline)?)?;
    let geometry = cfg.geometry(spec.dim())?;
    let lc = cfg.link_config(spec.spacing(), false)?;
    let results = match cfg.link.as_ref().and_then(|l| l.pairs.as_ref()) {
        Some(pairs) => link_listed(&geometry, &sampler, &lc, pairs)?,
        None => link_all(&geometry, &sampler, &lc, None),
    };
    let path = out.join("links.csv");
    let mut w = writer(&path)?;
    let mut header = vec!["emitter_id", "receiver_id"];
    header.extend(angle_names(spec.dim()));
    header.extend(["iterations", "converged", "residual_norm", "miss", "travel_time", "acoustic_length"]);
    w.write_record(&header)?;
    for l in &results {
        let (time, length) = match &l.trajectory {
            Some(t) => {
                let (a, b) = times(field.kind(), t.acoustic_length, cfg.tracing.c_ref);
                (Some(a), Some(b))
            }
            None => (None, None),
        };
        let mut row = vec![l.emitter.to_string(), l.receiver.to_string()];
        row.extend(angle_values(&l.angles));
        row.extend([l.iterations.to_string(), l.converged.to_string(), num(l.residual_norm()), num(l.miss), opt(time), opt(length)]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(results.iter().filter(|l| !l.converged).map(pair_failure).collect())
}

pub fn synth(cfg: &Config, out: &Path, seed: u64) -> Result<Failures> {
    let s = cfg.synth.as_ref();
    let truth = cfg.medium_field()?;
    ensure!(
        matches!(truth.kind(), FieldKind::SoundSpeed | FieldKind::Slowness),
        "synth needs a sound-speed or slowness medium, not {:?}",
        truth.kind()
    );
    let spec = truth.spec().clone();
    let geometry = cfg.geometry(spec.dim())?;
    let lc = cfg.link_config(spec.spacing(), true)?;
    let sigma = s.map_or(0.0, |s| s.noise_sigma);
    let (table, links) = synth_tofs(&truth, &geometry, &lc, cfg.backend(Backend::Bilinear)?, sigma, seed)?;
    let path = out.join("tofs.csv");
    table.write_csv(File::create(&path).with_context(|| format!("cannot create {}", path.display()))?)?;
    let speed = if truth.kind() == FieldKind::SoundSpeed { truth } else { truth.reciprocal(FieldKind::SoundSpeed)? };
    save_field(out.join("truth.rtf"), &speed)?;
    Ok(links.iter().filter(|l| !l.converged).map(pair_failure).collect())
}

pub fn reconstruct_cmd(cfg: &Config, out: &Path) -> Result<Failures> {
    let r = cfg.section(&cfg.reconstruct, "reconstruct")?;
    let spec = cfg.grid_spec()?;
    let geometry = cfg.geometry(spec.dim())?;
    let inv = cfg.inversion(spec.spacing())?;
    let tof_path = cfg.resolve(&r.tofs);
    let file = File::open(&tof_path).with_context(|| format!("cannot open {}", tof_path.display()))?;
    let measured = ToFTable::read_csv(file, geometry.emitters.len(), geometry.receivers.len())
        .with_context(|| format!("cannot read {}", tof_path.display()))?;
    let truth = match &r.truth {
        Some(p) => {
            let full = cfg.resolve(p);
            let kind = r.truth_kind.as_ref().map_or(FieldKind::SoundSpeed, |k| k.kind());
            let f = load_field(&full, kind).with_context(|| format!("cannot load {}", full.display()))?;
            Some(if kind == FieldKind::SoundSpeed { f } else { f.reciprocal(FieldKind::SoundSpeed)? })
        }
        None => None,
    };
    let rec = reconstruct(&measured, &geometry, &spec, &inv, truth.as_ref())?;
    for (k, f) in rec.fields.iter().enumerate() {
        save_field(out.join(format!("speed_{k:03}.rtf")), f)?;
    }
    let mut w = writer(&out.join("run_log.csv"))?;
    w.write_record([
        "iteration",
        "residual_norm",
        "update_norm",
        "rmse",
        "rows",
        "converged_fraction",
        "median_link_iterations",
        "halved",
    ])?;
    w.write_record(["0".to_string(), String::new(), String::new(), opt(rec.initial_rmse), String::new(), String::new(), String::new(), String::new()])?;
    for o in &rec.log {
        w.write_record([
            o.iteration.to_string(),
            num(o.residual_norm),
            num(o.update_norm),
            opt(o.rmse),
            o.rows.to_string(),
            num(o.converged_fraction),
            num(o.median_link_iterations),
            o.halved.to_string(),
        ])?;
    }
    w.flush()?;
    if let Some(last) = rec.log.last() {
        eprintln!("{} outer iterations; last relative update {:.3e}", last.iteration, last.update_norm);
    }
    Ok(Vec::new())
}

pub fn greens(cfg: &Config, out: &Path) -> Result<Failures> {
    let g = cfg.section(&cfg.greens, "greens")?;
    let field = cfg.medium_field()?;
    let spec = field.spec().clone();
    let dim = spec.dim();
    let sampler = ray_medium(&field, cfg.backend(Backend::BSpline)?)?;
    let geometry = cfg.geometry(dim)?;
    let lc = cfg.link_config(spec.spacing(), true)?;
    let s_ref = g.s_ref.unwrap_or(lc.trace.ds);
    let alpha = match g.alpha0 {
        Some(a) => Some(Interpolator::new(ScalarField::constant(spec.clone(), FieldKind::AbsorptionCoefficient, a)?, Backend::Bilinear)),
        None => None,
    };
    let time_scale = if field.kind() == FieldKind::RefractiveIndex { 1.0 / cfg.tracing.c_ref } else { 1.0 };
    let links = link_listed(&geometry, &sampler, &lc, &g.pairs)?;

    let mut w = writer(&out.join("greens.csv"))?;
    let mut header: Vec<String> = ["emitter_id", "receiver_id", "index", "s"].map(String::from).to_vec();
    header.extend(axis_names("", dim));
    header.extend(["travel_time", "jacobian", "amplitude", "int_alpha0", "kappa"].map(String::from));
    header.extend(axis_names("overlay_", dim));
    w.write_record(&header)?;
    let mut failures = Vec::new();
    for l in &links {
        let traj = match (&l.trajectory, l.converged) {
            (Some(t), true) => t,
            _ => {
                failures.push(pair_failure(l));
                continue;
            }
        };
        let params = greens_params(traj, &sampler, alpha.as_ref().map(|a| a as &dyn FieldSampler), s_ref, g.y)
            .with_context(|| format!("pair ({}, {})", l.emitter, l.receiver))?;
        let d0 = traj.directions[0];
        let spread = if dim == 2 { bentray::Point::new(-d0.y, d0.x, 0.0) } else { perpendicular(&d0) };
        let par = trace_paraxial(&sampler, traj, ParaxialState::point_source(spread))?;
        for i in 0..params.len() {
            let mut row = vec![l.emitter.to_string(), l.receiver.to_string(), i.to_string(), num(params.arc[i])];
            row.extend(coords(&traj.samples[i], dim));
            row.extend([
                num(params.travel_time[i] * time_scale),
                num(params.jacobian[i]),
                num(params.amplitude[i]),
                num(params.attenuation[i]),
                params.caustics[i].to_string(),
            ]);
            row.extend(coords(&(traj.samples[i] + g.overlay_scale * par[i].dx), dim).collect::<Vec<_>>());
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(failures)
}
