//! Acceptance suite: one pass/fail line per criterion, written straight to
//! stderr so it shows up without `--nocapture`.

use bentray::field::{interp_weights, AnalyticField, Backend, FieldKind, GridSpec, InterpSample, Interpolator, ScalarField};
use bentray::linker::{broyden, link_secant, AngleParam, ArrayGeometry, LinkConfig, LinkProblem};
use bentray::paraxial::{geometric_amplitude, ray_jacobian_auxiliary, ray_jacobian_paraxial, trace_paraxial, greens_params, ParaxialState};
use bentray::phantom::{rasterize, Blob, Experiment, Phantom};
use bentray::tof::{tof_link_config, cg_solve, reconstruct, sart_solve, synth_tofs, InversionConfig, Solver, SparseSystem};
use bentray::tracer::{trace, SparseRow, StopCondition, Termination, TraceConfig};
use bentray::validate::FisheyeBench;
use bentray::{FieldSampler, Point, RayState, StepAlgorithm};
use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::io::Write;
use std::time::Instant;

fn report(id: &str, name: &str, pass: bool, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "acceptance {id:>3} {verdict} {name}: {detail}");
    assert!(pass, "criterion {id} ({name}) failed: {detail}");
}

const ALGS: [StepAlgorithm; 4] = StepAlgorithm::ALL;

#[test]
fn c01_fisheye_closure() {
    let t0 = Instant::now();
    let bench = FisheyeBench::new(2, 1.0, 1.0, Experiment::Radius, Backend::BSpline).unwrap();
    let start = bench.launches()[0];
    let traj = trace(&bench.field, start, &TraceConfig::new(bench.dx, StepAlgorithm::RungeKutta2), &StopCondition::ClosedLoop).unwrap();
    let elapsed = t0.elapsed().as_secs_f64();
    let gap = (traj.end() - start.x).norm();
    let pass = traj.termination == Termination::ClosedLoop && gap < bench.dx && elapsed < 1.0;
    report("1", "fish-eye closure (2D, RK2, ds/dx = 1)", pass, format!("{:?}, |x_end - x_p| = {gap:.3e} < ds = {:.3e}, {elapsed:.3} s", traj.termination, bench.dx));
}

/// Regression values of RE_rd (percent) at ds/dx = 1, frozen after the first build.
const BASELINE_RE_RD: [(usize, StepAlgorithm, f64); 8] = [
    (2, StepAlgorithm::DualUpdate, 2.94153442e-3),
    (2, StepAlgorithm::MixedStep, 1.39413091e0),
    (2, StepAlgorithm::Characteristics, 1.55686370e-2),
    (2, StepAlgorithm::RungeKutta2, 1.57904065e-3),
    (3, StepAlgorithm::DualUpdate, 1.68932632e-3),
    (3, StepAlgorithm::MixedStep, 5.28207305e-1),
    (3, StepAlgorithm::Characteristics, 8.37351889e-3),
    (3, StepAlgorithm::RungeKutta2, 1.74191906e-3),
];

#[test]
fn c02_algorithm_ordering() {
    let mut lines = Vec::new();
    let mut pass = true;
    for dim in [2, 3] {
        let bench = FisheyeBench::new(dim, 1.0, 1.0, Experiment::Radius, Backend::BSpline).unwrap();
        let re: Vec<f64> = ALGS.iter().map(|&a| bench.run(a, 1.0)).map(|m| {
            pass &= m.failures().is_empty();
            m.value
        }).collect();
        let [dual, mixed, _, rk2] = [re[0], re[1], re[2], re[3]];
        pass &= mixed >= dual && mixed >= rk2;
        for (alg, v) in ALGS.iter().zip(&re) {
            let frozen = BASELINE_RE_RD.iter().find(|b| b.0 == dim && b.1 == *alg).unwrap().2;
            pass &= ((v - frozen) / frozen).abs() < 1e-3;
        }
        lines.push(format!("{dim}D RE_rd% (frozen to 1e-3 rel) dual {:.8e} mixed {:.8e} char {:.8e} rk2 {:.8e}", re[0], re[1], re[2], re[3]));
    }
    report("2", "algorithm ordering (mixed-step worst)", pass, lines.join("; "));
}

#[test]
fn c03_acoustic_length_agreement() {
    let mut lines = Vec::new();
    let mut pass = true;
    for dim in [2, 3] {
        let bench = FisheyeBench::new(dim, 1.0, 1.0, Experiment::Length, Backend::BSpline).unwrap();
        let re: Vec<f64> = ALGS.iter().map(|&a| bench.run(a, 1.0)).map(|m| {
            pass &= m.failures().is_empty();
            m.value
        }).collect();
        let max = re.iter().fold(f64::MIN, |a, &b| a.max(b));
        let min = re.iter().fold(f64::MAX, |a, &b| a.min(b));
        let largest = re.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let spread = max - min;
        pass &= spread * 10.0 <= largest;
        lines.push(format!("{dim}D RE_al% {:?}, spread {spread:.3e} vs max |RE_al| {largest:.3e}", re.iter().map(|v| format!("{v:.4e}")).collect::<Vec<_>>()));
    }
    report("3", "acoustic-length agreement across algorithms", pass, lines.join("; "));
}

#[test]
fn c04_analytic_length() {
    let b2 = FisheyeBench::new(2, 1.0, 1.0, Experiment::Length, Backend::BSpline).unwrap();
    let chord = trace(
        &b2.field,
        RayState::new(Point::new(0.0, 1.0, 0.0), -Point::y()),
        &TraceConfig::new(b2.dx, StepAlgorithm::RungeKutta2),
        &StopCondition::Target { point: Point::new(0.0, -1.0, 0.0) },
    )
    .unwrap();
    let e2 = chord.acoustic_length / (PI / 2.0) - 1.0;
    let b3 = FisheyeBench::new(3, 1.0, 1.0, Experiment::Length, Backend::BSpline).unwrap();
    let m3 = b3.run(StepAlgorithm::RungeKutta2, 1.0);
    let worst3 = m3.rays.iter().map(|r| (r.acoustic_length / PI - 1.0).abs()).fold(0.0, f64::max);
    let pass = chord.termination == Termination::ReceiverCapture && e2.abs() <= 0.005 && m3.failures().is_empty() && worst3 <= 0.005;
    report("4", "analytic acoustic length (2D chord pi/2, 3D loop pi)", pass, format!("2D L = {:.6} (rel {e2:.2e}); 3D worst rel {worst3:.2e} over {} rays", chord.acoustic_length, m3.ray_count()));
}

#[test]
fn c05_quadrature_order() {
    // n depends only on xi = x . u, so a ray launched along u stays straight
    let u = Point::new(0.6, 0.8, 0.0);
    let h = |xi: f64| 1.0 + 0.3 * (3.0 * xi).sin() + 0.1 * xi * xi;
    let antiderivative = |xi: f64| xi - 0.1 * (3.0 * xi).cos() + 0.1 * xi.powi(3) / 3.0;
    let f = AnalyticField::new(2, Point::repeat(-2.0), Point::repeat(2.0), move |x: &Point| {
        let xi = x.dot(&u);
        InterpSample { value: h(xi), gradient: (0.9 * (3.0 * xi).cos() + 0.2 * xi) * u, hessian: None }
    });
    let a = Point::new(-0.9, -0.4, 0.0);
    let (xa, len) = (a.dot(&u), 1.2345);
    let b = a + len * u;
    let exact = antiderivative(xa + len) - antiderivative(xa);
    let base = 0.05;
    let ratios = [1.0, 0.5, 0.25, 0.125];
    let errs: Vec<f64> = ratios
        .iter()
        .map(|r| {
            let t = trace(&f, RayState::new(a, u), &TraceConfig::new(base * r, StepAlgorithm::RungeKutta2), &StopCondition::Target { point: b }).unwrap();
            assert_eq!(t.termination, Termination::ReceiverCapture);
            (t.acoustic_length - exact).abs()
        })
        .collect();
    // least-squares slope of log(err) against log(ds)
    let xs: Vec<f64> = ratios.iter().map(|r| (base * r).ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / 4.0, ys.iter().sum::<f64>() / 4.0);
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    report("5", "trapezoid quadrature order", (slope - 2.0).abs() <= 0.1, format!("slope {slope:.4}, errors {errs:?}"));
}

#[test]
fn c06_interpolation_suite() {
    let mut worst_cubic = 0.0f64;
    let mut worst_grad = 0.0f64;
    let mut worst_pu = 0.0f64;
    // cubic reproduction away from the replicate-boundary layer
    let h = 0.05;
    let n = 60;
    let spec = GridSpec::new(2, &[0.0, 0.0], h, &[n, n]).unwrap();
    let cubic = |p: &Point| 2.0 + p.x.powi(3) - 0.5 * p.x * p.x * p.y + 0.7 * p.y.powi(3) + p.x * p.y;
    let bs = Interpolator::new(ScalarField::from_fn(spec.clone(), FieldKind::SoundSpeed, cubic).unwrap(), Backend::BSpline);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let lo = 20.0 * h;
    let hi = (n as f64 - 21.0) * h;
    for _ in 0..500 {
        let p = Point::new(rng.random_range(lo..hi), rng.random_range(lo..hi), 0.0);
        let s = bs.sample(&p).unwrap();
        worst_cubic = worst_cubic.max(((s.value - cubic(&p)) / cubic(&p)).abs());
        let e = 1e-6;
        let fd = Point::new(
            (bs.value(&(p + Point::x() * e)).unwrap() - bs.value(&(p - Point::x() * e)).unwrap()) / (2.0 * e),
            (bs.value(&(p + Point::y() * e)).unwrap() - bs.value(&(p - Point::y() * e)).unwrap()) / (2.0 * e),
            0.0,
        );
        worst_grad = worst_grad.max((s.gradient - fd).norm() / s.gradient.norm());
    }
    // partition of unity anywhere in the grid, both backends, 2D and 3D
    let spec3 = GridSpec::new(3, &[0.0; 3], 0.1, &[7, 8, 9]).unwrap();
    for sp in [&spec, &spec3] {
        let up = sp.upper();
        for _ in 0..300 {
            let p = Point::new(rng.random_range(0.0..up.x), rng.random_range(0.0..up.y), if sp.dim() == 3 { rng.random_range(0.0..up.z) } else { 0.0 });
            for backend in [Backend::Bilinear, Backend::BSpline] {
                let w: f64 = interp_weights(sp, &p, backend).unwrap().iter().map(|e| e.1).sum();
                worst_pu = worst_pu.max((w - 1.0).abs());
            }
        }
    }
    let pass = worst_cubic <= 1e-9 && worst_grad <= 1e-6 && worst_pu <= 1e-12;
    report("6", "interpolation suite", pass, format!("cubic rel {worst_cubic:.2e}, gradient vs FD rel {worst_grad:.2e}, partition of unity {worst_pu:.2e}"));
}

#[test]
fn c07_linking() {
    let spec = GridSpec::covering(2, &[-0.1, -0.1], &[0.1, 0.1], 0.2 / 63.0).unwrap();
    let water = Interpolator::new(ScalarField::constant(spec.clone(), FieldKind::Slowness, 1.0 / 1500.0).unwrap(), Backend::BSpline);
    let geom = ArrayGeometry::interleaved_ring(Point::zeros(), 0.09, 32, 32);
    let cfg = LinkConfig::new(TraceConfig::new(spec.spacing(), StepAlgorithm::RungeKutta2), spec.spacing());
    let mut worst_it = 0;
    let mut all = true;
    for e in 0..32 {
        for r in 0..32 {
            let p = LinkProblem::new(&geom, e, r, cfg).unwrap();
            let aim = p.aim().to_array()[0];
            let res = link_secant(&water, &p, (AngleParam::planar(aim + 3f64.to_radians()), AngleParam::planar(aim - 2f64.to_radians())));
            all &= res.converged;
            worst_it = worst_it.max(res.iterations);
        }
    }
    let a = Matrix2::new(1.7, -0.3, 0.45, 0.9);
    let root = Vector2::new(-0.2, 0.65);
    let g = |u: Vector2<f64>| a * (u - root);
    let b = broyden(|u| Some((g(u), g(u).norm() < 1e-10)), Vector2::new(0.1, 0.1), Matrix2::identity(), 10).unwrap();
    let pass = all && worst_it <= 2 && b.converged && b.iterations <= 10 && g(b.x).norm() < 1e-10;
    report("7", "linking (homogeneous secant, affine Broyden)", pass, format!("1024 ring pairs converged: {all}, max secant iterations {worst_it}; Broyden {} iterations, residual {:.1e}", b.iterations, g(b.x).norm()));
}

#[test]
fn c08_inner_solvers() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst_cg = 0.0f64;
    for _ in 0..10 {
        let (m, n) = (20, 30);
        let mut dense = DMatrix::<f64>::zeros(m, n);
        let rows: Vec<SparseRow> = (0..m)
            .map(|i| {
                let mut entries: Vec<(usize, f64)> = (0..n).filter_map(|j| rng.random_bool(0.25).then(|| (j, rng.random_range(0.1..1.0)))).collect();
                if entries.is_empty() {
                    entries.push((i, 1.0));
                }
                for &(j, v) in &entries {
                    dense[(i, j)] = v;
                }
                SparseRow { entries }
            })
            .collect();
        let b: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let sys = SparseSystem::from_rows(rows, b.clone(), n);
        let cg = cg_solve(&sys, 30).update;
        let oracle = dense.clone().svd(true, true).solve(&DVector::from_vec(b), 1e-12).unwrap();
        let err = cg.iter().zip(oracle.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst_cg = worst_cg.max(err);
    }
    let mut worst_sart = 0.0f64;
    for _ in 0..10 {
        let n = 6;
        let mut dense = DMatrix::<f64>::zeros(n, n);
        let rows: Vec<SparseRow> = (0..n)
            .map(|i| {
                let entries: Vec<(usize, f64)> = (0..n).filter_map(|j| if j == i { Some((j, 3.0)) } else { rng.random_bool(0.3).then(|| (j, rng.random_range(0.1..0.5))) }).collect();
                for &(j, v) in &entries {
                    dense[(i, j)] = v;
                }
                SparseRow { entries }
            })
            .collect();
        let x = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let b = &dense * &x;
        let sys = SparseSystem::from_rows(rows, b.iter().copied().collect(), n);
        let u = sart_solve(&sys, 2000, 1.0);
        let r = (&dense * DVector::from_vec(u) - b).norm();
        worst_sart = worst_sart.max(r);
    }
    let pass = worst_cg <= 1e-8 && worst_sart < 1e-8;
    report("8", "inner solvers (CGLS vs dense least squares, SART)", pass, format!("CG max |u - pinv b| {worst_cg:.2e} over 10 random 20x30 systems; SART residual {worst_sart:.2e}"));
}

#[test]
fn c09_end_to_end_inversion() {
    let t0 = Instant::now();
    let spec = GridSpec::new(2, &[-0.1, -0.1], 0.2 / 63.0, &[64, 64]).unwrap();
    let c0 = 1500.0;
    let phantom = Phantom::Blobs { c0, blobs: vec![Blob { center: Point::new(0.012, -0.008, 0.0), sigma: 0.018, amplitude: 0.03 * c0 }] };
    let truth = rasterize(&phantom, spec.clone()).unwrap();
    let geom = ArrayGeometry::interleaved_ring(Point::zeros(), 0.09, 32, 32);
    let link = tof_link_config(StepAlgorithm::RungeKutta2, spec.spacing());
    let (tofs, _) = synth_tofs(&truth, &geom, &link, Backend::Bilinear, 0.0, 0).unwrap();
    let mut cfg = InversionConfig::new(Solver::Sart, c0, link);
    cfg.outer_iterations = 10;
    let rec = reconstruct(&tofs, &geom, &spec, &cfg, Some(&truth)).unwrap();
    let elapsed = t0.elapsed().as_secs_f64();
    let mut curve = vec![rec.initial_rmse.unwrap()];
    curve.extend(rec.log.iter().map(|r| r.rmse.unwrap()));
    let decreasing = curve.len() >= 6 && curve[..6].windows(2).all(|w| w[1] < w[0]);
    let ratio = curve.last().unwrap() / curve[0];
    let pass = decreasing && ratio <= 0.5 && elapsed < 120.0;
    report("9", "end-to-end ToF inversion", pass, format!("{} of 1024 pairs measured; RMSE curve {:?}; final/initial {ratio:.3}; {elapsed:.1} s", tofs.valid_count(), curve.iter().map(|v| format!("{v:.4e}")).collect::<Vec<_>>()));
}

#[test]
fn c10_greens_parameters() {
    // homogeneous spreading ratios
    let c = 1500.0;
    let mut worst_ratio = 0.0f64;
    for dim in [2usize, 3] {
        let spec = GridSpec::covering(dim, &vec![-0.1; dim], &vec![0.1; dim], 0.005).unwrap();
        let slow = Interpolator::new(ScalarField::constant(spec, FieldKind::Slowness, 1.0 / c).unwrap(), Backend::BSpline);
        let d = if dim == 2 { Point::new(0.8, 0.6, 0.0) } else { Point::new(0.48, 0.6, 0.64) };
        let x0 = -0.08 * d;
        let t = trace(&slow, RayState::new(x0, d), &TraceConfig::new(0.005, StepAlgorithm::RungeKutta2), &StopCondition::Target { point: 0.08 * d }).unwrap();
        let g = greens_params(&t, &slow, None, 0.005, 1.0).unwrap();
        for (i1, i2) in [(4, 20), (10, 30), (2, 31)] {
            let (s1, s2) = (g.arc[i1], g.arc[i2]);
            let expect = if dim == 2 { (s1 / s2).sqrt() } else { s1 / s2 };
            worst_ratio = worst_ratio.max((g.amplitude[i2] / g.amplitude[i1] / expect - 1.0).abs());
        }
    }
    // phase in homogeneous media
    let spec = GridSpec::covering(2, &[-0.1, -0.1], &[0.1, 0.1], 0.005).unwrap();
    let slow = Interpolator::new(ScalarField::constant(spec, FieldKind::Slowness, 1.0 / c).unwrap(), Backend::BSpline);
    let t = trace(&slow, RayState::new(Point::new(-0.07, 0.0, 0.0), Point::new(1.0, 0.2, 0.0)), &TraceConfig::new(0.005, StepAlgorithm::RungeKutta2), &StopCondition::BoundaryExit).unwrap();
    let g = greens_params(&t, &slow, None, 0.005, 1.0).unwrap();
    let omega = 2.0 * PI * 2.5e6;
    let worst_phase = g.phase(omega).iter().zip(&g.arc).skip(1).map(|(p, s)| (p / (omega * s / c) - 1.0).abs()).fold(0.0, f64::max);
    // transport invariant along a fish-eye ray: paraxial amplitude against auxiliary-ray Jacobian
    let bench = FisheyeBench::new(2, 1.0, 1.0, Experiment::Length, Backend::BSpline).unwrap();
    let launch = RayState::new(Point::new(0.0, 1.0, 0.0), Point::new(0.5, -1.0, 0.0));
    let ray = trace(&bench.field, launch, &TraceConfig::new(bench.dx, StepAlgorithm::RungeKutta2), &StopCondition::Target { point: Point::new(0.0, -1.0, 0.0) }).unwrap();
    let par = ray_jacobian_paraxial(&bench.field, &ray).unwrap();
    let aux = ray_jacobian_auxiliary(&bench.field, &ray, 0.5f64.to_radians(), StepAlgorithm::RungeKutta2).unwrap();
    let n: Vec<f64> = ray.samples.iter().map(|x| bench.field.value(x).unwrap()).collect();
    let amp = geometric_amplitude(&par, &n, bench.dx);
    let total = ray.total_arc();
    let inv: Vec<f64> = (0..ray.len())
        .filter(|&i| ray.arc[i] >= bench.dx && ray.arc[i] <= 0.9 * total)
        .map(|i| amp[i] * amp[i] * n[i] * aux.j[i])
        .collect();
    let (lo, hi) = inv.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    let drift = (hi - lo) / inv[0];
    let pass = worst_ratio <= 0.005 && drift <= 0.01 && worst_phase <= 1e-10;
    report("10", "Green's function parameters", pass, format!("spreading ratio error {worst_ratio:.2e}; A^2 n J drift {drift:.2e} over {} samples; phase rel error {worst_phase:.2e}", inv.len()));
}

#[test]
fn c11_paraxial_refocusing() {
    let bench = FisheyeBench::new(2, 1.0, 1.0, Experiment::Radius, Backend::BSpline).unwrap();
    let start = bench.launches()[0];
    let ray = trace(&bench.field, start, &TraceConfig::new(bench.dx, StepAlgorithm::RungeKutta2), &StopCondition::ClosedLoop).unwrap();
    let e = Point::new(-start.d.y, start.d.x, 0.0);
    let p = trace_paraxial(&bench.field, &ray, ParaxialState::point_source(e)).unwrap();
    let mags: Vec<f64> = p.iter().map(|s| s.dx.norm()).collect();
    let max = mags.iter().fold(0.0f64, |a, &b| a.max(b));
    let end = *mags.last().unwrap();
    let pass = ray.termination == Termination::ClosedLoop && end <= 0.05 * max;
    report("11", "paraxial refocusing after a full loop", pass, format!("|dx| at return {end:.3e}, max {max:.3e}, ratio {:.3e}", end / max));
}
