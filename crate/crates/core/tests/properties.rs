use approx::relative_eq;
use bentray::field::interp_weights;
use bentray::linker::wrap_angle;
use bentray::paraxial::{trace_paraxial, ParaxialState};
use bentray::phantom::Phantom;
use bentray::tof::{cg_solve, sart_step, SparseSystem, ToFTable};
use bentray::tracer::{acoustic_length, system_row, trace, SparseRow, StopCondition, TraceConfig};
use bentray::{Backend, FieldKind, FieldSampler, GridSpec, Interpolator, Point, RayState, ScalarField, StepAlgorithm};
use proptest::prelude::*;
use std::f64::consts::PI;

fn grid(dim: usize) -> GridSpec {
    let counts = if dim == 2 { vec![24, 24] } else { vec![12, 12, 12] };
    GridSpec::new(dim, &vec![-1.0; dim], 2.0 / (counts[0] - 1) as f64, &counts).unwrap()
}

fn smooth(dim: usize) -> ScalarField {
    ScalarField::from_fn(grid(dim), FieldKind::RefractiveIndex, |x| {
        1.0 + 0.2 * (1.3 * x[0]).sin() * (0.9 * x[1]).cos() + 0.1 * x[2] * x[2]
    })
    .unwrap()
}

fn backend() -> impl Strategy<Value = Backend> {
    prop_oneof![Just(Backend::Bilinear), Just(Backend::BSpline)]
}

fn algorithm() -> impl Strategy<Value = StepAlgorithm> {
    prop::sample::select(StepAlgorithm::ALL.to_vec())
}

fn interior(dim: usize) -> impl Strategy<Value = Point> {
    prop::array::uniform3(-0.95..0.95f64).prop_map(move |a| {
        let mut p = Point::from(a);
        if dim == 2 {
            p[2] = 0.0;
        }
        p
    })
}

/// Sparse rows with strictly positive entries and at least one entry per column.
fn positive_system(n_rows: usize, n_cols: usize) -> impl Strategy<Value = (SparseSystem, Vec<f64>)> {
    (
        prop::collection::vec(prop::collection::vec(0.0..1.0f64, n_cols), n_rows),
        prop::collection::vec(-1.0..1.0f64, n_cols),
    )
        .prop_map(move |(dense, u)| {
            let rows: Vec<SparseRow> = dense
                .iter()
                .enumerate()
                .map(|(i, r)| SparseRow {
                    entries: r
                        .iter()
                        .enumerate()
                        .filter(|&(j, &a)| a > 0.3 || j % n_rows == i)
                        .map(|(j, &a)| (j, a + 0.05))
                        .collect(),
                })
                .collect();
            (SparseSystem::from_rows(rows, vec![0.0; n_rows], n_cols), u)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn weights_form_a_partition_of_unity(dim in 2usize..=3, b in backend(), seed in interior(3)) {
        let mut x = seed;
        if dim == 2 { x[2] = 0.0; }
        let w = interp_weights(&grid(dim), &x, b).unwrap();
        let total: f64 = w.iter().map(|(_, v)| v).sum();
        prop_assert!((total - 1.0).abs() < 1e-12, "sum {total}");
        prop_assert!(w.iter().all(|(_, v)| *v >= -1e-15));
    }

    #[test]
    fn bilinear_value_matches_weights(dim in 2usize..=3, x in interior(3)) {
        let mut x = x;
        if dim == 2 { x[2] = 0.0; }
        let f = smooth(dim);
        let w = interp_weights(f.spec(), &x, Backend::Bilinear).unwrap();
        let via_weights: f64 = w.iter().map(|&(i, v)| v * f.values()[i]).sum();
        prop_assert!((Interpolator::new(f, Backend::Bilinear).value(&x).unwrap() - via_weights).abs() < 1e-12);
    }

    #[test]
    fn bspline_gradient_matches_finite_differences(dim in 2usize..=3, x in interior(3)) {
        let mut x = x;
        if dim == 2 { x[2] = 0.0; }
        let interp = Interpolator::new(smooth(dim), Backend::BSpline);
        let g = interp.sample(&x).unwrap().gradient;
        let h = 1e-6;
        for a in 0..dim {
            let mut e = Point::zeros();
            e[a] = h;
            let fd = (interp.value(&(x + e)).unwrap() - interp.value(&(x - e)).unwrap()) / (2.0 * h);
            prop_assert!((g[a] - fd).abs() < 1e-6, "axis {a}: {} vs {fd}", g[a]);
        }
    }

    #[test]
    fn bilinear_reproduces_affine_fields(dim in 2usize..=3, c in prop::array::uniform4(-1.0..1.0f64), x in interior(3)) {
        let mut x = x;
        if dim == 2 { x[2] = 0.0; }
        let g = Point::new(c[1], c[2], if dim == 3 { c[3] } else { 0.0 });
        let f = ScalarField::from_fn(grid(dim), FieldKind::SoundSpeed, |p| 3.0 + c[0] + g.dot(p)).unwrap();
        let s = Interpolator::new(f, Backend::Bilinear).sample(&x).unwrap();
        prop_assert!((s.value - (3.0 + c[0] + g.dot(&x))).abs() < 1e-12);
        prop_assert!((s.gradient - g).norm() < 1e-10);
    }

    #[test]
    fn directions_stay_unit(alg in algorithm(), theta in -PI..PI, phi in 0.0..PI) {
        let lens = Phantom::FishEye { a: 0.5, n0: 1.0 };
        let f = bentray::phantom::rasterize(&lens, grid(3)).unwrap();
        let interp = Interpolator::new(f, Backend::BSpline);
        let d = Point::new(phi.sin() * theta.cos(), phi.sin() * theta.sin(), phi.cos());
        let mut cfg = TraceConfig::new(0.02, alg);
        cfg.max_steps = 60;
        let traj = trace(&interp, RayState::new(Point::new(0.1, -0.2, 0.05), d), &cfg, &StopCondition::BoundaryExit).unwrap();
        for d in &traj.directions {
            prop_assert!((d.norm() - 1.0).abs() < 1e-12);
        }
        for w in traj.arc.windows(2) {
            prop_assert!(w[1] > w[0]);
        }
    }

    #[test]
    fn reversal_preserves_length_and_rows(alg in algorithm(), b in backend(), theta in -PI..PI) {
        let interp = Interpolator::new(smooth(2), Backend::BSpline);
        let d = Point::new(theta.cos(), theta.sin(), 0.0);
        let traj = trace(&interp, RayState::new(Point::new(0.05, 0.1, 0.0), d), &TraceConfig::new(0.03, alg), &StopCondition::BoundaryExit).unwrap();
        let back = traj.reversed();
        let (l, lb) = (acoustic_length(&traj, &interp).unwrap(), acoustic_length(&back, &interp).unwrap());
        prop_assert!(relative_eq!(l, lb, max_relative = 1e-12));
        let (r, rb) = (system_row(&traj, interp.spec(), b).unwrap(), system_row(&back, interp.spec(), b).unwrap());
        prop_assert!(relative_eq!(r.sum(), rb.sum(), max_relative = 1e-12));
        // weights sum to one, so a unit field integrates to the arc length
        prop_assert!(relative_eq!(r.sum(), traj.total_arc(), max_relative = 1e-12));
    }

    #[test]
    fn system_rows_integrate_the_nodal_field(alg in algorithm(), theta in -PI..PI) {
        let f = smooth(2);
        let interp = Interpolator::new(f.clone(), Backend::Bilinear);
        let d = Point::new(theta.cos(), theta.sin(), 0.0);
        let traj = trace(&interp, RayState::new(Point::new(-0.1, 0.0, 0.0), d), &TraceConfig::new(0.04, alg), &StopCondition::BoundaryExit).unwrap();
        let row = system_row(&traj, f.spec(), Backend::Bilinear).unwrap();
        prop_assert!(relative_eq!(row.dot(f.values()), acoustic_length(&traj, &interp).unwrap(), max_relative = 1e-12));
    }

    #[test]
    fn paraxial_solutions_are_linear(a in -2.0..2.0f64, b in -2.0..2.0f64, u in prop::array::uniform3(-1.0..1.0f64), v in prop::array::uniform3(-1.0..1.0f64)) {
        let lens = Phantom::FishEye { a: 0.6, n0: 1.0 };
        let interp = Interpolator::new(bentray::phantom::rasterize(&lens, grid(3)).unwrap(), Backend::BSpline);
        let mut cfg = TraceConfig::new(0.02, StepAlgorithm::RungeKutta2);
        cfg.max_steps = 50;
        let traj = trace(&interp, RayState::new(Point::new(-0.5, 0.1, 0.0), Point::new(1.0, 0.0, 0.0)), &cfg, &StopCondition::BoundaryExit).unwrap();
        let (u, v) = (Point::from(u), Point::from(v));
        let p = trace_paraxial(&interp, &traj, ParaxialState::point_source(u)).unwrap();
        let q = trace_paraxial(&interp, &traj, ParaxialState::point_source(v)).unwrap();
        let pq = trace_paraxial(&interp, &traj, ParaxialState::point_source(a * u + b * v)).unwrap();
        for ((p, q), pq) in p.iter().zip(&q).zip(&pq) {
            prop_assert!((a * p.dx + b * q.dx - pq.dx).norm() < 1e-10);
            prop_assert!((a * p.dd + b * q.dd - pq.dd).norm() < 1e-10);
        }
    }

    #[test]
    fn consistent_systems_are_sart_fixed_points((mut sys, u) in positive_system(7, 5), relax in 0.1..1.9f64) {
        sys.residual = sys.apply(&u);
        let mut w = u.clone();
        sart_step(&sys, &mut w, relax);
        for (a, b) in w.iter().zip(&u) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cgls_residual_never_increases((mut sys, u) in positive_system(9, 6), noise in prop::collection::vec(-0.1..0.1f64, 9)) {
        sys.residual = sys.apply(&u).iter().zip(&noise).map(|(a, e)| a + e).collect();
        let out = cg_solve(&sys, 6);
        for w in out.residual_norms.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12), "{:?}", out.residual_norms);
        }
    }

    #[test]
    fn wrapped_angles_are_congruent(a in -100.0..100.0f64) {
        let w = wrap_angle(a);
        prop_assert!(w > -PI && w <= PI);
        let k = (a - w) / (2.0 * PI);
        prop_assert!((k - k.round()).abs() < 1e-9);
    }

    #[test]
    fn tof_table_csv_round_trips(times in prop::collection::vec(prop::option::of(1e-6..1e-3f64), 12)) {
        let mut t = ToFTable::empty(3, 4);
        for (p, v) in times.iter().enumerate() {
            if let Some(v) = v {
                t.set(p / 4, p % 4, *v).unwrap();
            }
        }
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        prop_assert_eq!(ToFTable::read_csv(buf.as_slice(), 3, 4).unwrap(), t);
    }
}
