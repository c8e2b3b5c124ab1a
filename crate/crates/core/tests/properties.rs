use biharmonic::geometry::{norm, TargetManifold};
use biharmonic::grid::{Field, MultiIndex, PeriodicGrid};
use biharmonic::nonlinearity::Nonlinearity;
use proptest::prelude::*;

fn grid2() -> PeriodicGrid {
    PeriodicGrid::standard(2, 16).unwrap()
}

/// Trigonometric polynomial field of low degree from a coefficient vector.
fn trig_field(grid: &PeriodicGrid, comps: usize, c: &[f64]) -> Field {
    Field::from_fn(grid, comps, |x, o| {
        let y = if x.len() > 1 { x[1] } else { 0.0 };
        for (j, v) in o.iter_mut().enumerate() {
            let k = &c[6 * j..6 * j + 6];
            *v = k[0]
                + k[1] * x[0].cos()
                + k[2] * (2.0 * x[0]).sin()
                + k[3] * (x[0] + y).cos()
                + k[4] * (3.0 * y).sin()
                + k[5] * (x[0] - 2.0 * y).cos();
        }
    })
}

fn coeffs(comps: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, 6 * comps)
}

fn point_in_tube() -> impl Strategy<Value = Vec<f64>> {
    (prop::collection::vec(-1.0..1.0f64, 3), 0.6..1.4f64)
        .prop_filter("nonzero", |(p, _)| norm(p) > 1e-3)
        .prop_map(|(p, r)| {
            let n = norm(&p);
            p.iter().map(|x| x * r / n).collect()
        })
}

/// Rotation from unit quaternion components.
fn rotation(q: &[f64]) -> [[f64; 3]; 3] {
    let n = norm(q);
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

fn rotate(r: &[[f64; 3]; 3], f: &Field) -> Field {
    let mut out = f.clone();
    for i in 0..f.len() {
        let p = f.point(i);
        let q: Vec<f64> = r.iter().map(|row| row.iter().zip(&p).map(|(a, b)| a * b).sum()).collect();
        out.set_point(i, &q);
    }
    out
}

/// Smooth loop on the unit sphere with a tangent velocity, parametrized by `c`.
fn sphere_data(grid: &PeriodicGrid, c: &[f64]) -> (Field, Field) {
    let t = TargetManifold::unit_sphere(3);
    let raw = Field::from_fn(grid, 3, |x, o| {
        o[0] = x[0].cos() + 0.2 * c[0] * (2.0 * x[0]).sin();
        o[1] = x[0].sin() + 0.2 * c[1] * x[0].cos();
        o[2] = 0.3 * c[2] * (x[0] + c[3]).sin();
    });
    let vel = Field::from_fn(grid, 3, |x, o| {
        o[0] = c[4] * x[0].sin();
        o[1] = c[5];
        o[2] = c[6] * (2.0 * x[0]).cos();
    });
    let (mut u, mut v) = (raw.clone(), vel.clone());
    let mut buf = [0.0; 3];
    for i in 0..grid.len() {
        let p = t.nearest_point(&raw.point(i)).unwrap();
        t.project_into(&p, &vel.point(i), &mut buf).unwrap();
        u.set_point(i, &p);
        v.set_point(i, &buf);
    }
    (u, v)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn parseval(c in coeffs(2)) {
        let g = grid2();
        let f = trig_field(&g, 2, &c);
        let physical: f64 = f.comps.iter().flatten().map(|x| x * x).sum::<f64>() * g.volume() / g.len() as f64;
        prop_assert!((f.l2_norm().powi(2) - physical).abs() <= 1e-10 * (1.0 + physical));
    }

    #[test]
    fn mixed_derivatives_commute(c in coeffs(1)) {
        let f = trig_field(&grid2(), 1, &c);
        let xy = f.derivative(&MultiIndex::axis(0, 1)).unwrap().derivative(&MultiIndex::axis(1, 2)).unwrap();
        let yx = f.derivative(&MultiIndex::axis(1, 2)).unwrap().derivative(&MultiIndex::axis(0, 1)).unwrap();
        let joint = f.derivative(&MultiIndex::new(&[1, 2])).unwrap();
        prop_assert!(xy.max_abs_diff(&yx) < 1e-10);
        prop_assert!(xy.max_abs_diff(&joint) < 1e-10);
    }

    #[test]
    fn heat_mollifier_is_a_semigroup(c in coeffs(1), a in 0.0..0.5f64, b in 0.0..0.5f64) {
        let f = trig_field(&grid2(), 1, &c);
        let two = f.heat_mollify(a).unwrap().heat_mollify(b).unwrap();
        let one = f.heat_mollify(a + b).unwrap();
        prop_assert!(two.max_abs_diff(&one) < 1e-13);
        prop_assert!(one.l2_norm() <= f.l2_norm() * (1.0 + 1e-14));
    }

    #[test]
    fn projector_is_idempotent_and_tangent(p in point_in_tube(), v in prop::collection::vec(-2.0..2.0f64, 3)) {
        let t = TargetManifold::round_sphere(3, 1.0).unwrap();
        let mut once = [0.0; 3];
        let mut twice = [0.0; 3];
        t.project_into(&p, &v, &mut once).unwrap();
        t.project_into(&p, &once, &mut twice).unwrap();
        let gap = once.iter().zip(&twice).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(gap < 1e-14);
        prop_assert!(biharmonic::geometry::dot(&p, &once).abs() < 1e-13);
    }

    #[test]
    fn nearest_point_lands_on_target(p in point_in_tube(), r in 0.5..2.0f64) {
        let t = TargetManifold::round_sphere(3, r).unwrap();
        let scaled: Vec<f64> = p.iter().map(|x| x * r).collect();
        let q = t.nearest_point(&scaled).unwrap();
        prop_assert!(t.distance(&q) < 1e-14 * r);
        prop_assert!((t.distance(&scaled) - norm(&q.iter().zip(&scaled).map(|(a, b)| a - b).collect::<Vec<_>>())).abs() < 1e-13);
    }

    #[test]
    fn projector_derivatives_are_symmetric(p in point_in_tube(), a in prop::collection::vec(-1.0..1.0f64, 3), b in prop::collection::vec(-1.0..1.0f64, 3)) {
        let t = TargetManifold::unit_sphere(3);
        let ab = t.projector_derivative(&p, &[&a, &b]).unwrap();
        let ba = t.projector_derivative(&p, &[&b, &a]).unwrap();
        prop_assert!(ab.max_abs_diff(&ba) < 1e-13);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn nonlinearity_is_rotation_equivariant(c in prop::collection::vec(-1.0..1.0f64, 7), q in prop::collection::vec(-1.0..1.0f64, 4)) {
        prop_assume!(norm(&q) > 0.1);
        let g = PeriodicGrid::standard(1, 32).unwrap();
        let t = TargetManifold::unit_sphere(3);
        let nl = Nonlinearity::new(&t, &g, 2.0).unwrap();
        let (u, v) = sphere_data(&g, &c);
        let r = rotation(&q);
        for eps in [0.0, 0.4] {
            let lhs = nl.regularized(&rotate(&r, &u), &rotate(&r, &v), eps).unwrap();
            let rhs = rotate(&r, &nl.regularized(&u, &v, eps).unwrap());
            let scale = 1.0 + rhs.sup_norm();
            prop_assert!(lhs.max_abs_diff(&rhs) < 1e-10 * scale);
        }
    }

    #[test]
    fn nonlinearity_is_normal_on_resolved_data(c in prop::collection::vec(-1.0..1.0f64, 7)) {
        let g = PeriodicGrid::standard(1, 128).unwrap();
        let t = TargetManifold::unit_sphere(3);
        let nl = Nonlinearity::new(&t, &g, 2.0).unwrap();
        let (u, v) = sphere_data(&g, &c);
        prop_assert!(nl.orthogonality_residual(&u, &v).unwrap() < 1e-8);
    }

    #[test]
    fn flat_target_has_no_nonlinearity(c in coeffs(2), d in coeffs(2)) {
        let g = grid2();
        let t = TargetManifold::flat(2);
        let nl = Nonlinearity::new(&t, &g, 2.0).unwrap();
        let n = nl.regularized(&trig_field(&g, 2, &c), &trig_field(&g, 2, &d), 0.3).unwrap();
        prop_assert_eq!(n.sup_norm(), 0.0);
    }
}
