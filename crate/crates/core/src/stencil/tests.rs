use std::sync::{Arc, OnceLock};

use nalgebra::Matrix3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::grid::{assemble_point_cloud, Ball};

fn ball_cloud(n: usize) -> PointCloud {
    assemble_point_cloud(Arc::new(Ball::unit()), n).unwrap()
}

fn cloud8() -> &'static PointCloud {
    static C: OnceLock<PointCloud> = OnceLock::new();
    C.get_or_init(|| ball_cloud(8))
}

fn cloud16() -> &'static PointCloud {
    static C: OnceLock<PointCloud> = OnceLock::new();
    C.get_or_init(|| ball_cloud(16))
}

fn sample(cloud: &PointCloud, f: impl Fn(&Vec3) -> f64) -> Vec<f64> {
    cloud.points().iter().map(f).collect()
}

/// Interior node nearest to `x`.
fn interior_near(cloud: &PointCloud, x: Vec3) -> NodeId {
    cloud
        .interior_ids()
        .min_by(|a, b| (cloud.point(*a) - x).norm().total_cmp(&(cloud.point(*b) - x).norm()))
        .unwrap()
}

fn random_unit(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

fn random_symmetric(rng: &mut impl Rng) -> Matrix3<f64> {
    let m = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
    let s: Matrix3<f64> = (m + m.transpose()) * 0.5;
    let norm = s.norm();
    s / norm.max(1.0)
}

fn quadratic(a: Matrix3<f64>) -> impl Fn(&Vec3) -> f64 {
    move |x: &Vec3| 0.5 * x.dot(&(a * x))
}

fn frame_ok(nu: &Vec3) {
    let (a, b) = complete_frame(nu);
    assert!((a.norm() - 1.0).abs() < 1e-12 && (b.norm() - 1.0).abs() < 1e-12);
    assert!(a.dot(nu).abs() < 1e-12 && b.dot(nu).abs() < 1e-12 && a.dot(&b).abs() < 1e-12);
    assert!((nu.cross(&a) - b).norm() < 1e-12);
}

fn linear_degenerate_direction() -> Vec3 {
    Vec3::new(1.0, -1.0, -(3f64.sqrt() + 6f64.sqrt()) / 3.0).normalize()
}

/// Checks the stencil invariants independently of how it was built.
fn check_second_invariants(cloud: &PointCloud, s: &Stencil) {
    assert_eq!(s.kind, StencilKind::SecondDirectional);
    let mut ids = s.neighbors.clone();
    ids.sort_unstable();
    ids.dedup();
    assert_eq!(ids.len(), s.neighbors.len(), "neighbors are distinct");
    assert!(!s.neighbors.contains(&s.reference));
    let p0 = cloud.point(s.reference);
    let (nu2, nu3) = complete_frame(&s.direction);
    let mut first = Vec3::zeros();
    let mut second = 0.0;
    let mut scale: f64 = 0.0;
    for (id, &a) in s.neighbors.iter().zip(&s.coefficients) {
        assert!(a >= 0.0, "coefficient {a} is negative");
        let d = cloud.point(*id) - p0;
        assert!(d.norm() <= 2.0 * cloud.params().epsilon + 1e-12);
        let local = Vec3::new(d.dot(&s.direction), d.dot(&nu2), d.dot(&nu3));
        first += local * a;
        second += 0.5 * a * local[0] * local[0];
        scale = scale.max(a * d.norm());
    }
    assert!(first.amax() <= 1e-9 * scale.max(1.0), "first moments {first:?}");
    assert!((second - 1.0).abs() <= 1e-9, "second moment {second}");
}

#[test]
fn complete_frame_is_orthonormal() {
    frame_ok(&Vec3::x());
    frame_ok(&Vec3::new(1.0, 1.0, 1.0).normalize());
    frame_ok(&linear_degenerate_direction());
}

#[test]
fn integer_direction_detection() {
    assert_eq!(integer_direction(&Vec3::new(1.0, 1.0, 0.0).normalize(), 3), Some([1, 1, 0]));
    assert_eq!(integer_direction(&Vec3::new(1.0, -2.0, 3.0).normalize(), 3), Some([1, -2, 3]));
    assert_eq!(integer_direction(&Vec3::new(1.0, -2.0, 3.0).normalize(), 2), None);
    assert_eq!(integer_direction(&linear_degenerate_direction(), 5), None);
    assert_eq!(integer_direction(&Vec3::new(2.0, 4.0, 0.0), 3), Some([1, 2, 0]));
}

#[test]
fn centered_difference_is_exact_on_quadratics() {
    let cloud = cloud8();
    let x0 = interior_near(cloud, Vec3::zeros());
    let s = centered_second_difference(cloud, x0, [1, 0, 0]).unwrap();
    let h = cloud.params().h;
    assert_eq!(s.coefficients, vec![1.0 / (h * h); 2]);
    assert!((s.apply(&sample(cloud, |x| x[0] * x[0])) - 2.0).abs() < 1e-12);

    let s = centered_second_difference(cloud, x0, [1, 1, 0]).unwrap();
    assert!((s.apply(&sample(cloud, |x| x[0] * x[1])) - 1.0).abs() < 1e-12);

    for w in [[1, 0, 0], [1, 1, 0], [1, -1, 1], [0, 1, -1]] {
        let s = centered_second_difference(cloud, x0, w).unwrap();
        let v = s.apply(&sample(cloud, |x| 3.0 * x[0] - 2.0 * x[1] + 0.5 * x[2] + 1.0));
        assert!(v.abs() < 1e-12);
    }
}

#[test]
fn centered_difference_rejects_missing_neighbors() {
    let cloud = cloud8();
    let edge = cloud.interior_ids().next().unwrap();
    let w = max_centered_width(cloud) as i32;
    let err = centered_second_difference(cloud, edge, [w, 0, 0]).unwrap_err();
    assert!(matches!(err, StencilError::NotAligned { .. }));
    let too_wide = centered_second_difference(cloud, edge, [w + 1, 0, 0]).unwrap_err();
    assert!(matches!(too_wide, StencilError::NotAligned { .. }));
    let b = cloud.boundary_ids().next().unwrap();
    assert!(matches!(centered_second_difference(cloud, b, [1, 0, 0]), Err(StencilError::NotInterior { .. })));
}

#[test]
fn apply_stencil_examples() {
    let cloud = cloud8();
    let x0 = interior_near(cloud, Vec3::zeros());
    let s = centered_second_difference(cloud, x0, [1, 1, 0]).unwrap();
    assert_eq!(apply_stencil(&s, &vec![4.2; cloud.len()]).unwrap(), 0.0);

    let zero = Stencil { coefficients: vec![0.0; 2], ..s.clone() };
    assert_eq!(apply_stencil(&zero, &sample(cloud, |x| x[0])).unwrap(), 0.0);

    let mut u = vec![0.0; cloud.len()];
    u[x0.index()] = 1.0;
    let h = cloud.params().h;
    let want = -2.0 / (2.0 * h * h);
    assert!((apply_stencil(&s, &u).unwrap() - want).abs() < 1e-9 * want.abs());

    assert!(matches!(apply_stencil(&s, &u[..1]), Err(StencilError::MissingNode { .. })));
}

#[test]
fn aligned_point_wins_its_octants() {
    let cloud = cloud16();
    let x0 = interior_near(cloud, Vec3::zeros());
    let sel = select_octant_neighbors(cloud, x0, &Vec3::x()).unwrap();
    let idx = cloud.lattice_index(x0).unwrap();
    let plus = cloud.node_at([idx[0] as i64 + 1, idx[1] as i64, idx[2] as i64]).unwrap();
    let minus = cloud.node_at([idx[0] as i64 - 1, idx[1] as i64, idx[2] as i64]).unwrap();
    for (o, n) in sel.neighbors.iter().enumerate() {
        assert_eq!(*n, Some(if o & 1 == 0 { plus } else { minus }), "octant {o}");
    }
    assert_eq!(sel.angular_error, 0.0);
}

/// Objective of the folded spherical coordinates, recomputed from scratch.
fn oracle_objective(d: &Vec3, nu: &Vec3) -> f64 {
    let (nu2, nu3) = complete_frame(nu);
    let (x, y, z) = (d.dot(nu), d.dot(&nu2), d.dot(&nu3));
    let theta = y.abs().atan2(x.abs());
    let elev = (z.abs() / d.norm()).asin();
    theta * theta + elev * elev
}

#[test]
fn octant_selection_matches_brute_force_scan() {
    let cloud = cloud16();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let eps = cloud.params().epsilon;
    for _ in 0..20 {
        let x0 = NodeId(rng.random_range(0..cloud.num_interior() as u32));
        let nu = random_unit(&mut rng);
        let (nu2, nu3) = complete_frame(&nu);
        let sel = select_octant_neighbors_within(cloud, x0, &nu, eps);
        let p0 = cloud.point(x0);
        for o in 0..8 {
            let sx = if o & 1 == 0 { 1.0 } else { -1.0 };
            let sy = if o & 2 == 0 { 1.0 } else { -1.0 };
            let sz = if o & 4 == 0 { 1.0 } else { -1.0 };
            let best = (0..cloud.len())
                .map(|i| NodeId(i as u32))
                .filter(|&id| id != x0)
                .map(|id| cloud.point(id) - p0)
                .filter(|d| d.norm() <= eps)
                .filter(|d| sx * d.dot(&nu) > 0.0 && sy * d.dot(&nu2) >= 0.0 && sz * d.dot(&nu3) >= 0.0)
                .map(|d| oracle_objective(&d, &nu))
                .fold(f64::INFINITY, f64::min);
            match sel.neighbors[o] {
                Some(id) => {
                    let got = oracle_objective(&(cloud.point(id) - p0), &nu);
                    assert!((got - best).abs() <= 1e-12, "octant {o}: {got} vs {best}");
                }
                None => assert!(best.is_infinite()),
            }
        }
    }
}

#[test]
fn octants_are_filled_for_the_skew_direction() {
    let cloud = cloud16();
    let nu = linear_degenerate_direction();
    for x0 in cloud.interior_ids() {
        select_octant_neighbors(cloud, x0, &nu).unwrap();
    }
}

#[test]
fn generalized_stencil_on_diagonal_quadratic() {
    let cloud = cloud16();
    let a = Matrix3::from_diagonal(&Vec3::new(1.0, 2.0, 3.0));
    let u = sample(cloud, quadratic(a));
    let x0 = interior_near(cloud, Vec3::new(0.1, -0.2, 0.05));
    let s = build_second_directional(cloud, x0, &Vec3::z()).unwrap();
    assert_eq!(s.neighbors.len(), 2);
    assert!((s.apply(&u) - 3.0).abs() < 1e-9);

    let nu = linear_degenerate_direction();
    let exact = nu.dot(&(a * nu));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let x0 = NodeId(rng.random_range(0..cloud.num_interior() as u32));
        let s = build_second_directional(cloud, x0, &nu).unwrap();
        check_second_invariants(cloud, &s);
        let err = (s.apply(&u) - exact).abs();
        assert!(err <= 10.0 * s.angular_error * a.norm() + 1e-9, "err {err} angular {}", s.angular_error);
    }
}

#[test]
fn generalized_stencil_annihilates_affine_functions() {
    let cloud = cloud8();
    let u = sample(cloud, |x| 1.0 - 2.0 * x[0] + 0.7 * x[1] + 3.0 * x[2]);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for x0 in cloud.interior_ids() {
        let nu = random_unit(&mut rng);
        let s = build_second_directional(cloud, x0, &nu).unwrap();
        assert!(s.apply(&u).abs() <= 1e-9 * s.coefficients.iter().sum::<f64>().max(1.0));
    }
}

#[test]
fn mixed_case_uses_the_aligned_neighbor() {
    let cloud = cloud8();
    let w = [1, 0, 0];
    let mixed = cloud.interior_ids().find(|&id| {
        let i = cloud.lattice_index(id).unwrap();
        let p = cloud.node_at([i[0] as i64 + 1, i[1] as i64, i[2] as i64]);
        let m = cloud.node_at([i[0] as i64 - 1, i[1] as i64, i[2] as i64]);
        p.is_some() != m.is_some()
    });
    let x0 = mixed.expect("some node lacks one axis neighbor");
    let s = build_second_directional_integer(cloud, x0, w).unwrap();
    check_second_invariants(cloud, &s);
    let i = cloud.lattice_index(x0).unwrap();
    let aligned = cloud
        .node_at([i[0] as i64 + 1, i[1] as i64, i[2] as i64])
        .or_else(|| cloud.node_at([i[0] as i64 - 1, i[1] as i64, i[2] as i64]))
        .unwrap();
    assert!(s.neighbors.contains(&aligned));
}

#[test]
fn octant_systems_are_feasible_on_a_coarse_ball() {
    let cloud = cloud8();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let dirs: Vec<Vec3> = (0..5).map(|_| random_unit(&mut rng)).collect();
    for x0 in cloud.interior_ids() {
        for nu in &dirs {
            let s = build_second_directional(cloud, x0, nu).unwrap();
            check_second_invariants(cloud, &s);
        }
    }
}

#[test]
fn first_derivative_barycentric_vertex() {
    let x0 = Vec3::zeros();
    let pts =
        [Vec3::new(-1.0, 0.0, 0.0), Vec3::new(-1.0, 1.0, 0.0), Vec3::new(-1.0, 0.0, 1.0), Vec3::new(-1.0, 1.0, 1.0)];
    let a = first_directional_coefficients(&x0, &Vec3::x(), &pts).unwrap();
    assert!((a[0] + 1.0).abs() < 1e-12);
    for v in &a[1..] {
        assert!(v.abs() < 1e-12);
    }
    let pts = pts.map(|p| p * 0.25);
    let a = first_directional_coefficients(&x0, &Vec3::x(), &pts).unwrap();
    assert!((a[0] + 4.0).abs() < 1e-12);
}

#[test]
fn first_derivative_is_exact_on_affine_functions() {
    let cloud = cloud8();
    let g = Vec3::new(0.3, -1.2, 2.0);
    let u = sample(cloud, |x| 0.5 + g.dot(x));
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for x0 in cloud.boundary_ids().step_by(7) {
        let normal = cloud.normal(x0).unwrap();
        let n = loop {
            let n = random_unit(&mut rng);
            if n.dot(&normal) > 0.2 {
                break n;
            }
        };
        for (dir, required) in [(normal, true), (n, false)] {
            let s = match build_first_directional_boundary(cloud, x0, &dir) {
                Ok(s) => s,
                Err(StencilError::RayEscaped { .. }) if !required => continue,
                Err(e) => panic!("node {x0}: {e}"),
            };
            assert!(s.coefficients.iter().all(|&a| a < 0.0));
            assert!((s.apply(&u) - g.dot(&dir)).abs() < 1e-9, "node {x0}");
        }
    }
}

#[test]
fn first_derivative_rejects_bad_requests() {
    let cloud = cloud8();
    let b = cloud.boundary_ids().next().unwrap();
    let inward = -cloud.normal(b).unwrap();
    assert!(matches!(build_first_directional_boundary(cloud, b, &inward), Err(StencilError::InadmissibleDirection { .. })));
    let i = cloud.interior_ids().next().unwrap();
    assert!(matches!(build_first_directional_boundary(cloud, i, &Vec3::x()), Err(StencilError::NotBoundary { .. })));
}

#[test]
fn normal_derivative_converges_at_the_pole() {
    let target = Vec3::x();
    let errors: Vec<f64> = [8, 16, 24]
        .iter()
        .map(|&n| {
            let cloud = ball_cloud(n);
            let x0 = cloud
                .boundary_ids()
                .min_by(|a, b| (cloud.point(*a) - target).norm().total_cmp(&(cloud.point(*b) - target).norm()))
                .unwrap();
            let normal = cloud.normal(x0).unwrap();
            let s = build_first_directional_boundary(&cloud, x0, &normal).unwrap();
            let u = sample(&cloud, |x| (0.5 * x.norm_squared()).exp());
            let exact = 0.5f64.exp() * cloud.point(x0).dot(&normal);
            (s.apply(&u) - exact).abs() / exact
        })
        .collect();
    assert!(errors[1] <= 0.25, "{errors:?}");
    assert!(errors[2] < errors[0], "{errors:?}");
}

#[test]
fn stencil_dump_format() {
    let cloud = cloud8();
    let x0 = interior_near(cloud, Vec3::zeros());
    let s = centered_second_difference(cloud, x0, [0, 0, 1]).unwrap();
    let mut buf = Vec::new();
    write_stencils(&mut buf, [&s]).unwrap();
    let line = String::from_utf8(buf).unwrap();
    let fields: Vec<&str> = line.split_whitespace().collect();
    assert_eq!(fields.len(), 1 + 3 + 2 + 2);
    assert_eq!(fields[0], x0.0.to_string());
    assert_eq!(fields[3].parse::<f64>().unwrap(), 1.0);
    assert_eq!(fields[6], s.neighbors[0].0.to_string());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn second_stencils_are_monotone_and_consistent(
        node in 0usize..10_000,
        v in prop::array::uniform3(-1.0f64..1.0),
        m in prop::array::uniform9(-1.0f64..1.0),
    ) {
        let cloud = cloud8();
        let nu = Vec3::from(v);
        prop_assume!(nu.norm() > 0.1);
        let nu = nu.normalize();
        let x0 = NodeId((node % cloud.num_interior()) as u32);
        let s = build_second_directional(cloud, x0, &nu).unwrap();
        check_second_invariants(cloud, &s);
        let a = Matrix3::from_row_slice(&m);
        let a = (a + a.transpose()) * 0.5;
        let a = a / a.norm().max(1.0);
        let d = s.apply(&sample(cloud, quadratic(a)));
        prop_assert!((d - s.direction.dot(&(a * s.direction))).abs() <= 10.0 * s.angular_error + 1e-9);
    }

    #[test]
    fn quadratic_error_respects_angular_bound(seed in 0u64..1000) {
        let cloud = cloud8();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_symmetric(&mut rng);
        let nu = random_unit(&mut rng);
        let u = sample(cloud, quadratic(a));
        let x0 = NodeId(rng.random_range(0..cloud.num_interior() as u32));
        let s = build_second_directional(cloud, x0, &nu).unwrap();
        prop_assert!((s.apply(&u) - nu.dot(&(a * nu))).abs() <= 10.0 * s.angular_error + 1e-9);
    }
}
