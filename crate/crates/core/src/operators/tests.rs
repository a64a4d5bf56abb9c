use std::sync::OnceLock;

use nalgebra::{Matrix3, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::frames::{build_hierarchy, enumerate_directions, multilevel_argmax, FrameHierarchy};
use crate::grid::{assemble_point_cloud, Ball};
use crate::harness::ProblemKind;

fn hierarchy() -> &'static FrameHierarchy {
    static H: OnceLock<FrameHierarchy> = OnceLock::new();
    H.get_or_init(|| build_hierarchy(4))
}

fn ball_cloud(n: usize) -> Arc<PointCloud> {
    Arc::new(assemble_point_cloud(Arc::new(Ball::unit()), n).unwrap())
}

fn sample(cloud: &PointCloud, f: impl Fn(&Vec3) -> f64) -> Vec<f64> {
    cloud.ids().map(|id| f(&cloud.point(id))).collect()
}

fn quadratic(a: Matrix3<f64>) -> impl Fn(&Vec3) -> f64 {
    move |x: &Vec3| 0.5 * x.dot(&(a * x))
}

fn random_symmetric(rng: &mut impl Rng) -> Matrix3<f64> {
    let b: Matrix3<f64> = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
    let a = (b + b.transpose()) * 0.5;
    a / a.norm()
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

/// Interior node whose centered differences reach width `k` in every direction.
fn deep_node(cloud: &PointCloud, k: i64) -> NodeId {
    cloud
        .interior_ids()
        .find(|&id| {
            let i = cloud.lattice_index(id).unwrap().map(|c| c as i64);
            (-k..=k).all(|a| {
                (-k..=k).all(|b| (-k..=k).all(|c| cloud.node_at([i[0] + a, i[1] + b, i[2] + c]).is_some()))
            })
        })
        .expect("cloud has a deep interior node")
}

fn directional_op(cloud: &Arc<PointCloud>, dirs: &[Vec3], op: DirectionalOperator) -> DiscreteOperator {
    let mut bank = StencilBank::new();
    let mut s = assemble_directional(cloud, &mut bank, dirs, Arc::new(op)).unwrap();
    s.extend(assemble_dirichlet(cloud, |_| 0.0));
    DiscreteOperator::new(cloud.clone(), bank, s, None).unwrap()
}

fn neumann_op(cloud: &Arc<PointCloud>, g: impl Fn(&Vec3) -> f64) -> DiscreteOperator {
    let mut bank = StencilBank::new();
    let mut s = assemble_eigen(cloud, &mut bank, Arc::new(EigenFunctionSpec::laplacian()), &hierarchy().levels[0].frames, None, None)
        .unwrap();
    s.extend(assemble_neumann(cloud, &mut bank, g).unwrap());
    DiscreteOperator::new(cloud.clone(), bank, s, None).unwrap()
}

fn max_boundary_residual(op: &DiscreteOperator, u: &[f64]) -> f64 {
    op.cloud().boundary_ids().map(|id| op.residual(id, u, 0.0).abs()).fold(0.0, f64::max)
}

#[test]
fn single_direction_passthrough_on_quadratics() {
    let cloud = ball_cloud(12);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..5 {
        let a = random_symmetric(&mut rng);
        let nu = random_unit(&mut rng);
        let op = directional_op(&cloud, &[nu], DirectionalOperator::Branches(vec![LinearBranch::new(vec![(0, 1.0)])]));
        let u = sample(&cloud, quadratic(a));
        for id in cloud.interior_ids() {
            let SchemeKind::Directional { stencils, .. } = &op.scheme(id).kind else { panic!() };
            let bound = 10.0 * op.store().angular_error(stencils[0]) * a.norm() + 1e-9;
            assert!((op.residual(id, &u, 0.0) + nu.dot(&(a * nu))).abs() <= bound);
        }
    }
}

#[test]
fn constant_function_has_zero_directional_residual() {
    let cloud = ball_cloud(8);
    let op = directional_op(&cloud, &[Vec3::new(0.3, -0.5, 0.8)], DirectionalOperator::Branches(vec![LinearBranch::new(vec![(0, 1.0)])]));
    let u = vec![2.75; cloud.len()];
    for id in cloud.interior_ids() {
        assert!(op.residual(id, &u, 0.0).abs() < 1e-12);
    }
}

#[test]
fn two_operator_residual_decreases_under_refinement() {
    let p = ProblemKind::TwoOperator;
    let residuals = |n| {
        let a = p.assemble(n, hierarchy()).unwrap();
        let u = sample(&a.cloud, |x| p.exact(x));
        let band = 1.0 - a.cloud.params().epsilon;
        let (mut max, mut deep, mut sum) = (0.0f64, 0.0f64, 0.0);
        for id in a.cloud.interior_ids() {
            let r = a.op.residual(id, &u, 0.0).abs();
            max = max.max(r);
            sum += r;
            if a.cloud.point(id).norm() <= band {
                deep = deep.max(r);
            }
        }
        (max, deep, sum / a.cloud.num_interior() as f64)
    };
    let (max16, deep16, mean16) = residuals(16);
    let (_, deep24, mean24) = residuals(24);
    assert!(max16 <= 0.5, "n=16 residual {max16}");
    assert!(mean24 < mean16);
    assert!(deep24 < deep16, "{deep24} vs {deep16}");
}

#[test]
fn laplacian_spec_on_half_square_norm() {
    let cloud = ball_cloud(12);
    let mut bank = StencilBank::new();
    let frames = &hierarchy().levels[0].frames;
    let source: FieldFn = Arc::new(|_| 3.0);
    let mut s = assemble_eigen(&cloud, &mut bank, Arc::new(EigenFunctionSpec::laplacian()), frames, Some(source), None).unwrap();
    s.extend(assemble_dirichlet(&cloud, |_| 0.0));
    let op = DiscreteOperator::new(cloud.clone(), bank, s, None).unwrap();
    let u = sample(&cloud, |x| 0.5 * x.norm_squared());
    for id in cloud.interior_ids() {
        let SchemeKind::Eigen { terms, .. } = &op.scheme(id).kind else { panic!() };
        let ang = terms[0].stencils.iter().flatten().map(|&r| op.store().angular_error(r)).fold(0.0, f64::max);
        assert!(op.residual(id, &u, 0.0).abs() <= 30.0 * ang + 1e-9, "node {id}");
        assert!((op.operator_value(id, &u) + 3.0).abs() <= 30.0 * ang + 1e-9);
    }
}

#[test]
fn monge_ampere_spec_recovers_the_determinant() {
    let cloud = ball_cloud(12);
    let mut bank = StencilBank::new();
    let frames = &hierarchy().levels[0].frames;
    let s = assemble_eigen(&cloud, &mut bank, Arc::new(EigenFunctionSpec::monge_ampere()), frames, None, None).unwrap();
    let mut s: Vec<NodeScheme> = s;
    s.extend(assemble_dirichlet(&cloud, |_| 0.0));
    let op = DiscreteOperator::new(cloud.clone(), bank, s, None).unwrap();
    let u = sample(&cloud, quadratic(Matrix3::from_diagonal(&Vec3::new(1.0, 2.0, 3.0))));
    let node = deep_node(&cloud, 1);
    assert!((op.operator_value(node, &u) + 6.0).abs() < 1e-9);
}

#[test]
fn convex_envelope_lambda_one_estimate() {
    let cloud = ball_cloud(12);
    let k = cloud.params().k_star(4);
    let dirs: Vec<Vec3> = enumerate_directions(k).directions.iter().map(|&d| to_unit(d)).collect();
    let branches = (0..dirs.len()).map(|j| LinearBranch::new(vec![(j, 1.0)])).collect();
    let op = directional_op(&cloud, &dirs, DirectionalOperator::Branches(branches));
    let a = Matrix3::from_diagonal(&Vec3::new(1.0, 2.0, 3.0));
    let u = sample(&cloud, quadratic(a));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let interior: Vec<NodeId> = cloud.interior_ids().collect();
    for _ in 0..50 {
        let id = interior[rng.random_range(0..interior.len())];
        let SchemeKind::Directional { stencils, .. } = &op.scheme(id).kind else { panic!() };
        let ang = stencils.iter().map(|&r| op.store().angular_error(r)).fold(0.0, f64::max);
        let lambda1 = -op.operator_value(id, &u);
        assert!((lambda1 - 1.0).abs() <= 10.0 * ang * a.norm() + 1e-9, "node {id}: {lambda1}");
    }
}

#[test]
fn dirichlet_residual_and_inverse() {
    let cloud = ball_cloud(8);
    let g = |x: &Vec3| x[0] + 2.0 * x[2];
    let op = directional_op(&cloud, &[Vec3::x()], DirectionalOperator::Branches(vec![LinearBranch::new(vec![(0, 1.0)])]));
    let mut bank = StencilBank::new();
    let mut s = assemble_directional(&cloud, &mut bank, &[Vec3::x()], Arc::new(DirectionalOperator::Branches(vec![LinearBranch::new(vec![(0, 1.0)])]))).unwrap();
    s.extend(assemble_dirichlet(&cloud, g));
    let op_g = DiscreteOperator::new(cloud.clone(), bank, s, None).unwrap();
    assert!(op.has_dirichlet());
    let u = sample(&cloud, g);
    let lifted: Vec<f64> = u.iter().map(|v| v + 1.0).collect();
    for id in cloud.boundary_ids() {
        assert_eq!(op_g.residual(id, &u, 0.0), 0.0);
        assert!((op_g.residual(id, &lifted, 0.0) - 1.0).abs() < 1e-12);
        assert!(op_g.residual(id, &lifted, 0.0) > op_g.residual(id, &u, 0.0));
        assert_eq!(op_g.local_inverse(id, &lifted, Shift::Fixed(0.0)).unwrap(), g(&cloud.point(id)));
    }
}

#[test]
fn neumann_affine_exactness_and_constants() {
    let cloud = ball_cloud(8);
    let g0 = Vec3::new(0.4, -1.1, 0.7);
    let op = neumann_op(&cloud, |x| 0.5 * x[0]);
    let u = sample(&cloud, |x| 3.0 + g0.dot(x));
    for id in cloud.boundary_ids() {
        let n = cloud.normal(id).unwrap();
        let want = g0.dot(&n) - 0.5 * cloud.point(id)[0];
        assert!((op.residual(id, &u, 0.0) - want).abs() < 1e-9);
    }
    let zero = neumann_op(&cloud, |_| 0.0);
    let c = vec![-1.5; cloud.len()];
    assert!(max_boundary_residual(&zero, &c) < 1e-12);
}

#[test]
fn neumann_residual_decreases_under_refinement() {
    let g = 0.5f64.exp();
    let residual = |n| {
        let cloud = ball_cloud(n);
        let op = neumann_op(&cloud, |_| g);
        max_boundary_residual(&op, &sample(&cloud, |x| (0.5 * x.norm_squared()).exp()))
    };
    assert!(residual(24) < residual(8));
}

#[test]
fn ot_support_of_shifted_unit_ball() {
    let center = Vec3::new(2.0, 1.0, -1.0);
    let s = SupportFunction::ball(center, 1.0);
    for n in fibonacci_sphere(200) {
        let sampled = fibonacci_sphere(20_000).iter().map(|p| (center + p).dot(&n)).fold(f64::NEG_INFINITY, f64::max);
        assert!((s.value(&n) - (n.dot(&center) + 1.0)).abs() < 1e-12);
        assert!(s.value(&n) >= sampled - 1e-12 && s.value(&n) - sampled < 1e-3);
    }
}

fn ot_residual(n: usize) -> (f64, DiscreteOperator, Vec<f64>) {
    let p = ProblemKind::MinimalLagrangian;
    let a = p.assemble(n, hierarchy()).unwrap();
    let u = sample(&a.cloud, |x| p.exact(x));
    let r = max_boundary_residual(&a.op, &u);
    (r, a.op, u)
}

#[test]
fn ot_boundary_residual_decreases_and_ignores_constants() {
    let (r8, op, u) = ot_residual(8);
    let (r16, _, _) = ot_residual(16);
    assert!(r16 < r8, "{r16} vs {r8}");
    let shifted: Vec<f64> = u.iter().map(|v| v - 4.0).collect();
    for id in op.cloud().boundary_ids() {
        assert!((op.residual(id, &u, 0.0) - op.residual(id, &shifted, 0.0)).abs() < 1e-10);
        let SchemeKind::OtBoundary { options, .. } = &op.scheme(id).kind else { panic!() };
        let normal = op.cloud().normal(id).unwrap();
        assert!(options.iter().all(|o| o.direction.dot(&normal) > 0.0));
    }
}

#[test]
fn interior_schemes_are_translation_invariant() {
    for p in ProblemKind::ALL {
        let a = p.assemble(8, hierarchy()).unwrap();
        let u = sample(&a.cloud, |x| p.exact(x) + 0.1 * x[1]);
        let shifted: Vec<f64> = u.iter().map(|v| v + 0.7).collect();
        for id in a.cloud.ids() {
            let s = a.op.scheme(id);
            if s.is_dirichlet() {
                continue;
            }
            let (r0, r1) = (a.op.operator_value(id, &u), a.op.operator_value(id, &shifted));
            let beta = match &s.kind {
                SchemeKind::Directional { op, .. } => match op.as_ref() {
                    DirectionalOperator::Branches(b) => b.iter().any(|b| b.beta != 0.0),
                    DirectionalOperator::General(_) => true,
                },
                _ => false,
            };
            if !beta {
                assert!((r0 - r1).abs() <= 1e-9 * (1.0 + r0.abs()), "{p} node {id}");
            }
        }
    }
}

#[test]
fn one_dimensional_laplacian_inverse() {
    let cloud = ball_cloud(12);
    let f = 1.7;
    let op = directional_op(
        &cloud,
        &[Vec3::x()],
        DirectionalOperator::Branches(vec![LinearBranch::new(vec![(0, 1.0)]).with_constant(Arc::new(move |_| f))]),
    );
    let node = deep_node(&cloud, 1);
    let idx = cloud.lattice_index(node).unwrap().map(|c| c as i64);
    let left = cloud.node_at([idx[0] - 1, idx[1], idx[2]]).unwrap();
    let right = cloud.node_at([idx[0] + 1, idx[1], idx[2]]).unwrap();
    let mut u = vec![0.0; cloud.len()];
    u[left.index()] = 0.3;
    u[right.index()] = -1.1;
    u[node.index()] = 5.0;
    let h = cloud.params().h;
    let got = op.local_inverse(node, &u, Shift::Fixed(0.0)).unwrap();
    assert!((got - ((0.3 - 1.1) / 2.0 - 0.5 * f * h * h)).abs() < 1e-12);
}

#[test]
fn newton_path_solves_exponential() {
    let root = solve_monotone(|t| (t.exp() - 2.0, t.exp()), 0.0).unwrap();
    assert!((root - 2f64.ln()).abs() < 1e-12);
    let root = solve_monotone(|t| (t.exp() - 2.0, t.exp()), 40.0).unwrap();
    assert!((root - 2f64.ln()).abs() < 1e-12);

    let cloud = ball_cloud(8);
    let closure: DirectionalClosure = Arc::new(|_, u, _| u.exp() - 2.0);
    let op = directional_op(&cloud, &[], DirectionalOperator::General(closure));
    let node = cloud.interior_ids().next().unwrap();
    let u = vec![1.0; cloud.len()];
    let got = op.local_inverse(node, &u, Shift::Fixed(0.0)).unwrap();
    assert!((got - 2f64.ln()).abs() < 1e-12);
}

#[test]
fn decreasing_local_equation_has_no_bracket() {
    assert!(solve_monotone(|t| (-t - 1.0, -1.0), 0.0).is_none());
}

#[test]
fn nonmonotone_configurations_are_rejected() {
    let cloud = ball_cloud(8);
    let mut bank = StencilBank::new();
    let neg = DirectionalOperator::Branches(vec![LinearBranch::new(vec![(0, -1.0)])]);
    assert!(matches!(assemble_directional(&cloud, &mut bank, &[Vec3::x()], Arc::new(neg)), Err(OperatorError::Config(_))));
    let missing = DirectionalOperator::Branches(vec![LinearBranch::new(vec![(3, 1.0)])]);
    assert!(matches!(assemble_directional(&cloud, &mut bank, &[Vec3::x()], Arc::new(missing)), Err(OperatorError::Config(_))));
    let bad: DirectionalClosure = Arc::new(|_, u, d| -u - d[0]);
    assert!(matches!(
        assemble_directional(&cloud, &mut bank, &[Vec3::x()], Arc::new(DirectionalOperator::General(bad))),
        Err(OperatorError::Config(_))
    ));
}

#[test]
fn operator_requires_one_scheme_per_node() {
    let cloud = ball_cloud(8);
    let dirichlet = assemble_dirichlet(&cloud, |_| 0.0);
    assert!(DiscreteOperator::new(cloud.clone(), StencilBank::new(), dirichlet.clone(), None).is_err());
    let mut all = dirichlet.clone();
    all.extend(assemble_directional(&cloud, &mut StencilBank::new(), &[Vec3::x()], Arc::new(DirectionalOperator::Branches(vec![LinearBranch::new(vec![(0, 1.0)])]))).unwrap());
    let mut twice = all.clone();
    twice.push(dirichlet[0].clone());
    assert!(DiscreteOperator::new(cloud.clone(), StencilBank::new(), twice, None).is_err());
    let pin = cloud.interior_ids().next();
    assert!(DiscreteOperator::new(cloud.clone(), StencilBank::new(), all, pin).is_err());
}

#[test]
fn local_monotonicity_under_random_perturbations() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for p in ProblemKind::ALL {
        let a = p.assemble(8, hierarchy()).unwrap();
        let base: Vec<f64> = sample(&a.cloud, |x| p.exact(x));
        let ids: Vec<NodeId> = a.cloud.ids().collect();
        for _ in 0..60 {
            let id = ids[rng.random_range(0..ids.len())];
            let u: Vec<f64> = base.iter().map(|v| v + rng.random_range(-0.05..0.05)).collect();
            let r0 = a.op.residual(id, &u, 0.0);
            let delta = rng.random_range(1e-4..1e-1);
            let mut up = u.clone();
            up[id.index()] += delta;
            assert!(a.op.residual(id, &up, 0.0) >= r0 - 1e-10, "{p} node {id}");
            let j = ids[rng.random_range(0..ids.len())];
            if j != id {
                let mut uj = u.clone();
                uj[j.index()] += delta;
                assert!(a.op.residual(id, &uj, 0.0) <= r0 + 1e-10, "{p} node {id} neighbor {j}");
            }
        }
    }
}

#[test]
fn eigen_frame_bound_against_brute_force() {
    let cloud = ball_cloud(16);
    let h = hierarchy();
    let node = deep_node(&cloud, 3);
    let spec = Arc::new(EigenFunctionSpec::monge_ampere());
    let mut bank = StencilBank::new();
    let v3 = &h.levels[2].frames;
    let mut s = assemble_eigen(&cloud, &mut bank, spec.clone(), v3, None, None).unwrap();
    s.extend(assemble_dirichlet(&cloud, |_| 0.0));
    let op = DiscreteOperator::new(cloud.clone(), bank, s, None).unwrap();
    let SchemeKind::Eigen { terms, .. } = &op.scheme(node).kind else { panic!() };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let b: Matrix3<f64> = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let a = b * b.transpose() + Matrix3::identity() * 0.2;
        let u = sample(&cloud, quadratic(a));
        let lam = SymmetricEigen::new(a).eigenvalues;
        let exact = spec.value_on_eigenvalues(&[lam[0], lam[1], lam[2]]);
        let term_at = |k: usize, f: &Frame| {
            let j = terms[k].frames.iter().position(|g| g == f).unwrap();
            op.term_value(&spec, k, &terms[k].stencils[j], &u)
        };
        let brute = op.operator_value(node, &u);
        let multilevel: f64 = (0..2).map(|k| multilevel_argmax(|f| term_at(k, f), h, 3).unwrap().1).sum();
        assert!(multilevel <= brute + 1e-12);
        assert!(brute <= exact + 1e-9 * exact.abs().max(1.0), "brute {brute} exact {exact}");
    }
}

