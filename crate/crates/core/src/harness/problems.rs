//! Benchmark problems with known exact solutions.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::frames::{to_unit, FrameHierarchy};
use crate::grid::{assemble_point_cloud, Ball, PointCloud, SignedDistanceDomain};
use crate::operators::{
    assemble_directional, assemble_dirichlet, assemble_eigen, assemble_neumann, assemble_ot_boundary,
    DirectionalOperator, DiscreteOperator, EigenFunctionSpec, LinearBranch, StencilBank, SupportFunction,
};
use crate::{NodeId, Vec3};

use super::HarnessError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ProblemKind {
    /// `−u_νν = 0` on the unit ball for a direction not aligned with the grid.
    LinearDegenerate,
    /// `max(−u_{ν₁ν₁}, −u_{ν₂ν₂}) = f` on the unit ball.
    TwoOperator,
    /// `max(−λ₁(D²u), u − g) = 0` on the ball of radius 1/2.
    ConvexEnvelope,
    /// `−det D²u + f = 0` on the ball of radius 1/2.
    MongeAmpere,
    /// `Δu = c·f` with a Neumann condition on the unit ball.
    PoissonNeumannEig,
    /// `Σ arctan λ_j = c` with a second boundary condition onto a shifted ball.
    MinimalLagrangian,
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ProblemKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| HarnessError::UnknownProblem(s.to_string()))
    }
}

fn r2(x: &Vec3) -> f64 {
    x.norm_squared()
}

/// Center of the target ball of the second boundary value problem.
const OT_SHIFT: [f64; 3] = [2.0, 1.0, -1.0];

fn linear_degenerate_direction() -> Vec3 {
    Vec3::new(1.0, -1.0, -(3f64.sqrt() + 6f64.sqrt()) / 3.0).normalize()
}

fn two_operator_rhs(x: &Vec3) -> f64 {
    let e = (0.5 * r2(x)).exp();
    let a = -0.5 * e * (2.0 + (x[0] + x[1]).powi(2));
    let b = -0.5 * e * (2.0 + (x[0] - x[2]).powi(2));
    a.max(b)
}

fn obstacle(x: &Vec3) -> f64 {
    (2.0 * x.norm()).min(0.2)
}

/// A problem assembled on one cloud.
pub struct Assembled {
    pub cloud: Arc<PointCloud>,
    pub op: DiscreteOperator,
    /// Frame level used by the multilevel solve.
    pub k_star: usize,
}

impl ProblemKind {
    pub const ALL: [ProblemKind; 6] = [
        ProblemKind::LinearDegenerate,
        ProblemKind::TwoOperator,
        ProblemKind::ConvexEnvelope,
        ProblemKind::MongeAmpere,
        ProblemKind::PoissonNeumannEig,
        ProblemKind::MinimalLagrangian,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::LinearDegenerate => "linear-degenerate",
            ProblemKind::TwoOperator => "two-operator",
            ProblemKind::ConvexEnvelope => "convex-envelope",
            ProblemKind::MongeAmpere => "monge-ampere",
            ProblemKind::PoissonNeumannEig => "poisson-neumann-eig",
            ProblemKind::MinimalLagrangian => "minimal-lagrangian",
        }
    }

    pub fn domain(self) -> Arc<dyn SignedDistanceDomain> {
        match self {
            ProblemKind::ConvexEnvelope | ProblemKind::MongeAmpere => Arc::new(Ball::new(Vec3::zeros(), 0.5)),
            _ => Arc::new(Ball::unit()),
        }
    }

    /// Exact solution. For eigenvalue problems it is defined up to a constant.
    pub fn exact(self, x: &Vec3) -> f64 {
        match self {
            ProblemKind::LinearDegenerate => (2.0 * PI * (x[0] - 2f64.sqrt() * x[1] + 3f64.sqrt() * x[2])).sin(),
            ProblemKind::TwoOperator | ProblemKind::MongeAmpere | ProblemKind::PoissonNeumannEig => (0.5 * r2(x)).exp(),
            ProblemKind::ConvexEnvelope => 0.4 * x.norm(),
            ProblemKind::MinimalLagrangian => {
                let s = Vec3::from(OT_SHIFT);
                0.5 * (x + s).norm_squared()
            }
        }
    }

    pub fn exact_eigenvalue(self) -> Option<f64> {
        match self {
            ProblemKind::PoissonNeumannEig => Some(1.0),
            ProblemKind::MinimalLagrangian => Some(0.75 * PI),
            _ => None,
        }
    }

    pub fn is_eigenvalue_problem(self) -> bool {
        self.exact_eigenvalue().is_some()
    }

    /// Whether the interior operator is a function of Hessian eigenvalues
    /// (and so is solved with multilevel frame refinement).
    pub fn uses_frames(self) -> bool {
        matches!(self, ProblemKind::MongeAmpere | ProblemKind::PoissonNeumannEig | ProblemKind::MinimalLagrangian)
    }

    pub fn cloud(self, n: usize) -> Result<PointCloud, HarnessError> {
        Ok(assemble_point_cloud(self.domain(), n)?)
    }

    /// Builds the cloud and the discrete operator at lattice count `n`.
    pub fn assemble(self, n: usize, hierarchy: &FrameHierarchy) -> Result<Assembled, HarnessError> {
        let cloud = Arc::new(self.cloud(n)?);
        self.assemble_on(cloud, hierarchy)
    }

    pub fn assemble_on(self, cloud: Arc<PointCloud>, hierarchy: &FrameHierarchy) -> Result<Assembled, HarnessError> {
        let k_star = cloud.params().k_star(hierarchy.k_max);
        let mut bank = StencilBank::new();
        let exact = move |x: &Vec3| self.exact(x);
        let (schemes, pin) = match self {
            ProblemKind::LinearDegenerate => {
                let op = DirectionalOperator::Branches(vec![LinearBranch::new(vec![(0, 1.0)])]);
                let mut s = assemble_directional(&cloud, &mut bank, &[linear_degenerate_direction()], Arc::new(op))?;
                s.extend(assemble_dirichlet(&cloud, exact));
                (s, None)
            }
            ProblemKind::TwoOperator => {
                let dirs = [Vec3::new(1.0, 1.0, 0.0).normalize(), Vec3::new(-1.0, 0.0, 1.0).normalize()];
                let rhs: crate::operators::FieldFn = Arc::new(|x: &Vec3| -two_operator_rhs(x));
                let op = DirectionalOperator::Branches(vec![
                    LinearBranch::new(vec![(0, 1.0)]).with_constant(rhs.clone()),
                    LinearBranch::new(vec![(1, 1.0)]).with_constant(rhs),
                ]);
                let mut s = assemble_directional(&cloud, &mut bank, &dirs, Arc::new(op))?;
                s.extend(assemble_dirichlet(&cloud, exact));
                (s, None)
            }
            ProblemKind::ConvexEnvelope => {
                let dirs: Vec<Vec3> = hierarchy.directions(k_star)?.directions.iter().map(|&d| to_unit(d)).collect();
                let mut branches: Vec<LinearBranch> = (0..dirs.len()).map(|k| LinearBranch::new(vec![(k, 1.0)])).collect();
                branches.push(LinearBranch::new(Vec::new()).with_beta(1.0).with_constant(Arc::new(|x: &Vec3| -obstacle(x))));
                let mut s = assemble_directional(&cloud, &mut bank, &dirs, Arc::new(DirectionalOperator::Branches(branches)))?;
                s.extend(assemble_dirichlet(&cloud, |_| 0.2));
                (s, None)
            }
            ProblemKind::MongeAmpere => {
                let source = Arc::new(|x: &Vec3| (1.5 * r2(x)).exp() * (1.0 + r2(x)));
                let mut s = assemble_eigen(
                    &cloud,
                    &mut bank,
                    Arc::new(EigenFunctionSpec::monge_ampere()),
                    &hierarchy.level(1)?.frames,
                    Some(source),
                    None,
                )?;
                s.extend(assemble_dirichlet(&cloud, exact));
                (s, None)
            }
            ProblemKind::PoissonNeumannEig => {
                let weight = Arc::new(|x: &Vec3| -(3.0 + r2(x)) * (0.5 * r2(x)).exp());
                let mut s = assemble_eigen(
                    &cloud,
                    &mut bank,
                    Arc::new(EigenFunctionSpec::laplacian()),
                    &hierarchy.level(1)?.frames,
                    None,
                    Some(weight),
                )?;
                s.extend(assemble_neumann(&cloud, &mut bank, |_| 0.5f64.exp())?);
                (s, Some(pin_node(&cloud)))
            }
            ProblemKind::MinimalLagrangian => {
                let mut s = assemble_eigen(
                    &cloud,
                    &mut bank,
                    Arc::new(EigenFunctionSpec::minimal_lagrangian()),
                    &hierarchy.level(1)?.frames,
                    None,
                    Some(Arc::new(|_: &Vec3| -1.0)),
                )?;
                let support = SupportFunction::ball(Vec3::from(OT_SHIFT), 1.0);
                s.extend(assemble_ot_boundary(&cloud, &mut bank, &support, hierarchy.directions(k_star)?)?);
                (s, Some(pin_node(&cloud)))
            }
        };
        let op = DiscreteOperator::new(cloud.clone(), bank, schemes, pin)?;
        Ok(Assembled { cloud, op, k_star })
    }

    /// Max-norm error of `u` over all cloud points. For eigenvalue problems
    /// both `u` and the exact solution are normalized to vanish at `pin`.
    pub fn max_error(self, cloud: &PointCloud, u: &[f64], pin: Option<NodeId>) -> f64 {
        let (u0, e0) = match pin {
            Some(p) => (u[p.index()], self.exact(&cloud.point(p))),
            None => (0.0, 0.0),
        };
        cloud
            .ids()
            .map(|id| ((u[id.index()] - u0) - (self.exact(&cloud.point(id)) - e0)).abs())
            .fold(0.0, f64::max)
    }
}

/// Interior node closest to the origin.
pub fn pin_node(cloud: &PointCloud) -> NodeId {
    cloud
        .interior_ids()
        .min_by(|a, b| cloud.point(*a).norm().total_cmp(&cloud.point(*b).norm()).then(a.cmp(b)))
        .expect("cloud has interior nodes")
}
