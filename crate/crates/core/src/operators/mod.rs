//! Per-node discrete schemes: residual evaluation, policy refresh and local
//! inverses for Gauss–Seidel.
//!
//! Every scheme is written as `F_i(u) + s_i − c·w_i`, where `s_i` is a source
//! value, `w_i` the weight of the eigenvalue `c` (zero for ordinary
//! problems), and `F_i` is nondecreasing in `u_i` and nonincreasing in every
//! neighbor value.

mod ot;
mod scalar;

use std::collections::HashMap;
use std::sync::Arc;

pub use ot::{fibonacci_sphere, SupportFunction};
pub use scalar::{EigenFunctionSpec, EigenTerm, ScalarFn, LOG_CLAMP};

use crate::frames::{to_unit, DirectionSet, Frame, IVec};
use crate::grid::PointCloud;
use crate::stencil::{
    build_first_directional_boundary, build_second_directional, build_second_directional_integer, integer_direction,
    max_centered_width, Stencil, StencilError, StencilRef, StencilStore,
};
use crate::{NodeId, Vec3};

/// Relative tolerance of the scalar local solves.
const LOCAL_TOL: f64 = 1e-12;
const LOCAL_MAX_ITERS: usize = 200;

#[derive(Debug, thiserror::Error)]
pub enum OperatorError {
    #[error(transparent)]
    Stencil(#[from] StencilError),
    #[error("local equation at node {node} is not monotone (no bracket found)")]
    NonmonotoneLocal { node: NodeId },
    #[error("boundary node {node} has no admissible direction")]
    NoAdmissibleDirection { node: NodeId },
    #[error("operator configuration: {0}")]
    Config(String),
}

/// Space-dependent data.
pub type FieldFn = Arc<dyn Fn(&Vec3) -> f64 + Send + Sync>;

/// A general directional operator `F(x, u, [D_νν u])`.
pub type DirectionalClosure = Arc<dyn Fn(&Vec3, f64, &[f64]) -> f64 + Send + Sync>;

/// One affine branch `Σ_k w_k (−D_k u) + β u + const(x)` with `w_k, β ≥ 0`.
#[derive(Clone)]
pub struct LinearBranch {
    /// `(direction index, weight)` pairs.
    pub terms: Vec<(usize, f64)>,
    pub beta: f64,
    pub constant: Option<FieldFn>,
}

impl LinearBranch {
    pub fn new(terms: Vec<(usize, f64)>) -> Self {
        Self { terms, beta: 0.0, constant: None }
    }

    pub fn with_constant(mut self, f: FieldFn) -> Self {
        self.constant = Some(f);
        self
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }
}

/// Interior operator expressed through second directional derivatives.
#[derive(Clone)]
pub enum DirectionalOperator {
    /// Pointwise maximum of affine branches.
    Branches(Vec<LinearBranch>),
    /// Caller-supplied operator, nondecreasing in `u` and nonincreasing in
    /// every derivative.
    General(DirectionalClosure),
}

/// Candidate frames of one eigen term at one node.
#[derive(Clone, Debug)]
pub struct EigenCandidates {
    pub frames: Vec<Frame>,
    pub stencils: Vec<[StencilRef; 3]>,
    pub choice: usize,
}

#[derive(Clone, Debug)]
pub struct OtOption {
    pub direction: Vec3,
    pub stencil: StencilRef,
    pub support: f64,
}

#[derive(Clone)]
pub enum SchemeKind {
    Dirichlet { g: f64 },
    Directional { op: Arc<DirectionalOperator>, stencils: Vec<StencilRef>, constants: Vec<f64>, choice: usize },
    Eigen { spec: Arc<EigenFunctionSpec>, terms: Vec<EigenCandidates> },
    Neumann { stencil: StencilRef, g: f64 },
    OtBoundary { options: Vec<OtOption>, choice: usize },
}

impl std::fmt::Debug for SchemeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SchemeKind::Dirichlet { g } => write!(f, "Dirichlet({g})"),
            SchemeKind::Directional { stencils, choice, .. } => {
                write!(f, "Directional({} stencils, choice {choice})", stencils.len())
            }
            SchemeKind::Eigen { terms, .. } => write!(f, "Eigen({} terms)", terms.len()),
            SchemeKind::Neumann { g, .. } => write!(f, "Neumann({g})"),
            SchemeKind::OtBoundary { options, choice } => write!(f, "OtBoundary({} options, choice {choice})", options.len()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct NodeScheme {
    pub node: NodeId,
    pub kind: SchemeKind,
    pub source: f64,
    /// Weight of the eigenvalue unknown in this node's equation.
    pub weight: f64,
}

impl NodeScheme {
    pub fn is_dirichlet(&self) -> bool {
        matches!(self.kind, SchemeKind::Dirichlet { .. })
    }
}

/// How the eigenvalue enters a local solve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shift {
    /// `c` is a known constant.
    Fixed(f64),
    /// `c = −ρ·u_i` at the pin node itself.
    Pin { rho: f64 },
}

/// Cached stencil construction keyed by node and direction.
#[derive(Clone, Debug, Default)]
pub struct StencilBank {
    store: StencilStore,
    second: HashMap<(u32, IVec), StencilRef>,
    second_unit: HashMap<(u32, [u64; 3]), StencilRef>,
    first: HashMap<(u32, [u64; 3]), StencilRef>,
}

fn bits(v: &Vec3) -> [u64; 3] {
    [v[0].to_bits(), v[1].to_bits(), v[2].to_bits()]
}

impl StencilBank {
    pub fn new() -> Self {
        Self { store: StencilStore::new(), ..Default::default() }
    }

    pub fn store(&self) -> &StencilStore {
        &self.store
    }

    pub fn second_integer(&mut self, cloud: &PointCloud, node: NodeId, w: IVec) -> Result<StencilRef, StencilError> {
        if let Some(&r) = self.second.get(&(node.0, w)) {
            return Ok(r);
        }
        let s = build_second_directional_integer(cloud, node, w)?;
        let r = self.store.push(&s);
        self.second.insert((node.0, w), r);
        Ok(r)
    }

    pub fn second_unit(&mut self, cloud: &PointCloud, node: NodeId, nu: &Vec3) -> Result<StencilRef, StencilError> {
        let nu = nu.normalize();
        if let Some(w) = integer_direction(&nu, max_centered_width(cloud)) {
            return self.second_integer(cloud, node, crate::frames::canonical_direction(w));
        }
        if let Some(&r) = self.second_unit.get(&(node.0, bits(&nu))) {
            return Ok(r);
        }
        let s = build_second_directional(cloud, node, &nu)?;
        let r = self.store.push(&s);
        self.second_unit.insert((node.0, bits(&nu)), r);
        Ok(r)
    }

    pub fn first(&mut self, cloud: &PointCloud, node: NodeId, n: &Vec3) -> Result<StencilRef, StencilError> {
        if let Some(&r) = self.first.get(&(node.0, bits(n))) {
            return Ok(r);
        }
        let s = build_first_directional_boundary(cloud, node, n)?;
        let r = self.store.push(&s);
        self.first.insert((node.0, bits(n)), r);
        Ok(r)
    }

    pub fn push(&mut self, s: &Stencil) -> StencilRef {
        self.store.push(s)
    }
}

/// Directional schemes at every interior node.
pub fn assemble_directional(
    cloud: &PointCloud,
    bank: &mut StencilBank,
    directions: &[Vec3],
    op: Arc<DirectionalOperator>,
) -> Result<Vec<NodeScheme>, OperatorError> {
    match op.as_ref() {
        DirectionalOperator::Branches(branches) => {
            for (b, br) in branches.iter().enumerate() {
                if br.beta < 0.0 || br.terms.iter().any(|&(k, w)| w < 0.0 || k >= directions.len()) {
                    return Err(OperatorError::Config(format!("branch {b} is not monotone or references a missing direction")));
                }
            }
        }
        DirectionalOperator::General(f) => check_general_monotone(f.as_ref(), directions.len())?,
    }
    let mut out = Vec::with_capacity(cloud.num_interior());
    for node in cloud.interior_ids() {
        let stencils = directions
            .iter()
            .map(|nu| bank.second_unit(cloud, node, nu))
            .collect::<Result<Vec<_>, _>>()?;
        let x = cloud.point(node);
        let constants = match op.as_ref() {
            DirectionalOperator::Branches(branches) => {
                branches.iter().map(|b| b.constant.as_ref().map_or(0.0, |f| f(&x))).collect()
            }
            DirectionalOperator::General(_) => Vec::new(),
        };
        out.push(NodeScheme {
            node,
            kind: SchemeKind::Directional { op: op.clone(), stencils, constants, choice: 0 },
            source: 0.0,
            weight: 0.0,
        });
    }
    Ok(out)
}

fn check_general_monotone(f: &(dyn Fn(&Vec3, f64, &[f64]) -> f64 + Send + Sync), m: usize) -> Result<(), OperatorError> {
    let x = Vec3::zeros();
    let mut d = vec![0.0; m];
    for s in 0..50 {
        let u = (s as f64 * 0.37).sin() * 2.0;
        for (k, dk) in d.iter_mut().enumerate() {
            *dk = ((s * (k + 3)) as f64 * 0.71).cos() * 3.0;
        }
        let base = f(&x, u, &d);
        if f(&x, u + 1e-3, &d) < base - 1e-12 {
            return Err(OperatorError::Config("directional operator decreases in u".into()));
        }
        for k in 0..m {
            let mut dd = d.clone();
            dd[k] += 1e-3;
            if f(&x, u, &dd) > base + 1e-12 {
                return Err(OperatorError::Config(format!("directional operator increases in derivative {k}")));
            }
        }
    }
    Ok(())
}

/// Builds the stencils for a list of frames at an interior node.
pub fn frame_stencils(
    cloud: &PointCloud,
    bank: &mut StencilBank,
    node: NodeId,
    frames: &[Frame],
) -> Result<Vec<[StencilRef; 3]>, StencilError> {
    frames
        .iter()
        .map(|f| {
            Ok([
                bank.second_integer(cloud, node, f[0])?,
                bank.second_integer(cloud, node, f[1])?,
                bank.second_integer(cloud, node, f[2])?,
            ])
        })
        .collect()
}

/// Eigenvalue-function schemes at every interior node, each term searching
/// over `frames`.
pub fn assemble_eigen(
    cloud: &PointCloud,
    bank: &mut StencilBank,
    spec: Arc<EigenFunctionSpec>,
    frames: &[Frame],
    source: Option<FieldFn>,
    weight: Option<FieldFn>,
) -> Result<Vec<NodeScheme>, OperatorError> {
    spec.check()?;
    let mut out = Vec::with_capacity(cloud.num_interior());
    for node in cloud.interior_ids() {
        let stencils = frame_stencils(cloud, bank, node, frames)?;
        let terms = (0..spec.terms.len())
            .map(|_| EigenCandidates { frames: frames.to_vec(), stencils: stencils.clone(), choice: 0 })
            .collect();
        let x = cloud.point(node);
        out.push(NodeScheme {
            node,
            kind: SchemeKind::Eigen { spec: spec.clone(), terms },
            source: source.as_ref().map_or(0.0, |f| f(&x)),
            weight: weight.as_ref().map_or(0.0, |f| f(&x)),
        });
    }
    Ok(out)
}

/// `u − g` at every boundary node.
pub fn assemble_dirichlet(cloud: &PointCloud, g: impl Fn(&Vec3) -> f64) -> Vec<NodeScheme> {
    cloud
        .boundary_ids()
        .map(|node| NodeScheme {
            node,
            kind: SchemeKind::Dirichlet { g: g(&cloud.point(node)) },
            source: 0.0,
            weight: 0.0,
        })
        .collect()
}

/// `D_n u − g` along the outward normal at every boundary node.
pub fn assemble_neumann(
    cloud: &PointCloud,
    bank: &mut StencilBank,
    g: impl Fn(&Vec3) -> f64,
) -> Result<Vec<NodeScheme>, OperatorError> {
    cloud
        .boundary_ids()
        .map(|node| {
            let n = cloud.normal(node).expect("boundary node has a normal");
            let stencil = bank.first(cloud, node, &n)?;
            Ok(NodeScheme {
                node,
                kind: SchemeKind::Neumann { stencil, g: g(&cloud.point(node)) },
                source: 0.0,
                weight: 0.0,
            })
        })
        .collect()
}

/// `max_n (D_n u − H*(n))` over unit directions `±ν`, `ν ∈ directions`,
/// with `n·n_x > 0`. Directions whose stencil cannot be built are skipped.
pub fn assemble_ot_boundary(
    cloud: &PointCloud,
    bank: &mut StencilBank,
    support: &SupportFunction,
    directions: &DirectionSet,
) -> Result<Vec<NodeScheme>, OperatorError> {
    let units: Vec<Vec3> = directions.directions.iter().flat_map(|&d| [to_unit(d), -to_unit(d)]).collect();
    let values: Vec<f64> = units.iter().map(|n| support.value(n)).collect();
    let mut out = Vec::with_capacity(cloud.num_boundary());
    for node in cloud.boundary_ids() {
        let normal = cloud.normal(node).expect("boundary node has a normal");
        let mut options = Vec::new();
        for (n, &h) in units.iter().zip(&values) {
            if n.dot(&normal) <= 0.0 {
                continue;
            }
            match bank.first(cloud, node, n) {
                Ok(stencil) => options.push(OtOption { direction: *n, stencil, support: h }),
                Err(e) => log::debug!("skipping direction {n:?} at {node}: {e}"),
            }
        }
        if options.is_empty() {
            return Err(OperatorError::NoAdmissibleDirection { node });
        }
        out.push(NodeScheme { node, kind: SchemeKind::OtBoundary { options, choice: 0 }, source: 0.0, weight: 0.0 });
    }
    Ok(out)
}

/// Assembled nonlinear system on a point cloud.
#[derive(Clone, Debug)]
pub struct DiscreteOperator {
    cloud: Arc<PointCloud>,
    bank: StencilBank,
    schemes: Vec<NodeScheme>,
    pin: Option<NodeId>,
}

impl DiscreteOperator {
    /// Orders the schemes by node and checks that every node has exactly one.
    /// A `pin` marks an eigenvalue problem.
    pub fn new(
        cloud: Arc<PointCloud>,
        bank: StencilBank,
        schemes: Vec<NodeScheme>,
        pin: Option<NodeId>,
    ) -> Result<Self, OperatorError> {
        let mut slots: Vec<Option<NodeScheme>> = vec![None; cloud.len()];
        for s in schemes {
            let i = s.node.index();
            if i >= slots.len() || slots[i].is_some() {
                return Err(OperatorError::Config(format!("node {} covered twice or out of range", s.node)));
            }
            slots[i] = Some(s);
        }
        let schemes = slots
            .into_iter()
            .enumerate()
            .map(|(i, s)| s.ok_or_else(|| OperatorError::Config(format!("node #{i} has no scheme"))))
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(p) = pin {
            if p.index() >= schemes.len() || schemes[p.index()].weight == 0.0 {
                return Err(OperatorError::Config(format!("pin node {p} must carry a nonzero eigenvalue weight")));
            }
        }
        Ok(Self { cloud, bank, schemes, pin })
    }

    pub fn cloud(&self) -> &Arc<PointCloud> {
        &self.cloud
    }

    pub fn schemes(&self) -> &[NodeScheme] {
        &self.schemes
    }

    pub fn scheme(&self, node: NodeId) -> &NodeScheme {
        &self.schemes[node.index()]
    }

    pub fn store(&self) -> &StencilStore {
        self.bank.store()
    }

    pub fn pin(&self) -> Option<NodeId> {
        self.pin
    }

    pub fn len(&self) -> usize {
        self.schemes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.schemes.is_empty()
    }

    pub fn has_dirichlet(&self) -> bool {
        self.schemes.iter().any(NodeScheme::is_dirichlet)
    }

    pub fn has_eigen_terms(&self) -> bool {
        self.schemes.iter().any(|s| matches!(s.kind, SchemeKind::Eigen { .. }))
    }

    /// Replaces the candidate frames of one eigen term at one node.
    pub fn set_eigen_frames(&mut self, node: NodeId, term: usize, frames: Vec<Frame>) -> Result<(), OperatorError> {
        let stencils = frame_stencils(&self.cloud, &mut self.bank, node, &frames)?;
        match &mut self.schemes[node.index()].kind {
            SchemeKind::Eigen { terms, .. } if term < terms.len() => {
                terms[term] = EigenCandidates { frames, stencils, choice: 0 };
                Ok(())
            }
            _ => Err(OperatorError::Config(format!("node {node} has no eigen term {term}"))),
        }
    }

    /// Currently selected frame of an eigen term.
    pub fn eigen_choice(&self, node: NodeId, term: usize) -> Option<Frame> {
        match &self.schemes[node.index()].kind {
            SchemeKind::Eigen { terms, .. } => terms.get(term).map(|t| t.frames[t.choice]),
            _ => None,
        }
    }

    /// Directional derivative values with the node's own value replaced by `t`.
    #[inline]
    fn d_at(&self, r: StencilRef, u: &[f64], t: f64) -> (f64, f64) {
        let (s, a) = self.bank.store().split(r, u);
        (s - a * t, a)
    }

    /// Operator value of a given choice with `u_i = t`, and its derivative in `t`.
    fn eval_choice(&self, i: usize, choice: Choice, u: &[f64], t: f64) -> (f64, f64) {
        let x = || self.cloud.point(NodeId(i as u32));
        match (&self.schemes[i].kind, choice) {
            (SchemeKind::Dirichlet { g }, _) => (t - g, 1.0),
            (SchemeKind::Neumann { stencil, g }, _) => {
                let (d, a) = self.d_at(*stencil, u, t);
                (d - g, -a)
            }
            (SchemeKind::OtBoundary { options, .. }, Choice::Single(k)) => {
                let o = &options[k];
                let (d, a) = self.d_at(o.stencil, u, t);
                (d - o.support, -a)
            }
            (SchemeKind::Directional { op, stencils, constants, .. }, Choice::Single(b)) => match op.as_ref() {
                DirectionalOperator::Branches(branches) => {
                    let br = &branches[b];
                    let (mut v, mut dv) = (br.beta * t + constants[b], br.beta);
                    for &(k, w) in &br.terms {
                        let (d, a) = self.d_at(stencils[k], u, t);
                        v -= w * d;
                        dv += w * a;
                    }
                    (v, dv)
                }
                DirectionalOperator::General(f) => {
                    let x = x();
                    let ds: Vec<f64> = stencils.iter().map(|&r| self.d_at(r, u, t).0).collect();
                    let v = f(&x, t, &ds);
                    let step = 1e-7 * t.abs().max(1.0);
                    let dp: Vec<f64> = stencils.iter().map(|&r| self.d_at(r, u, t + step).0).collect();
                    (v, (f(&x, t + step, &dp) - v) / step)
                }
            },
            (SchemeKind::Eigen { spec, terms }, Choice::Frames(sel)) => {
                let (mut v, mut dv) = (0.0, 0.0);
                for (k, term) in spec.terms.iter().enumerate() {
                    let refs = terms[k].stencils[sel(k, &terms[k])];
                    let mut sum = 0.0;
                    let mut dsum = 0.0;
                    for r in refs {
                        let (d, a) = self.d_at(r, u, t);
                        sum += term.phi.value(d);
                        dsum -= term.phi.derivative(d) * a;
                    }
                    v += term.g.value(sum);
                    dv += term.g.derivative(sum) * dsum;
                }
                (v, dv)
            }
            _ => unreachable!("choice kind does not match scheme kind"),
        }
    }

    fn frozen_choice(&self, i: usize) -> Choice {
        match &self.schemes[i].kind {
            SchemeKind::Directional { choice, .. } | SchemeKind::OtBoundary { choice, .. } => Choice::Single(*choice),
            SchemeKind::Eigen { .. } => Choice::Frames(|_, t| t.choice),
            _ => Choice::Single(0),
        }
    }

    fn is_affine(&self, i: usize) -> bool {
        match &self.schemes[i].kind {
            SchemeKind::Directional { op, .. } => matches!(op.as_ref(), DirectionalOperator::Branches(_)),
            SchemeKind::Eigen { spec, .. } => spec.is_affine(),
            _ => true,
        }
    }

    /// Unshifted operator value `F_i(u)` (maximum over all choices).
    pub fn operator_value(&self, node: NodeId, u: &[f64]) -> f64 {
        let i = node.index();
        let t = u[i];
        match &self.schemes[i].kind {
            SchemeKind::Directional { op, stencils, constants, .. } => match op.as_ref() {
                DirectionalOperator::Branches(branches) => (0..branches.len())
                    .map(|b| self.branch_value(branches, stencils, constants, b, u))
                    .fold(f64::NEG_INFINITY, f64::max),
                DirectionalOperator::General(_) => self.eval_choice(i, Choice::Single(0), u, t).0,
            },
            SchemeKind::OtBoundary { options, .. } => options
                .iter()
                .map(|o| self.bank.store().apply(o.stencil, u) - o.support)
                .fold(f64::NEG_INFINITY, f64::max),
            SchemeKind::Eigen { spec, terms } => (0..spec.terms.len())
                .map(|k| {
                    terms[k]
                        .stencils
                        .iter()
                        .map(|refs| self.term_value(spec, k, refs, u))
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .sum(),
            _ => self.eval_choice(i, Choice::Single(0), u, t).0,
        }
    }

    fn branch_value(&self, branches: &[LinearBranch], stencils: &[StencilRef], constants: &[f64], b: usize, u: &[f64]) -> f64 {
        let br = &branches[b];
        let t = u[stencils.first().map_or(0, |&r| self.bank.store().reference(r).index())];
        let mut v = constants[b] + br.beta * t;
        for &(k, w) in &br.terms {
            v -= w * self.bank.store().apply(stencils[k], u);
        }
        v
    }

    #[inline]
    fn term_value(&self, spec: &EigenFunctionSpec, k: usize, refs: &[StencilRef; 3], u: &[f64]) -> f64 {
        let store = self.bank.store();
        spec.term_value(k, &[store.apply(refs[0], u), store.apply(refs[1], u), store.apply(refs[2], u)])
    }

    /// Residual `F_i(u) + s_i − c·w_i`.
    pub fn residual(&self, node: NodeId, u: &[f64], c: f64) -> f64 {
        let s = &self.schemes[node.index()];
        self.operator_value(node, u) + s.source - c * s.weight
    }

    /// Maximum absolute residual over all nodes.
    pub fn max_residual(&self, u: &[f64], c: f64) -> f64 {
        self.cloud.ids().map(|id| self.residual(id, u, c).abs()).fold(0.0, f64::max)
    }

    /// Freezes the maximizing choice at a node for the current `u`.
    pub fn refresh(&mut self, node: NodeId, u: &[f64]) {
        let i = node.index();
        let new_choice = match &self.schemes[i].kind {
            SchemeKind::Directional { op, stencils, constants, .. } => match op.as_ref() {
                DirectionalOperator::Branches(branches) => {
                    Some(argmax_index((0..branches.len()).map(|b| self.branch_value(branches, stencils, constants, b, u))))
                }
                DirectionalOperator::General(_) => None,
            },
            SchemeKind::OtBoundary { options, .. } => {
                Some(argmax_index(options.iter().map(|o| self.bank.store().apply(o.stencil, u) - o.support)))
            }
            SchemeKind::Eigen { spec, terms } => {
                let picks: Vec<usize> = (0..spec.terms.len())
                    .map(|k| argmax_index(terms[k].stencils.iter().map(|refs| self.term_value(spec, k, refs, u))))
                    .collect();
                if let SchemeKind::Eigen { terms, .. } = &mut self.schemes[i].kind {
                    for (t, p) in terms.iter_mut().zip(picks) {
                        t.choice = p;
                    }
                }
                None
            }
            _ => None,
        };
        if let Some(c) = new_choice {
            match &mut self.schemes[i].kind {
                SchemeKind::Directional { choice, .. } | SchemeKind::OtBoundary { choice, .. } => *choice = c,
                _ => {}
            }
        }
    }

    pub fn refresh_all(&mut self, u: &[f64]) {
        for i in 0..self.schemes.len() {
            self.refresh(NodeId(i as u32), u);
        }
    }

    /// Residual under the frozen choice.
    pub fn frozen_residual(&self, node: NodeId, u: &[f64], c: f64) -> f64 {
        let i = node.index();
        let s = &self.schemes[i];
        self.eval_choice(i, self.frozen_choice(i), u, u[i]).0 + s.source - c * s.weight
    }

    /// Value of `u_i` that zeroes the frozen residual with the neighbors fixed.
    pub fn local_inverse(&self, node: NodeId, u: &[f64], shift: Shift) -> Result<f64, OperatorError> {
        let i = node.index();
        let s = &self.schemes[i];
        let choice = self.frozen_choice(i);
        let (c0, dc) = match shift {
            Shift::Fixed(c) => (c * s.weight, 0.0),
            Shift::Pin { rho } => (0.0, -rho * s.weight),
        };
        // g(t) = F(t) + s − c0 − dc·t
        if self.is_affine(i) {
            let (f0, slope) = self.eval_choice(i, choice, u, 0.0);
            let denom = slope - dc;
            if denom <= 0.0 {
                return Err(OperatorError::NonmonotoneLocal { node });
            }
            return Ok(-(f0 + s.source - c0) / denom);
        }
        let g = |t: f64| {
            let (v, dv) = self.eval_choice(i, choice, u, t);
            (v + s.source - c0 - dc * t, dv - dc)
        };
        solve_monotone(g, u[i]).ok_or(OperatorError::NonmonotoneLocal { node })
    }
}

#[derive(Clone, Copy)]
enum Choice {
    Single(usize),
    Frames(fn(usize, &EigenCandidates) -> usize),
}

fn argmax_index(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (k, v) in values.enumerate() {
        if v > best.1 {
            best = (k, v);
        }
    }
    best.0
}

/// Root of a nondecreasing scalar function: bracket by doubling, then Newton
/// steps safeguarded by bisection.
pub fn solve_monotone(g: impl Fn(f64) -> (f64, f64), t0: f64) -> Option<f64> {
    let (g0, _) = g(t0);
    if g0 == 0.0 {
        return Some(t0);
    }
    let mut step = 1e-3 * t0.abs().max(1.0);
    let (mut lo, mut hi);
    if g0 > 0.0 {
        hi = t0;
        lo = t0 - step;
        let mut k = 0;
        while g(lo).0 > 0.0 {
            hi = lo;
            step *= 2.0;
            lo -= step;
            k += 1;
            if k > 200 {
                return None;
            }
        }
    } else {
        lo = t0;
        hi = t0 + step;
        let mut k = 0;
        while g(hi).0 < 0.0 {
            lo = hi;
            step *= 2.0;
            hi += step;
            k += 1;
            if k > 200 {
                return None;
            }
        }
    }
    let mut t = t0.clamp(lo, hi);
    for _ in 0..LOCAL_MAX_ITERS {
        let (v, dv) = g(t);
        if v == 0.0 {
            return Some(t);
        }
        if v > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        if hi - lo <= LOCAL_TOL * t.abs().max(1.0) {
            break;
        }
        let newton = t - v / dv;
        t = if dv > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if (newton - t).abs() <= f64::EPSILON && (v / dv).abs() <= LOCAL_TOL * t.abs().max(1.0) {
            return Some(t);
        }
    }
    Some(t)
}

#[cfg(test)]
mod tests;
