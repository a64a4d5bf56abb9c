//! Policy-iteration Gauss–Seidel for the assembled schemes, the multilevel
//! frame loop, eigenvalue problems and coarse-to-fine initialization.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::frames::{FrameError, FrameHierarchy};
use crate::grid::PointCloud;
use crate::operators::{DiscreteOperator, OperatorError, SchemeKind, Shift};
use crate::NodeId;

#[derive(Debug, thiserror::Error)]
pub enum SolverError {
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Frames(#[from] FrameError),
    #[error("solver configuration: {0}")]
    Config(String),
    #[error("initial state has {got} values, expected {expected}")]
    InitMismatch { got: usize, expected: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepOrder {
    /// Every pass runs in node order.
    Forward,
    /// Passes alternate between node order and reverse node order.
    Symmetric,
}

#[derive(Clone, Debug)]
pub struct SolverConfig {
    pub tolerance: f64,
    pub max_outer: usize,
    pub inner_sweeps: usize,
    pub sweep_order: SweepOrder,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { tolerance: 1e-8, max_outer: 5000, inner_sweeps: 10, sweep_order: SweepOrder::Symmetric }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(SolverError::Config(format!("tolerance must be positive, got {}", self.tolerance)));
        }
        if self.inner_sweeps == 0 {
            return Err(SolverError::Config("inner_sweeps must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SolveState {
    pub u: Vec<f64>,
    /// Eigenvalue, present for problems with a pin node.
    pub c: Option<f64>,
    /// Max-norm residual at the start of every outer iteration, plus the final one.
    pub residual_history: Vec<f64>,
    pub converged: bool,
    /// Outer iterations performed (summed over multilevel stages).
    pub iterations: usize,
}

impl SolveState {
    pub fn final_residual(&self) -> f64 {
        self.residual_history.last().copied().unwrap_or(f64::INFINITY)
    }
}

fn initial_values(op: &DiscreteOperator, init: Option<&SolveState>) -> Result<Vec<f64>, SolverError> {
    match init {
        Some(s) if s.u.len() != op.len() => Err(SolverError::InitMismatch { got: s.u.len(), expected: op.len() }),
        Some(s) => Ok(s.u.clone()),
        None => Ok(op
            .schemes()
            .iter()
            .map(|s| match s.kind {
                SchemeKind::Dirichlet { g } => g,
                _ => 0.0,
            })
            .collect()),
    }
}

fn sweep_indices(n: usize, pass: usize, order: SweepOrder) -> Box<dyn Iterator<Item = usize>> {
    if order == SweepOrder::Symmetric && pass % 2 == 1 {
        Box::new((0..n).rev())
    } else {
        Box::new(0..n)
    }
}

/// Solves the system, dispatching to [`solve_eigenvalue`] when the operator
/// has a pin node.
pub fn solve(op: &mut DiscreteOperator, config: &SolverConfig, init: Option<&SolveState>) -> Result<SolveState, SolverError> {
    if op.pin().is_some() {
        return solve_eigenvalue(op, config, init);
    }
    config.validate()?;
    let mut u = initial_values(op, init)?;
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let start = Instant::now();
    for k in 0..=config.max_outer {
        let r = op.max_residual(&u, 0.0);
        history.push(r);
        log::debug!("iter={k} residual={r:e} c=");
        if r <= config.tolerance {
            converged = true;
            break;
        }
        if !r.is_finite() || k == config.max_outer {
            break;
        }
        op.refresh_all(&u);
        for pass in 0..config.inner_sweeps {
            for i in sweep_indices(u.len(), pass, config.sweep_order) {
                u[i] = op.local_inverse(NodeId(i as u32), &u, Shift::Fixed(0.0))?;
            }
        }
        iterations += 1;
    }
    log::info!(
        "solve: {} nodes, {iterations} outer iterations, residual {:e}, {:.2}s",
        u.len(),
        history.last().copied().unwrap_or(f64::NAN),
        start.elapsed().as_secs_f64()
    );
    Ok(SolveState { u, c: None, residual_history: history, converged, iterations })
}

/// Eigenvalue problems `F(u) + s − c·w = 0`, `u(x₀) = 0`.
///
/// The pin equation is used to eliminate `c`: with `ρ = sign(w(x₀))` the
/// iteration solves `F(v) + s + ρ·w·v(x₀) = 0` for `v`, after which
/// `c = −ρ·v(x₀)` and `u = v − v(x₀)`. Since the schemes only see
/// differences, `u` and `v` have the same residuals.
pub fn solve_eigenvalue(
    op: &mut DiscreteOperator,
    config: &SolverConfig,
    init: Option<&SolveState>,
) -> Result<SolveState, SolverError> {
    config.validate()?;
    let pin = op.pin().ok_or_else(|| SolverError::Config("eigenvalue problem without a pin node".into()))?;
    if op.has_dirichlet() {
        return Err(SolverError::Config("eigenvalue problems cannot carry Dirichlet conditions".into()));
    }
    let p = pin.index();
    let rho = op.scheme(pin).weight.signum();
    let mut v = initial_values(op, init)?;
    if let Some(c) = init.and_then(|s| s.c) {
        let shift = -rho * c - v[p];
        v.iter_mut().for_each(|x| *x += shift);
    }
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut c_prev = f64::NAN;
    let start = Instant::now();
    for k in 0..=config.max_outer {
        let c = -rho * v[p];
        let r = op.max_residual(&v, c);
        history.push(r);
        log::debug!("iter={k} residual={r:e} c={c}");
        if r <= config.tolerance && (c - c_prev).abs() <= config.tolerance {
            converged = true;
            break;
        }
        if !r.is_finite() || k == config.max_outer {
            break;
        }
        c_prev = c;
        op.refresh_all(&v);
        for pass in 0..config.inner_sweeps {
            for i in sweep_indices(v.len(), pass, config.sweep_order) {
                let shift = if i == p { Shift::Pin { rho } } else { Shift::Fixed(-rho * v[p]) };
                v[i] = op.local_inverse(NodeId(i as u32), &v, shift)?;
            }
        }
        iterations += 1;
    }
    let c = -rho * v[p];
    let base = v[p];
    let u = v.iter().map(|x| x - base).collect::<Vec<_>>();
    log::info!(
        "solve_eigenvalue: {} nodes, {iterations} outer iterations, residual {:e}, c={c}, {:.2}s",
        u.len(),
        history.last().copied().unwrap_or(f64::NAN),
        start.elapsed().as_secs_f64()
    );
    Ok(SolveState { u, c: Some(c), residual_history: history, converged, iterations })
}

/// Solve-then-refine over frame levels `1..=k_star`: after each solve every
/// eigen term at every node gets the refinement candidates of its current
/// maximizing frame (plus that frame itself), then the next level is solved
/// from the previous solution.
pub fn solve_multilevel(
    op: &mut DiscreteOperator,
    hierarchy: &FrameHierarchy,
    k_star: usize,
    config: &SolverConfig,
    init: Option<&SolveState>,
) -> Result<SolveState, SolverError> {
    if k_star == 0 || k_star > hierarchy.k_max {
        return Err(FrameError::InvalidLevel { k: k_star, k_max: hierarchy.k_max }.into());
    }
    let mut state = solve(op, config, init)?;
    let mut total = state.iterations;
    for k in 1..k_star {
        op.refresh_all(&state.u);
        let nodes: Vec<(NodeId, usize)> = op
            .schemes()
            .iter()
            .filter_map(|s| match &s.kind {
                SchemeKind::Eigen { terms, .. } => Some((s.node, terms.len())),
                _ => None,
            })
            .collect();
        for (node, count) in nodes {
            for term in 0..count {
                let current = op.eigen_choice(node, term).expect("eigen node has a choice");
                let mut candidates = hierarchy.refine(k, &current)?;
                if !candidates.contains(&current) {
                    candidates.push(current);
                }
                op.set_eigen_frames(node, term, candidates)?;
            }
        }
        log::info!("multilevel: level {} of {k_star}", k + 1);
        let next = solve(op, config, Some(&state))?;
        total += next.iterations;
        state = next;
    }
    state.iterations = total;
    Ok(state)
}

/// Transfers a coarse solution to a finer cloud of the same domain.
///
/// Fine points inside a coarse lattice cell whose eight vertices are all
/// interior nodes use trilinear interpolation; other points use an affine
/// least-squares fit to the nearest coarse nodes.
pub fn prolong(coarse: &SolveState, coarse_cloud: &PointCloud, fine_cloud: &PointCloud) -> SolveState {
    let params = coarse_cloud.params();
    let u = fine_cloud
        .points()
        .iter()
        .map(|x| {
            let q = params.lattice_coords(x);
            let base = [q[0].floor() as i64, q[1].floor() as i64, q[2].floor() as i64];
            let mut corners = [0.0; 8];
            let mut complete = true;
            for (c, slot) in corners.iter_mut().enumerate() {
                let idx = [base[0] + (c & 1) as i64, base[1] + ((c >> 1) & 1) as i64, base[2] + ((c >> 2) & 1) as i64];
                match coarse_cloud.node_at(idx) {
                    Some(id) => *slot = coarse.u[id.index()],
                    None => {
                        complete = false;
                        break;
                    }
                }
            }
            if complete {
                let t = [q[0] - base[0] as f64, q[1] - base[1] as f64, q[2] - base[2] as f64];
                (0..8)
                    .map(|c| {
                        let w = |axis: usize| if (c >> axis) & 1 == 1 { t[axis] } else { 1.0 - t[axis] };
                        w(0) * w(1) * w(2) * corners[c]
                    })
                    .sum()
            } else {
                affine_fit(coarse, coarse_cloud, x)
            }
        })
        .collect();
    SolveState { u, c: coarse.c, residual_history: Vec::new(), converged: false, iterations: 0 }
}

const AFFINE_FIT_POINTS: usize = 10;

fn affine_fit(coarse: &SolveState, cloud: &PointCloud, x: &crate::Vec3) -> f64 {
    let mut r = 1.5 * cloud.params().h;
    let mut ids = cloud.neighbors_within(x, r);
    while ids.len() < AFFINE_FIT_POINTS && ids.len() < cloud.len() {
        r *= 1.5;
        ids = cloud.neighbors_within(x, r);
    }
    ids.sort_by(|a, b| (cloud.point(*a) - x).norm().total_cmp(&(cloud.point(*b) - x).norm()).then(a.cmp(b)));
    ids.truncate(AFFINE_FIT_POINTS);
    let m = DMatrix::from_fn(ids.len(), 4, |i, j| if j == 0 { 1.0 } else { (cloud.point(ids[i]) - x)[j - 1] });
    let b = DVector::from_iterator(ids.len(), ids.iter().map(|id| coarse.u[id.index()]));
    match m.svd(true, true).solve(&b, 1e-12) {
        Ok(coef) => coef[0],
        Err(_) => coarse.u[cloud.nearest(x).index()],
    }
}
