//! Monotone finite difference stencils for second directional derivatives at
//! interior nodes and first directional derivatives at boundary nodes.

mod nnls;
mod store;

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};

pub use nnls::{nnls, solve_constrained_ls, NnlsProblem, NnlsSolution, SignConstraint, INFEASIBLE_RELATIVE_RESIDUAL};
pub use store::{StencilRef, StencilStore};

use crate::grid::PointCloud;
use crate::{NodeId, Vec3};

/// Tolerance for recognising a unit vector as parallel to an integer vector.
const ALIGNMENT_TOL: f64 = 1e-9;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum StencilError {
    #[error("direction is not realisable by a centered difference at node {node}")]
    NotAligned { node: NodeId },
    #[error("octant {octant} around node {node} contains no cloud point")]
    EmptyOctant { node: NodeId, octant: usize },
    #[error("sign-constrained stencil system is infeasible (residual {residual:.3e})")]
    Infeasible { residual: f64 },
    #[error("stencil construction failed at node {node}: {source}")]
    AtNode {
        node: NodeId,
        #[source]
        source: Box<StencilError>,
    },
    #[error("ray from boundary node {node} leaves the lattice before reaching interior nodes")]
    RayEscaped { node: NodeId },
    #[error("node {node} is not an interior node")]
    NotInterior { node: NodeId },
    #[error("node {node} is not a boundary node")]
    NotBoundary { node: NodeId },
    #[error("direction does not point out of the domain at boundary node {node}")]
    InadmissibleDirection { node: NodeId },
    #[error("stencil references node {node} missing from the value array")]
    MissingNode { node: NodeId },
}

impl StencilError {
    fn at(self, node: NodeId) -> Self {
        match self {
            e @ (StencilError::AtNode { .. }
            | StencilError::EmptyOctant { .. }
            | StencilError::NotAligned { .. }
            | StencilError::RayEscaped { .. }
            | StencilError::NotInterior { .. }
            | StencilError::NotBoundary { .. }
            | StencilError::InadmissibleDirection { .. }
            | StencilError::MissingNode { .. }) => e,
            e => StencilError::AtNode { node, source: Box::new(e) },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StencilKind {
    SecondDirectional,
    FirstDirectional,
}

/// `D u(x0) ≈ Σ_j a_j (u(x_j) − u(x0))`.
#[derive(Clone, Debug, PartialEq)]
pub struct Stencil {
    pub reference: NodeId,
    pub neighbors: Vec<NodeId>,
    pub coefficients: Vec<f64>,
    pub direction: Vec3,
    pub kind: StencilKind,
    /// Largest angle between a neighbor offset and the (signed) direction axis.
    pub angular_error: f64,
}

impl Stencil {
    /// Evaluates the stencil on node values indexed by node id.
    ///
    /// # Panics
    /// Panics if `u` does not cover every referenced node.
    #[inline]
    pub fn apply(&self, u: &[f64]) -> f64 {
        let u0 = u[self.reference.index()];
        self.neighbors.iter().zip(&self.coefficients).map(|(j, a)| a * (u[j.index()] - u0)).sum()
    }
}

/// Checked form of [`Stencil::apply`].
pub fn apply_stencil(stencil: &Stencil, u: &[f64]) -> Result<f64, StencilError> {
    if let Some(&node) = std::iter::once(&stencil.reference)
        .chain(&stencil.neighbors)
        .find(|id| id.index() >= u.len())
    {
        return Err(StencilError::MissingNode { node });
    }
    Ok(stencil.apply(u))
}

/// Completes a unit vector to a right-handed orthonormal frame, using the
/// standard basis vector least aligned with `nu` (lowest axis on ties).
pub fn complete_frame(nu: &Vec3) -> (Vec3, Vec3) {
    let axis = (0..3).fold(0, |best, a| if nu[a].abs() < nu[best].abs() { a } else { best });
    let mut e = Vec3::zeros();
    e[axis] = 1.0;
    let nu2 = nu.cross(&e).normalize();
    let nu3 = nu.cross(&nu2);
    (nu2, nu3)
}

/// Primitive integer vector parallel to `nu` with ∞-norm at most `k_max`.
pub fn integer_direction(nu: &Vec3, k_max: usize) -> Option<[i32; 3]> {
    let m = nu.amax();
    if m == 0.0 {
        return None;
    }
    let v = nu / m;
    for s in 1..=k_max {
        let sv = v * s as f64;
        let r = sv.map(f64::round);
        if (sv - r).amax() <= ALIGNMENT_TOL * s as f64 {
            let w = [r[0] as i32, r[1] as i32, r[2] as i32];
            if gcd3(w) == 1 {
                return Some(w);
            }
        }
    }
    None
}

pub(crate) fn gcd3(w: [i32; 3]) -> i32 {
    fn gcd(a: i32, b: i32) -> i32 {
        if b == 0 {
            a.abs()
        } else {
            gcd(b, a % b)
        }
    }
    gcd(gcd(w[0], w[1]), w[2])
}

/// Largest ∞-norm of an integer offset usable in a centered difference.
pub fn max_centered_width(cloud: &PointCloud) -> usize {
    let p = cloud.params();
    (p.epsilon / p.h + 1e-9).floor() as usize
}

fn offset(cloud: &PointCloud, x0: NodeId, w: [i32; 3], sign: i32) -> Option<NodeId> {
    let idx = cloud.lattice_index(x0)?;
    cloud.node_at([
        idx[0] as i64 + (sign * w[0]) as i64,
        idx[1] as i64 + (sign * w[1]) as i64,
        idx[2] as i64 + (sign * w[2]) as i64,
    ])
}

/// Centered second difference along the integer vector `w`.
pub fn centered_second_difference(cloud: &PointCloud, x0: NodeId, w: [i32; 3]) -> Result<Stencil, StencilError> {
    if !cloud.is_interior(x0) {
        return Err(StencilError::NotInterior { node: x0 });
    }
    let width = w.iter().map(|c| c.unsigned_abs() as usize).max().unwrap_or(0);
    if width == 0 || width > max_centered_width(cloud) {
        return Err(StencilError::NotAligned { node: x0 });
    }
    let (Some(plus), Some(minus)) = (offset(cloud, x0, w, 1), offset(cloud, x0, w, -1)) else {
        return Err(StencilError::NotAligned { node: x0 });
    };
    let wv = Vec3::new(w[0] as f64, w[1] as f64, w[2] as f64);
    let h = cloud.params().h;
    let a = 1.0 / (wv.norm_squared() * h * h);
    Ok(Stencil {
        reference: x0,
        neighbors: vec![plus, minus],
        coefficients: vec![a, a],
        direction: wv.normalize(),
        kind: StencilKind::SecondDirectional,
        angular_error: 0.0,
    })
}

/// Octant neighbors chosen for a generalized stencil.
#[derive(Clone, Debug, PartialEq)]
pub struct OctantSelection {
    /// Indexed by octant `o`: bit 0 set for `x̄ < 0`, bit 1 for `ȳ < 0`,
    /// bit 2 for `z̄ < 0`.
    pub neighbors: [Option<NodeId>; 8],
    pub angular_error: f64,
}

/// Rotated coordinates of `x - x0` in the frame `(nu, nu2, nu3)`.
#[derive(Clone, Copy, Debug)]
struct Local {
    xb: f64,
    yb: f64,
    zb: f64,
    r: f64,
}

impl Local {
    fn new(d: &Vec3, frame: &(Vec3, Vec3, Vec3)) -> Self {
        Self { xb: d.dot(&frame.0), yb: d.dot(&frame.1), zb: d.dot(&frame.2), r: d.norm() }
    }

    /// Squared angular deviation from the `±nu` axis in folded spherical
    /// coordinates.
    fn objective(&self) -> f64 {
        let theta = self.yb.abs().atan2(self.xb.abs());
        let elev = (self.zb.abs() / self.r).min(1.0).asin();
        theta * theta + elev * elev
    }

    fn axis_angle(&self) -> f64 {
        (self.xb.abs() / self.r).min(1.0).acos()
    }

    /// Octants this point belongs to: strict in `x̄`, closed in `ȳ` and `z̄`.
    fn octants(&self) -> impl Iterator<Item = usize> + '_ {
        let xbit = if self.xb > 0.0 {
            Some(0)
        } else if self.xb < 0.0 {
            Some(1)
        } else {
            None
        };
        (0..4usize).filter_map(move |yz| {
            let xbit = xbit?;
            let ybit = yz & 1;
            let zbit = (yz >> 1) & 1;
            let y_ok = if ybit == 0 { self.yb >= 0.0 } else { self.yb <= 0.0 };
            let z_ok = if zbit == 0 { self.zb >= 0.0 } else { self.zb <= 0.0 };
            (y_ok && z_ok).then_some(xbit | (ybit << 1) | (zbit << 2))
        })
    }
}

fn frame_of(nu: &Vec3) -> (Vec3, Vec3, Vec3) {
    let (nu2, nu3) = complete_frame(nu);
    (*nu, nu2, nu3)
}

/// Chooses, in each octant of the frame completing `nu`, the cloud point in
/// `B(x0, radius)` best aligned with the `±nu` axis. Ties are broken by
/// distance, then node id.
pub fn select_octant_neighbors_within(
    cloud: &PointCloud,
    x0: NodeId,
    nu: &Vec3,
    radius: f64,
) -> OctantSelection {
    let frame = frame_of(nu);
    let p0 = cloud.point(x0);
    let mut best: [Option<(f64, f64, NodeId)>; 8] = [None; 8];
    cloud.for_each_within(&p0, radius, |id| {
        if id == x0 {
            return;
        }
        let loc = Local::new(&(cloud.point(id) - p0), &frame);
        if loc.r == 0.0 {
            return;
        }
        let key = (loc.objective(), loc.r, id);
        for o in loc.octants() {
            let better = match best[o] {
                None => true,
                Some(cur) => (key.0, key.1, key.2) < cur,
            };
            if better {
                best[o] = Some(key);
            }
        }
    });
    let neighbors = best.map(|b| b.map(|(_, _, id)| id));
    let angular_error = neighbors
        .iter()
        .flatten()
        .map(|&id| Local::new(&(cloud.point(id) - p0), &frame).axis_angle())
        .fold(0.0, f64::max);
    OctantSelection { neighbors, angular_error }
}

/// Octant selection in the search ball of radius `epsilon`.
pub fn select_octant_neighbors(cloud: &PointCloud, x0: NodeId, nu: &Vec3) -> Result<OctantSelection, StencilError> {
    let sel = select_octant_neighbors_within(cloud, x0, nu, cloud.params().epsilon);
    if let Some(octant) = sel.neighbors.iter().position(Option::is_none) {
        return Err(StencilError::EmptyOctant { node: x0, octant });
    }
    Ok(sel)
}

/// Solves the moment system `Σ a x̄ = Σ a ȳ = Σ a z̄ = 0`, `Σ a x̄²/2 = 1`
/// with `a ≥ 0` over the given (deduplicated) neighbors.
fn solve_second_moments(
    cloud: &PointCloud,
    x0: NodeId,
    nu: &Vec3,
    neighbors: &[NodeId],
) -> Result<(Vec<NodeId>, Vec<f64>), StencilError> {
    let frame = frame_of(nu);
    let p0 = cloud.point(x0);
    let locals: Vec<Local> = neighbors.iter().map(|&id| Local::new(&(cloud.point(id) - p0), &frame)).collect();
    let scale = locals.iter().map(|l| l.r).fold(0.0, f64::max);
    let mut m = DMatrix::zeros(4, neighbors.len());
    for (j, l) in locals.iter().enumerate() {
        let (x, y, z) = (l.xb / scale, l.yb / scale, l.zb / scale);
        m[(0, j)] = x;
        m[(1, j)] = y;
        m[(2, j)] = z;
        m[(3, j)] = 0.5 * x * x;
    }
    let b = DVector::from_vec(vec![0.0, 0.0, 0.0, 1.0]);
    let problem = NnlsProblem { m, b, sign: SignConstraint::Nonnegative };
    let a = solve_constrained_ls(&problem).map_err(|e| e.at(x0))?;
    let inv = 1.0 / (scale * scale);
    Ok(neighbors.iter().zip(a.iter()).filter(|(_, &v)| v > 0.0).map(|(&id, &v)| (id, v * inv)).unzip())
}

fn dedup_ids(ids: impl IntoIterator<Item = NodeId>) -> Vec<NodeId> {
    let mut v: Vec<NodeId> = ids.into_iter().collect();
    v.sort_unstable();
    v.dedup();
    v
}

fn generalized(cloud: &PointCloud, x0: NodeId, nu: &Vec3, aligned: Option<NodeId>) -> Result<Stencil, StencilError> {
    let eps = cloud.params().epsilon;
    let p0 = cloud.point(x0);
    let make = |ids: Vec<NodeId>, angular_error: f64| -> Result<Stencil, StencilError> {
        let (neighbors, coefficients) = solve_second_moments(cloud, x0, nu, &ids)?;
        Ok(Stencil {
            reference: x0,
            neighbors,
            coefficients,
            direction: *nu,
            kind: StencilKind::SecondDirectional,
            angular_error,
        })
    };

    if let Some(al) = aligned {
        // One aligned lattice neighbor plus the four octants on the far side.
        let side_bit = if (cloud.point(al) - p0).dot(nu) > 0.0 { 1 } else { 0 };
        let sel = select_octant_neighbors_within(cloud, x0, nu, eps);
        let far: Vec<Option<NodeId>> = (0..8).filter(|o| o & 1 == side_bit).map(|o| sel.neighbors[o]).collect();
        if far.iter().all(Option::is_some) {
            let frame = frame_of(nu);
            let err = far
                .iter()
                .flatten()
                .map(|&id| Local::new(&(cloud.point(id) - p0), &frame).axis_angle())
                .fold(0.0, f64::max);
            if let Ok(s) = make(dedup_ids(std::iter::once(al).chain(far.into_iter().flatten())), err) {
                return Ok(s);
            }
        }
    }

    for radius in [eps, 2.0 * eps] {
        let sel = select_octant_neighbors_within(cloud, x0, nu, radius);
        if sel.neighbors.iter().all(Option::is_some) {
            return make(dedup_ids(sel.neighbors.iter().flatten().copied()), sel.angular_error);
        }
    }
    // Octant structure unavailable: use every point within 2ε.
    let frame = frame_of(nu);
    let ids: Vec<NodeId> = cloud.neighbors_within(&p0, 2.0 * eps).into_iter().filter(|&id| id != x0).collect();
    let s = make(ids, 0.0)?;
    let angular_error = s
        .neighbors
        .iter()
        .map(|&id| Local::new(&(cloud.point(id) - p0), &frame).axis_angle())
        .fold(0.0, f64::max);
    Ok(Stencil { angular_error, ..s })
}

/// Second directional derivative stencil along the integer vector `w`:
/// centered when both `x0 ± w h` are interior nodes, otherwise the aligned
/// neighbor (if any) completed by octant neighbors, otherwise fully generalized.
pub fn build_second_directional_integer(cloud: &PointCloud, x0: NodeId, w: [i32; 3]) -> Result<Stencil, StencilError> {
    if !cloud.is_interior(x0) {
        return Err(StencilError::NotInterior { node: x0 });
    }
    let nu = Vec3::new(w[0] as f64, w[1] as f64, w[2] as f64).normalize();
    let width = w.iter().map(|c| c.unsigned_abs() as usize).max().unwrap_or(0);
    let aligned = if width <= max_centered_width(cloud) {
        match centered_second_difference(cloud, x0, w) {
            Ok(s) => return Ok(s),
            Err(_) => offset(cloud, x0, w, 1).or_else(|| offset(cloud, x0, w, -1)),
        }
    } else {
        None
    };
    generalized(cloud, x0, &nu, aligned)
}

/// Second directional derivative stencil along the unit vector `nu`.
pub fn build_second_directional(cloud: &PointCloud, x0: NodeId, nu: &Vec3) -> Result<Stencil, StencilError> {
    if !cloud.is_interior(x0) {
        return Err(StencilError::NotInterior { node: x0 });
    }
    let nu = nu.normalize();
    match integer_direction(&nu, max_centered_width(cloud)) {
        Some(w) => build_second_directional_integer(cloud, x0, w),
        None => generalized(cloud, x0, &nu, None),
    }
}

/// Coefficients `a ≤ 0` with `Σ a_j (x_j − x0) = n` over the given points.
pub fn first_directional_coefficients(x0: &Vec3, n: &Vec3, points: &[Vec3]) -> Result<Vec<f64>, StencilError> {
    let scale = points.iter().map(|p| (p - x0).norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return Err(StencilError::Infeasible { residual: n.norm() });
    }
    let mut m = DMatrix::zeros(3, points.len());
    for (j, p) in points.iter().enumerate() {
        let d = (p - x0) / scale;
        for a in 0..3 {
            m[(a, j)] = d[a];
        }
    }
    let b = DVector::from_iterator(3, n.iter().copied());
    let problem = NnlsProblem { m, b, sign: SignConstraint::Nonpositive };
    let a = solve_constrained_ls(&problem)?;
    Ok(a.iter().map(|v| v / scale).collect())
}

/// First directional derivative stencil at a boundary node along an outward
/// direction, built from the first lattice face with interior vertices that
/// the ray `x0 − t n` crosses. If no face yields a stencil, falls back to a
/// nonpositive fit over the interior nodes within `3h`.
pub fn build_first_directional_boundary(cloud: &PointCloud, x0: NodeId, n_dir: &Vec3) -> Result<Stencil, StencilError> {
    let Some(normal) = cloud.normal(x0) else {
        return Err(StencilError::NotBoundary { node: x0 });
    };
    let n = n_dir.normalize();
    if n.dot(&normal) <= 0.0 {
        return Err(StencilError::InadmissibleDirection { node: x0 });
    }
    let params = cloud.params();
    let p0 = cloud.point(x0);
    let q0 = params.lattice_coords(&p0);
    let dir = -n;
    let lattice_n = params.n as f64;

    let mut next_t = [f64::INFINITY; 3];
    let mut step_t = [f64::INFINITY; 3];
    let mut plane = [0i64; 3];
    for a in 0..3 {
        if dir[a] > 0.0 {
            plane[a] = q0[a].ceil() as i64;
            next_t[a] = (plane[a] as f64 - q0[a]) / dir[a];
            step_t[a] = 1.0 / dir[a];
        } else if dir[a] < 0.0 {
            plane[a] = q0[a].floor() as i64;
            next_t[a] = (plane[a] as f64 - q0[a]) / dir[a];
            step_t[a] = -1.0 / dir[a];
        }
    }

    loop {
        let a = (0..3).fold(0, |best, k| if next_t[k] < next_t[best] { k } else { best });
        let t = next_t[a];
        if !t.is_finite() {
            return Err(StencilError::RayEscaped { node: x0 });
        }
        let hit = q0 + dir * t;
        if hit.iter().any(|&c| c < -1e-9 || c > lattice_n + 1e-9) {
            return first_stencil_from_ball(cloud, x0, n);
        }
        let (b, c) = ((a + 1) % 3, (a + 2) % 3);
        let lo_b = hit[b].floor() as i64;
        let lo_c = hit[c].floor() as i64;
        let mut verts = Vec::with_capacity(4);
        for (db, dc) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
            let mut idx = [0i64; 3];
            idx[a] = plane[a];
            idx[b] = lo_b + db;
            idx[c] = lo_c + dc;
            verts.push(cloud.node_at(idx));
        }
        let found = verts.iter().filter(|v| v.is_some()).count();
        if found == 4 {
            let ids: Vec<NodeId> = verts.into_iter().flatten().collect();
            let pts: Vec<Vec3> = ids.iter().map(|&id| cloud.point(id)).collect();
            if let Ok(coef) = first_directional_coefficients(&p0, &n, &pts) {
                return Ok(first_stencil(cloud, x0, n, ids, coef));
            }
        } else if found > 0 {
            let mut center = Vec3::zeros();
            center[a] = plane[a] as f64;
            center[b] = lo_b as f64 + 0.5;
            center[c] = lo_c as f64 + 0.5;
            let center = params.origin + center * params.h;
            let mut near: Vec<(f64, NodeId)> = cloud
                .neighbors_within(&center, 2.0 * params.h)
                .into_iter()
                .filter(|&id| cloud.is_interior(id))
                .map(|id| ((cloud.point(id) - center).norm(), id))
                .collect();
            near.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            near.truncate(4);
            if near.len() >= 3 {
                let ids: Vec<NodeId> = near.into_iter().map(|(_, id)| id).collect();
                let pts: Vec<Vec3> = ids.iter().map(|&id| cloud.point(id)).collect();
                if let Ok(coef) = first_directional_coefficients(&p0, &n, &pts) {
                    return Ok(first_stencil(cloud, x0, n, ids, coef));
                }
            }
        }
        plane[a] += if dir[a] > 0.0 { 1 } else { -1 };
        next_t[a] += step_t[a];
    }
}

/// Nonpositive least-squares fit over all interior nodes within `3h`.
fn first_stencil_from_ball(cloud: &PointCloud, x0: NodeId, n: Vec3) -> Result<Stencil, StencilError> {
    let p0 = cloud.point(x0);
    let mut ids: Vec<NodeId> = cloud
        .neighbors_within(&p0, 3.0 * cloud.params().h)
        .into_iter()
        .filter(|&id| cloud.is_interior(id))
        .collect();
    ids.sort();
    if ids.len() < 3 {
        return Err(StencilError::RayEscaped { node: x0 });
    }
    let pts: Vec<Vec3> = ids.iter().map(|&id| cloud.point(id)).collect();
    let coef = first_directional_coefficients(&p0, &n, &pts).map_err(|_| StencilError::RayEscaped { node: x0 })?;
    Ok(first_stencil(cloud, x0, n, ids, coef))
}

fn first_stencil(cloud: &PointCloud, x0: NodeId, n: Vec3, ids: Vec<NodeId>, coef: Vec<f64>) -> Stencil {
    let p0 = cloud.point(x0);
    let (neighbors, coefficients): (Vec<NodeId>, Vec<f64>) =
        ids.into_iter().zip(coef).filter(|(_, a)| *a < 0.0).unzip();
    let angular_error = neighbors
        .iter()
        .map(|&id| {
            let d = p0 - cloud.point(id);
            (d.dot(&n) / d.norm()).clamp(-1.0, 1.0).acos()
        })
        .fold(0.0, f64::max);
    Stencil { reference: x0, neighbors, coefficients, direction: n, kind: StencilKind::FirstDirectional, angular_error }
}

/// Writes one stencil per line: `node νx νy νz a_1..a_m id_1..id_m`.
pub fn write_stencils<'a>(mut w: impl Write, stencils: impl IntoIterator<Item = &'a Stencil>) -> io::Result<()> {
    for s in stencils {
        write!(w, "{} {:.17e} {:.17e} {:.17e}", s.reference.0, s.direction[0], s.direction[1], s.direction[2])?;
        for a in &s.coefficients {
            write!(w, " {a:.17e}")?;
        }
        for id in &s.neighbors {
            write!(w, " {}", id.0)?;
        }
        writeln!(w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests;
