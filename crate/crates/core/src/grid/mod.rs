//! Point clouds: a Cartesian interior lattice kept a distance `delta` away
//! from the boundary, plus projected boundary samples at resolution `h_B`.

mod domain;
mod index;

use std::collections::HashMap;
use std::io::{self, Write};
use std::sync::Arc;

pub use domain::{parse_domain, Ball, BoundingCube, Cube, FnDomain, SignedDistanceDomain};
pub use index::SpatialIndex;

use crate::{NodeId, Vec3};

/// Sentinel stored in the dense lattice lookup for lattice nodes that are not
/// interior points.
const NO_NODE: u32 = u32::MAX;

#[derive(Debug, thiserror::Error)]
pub enum GridError {
    #[error("lattice count n={n} is too small (need n >= 4)")]
    InvalidResolution { n: usize },
    #[error("domain too small: no lattice node at n={n} lies deeper than delta={delta:.3e}")]
    DomainTooSmall { n: usize, delta: f64 },
    #[error("projection onto the boundary failed from {point:?} (residual distance {distance:.3e})")]
    ProjectionFailed { point: [f64; 3], distance: f64 },
    #[error("unknown domain `{0}` (expected ball(r) or cube(s))")]
    UnknownDomain(String),
    #[error("internal grid inconsistency: {0}")]
    Internal(String),
}

/// Resolution parameters of a point cloud.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridParams {
    pub n: usize,
    /// Lower corner of the covering cube.
    pub origin: Vec3,
    /// Side length of the covering cube.
    pub side: f64,
    pub h: f64,
    pub n_b: usize,
    pub h_b: f64,
    pub delta: f64,
    pub epsilon: f64,
}

impl GridParams {
    pub fn new(n: usize, cube: BoundingCube) -> Result<Self, GridError> {
        if n < 4 {
            return Err(GridError::InvalidResolution { n });
        }
        let side = cube.side;
        let h = side / n as f64;
        let n_b = ((n as f64).powf(0.25).round() as usize).max(2);
        // With the cube scaled to unit side, epsilon = sqrt(h / side).
        let epsilon = side * (h / side).sqrt();
        Ok(Self { n, origin: cube.min, side, h, n_b, h_b: h / n_b as f64, delta: 0.5 * h, epsilon })
    }

    pub fn for_domain(domain: &dyn SignedDistanceDomain, n: usize) -> Result<Self, GridError> {
        Self::new(n, domain.bounding_cube())
    }

    /// Position of lattice node `(i, j, k)`.
    #[inline]
    pub fn lattice_point(&self, idx: [u32; 3]) -> Vec3 {
        self.origin + Vec3::new(idx[0] as f64, idx[1] as f64, idx[2] as f64) * self.h
    }

    /// Fractional lattice coordinates of `x`.
    #[inline]
    pub fn lattice_coords(&self, x: &Vec3) -> Vec3 {
        (x - self.origin) / self.h
    }

    /// Largest integer stencil width reachable within the search radius,
    /// `floor(epsilon / h)`, capped at `k_max` and at least 1.
    pub fn k_star(&self, k_max: usize) -> usize {
        ((self.epsilon / self.h + 1e-9).floor() as usize).clamp(1, k_max.max(1))
    }

    #[inline]
    fn flat(&self, idx: [u32; 3]) -> usize {
        let m = self.n + 1;
        (idx[0] as usize * m + idx[1] as usize) * m + idx[2] as usize
    }
}

/// Interior lattice node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatticePoint {
    pub index: [u32; 3],
    pub x: Vec3,
}

/// Projected boundary sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryPoint {
    pub x: Vec3,
    pub normal: Vec3,
    /// Lattice index of the lower corner of the boundary cube it came from.
    pub cube: [u32; 3],
}

/// Lattice nodes `x` of the covering cube with `distance(x) + delta < 0`, in
/// lexicographic `(i, j, k)` order.
pub fn build_interior(domain: &dyn SignedDistanceDomain, n: usize) -> Result<Vec<LatticePoint>, GridError> {
    let params = GridParams::for_domain(domain, n)?;
    interior_with(domain, &params)
}

fn interior_with(domain: &dyn SignedDistanceDomain, params: &GridParams) -> Result<Vec<LatticePoint>, GridError> {
    let n = params.n as u32;
    let mut out = Vec::new();
    for i in 0..=n {
        for j in 0..=n {
            for k in 0..=n {
                let index = [i, j, k];
                let x = params.lattice_point(index);
                if domain.distance(&x) + params.delta < 0.0 {
                    out.push(LatticePoint { index, x });
                }
            }
        }
    }
    if out.is_empty() {
        return Err(GridError::DomainTooSmall { n: params.n, delta: params.delta });
    }
    Ok(out)
}

/// Lattice cubes with at least one corner strictly inside and one strictly
/// outside the domain, identified by their lower corner, in lexicographic order.
pub fn find_boundary_cubes(domain: &dyn SignedDistanceDomain, n: usize) -> Result<Vec<[u32; 3]>, GridError> {
    let params = GridParams::for_domain(domain, n)?;
    Ok(boundary_cubes_with(domain, &params))
}

fn boundary_cubes_with(domain: &dyn SignedDistanceDomain, params: &GridParams) -> Vec<[u32; 3]> {
    let n = params.n as u32;
    let m = params.n + 1;
    let mut dist = vec![0.0; m * m * m];
    for i in 0..=n {
        for j in 0..=n {
            for k in 0..=n {
                let idx = [i, j, k];
                dist[params.flat(idx)] = domain.distance(&params.lattice_point(idx));
            }
        }
    }
    let mut cubes = Vec::new();
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let (mut neg, mut pos) = (false, false);
                for c in 0..8u32 {
                    let idx = [i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1)];
                    let d = dist[params.flat(idx)];
                    neg |= d < 0.0;
                    pos |= d > 0.0;
                }
                if neg && pos {
                    cubes.push([i, j, k]);
                }
            }
        }
    }
    cubes
}

/// Sub-samples a boundary cube at spacing `h_B`, keeps candidates with
/// `|distance| < h_B / 2` and projects them onto the boundary.
pub fn sample_boundary_points(
    domain: &dyn SignedDistanceDomain,
    cube: [u32; 3],
    params: &GridParams,
) -> Result<Vec<BoundaryPoint>, GridError> {
    let corner = params.lattice_point(cube);
    let fd_step = params.h_b / 10.0;
    let nb = params.n_b as u32;
    let mut out = Vec::new();
    for a in 0..=nb {
        for b in 0..=nb {
            for c in 0..=nb {
                let x = corner + Vec3::new(a as f64, b as f64, c as f64) * params.h_b;
                if domain.distance(&x).abs() < 0.5 * params.h_b {
                    let p = domain.project(&x, fd_step)?;
                    let normal = domain.outward_normal(&p, fd_step);
                    out.push(BoundaryPoint { x: p, normal, cube });
                }
            }
        }
    }
    Ok(out)
}

/// Immutable point cloud: interior lattice nodes first (lexicographic lattice
/// order), then boundary nodes.
#[derive(Clone)]
pub struct PointCloud {
    params: GridParams,
    domain: Arc<dyn SignedDistanceDomain>,
    points: Vec<Vec3>,
    num_interior: usize,
    lattice: Vec<[u32; 3]>,
    normals: Vec<Vec3>,
    source_cubes: Vec<[u32; 3]>,
    lookup: Vec<u32>,
    index: SpatialIndex,
}

impl std::fmt::Debug for PointCloud {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PointCloud")
            .field("domain", &self.domain.name())
            .field("params", &self.params)
            .field("interior", &self.num_interior)
            .field("boundary", &self.num_boundary())
            .finish()
    }
}

/// Builds the full point cloud for `domain` at lattice count `n`.
pub fn assemble_point_cloud(domain: Arc<dyn SignedDistanceDomain>, n: usize) -> Result<PointCloud, GridError> {
    let params = GridParams::for_domain(domain.as_ref(), n)?;
    let interior = interior_with(domain.as_ref(), &params)?;
    let cubes = boundary_cubes_with(domain.as_ref(), &params);

    let merge_radius = 0.25 * params.h_b;
    let mut buckets: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    let bucket_of = |x: &Vec3| -> [i64; 3] {
        let c = (x - params.origin) / merge_radius;
        [c[0].floor() as i64, c[1].floor() as i64, c[2].floor() as i64]
    };
    let mut boundary: Vec<BoundaryPoint> = Vec::new();
    for &cube in &cubes {
        for bp in sample_boundary_points(domain.as_ref(), cube, &params)? {
            let key = bucket_of(&bp.x);
            let mut duplicate = false;
            'search: for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        if let Some(ids) = buckets.get(&[key[0] + dx, key[1] + dy, key[2] + dz]) {
                            if ids.iter().any(|&b| (boundary[b].x - bp.x).norm() < merge_radius) {
                                duplicate = true;
                                break 'search;
                            }
                        }
                    }
                }
            }
            if !duplicate {
                buckets.entry(key).or_default().push(boundary.len());
                boundary.push(bp);
            }
        }
    }

    let m = params.n + 1;
    let mut lookup = vec![NO_NODE; m * m * m];
    for (id, p) in interior.iter().enumerate() {
        let slot = &mut lookup[params.flat(p.index)];
        if *slot != NO_NODE {
            return Err(GridError::Internal(format!("duplicate lattice index {:?}", p.index)));
        }
        *slot = id as u32;
    }

    let num_interior = interior.len();
    let mut points: Vec<Vec3> = interior.iter().map(|p| p.x).collect();
    points.extend(boundary.iter().map(|b| b.x));
    let lattice = interior.iter().map(|p| p.index).collect();
    let normals = boundary.iter().map(|b| b.normal).collect();
    let source_cubes = boundary.iter().map(|b| b.cube).collect();
    let index = SpatialIndex::new(&points, params.origin, params.side, 0.5 * params.epsilon);
    Ok(PointCloud { params, domain, points, num_interior, lattice, normals, source_cubes, lookup, index })
}

impl PointCloud {
    pub fn params(&self) -> &GridParams {
        &self.params
    }

    pub fn domain(&self) -> &Arc<dyn SignedDistanceDomain> {
        &self.domain
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn num_interior(&self) -> usize {
        self.num_interior
    }

    pub fn num_boundary(&self) -> usize {
        self.points.len() - self.num_interior
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    #[inline]
    pub fn point(&self, id: NodeId) -> Vec3 {
        self.points[id.index()]
    }

    #[inline]
    pub fn is_interior(&self, id: NodeId) -> bool {
        id.index() < self.num_interior
    }

    pub fn interior_ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.num_interior as u32).map(NodeId)
    }

    pub fn boundary_ids(&self) -> impl Iterator<Item = NodeId> {
        (self.num_interior as u32..self.points.len() as u32).map(NodeId)
    }

    pub fn ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.points.len() as u32).map(NodeId)
    }

    /// Lattice index of an interior node.
    pub fn lattice_index(&self, id: NodeId) -> Option<[u32; 3]> {
        self.lattice.get(id.index()).copied()
    }

    /// Outward normal at a boundary node.
    pub fn normal(&self, id: NodeId) -> Option<Vec3> {
        id.index().checked_sub(self.num_interior).map(|b| self.normals[b])
    }

    /// Boundary cube a boundary node was sampled from.
    pub fn source_cube(&self, id: NodeId) -> Option<[u32; 3]> {
        id.index().checked_sub(self.num_interior).map(|b| self.source_cubes[b])
    }

    /// Interior node at lattice index `idx`, if that node is interior.
    #[inline]
    pub fn node_at(&self, idx: [i64; 3]) -> Option<NodeId> {
        let n = self.params.n as i64;
        if idx.iter().any(|&c| c < 0 || c > n) {
            return None;
        }
        let id = self.lookup[self.params.flat([idx[0] as u32, idx[1] as u32, idx[2] as u32])];
        (id != NO_NODE).then_some(NodeId(id))
    }

    /// All nodes within distance `r` of `x` (inclusive), in increasing id order.
    pub fn neighbors_within(&self, x: &Vec3, r: f64) -> Vec<NodeId> {
        let mut out = Vec::new();
        self.index.for_each_within(&self.points, x, r, |id| out.push(id));
        out.sort_unstable();
        out
    }

    /// Calls `f` for every node within distance `r` of `x`, in unspecified order.
    pub fn for_each_within(&self, x: &Vec3, r: f64, f: impl FnMut(NodeId)) {
        self.index.for_each_within(&self.points, x, r, f);
    }

    /// Node closest to `x` (ties to the smaller id).
    pub fn nearest(&self, x: &Vec3) -> NodeId {
        let mut r = self.params.h;
        loop {
            let mut best: Option<(f64, NodeId)> = None;
            self.index.for_each_within(&self.points, x, r, |id| {
                let d = (self.points[id.index()] - x).norm();
                if best.is_none_or(|(bd, bid)| d < bd || (d == bd && id < bid)) {
                    best = Some((d, id));
                }
            });
            if let Some((_, id)) = best {
                return id;
            }
            r *= 2.0;
            if r > 4.0 * self.params.side + self.domain.diameter() {
                // Only reachable for queries far outside the cloud.
                return (0..self.points.len())
                    .min_by(|&a, &b| (self.points[a] - x).norm().total_cmp(&(self.points[b] - x).norm()))
                    .map(|i| NodeId(i as u32))
                    .unwrap_or(NodeId(0));
            }
        }
    }

    /// Writes the plain-text cloud dump.
    pub fn write_to(&self, mut w: impl Write) -> io::Result<()> {
        writeln!(w, "# ellipt3d-cloud v1 n={} nB={}", self.params.n, self.params.n_b)?;
        for id in self.ids() {
            let x = self.point(id);
            match self.normal(id) {
                None => writeln!(w, "I {:.17e} {:.17e} {:.17e}", x[0], x[1], x[2])?,
                Some(nv) => writeln!(
                    w,
                    "B {:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e}",
                    x[0], x[1], x[2], nv[0], nv[1], nv[2]
                )?,
            }
        }
        Ok(())
    }
}
