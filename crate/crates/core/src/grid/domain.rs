//! Signed-distance descriptions of computational domains.

use std::fmt;
use std::sync::Arc;

use super::GridError;
use crate::Vec3;

/// Margin added around a domain's extent when building its covering cube, so
/// that the boundary never coincides with the faces of the lattice.
const COVER_MARGIN: f64 = 1.1;

const PROJECTION_MAX_ITERS: usize = 50;
const PROJECTION_TOL: f64 = 1e-10;

/// Axis-aligned cube `[min, min + side]³` covering a domain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundingCube {
    pub min: Vec3,
    pub side: f64,
}

impl BoundingCube {
    pub fn centered(center: Vec3, half_width: f64) -> Self {
        Self { min: center - Vec3::repeat(half_width), side: 2.0 * half_width }
    }

    pub fn contains(&self, x: &Vec3) -> bool {
        (0..3).all(|a| x[a] >= self.min[a] && x[a] <= self.min[a] + self.side)
    }
}

/// A domain described by its signed distance function (negative inside).
pub trait SignedDistanceDomain: Send + Sync {
    fn distance(&self, x: &Vec3) -> f64;

    fn bounding_cube(&self) -> BoundingCube;

    fn diameter(&self) -> f64;

    /// Projects a point lying near the boundary onto the boundary.
    ///
    /// The default implementation runs the damped iteration
    /// `x ← x − G(x)∇G(x)` with a central-difference gradient of step
    /// `fd_step`.
    fn project(&self, x: &Vec3, fd_step: f64) -> Result<Vec3, GridError> {
        damped_projection(self, x, fd_step)
    }

    /// Unit outward normal at a boundary point.
    fn outward_normal(&self, x: &Vec3, fd_step: f64) -> Vec3 {
        let g = fd_gradient(self, x, fd_step);
        let norm = g.norm();
        if norm > 0.0 {
            g / norm
        } else {
            Vec3::x()
        }
    }

    /// Short human-readable name, e.g. `ball(1)`.
    fn name(&self) -> String;
}

impl fmt::Debug for dyn SignedDistanceDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SignedDistanceDomain({})", self.name())
    }
}

fn fd_gradient<D: SignedDistanceDomain + ?Sized>(domain: &D, x: &Vec3, step: f64) -> Vec3 {
    let mut g = Vec3::zeros();
    for a in 0..3 {
        let mut e = Vec3::zeros();
        e[a] = step;
        g[a] = (domain.distance(&(x + e)) - domain.distance(&(x - e))) / (2.0 * step);
    }
    g
}

fn damped_projection<D: SignedDistanceDomain + ?Sized>(
    domain: &D,
    x: &Vec3,
    fd_step: f64,
) -> Result<Vec3, GridError> {
    let tol = PROJECTION_TOL * domain.diameter();
    let mut p = *x;
    let mut g = domain.distance(&p);
    for _ in 0..PROJECTION_MAX_ITERS {
        if g.abs() <= tol {
            return Ok(p);
        }
        let grad = fd_gradient(domain, &p, fd_step);
        let gn2 = grad.norm_squared();
        if gn2 == 0.0 {
            break;
        }
        let mut step = 1.0;
        loop {
            let q = p - grad * (step * g / gn2);
            let gq = domain.distance(&q);
            if gq.abs() < g.abs() || step < 1e-6 {
                p = q;
                g = gq;
                break;
            }
            step *= 0.5;
        }
    }
    if g.abs() <= tol {
        Ok(p)
    } else {
        Err(GridError::ProjectionFailed { point: [x[0], x[1], x[2]], distance: g })
    }
}

/// Euclidean ball.
#[derive(Clone, Debug, PartialEq)]
pub struct Ball {
    pub center: Vec3,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: Vec3, radius: f64) -> Self {
        Self { center, radius }
    }

    pub fn unit() -> Self {
        Self::new(Vec3::zeros(), 1.0)
    }
}

impl SignedDistanceDomain for Ball {
    fn distance(&self, x: &Vec3) -> f64 {
        (x - self.center).norm() - self.radius
    }

    fn bounding_cube(&self) -> BoundingCube {
        BoundingCube::centered(self.center, COVER_MARGIN * self.radius)
    }

    fn diameter(&self) -> f64 {
        2.0 * self.radius
    }

    fn project(&self, x: &Vec3, _fd_step: f64) -> Result<Vec3, GridError> {
        let d = x - self.center;
        let r = d.norm();
        if r == 0.0 {
            return Err(GridError::ProjectionFailed { point: [x[0], x[1], x[2]], distance: -self.radius });
        }
        Ok(self.center + d * (self.radius / r))
    }

    fn outward_normal(&self, x: &Vec3, _fd_step: f64) -> Vec3 {
        (x - self.center).normalize()
    }

    fn name(&self) -> String {
        format!("ball({})", self.radius)
    }
}

/// Axis-aligned solid cube.
#[derive(Clone, Debug, PartialEq)]
pub struct Cube {
    pub center: Vec3,
    pub side: f64,
}

impl Cube {
    pub fn new(center: Vec3, side: f64) -> Self {
        Self { center, side }
    }
}

impl SignedDistanceDomain for Cube {
    fn distance(&self, x: &Vec3) -> f64 {
        let half = 0.5 * self.side;
        let q = (x - self.center).abs() - Vec3::repeat(half);
        let outside = q.map(|v| v.max(0.0)).norm();
        let inside = q.max().min(0.0);
        outside + inside
    }

    fn bounding_cube(&self) -> BoundingCube {
        BoundingCube::centered(self.center, COVER_MARGIN * 0.5 * self.side)
    }

    fn diameter(&self) -> f64 {
        self.side * 3f64.sqrt()
    }

    fn project(&self, x: &Vec3, _fd_step: f64) -> Result<Vec3, GridError> {
        let half = 0.5 * self.side;
        let d = x - self.center;
        let q = d.abs() - Vec3::repeat(half);
        let mut p = d;
        if q.max() > 0.0 {
            for a in 0..3 {
                p[a] = p[a].clamp(-half, half);
            }
        } else {
            // Inside: push the coordinate closest to a face onto that face.
            let a = (0..3).max_by(|&i, &j| q[i].total_cmp(&q[j])).unwrap_or(0);
            p[a] = half.copysign(if d[a] == 0.0 { 1.0 } else { d[a] });
        }
        Ok(self.center + p)
    }

    fn outward_normal(&self, x: &Vec3, _fd_step: f64) -> Vec3 {
        let half = 0.5 * self.side;
        let d = x - self.center;
        let q = d.abs() - Vec3::repeat(half);
        let a = (0..3).max_by(|&i, &j| q[i].total_cmp(&q[j])).unwrap_or(0);
        let mut n = Vec3::zeros();
        n[a] = if d[a] < 0.0 { -1.0 } else { 1.0 };
        n
    }

    fn name(&self) -> String {
        format!("cube({})", self.side)
    }
}

/// Signed distance supplied as a callback.
pub struct FnDomain {
    distance: Arc<dyn Fn(&Vec3) -> f64 + Send + Sync>,
    cube: BoundingCube,
    diameter: f64,
    name: String,
}

impl FnDomain {
    pub fn new(
        name: impl Into<String>,
        distance: impl Fn(&Vec3) -> f64 + Send + Sync + 'static,
        cube: BoundingCube,
        diameter: f64,
    ) -> Self {
        Self { distance: Arc::new(distance), cube, diameter, name: name.into() }
    }
}

impl SignedDistanceDomain for FnDomain {
    fn distance(&self, x: &Vec3) -> f64 {
        (self.distance)(x)
    }

    fn bounding_cube(&self) -> BoundingCube {
        self.cube
    }

    fn diameter(&self) -> f64 {
        self.diameter
    }

    fn name(&self) -> String {
        self.name.clone()
    }
}

/// Parses a registry name: `ball(r)` or `cube(s)`, both centered at the origin.
pub fn parse_domain(spec: &str) -> Result<Arc<dyn SignedDistanceDomain>, GridError> {
    let spec = spec.trim();
    let bad = || GridError::UnknownDomain(spec.to_string());
    let open = spec.find('(').ok_or_else(bad)?;
    if !spec.ends_with(')') {
        return Err(bad());
    }
    let kind = &spec[..open];
    let value: f64 = spec[open + 1..spec.len() - 1].trim().parse().map_err(|_| bad())?;
    if !(value > 0.0 && value.is_finite()) {
        return Err(bad());
    }
    match kind {
        "ball" => Ok(Arc::new(Ball::new(Vec3::zeros(), value))),
        "cube" => Ok(Arc::new(Cube::new(Vec3::zeros(), value))),
        _ => Err(bad()),
    }
}
