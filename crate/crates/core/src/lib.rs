//! Monotone generalized finite difference schemes for fully nonlinear
//! elliptic equations on three-dimensional domains.
//!
//! The crate is organized bottom-up:
//!
//! - [`grid`]: Cartesian interior lattice plus an over-resolved, projected
//!   boundary sampling built from a signed-distance description of the domain.
//! - [`stencil`]: consistent, monotone approximations of second directional
//!   derivatives (interior) and first directional derivatives (boundary),
//!   obtained from centered differences or sign-constrained least squares.
//! - [`frames`]: integer orthogonal coordinate frames, their alignment
//!   hierarchy and the multilevel frame search.
//! - [`operators`]: per-node nonlinear schemes with residual evaluation and
//!   local inverses.
//! - [`solver`]: policy-freezing Gauss-Seidel iteration, multilevel frame
//!   refinement and eigenvalue augmentation.
//! - [`harness`]: problem registry and convergence studies.

pub mod frames;
pub mod grid;
pub mod harness;
pub mod operators;
pub mod solver;
pub mod stencil;

/// Points and vectors in R³.
pub type Vec3 = nalgebra::Vector3<f64>;

/// Identifier of a node of a [`grid::PointCloud`]. Interior nodes come first,
/// followed by boundary nodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Crate-level error.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Grid(#[from] grid::GridError),
    #[error(transparent)]
    Stencil(#[from] stencil::StencilError),
    #[error(transparent)]
    Frames(#[from] frames::FrameError),
    #[error(transparent)]
    Operator(#[from] operators::OperatorError),
    #[error(transparent)]
    Solver(#[from] solver::SolverError),
    #[error(transparent)]
    Harness(#[from] harness::HarnessError),
}
