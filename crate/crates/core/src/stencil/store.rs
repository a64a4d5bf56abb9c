//! Flat storage for many stencils.

use super::Stencil;
use crate::NodeId;

/// Handle to a stencil inside a [`StencilStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StencilRef(pub u32);

/// Stencils stored back to back: coefficients and neighbor ids in flat
/// arrays, with per-stencil offsets, reference node and coefficient sum.
#[derive(Clone, Debug, Default)]
pub struct StencilStore {
    starts: Vec<u32>,
    ids: Vec<u32>,
    coefs: Vec<f64>,
    sums: Vec<f64>,
    refs: Vec<u32>,
    angular: Vec<f64>,
}

impl StencilStore {
    pub fn new() -> Self {
        Self { starts: vec![0], ..Default::default() }
    }

    pub fn push(&mut self, s: &Stencil) -> StencilRef {
        if self.starts.is_empty() {
            self.starts.push(0);
        }
        let r = StencilRef(self.refs.len() as u32);
        self.ids.extend(s.neighbors.iter().map(|id| id.0));
        self.coefs.extend_from_slice(&s.coefficients);
        self.starts.push(self.ids.len() as u32);
        self.sums.push(s.coefficients.iter().sum());
        self.refs.push(s.reference.0);
        self.angular.push(s.angular_error);
        r
    }

    pub fn len(&self) -> usize {
        self.refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }

    #[inline]
    fn range(&self, r: StencilRef) -> std::ops::Range<usize> {
        self.starts[r.0 as usize] as usize..self.starts[r.0 as usize + 1] as usize
    }

    /// `(Σ a_j u_j, Σ a_j)`, so that the stencil value is `first − second · u_0`.
    #[inline]
    pub fn split(&self, r: StencilRef, u: &[f64]) -> (f64, f64) {
        let range = self.range(r);
        let weighted = self.ids[range.clone()].iter().zip(&self.coefs[range]).map(|(&j, a)| a * u[j as usize]).sum();
        (weighted, self.sums[r.0 as usize])
    }

    /// `Σ a_j (u_j − u_0)`.
    #[inline]
    pub fn apply(&self, r: StencilRef, u: &[f64]) -> f64 {
        let u0 = u[self.refs[r.0 as usize] as usize];
        let range = self.range(r);
        self.ids[range.clone()].iter().zip(&self.coefs[range]).map(|(&j, a)| a * (u[j as usize] - u0)).sum()
    }

    pub fn reference(&self, r: StencilRef) -> NodeId {
        NodeId(self.refs[r.0 as usize])
    }

    pub fn angular_error(&self, r: StencilRef) -> f64 {
        self.angular[r.0 as usize]
    }

    pub fn neighbors(&self, r: StencilRef) -> impl Iterator<Item = (NodeId, f64)> + '_ {
        let range = self.range(r);
        self.ids[range.clone()].iter().zip(&self.coefs[range]).map(|(&j, &a)| (NodeId(j), a))
    }
}
