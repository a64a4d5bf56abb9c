//! Uniform-cell spatial index over a fixed point set.

use crate::{NodeId, Vec3};

/// Bucket grid in compressed-row layout: `starts[c]..starts[c + 1]` indexes
/// into `ids` for cell `c`.
#[derive(Clone, Debug)]
pub struct SpatialIndex {
    origin: Vec3,
    cell: f64,
    dims: usize,
    starts: Vec<u32>,
    ids: Vec<u32>,
}

impl SpatialIndex {
    pub fn new(points: &[Vec3], origin: Vec3, side: f64, cell: f64) -> Self {
        let dims = ((side / cell).ceil() as usize).max(1);
        let mut index = Self { origin, cell, dims, starts: vec![0; dims * dims * dims + 1], ids: vec![0; points.len()] };
        let cells: Vec<usize> = points.iter().map(|p| index.flat(index.cell_of(p))).collect();
        for &c in &cells {
            index.starts[c + 1] += 1;
        }
        for c in 0..dims * dims * dims {
            index.starts[c + 1] += index.starts[c];
        }
        let mut fill = index.starts.clone();
        for (id, &c) in cells.iter().enumerate() {
            index.ids[fill[c] as usize] = id as u32;
            fill[c] += 1;
        }
        index
    }

    fn cell_of(&self, x: &Vec3) -> [usize; 3] {
        let mut c = [0usize; 3];
        for a in 0..3 {
            let v = ((x[a] - self.origin[a]) / self.cell).floor();
            c[a] = v.clamp(0.0, (self.dims - 1) as f64) as usize;
        }
        c
    }

    #[inline]
    fn flat(&self, c: [usize; 3]) -> usize {
        (c[0] * self.dims + c[1]) * self.dims + c[2]
    }

    /// Calls `f` with every point within distance `r` of `x` (inclusive).
    pub fn for_each_within(&self, points: &[Vec3], x: &Vec3, r: f64, mut f: impl FnMut(NodeId)) {
        let lo = self.cell_of(&(x - Vec3::repeat(r)));
        let hi = self.cell_of(&(x + Vec3::repeat(r)));
        let r2 = r * r;
        for i in lo[0]..=hi[0] {
            for j in lo[1]..=hi[1] {
                for k in lo[2]..=hi[2] {
                    let c = self.flat([i, j, k]);
                    for &id in &self.ids[self.starts[c] as usize..self.starts[c + 1] as usize] {
                        if (points[id as usize] - x).norm_squared() <= r2 {
                            f(NodeId(id));
                        }
                    }
                }
            }
        }
    }
}
