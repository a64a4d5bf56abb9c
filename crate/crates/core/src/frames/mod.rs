//! Integer directions, integer orthogonal frames and the multilevel frame
//! search.
//!
//! Directions are stored as primitive integer vectors whose first nonzero
//! component is positive. A frame is a triple of pairwise orthogonal
//! directions sorted lexicographically.

mod cache;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub use cache::{read_cache, write_cache, CACHE_VERSION};

use crate::stencil::gcd3;
use crate::Vec3;

/// Integer vector.
pub type IVec = [i32; 3];

/// Canonical orthogonal frame.
pub type Frame = [IVec; 3];

/// Number of aligned candidates kept per vector in the alignment maps.
pub const ALIGNED_COUNT: usize = 5;

/// Default Monte Carlo sample count for the angular resolution estimate.
pub const DEFAULT_DTHETA_SAMPLES: usize = 4096;

/// Default seed for the angular resolution estimate.
pub const DEFAULT_DTHETA_SEED: u64 = 0x5eed;

#[derive(Debug, thiserror::Error)]
pub enum FrameError {
    #[error("frame level {k} outside 1..={k_max}")]
    InvalidLevel { k: usize, k_max: usize },
    #[error("no candidate frames at level {level}")]
    EmptyCandidates { level: usize },
    #[error("frame cache: {0}")]
    Cache(String),
    #[error("frame cache I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// Primitive, sign-canonical representative of the line through `v`.
pub fn canonical_direction(v: IVec) -> IVec {
    let g = gcd3(v).max(1);
    let mut w = [v[0] / g, v[1] / g, v[2] / g];
    if let Some(&first) = w.iter().find(|&&c| c != 0) {
        if first < 0 {
            w = [-w[0], -w[1], -w[2]];
        }
    }
    w
}

pub fn dot(a: IVec, b: IVec) -> i64 {
    (0..3).map(|i| a[i] as i64 * b[i] as i64).sum()
}

pub fn cross(a: IVec, b: IVec) -> IVec {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub fn norm2(a: IVec) -> i64 {
    dot(a, a)
}

fn inf_norm(a: IVec) -> i32 {
    a.iter().map(|c| c.abs()).max().unwrap_or(0)
}

pub fn to_unit(a: IVec) -> Vec3 {
    Vec3::new(a[0] as f64, a[1] as f64, a[2] as f64).normalize()
}

/// Sorts the canonical forms of the three vectors.
pub fn canonical_frame(f: Frame) -> Frame {
    let mut out = f.map(canonical_direction);
    out.sort();
    out
}

/// Primitive sign-canonical directions with ∞-norm at most `k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DirectionSet {
    pub k: usize,
    pub directions: Vec<IVec>,
}

pub fn enumerate_directions(k: usize) -> DirectionSet {
    let k = k as i32;
    let mut directions = Vec::new();
    for x in -k..=k {
        for y in -k..=k {
            for z in -k..=k {
                let v = [x, y, z];
                if v != [0, 0, 0] && canonical_direction(v) == v {
                    directions.push(v);
                }
            }
        }
    }
    directions.sort();
    DirectionSet { k: k as usize, directions }
}

/// Orthogonal frames with every direction of ∞-norm at most `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSet {
    pub k: usize,
    pub frames: Vec<Frame>,
    pub dtheta: f64,
}

/// All canonical frames of width `k`, without the angular resolution.
pub fn enumerate_frame_list(k: usize) -> Vec<Frame> {
    let dirs = enumerate_directions(k).directions;
    let mut set = BTreeSet::new();
    for (i, &a) in dirs.iter().enumerate() {
        for &b in &dirs[i + 1..] {
            if dot(a, b) != 0 {
                continue;
            }
            let c = canonical_direction(cross(a, b));
            if inf_norm(c) as usize <= k {
                set.insert(canonical_frame([a, b, c]));
            }
        }
    }
    set.into_iter().collect()
}

pub fn enumerate_frames(k: usize) -> FrameSet {
    let frames = enumerate_frame_list(k);
    let dtheta = estimate_angular_resolution(&frames, DEFAULT_DTHETA_SAMPLES, DEFAULT_DTHETA_SEED);
    FrameSet { k, frames, dtheta }
}

/// Haar-distributed random orthonormal frame (Gram–Schmidt on Gaussians).
pub fn random_orthonormal_frame(rng: &mut impl rand::Rng) -> [Vec3; 3] {
    loop {
        let mut g = || Vec3::new(StandardNormal.sample(rng), StandardNormal.sample(rng), StandardNormal.sample(rng));
        let a = g();
        let b = g();
        let c = g();
        let e1 = a.normalize();
        let b = b - e1 * e1.dot(&b);
        if b.norm() < 1e-8 {
            continue;
        }
        let e2 = b.normalize();
        let c = c - e1 * e1.dot(&c) - e2 * e2.dot(&c);
        if c.norm() < 1e-8 {
            continue;
        }
        return [e1, e2, c.normalize()];
    }
}

const PERMUTATIONS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

/// Worst axis angle between a unit frame and an integer frame under the best
/// matching of axes (axes are lines, so signs are ignored).
pub fn frame_distance(v: &[Vec3; 3], f: &[Vec3; 3]) -> f64 {
    let mut best = f64::INFINITY;
    for p in PERMUTATIONS {
        let worst_cos = (0..3).map(|i| v[i].dot(&f[p[i]]).abs()).fold(1.0, f64::min);
        best = best.min(worst_cos.min(1.0).acos());
    }
    best
}

/// Monte Carlo estimate of the worst-case angular resolution of a frame set.
pub fn estimate_angular_resolution(frames: &[Frame], samples: usize, seed: u64) -> f64 {
    if frames.is_empty() {
        return std::f64::consts::FRAC_PI_2;
    }
    let units: Vec<[Vec3; 3]> = frames.iter().map(|f| f.map(to_unit)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let v = random_orthonormal_frame(&mut rng);
        let nearest = units.iter().map(|f| frame_distance(&v, f)).fold(f64::INFINITY, f64::min);
        worst = worst.max(nearest);
    }
    worst
}

/// Orders candidates by alignment with `target`: decreasing `cos²`, then
/// increasing squared length, then lexicographically. Exact integer
/// arithmetic.
fn alignment_cmp(target: IVec, a: IVec, b: IVec) -> Ordering {
    let (da, db) = (dot(target, a) as i128, dot(target, b) as i128);
    let (na, nb) = (norm2(a) as i128, norm2(b) as i128);
    // cos²(a) > cos²(b)  <=>  da² nb > db² na
    (db * db * na).cmp(&(da * da * nb)).then(na.cmp(&nb)).then(a.cmp(&b))
}

/// The `ALIGNED_COUNT` candidates most closely aligned with `target`.
pub fn most_aligned(target: IVec, candidates: impl IntoIterator<Item = IVec>) -> Vec<IVec> {
    let mut v: Vec<IVec> = candidates.into_iter().collect();
    v.sort_by(|&a, &b| alignment_cmp(target, a, b));
    v.truncate(ALIGNED_COUNT);
    v
}

/// Angle between the lines spanned by two integer vectors.
pub fn alignment_angle(a: IVec, b: IVec) -> f64 {
    let c = dot(a, b).abs() as f64 / ((norm2(a) as f64).sqrt() * (norm2(b) as f64).sqrt());
    c.min(1.0).acos()
}

/// Frame sets of widths `1..=k_max` with the alignment maps between
/// consecutive levels.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameHierarchy {
    pub k_max: usize,
    /// `directions[k-1]` is `E_k`.
    pub directions: Vec<DirectionSet>,
    /// `levels[k-1]` is `V_k`.
    pub levels: Vec<FrameSet>,
    /// `map1[k-1]`: first frame vector at level `k` to its most aligned
    /// frame vectors at level `k+1`.
    pub map1: Vec<BTreeMap<IVec, Vec<IVec>>>,
    /// `map2[k-1]`: `(second frame vector at level k, candidate first vector
    /// μ at level k+1)` to the most aligned partners of `μ` at level `k+1`.
    pub map2: Vec<BTreeMap<(IVec, IVec), Vec<IVec>>>,
}

/// Vectors appearing in some frame of the set.
fn frame_vectors(frames: &[Frame]) -> BTreeSet<IVec> {
    frames.iter().flat_map(|f| f.iter().copied()).collect()
}

/// For each vector, the vectors it shares a frame with.
fn partners(frames: &[Frame]) -> BTreeMap<IVec, BTreeSet<IVec>> {
    let mut out: BTreeMap<IVec, BTreeSet<IVec>> = BTreeMap::new();
    for f in frames {
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    out.entry(f[i]).or_default().insert(f[j]);
                }
            }
        }
    }
    out
}

pub fn build_hierarchy(k_max: usize) -> FrameHierarchy {
    build_hierarchy_with(k_max, DEFAULT_DTHETA_SAMPLES, DEFAULT_DTHETA_SEED)
}

pub fn build_hierarchy_with(k_max: usize, samples: usize, seed: u64) -> FrameHierarchy {
    let k_max = k_max.max(1);
    let directions: Vec<DirectionSet> = (1..=k_max).map(enumerate_directions).collect();
    let levels: Vec<FrameSet> = (1..=k_max)
        .map(|k| {
            let frames = enumerate_frame_list(k);
            let dtheta = estimate_angular_resolution(&frames, samples, seed);
            FrameSet { k, frames, dtheta }
        })
        .collect();
    let mut map1 = Vec::new();
    let mut map2 = Vec::new();
    for k in 1..k_max {
        let coarse = &levels[k - 1].frames;
        let fine = &levels[k].frames;
        let fine_vectors = frame_vectors(fine);
        let fine_partners = partners(fine);
        let m1: BTreeMap<IVec, Vec<IVec>> = frame_vectors(coarse)
            .into_iter()
            .map(|v| (v, most_aligned(v, fine_vectors.iter().copied())))
            .collect();
        let mut m2 = BTreeMap::new();
        for f in coarse {
            for &mu in &m1[&f[0]] {
                m2.entry((f[1], mu))
                    .or_insert_with(|| most_aligned(f[1], fine_partners[&mu].iter().copied()));
            }
        }
        map1.push(m1);
        map2.push(m2);
    }
    FrameHierarchy { k_max, directions, levels, map1, map2 }
}

impl FrameHierarchy {
    pub fn level(&self, k: usize) -> Result<&FrameSet, FrameError> {
        self.levels.get(k.wrapping_sub(1)).ok_or(FrameError::InvalidLevel { k, k_max: self.k_max })
    }

    pub fn directions(&self, k: usize) -> Result<&DirectionSet, FrameError> {
        self.directions.get(k.wrapping_sub(1)).ok_or(FrameError::InvalidLevel { k, k_max: self.k_max })
    }

    /// Candidate frames `W_{k+1}` built around a frame of level `k`.
    pub fn refine(&self, k: usize, frame: &Frame) -> Result<Vec<Frame>, FrameError> {
        if k == 0 || k >= self.k_max {
            return Err(FrameError::InvalidLevel { k: k + 1, k_max: self.k_max });
        }
        let frame = canonical_frame(*frame);
        let mut out = BTreeSet::new();
        if let Some(mus) = self.map1[k - 1].get(&frame[0]) {
            for &mu in mus {
                if let Some(rhos) = self.map2[k - 1].get(&(frame[1], mu)) {
                    for &rho in rhos {
                        out.insert(canonical_frame([mu, rho, cross(mu, rho)]));
                    }
                }
            }
        }
        if out.is_empty() {
            return Err(FrameError::EmptyCandidates { level: k + 1 });
        }
        Ok(out.into_iter().collect())
    }
}

fn argmax(frames: impl IntoIterator<Item = Frame>, score: &mut impl FnMut(&Frame) -> f64) -> Option<(Frame, f64)> {
    let mut best: Option<(Frame, f64)> = None;
    for f in frames {
        let v = score(&f);
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((f, v));
        }
    }
    best
}

/// Multilevel maximization: full search over `V_1`, then at each level the
/// previous maximizer together with its refinement candidates.
pub fn multilevel_argmax(
    mut score: impl FnMut(&Frame) -> f64,
    hierarchy: &FrameHierarchy,
    k_star: usize,
) -> Result<(Frame, f64), FrameError> {
    if k_star == 0 || k_star > hierarchy.k_max {
        return Err(FrameError::InvalidLevel { k: k_star, k_max: hierarchy.k_max });
    }
    let (mut frame, mut value) =
        argmax(hierarchy.levels[0].frames.iter().copied(), &mut score).ok_or(FrameError::EmptyCandidates { level: 1 })?;
    for k in 1..k_star {
        let candidates = hierarchy.refine(k, &frame)?;
        if let Some((f, v)) = argmax(candidates.into_iter().filter(|f| *f != frame), &mut score) {
            if v > value {
                frame = f;
                value = v;
            }
        }
    }
    Ok((frame, value))
}
