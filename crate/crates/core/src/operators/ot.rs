//! Support functions of convex target sets.

use std::sync::Arc;

use crate::grid::SignedDistanceDomain;
use crate::Vec3;

const SUPPORT_SAMPLES: usize = 10_000;
const REFINE_ITERS: usize = 60;

/// Support function `H*(n) = sup_{p ∈ Ω₂} p·n` of a convex target `Ω₂`.
#[derive(Clone)]
pub enum SupportFunction {
    Ball { center: Vec3, radius: f64 },
    /// Sampled from the boundary of a convex signed-distance domain.
    Sampled { domain: Arc<dyn SignedDistanceDomain>, samples: Arc<Vec<Vec3>> },
}

impl std::fmt::Debug for SupportFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SupportFunction::Ball { center, radius } => write!(f, "Ball({center:?}, {radius})"),
            SupportFunction::Sampled { domain, samples } => {
                write!(f, "Sampled({}, {} samples)", domain.name(), samples.len())
            }
        }
    }
}

/// Unit vectors spread over the sphere (Fibonacci lattice).
pub fn fibonacci_sphere(count: usize) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            Vec3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

impl SupportFunction {
    pub fn ball(center: Vec3, radius: f64) -> Self {
        SupportFunction::Ball { center, radius }
    }

    /// Samples the boundary of `domain` by projecting rays from the center of
    /// its bounding cube.
    pub fn sampled(domain: Arc<dyn SignedDistanceDomain>) -> Self {
        let cube = domain.bounding_cube();
        let center = cube.min + Vec3::repeat(0.5 * cube.side);
        let step = 1e-6 * domain.diameter();
        let samples = fibonacci_sphere(SUPPORT_SAMPLES)
            .into_iter()
            .filter_map(|d| domain.project(&(center + d * (0.5 * domain.diameter())), step).ok())
            .collect();
        SupportFunction::Sampled { domain, samples: Arc::new(samples) }
    }

    /// `H*(n)` for a unit vector `n`.
    pub fn value(&self, n: &Vec3) -> f64 {
        match self {
            SupportFunction::Ball { center, radius } => center.dot(n) + radius * n.norm(),
            SupportFunction::Sampled { domain, samples } => {
                let mut best = samples
                    .iter()
                    .copied()
                    .max_by(|a, b| a.dot(n).total_cmp(&b.dot(n)))
                    .unwrap_or_else(Vec3::zeros);
                let mut value = best.dot(n);
                let step = 1e-6 * domain.diameter();
                let mut push = 0.05 * domain.diameter();
                for _ in 0..REFINE_ITERS {
                    match domain.project(&(best + n * push), step) {
                        Ok(p) if p.dot(n) > value => {
                            value = p.dot(n);
                            best = p;
                        }
                        _ => push *= 0.5,
                    }
                }
                value
            }
        }
    }
}
