//! Sign-constrained linear least squares (Lawson–Hanson active set).

use nalgebra::{DMatrix, DVector};

use super::StencilError;

/// Residual above this fraction of `‖b‖` means the constrained system has no
/// exact solution.
pub const INFEASIBLE_RELATIVE_RESIDUAL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SignConstraint {
    Nonnegative,
    Nonpositive,
}

/// `minimize ½‖M a − b‖²` subject to a sign constraint on every `a_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct NnlsProblem {
    pub m: DMatrix<f64>,
    pub b: DVector<f64>,
    pub sign: SignConstraint,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NnlsSolution {
    pub x: DVector<f64>,
    /// Euclidean norm of `M x − b`.
    pub residual: f64,
}

/// Nonnegative least squares by the Lawson–Hanson active-set method.
///
/// Entering columns are chosen by largest dual value with ties broken towards
/// the lowest index; at most `10 · ncols` outer iterations are run.
pub fn nnls(m: &DMatrix<f64>, b: &DVector<f64>) -> NnlsSolution {
    let (rows, cols) = m.shape();
    let mut x = DVector::zeros(cols);
    let mut passive = vec![false; cols];
    let scale = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(f64::MIN_POSITIVE);
    let tol = 10.0 * f64::EPSILON * scale * rows.max(cols) as f64 * b.norm().max(1.0);

    for _ in 0..10 * cols.max(1) {
        let w = m.transpose() * (b - m * &x);
        let entering = (0..cols)
            .filter(|&j| !passive[j] && w[j] > tol)
            .fold(None, |best: Option<usize>, j| match best {
                Some(k) if w[k] >= w[j] => Some(k),
                _ => Some(j),
            });
        let Some(t) = entering else { break };
        passive[t] = true;

        loop {
            let z = passive_solve(m, b, &passive);
            if (0..cols).filter(|&j| passive[j]).all(|j| z[j] > 0.0) {
                x = z;
                break;
            }
            let mut alpha = f64::INFINITY;
            for j in (0..cols).filter(|&j| passive[j] && z[j] <= 0.0) {
                let denom = x[j] - z[j];
                if denom > 0.0 {
                    alpha = alpha.min(x[j] / denom);
                }
            }
            if !alpha.is_finite() {
                alpha = 0.0;
            }
            x += (z - &x) * alpha;
            let mut dropped = false;
            for j in 0..cols {
                if passive[j] && x[j] <= tol.max(0.0) {
                    passive[j] = false;
                    x[j] = 0.0;
                    dropped = true;
                }
            }
            if !dropped || !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    for v in x.iter_mut() {
        *v = v.max(0.0);
    }
    let residual = (m * &x - b).norm();
    NnlsSolution { x, residual }
}

/// Minimum-norm least squares restricted to the passive columns.
fn passive_solve(m: &DMatrix<f64>, b: &DVector<f64>, passive: &[bool]) -> DVector<f64> {
    let cols: Vec<usize> = (0..passive.len()).filter(|&j| passive[j]).collect();
    let sub = m.select_columns(&cols);
    let svd = sub.svd(true, true);
    let eps = 1e-13 * svd.singular_values.max().max(f64::MIN_POSITIVE);
    let z = svd.solve(b, eps).unwrap_or_else(|_| DVector::zeros(cols.len()));
    let mut out = DVector::zeros(passive.len());
    for (k, &j) in cols.iter().enumerate() {
        out[j] = z[k];
    }
    out
}

/// Solves a sign-constrained problem, failing when no exact solution exists.
pub fn solve_constrained_ls(problem: &NnlsProblem) -> Result<DVector<f64>, StencilError> {
    let sol = match problem.sign {
        SignConstraint::Nonnegative => nnls(&problem.m, &problem.b),
        SignConstraint::Nonpositive => {
            let mut s = nnls(&(-&problem.m), &problem.b);
            s.x = -s.x;
            s
        }
    };
    if sol.residual > INFEASIBLE_RELATIVE_RESIDUAL * problem.b.norm() {
        return Err(StencilError::Infeasible { residual: sol.residual });
    }
    Ok(sol.x)
}
