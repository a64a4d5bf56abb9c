//! Scalar maps used to build functions of Hessian eigenvalues.

use std::fmt;
use std::sync::Arc;

use super::OperatorError;

/// Lower clamp for the logarithm in the Monge–Ampère splitting.
pub const LOG_CLAMP: f64 = 1e-12;

type ScalarMap = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum ScalarFn {
    Identity,
    Negate,
    /// `log x` for `x ≥ σ`, continued below `σ` by its tangent line so the
    /// map stays concave and nondecreasing on all of R.
    LogClamped,
    /// `−e^x`.
    NegExp,
    /// `min(x, 0)`.
    MinZero,
    /// `arctan(max(x, 0)) + min(x, 0)`.
    ArctanPlusMin,
    Custom { name: String, f: ScalarMap, df: ScalarMap, affine: bool },
}

impl fmt::Debug for ScalarFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarFn::Identity => write!(f, "Identity"),
            ScalarFn::Negate => write!(f, "Negate"),
            ScalarFn::LogClamped => write!(f, "LogClamped"),
            ScalarFn::NegExp => write!(f, "NegExp"),
            ScalarFn::MinZero => write!(f, "MinZero"),
            ScalarFn::ArctanPlusMin => write!(f, "ArctanPlusMin"),
            ScalarFn::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

impl ScalarFn {
    pub fn custom(
        name: impl Into<String>,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        df: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        ScalarFn::Custom { name: name.into(), f: Arc::new(f), df: Arc::new(df), affine: false }
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        match self {
            ScalarFn::Identity => x,
            ScalarFn::Negate => -x,
            ScalarFn::LogClamped => {
                if x >= LOG_CLAMP {
                    x.ln()
                } else {
                    LOG_CLAMP.ln() + (x - LOG_CLAMP) / LOG_CLAMP
                }
            }
            ScalarFn::NegExp => -x.exp(),
            ScalarFn::MinZero => x.min(0.0),
            ScalarFn::ArctanPlusMin => x.max(0.0).atan() + x.min(0.0),
            ScalarFn::Custom { f, .. } => f(x),
        }
    }

    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            ScalarFn::Identity => 1.0,
            ScalarFn::Negate => -1.0,
            ScalarFn::LogClamped => 1.0 / x.max(LOG_CLAMP),
            ScalarFn::NegExp => -x.exp(),
            ScalarFn::MinZero => {
                if x < 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ScalarFn::ArctanPlusMin => {
                if x < 0.0 {
                    1.0
                } else {
                    1.0 / (1.0 + x * x)
                }
            }
            ScalarFn::Custom { df, .. } => df(x),
        }
    }

    pub fn is_affine(&self) -> bool {
        match self {
            ScalarFn::Identity | ScalarFn::Negate => true,
            ScalarFn::Custom { affine, .. } => *affine,
            _ => false,
        }
    }
}

/// One summand `G(Σ_j φ(λ_j))`.
#[derive(Clone, Debug)]
pub struct EigenTerm {
    pub phi: ScalarFn,
    pub g: ScalarFn,
}

/// A sum of functions of the Hessian eigenvalues, each of the form
/// `G(Σ_j φ(λ_j))` with `φ` concave nondecreasing and `G` nonincreasing.
#[derive(Clone, Debug)]
pub struct EigenFunctionSpec {
    pub terms: Vec<EigenTerm>,
}

impl EigenFunctionSpec {
    /// `−(λ₁ + λ₂ + λ₃)`.
    pub fn laplacian() -> Self {
        Self { terms: vec![EigenTerm { phi: ScalarFn::Identity, g: ScalarFn::Negate }] }
    }

    /// Convex extension of `−det`: `−Π max(λ_j, 0) − Σ min(λ_j, 0)`.
    pub fn monge_ampere() -> Self {
        Self {
            terms: vec![
                EigenTerm { phi: ScalarFn::LogClamped, g: ScalarFn::NegExp },
                EigenTerm { phi: ScalarFn::MinZero, g: ScalarFn::Negate },
            ],
        }
    }

    /// `−Σ (arctan max(λ_j, 0) + min(λ_j, 0))`.
    pub fn minimal_lagrangian() -> Self {
        Self { terms: vec![EigenTerm { phi: ScalarFn::ArctanPlusMin, g: ScalarFn::Negate }] }
    }

    /// Exact value on a matrix with eigenvalues `lambda`.
    pub fn value_on_eigenvalues(&self, lambda: &[f64; 3]) -> f64 {
        self.terms.iter().map(|t| t.g.value(lambda.iter().map(|&l| t.phi.value(l)).sum())).sum()
    }

    /// Value for a given triple of directional second derivatives.
    pub fn term_value(&self, term: usize, d: &[f64; 3]) -> f64 {
        let t = &self.terms[term];
        t.g.value(d.iter().map(|&x| t.phi.value(x)).sum())
    }

    pub fn is_affine(&self) -> bool {
        self.terms.iter().all(|t| t.phi.is_affine() && t.g.is_affine())
    }

    /// Samples `φ` and `G` on a grid and checks concavity and monotonicity,
/// with tolerances relative to the sampled values.
    pub fn check(&self) -> Result<(), OperatorError> {
        let xs: Vec<f64> = (-300..=300).map(|i| i as f64 * 0.01).collect();
        for (k, t) in self.terms.iter().enumerate() {
            for w in xs.windows(3) {
                let (a, b, c) = (t.phi.value(w[0]), t.phi.value(w[1]), t.phi.value(w[2]));
                let scale = 1.0 + a.abs().max(b.abs()).max(c.abs());
                if a - 2.0 * b + c > 1e-8 * scale {
                    return Err(OperatorError::Config(format!("term {k}: phi not concave near {}", w[1])));
                }
                if b - a < -1e-8 * scale {
                    return Err(OperatorError::Config(format!("term {k}: phi decreasing near {}", w[1])));
                }
                let (g0, g1) = (t.g.value(w[0]), t.g.value(w[1]));
                if g1 - g0 > 1e-8 * (1.0 + g0.abs().max(g1.abs())) {
                    return Err(OperatorError::Config(format!("term {k}: G increasing near {}", w[1])));
                }
            }
        }
        Ok(())
    }
}
