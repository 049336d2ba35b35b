//! The SDE `dX = [AX + h(t,X)]dt + σ(t)dW` with its structural constants.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// `h(t, x, out)` writes `h(t, x)` into `out`.
pub type DriftFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;

/// `σ(t, out)` writes the `d×m` matrix `σ(t)` into `out`, row-major.
pub type DiffusionFn = Arc<dyn Fn(f64, &mut [f64]) + Send + Sync>;

/// Direction in which `h(t, ·)` respects the componentwise order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monotonicity {
    /// `x ≤ y ⇒ h(t,x) ≤ h(t,y)`.
    OrderPreserving,
    /// `x ≤ y ⇒ h(t,x) ≥ h(t,y)`.
    AntiOrderPreserving,
}

impl fmt::Display for Monotonicity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::OrderPreserving => f.write_str("order_preserving"),
            Self::AntiOrderPreserving => f.write_str("anti_order_preserving"),
        }
    }
}

#[derive(Clone)]
pub struct SystemSpec {
    pub name: String,
    /// Cooperative, stable drift matrix (d×d).
    pub a: Matrix,
    pub drift: DriftFn,
    pub monotonicity: Monotonicity,
    /// Componentwise sup of `h`; `h` takes values in `[0, N]`.
    pub drift_bound: Vec<f64>,
    pub sigma: DiffusionFn,
    pub period: f64,
    pub noise_dim: usize,
    /// Claimed decay rate: `‖exp(tA)‖ ≤ e^{λt}`.
    pub lambda: f64,
    /// Bound on `max_ij |∂h_i/∂x_j|`.
    pub lipschitz: f64,
}

impl fmt::Debug for SystemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemSpec")
            .field("name", &self.name)
            .field("a", &self.a)
            .field("monotonicity", &self.monotonicity)
            .field("drift_bound", &self.drift_bound)
            .field("period", &self.period)
            .field("noise_dim", &self.noise_dim)
            .field("lambda", &self.lambda)
            .field("lipschitz", &self.lipschitz)
            .finish_non_exhaustive()
    }
}

impl SystemSpec {
    /// Checks dimensions and sign conditions; the analytic hypotheses are
    /// probed separately by [`crate::flow::validate_spec`].
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        a: Matrix,
        drift: DriftFn,
        monotonicity: Monotonicity,
        drift_bound: Vec<f64>,
        sigma: DiffusionFn,
        period: f64,
        noise_dim: usize,
        lambda: f64,
        lipschitz: f64,
    ) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::NotSquare { rows: a.rows(), cols: a.cols() });
        }
        if drift_bound.len() != a.rows() {
            return Err(Error::Dimension(format!(
                "drift bound has {} components, A is {}x{}",
                drift_bound.len(),
                a.rows(),
                a.rows()
            )));
        }
        if drift_bound.iter().any(|n| !(*n >= 0.0) || !n.is_finite()) {
            return Err(Error::InvalidParameter("drift bound N must be finite and nonnegative".into()));
        }
        if !(period > 0.0) || !period.is_finite() {
            return Err(Error::InvalidParameter(format!("period must be positive, got {period}")));
        }
        if noise_dim == 0 {
            return Err(Error::InvalidParameter("noise dimension must be at least 1".into()));
        }
        if !(lambda < 0.0) || !lambda.is_finite() {
            return Err(Error::NonNegativeRate(lambda));
        }
        if !(lipschitz >= 0.0) || !lipschitz.is_finite() {
            return Err(Error::InvalidParameter(format!("Lipschitz bound must be nonnegative, got {lipschitz}")));
        }
        Ok(Self {
            name: name.into(),
            a,
            drift,
            monotonicity,
            drift_bound,
            sigma,
            period,
            noise_dim,
            lambda,
            lipschitz,
        })
    }

    pub fn dim(&self) -> usize {
        self.a.rows()
    }

    pub fn drift_at(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        (self.drift)(t, x, &mut out);
        out
    }

    pub fn sigma_at(&self, t: f64) -> Matrix {
        let mut out = vec![0.0; self.dim() * self.noise_dim];
        (self.sigma)(t, &mut out);
        Matrix::from_row_major(self.dim(), self.noise_dim, out).expect("sigma dimensions")
    }

    /// `max_i N_i`.
    pub fn max_drift_bound(&self) -> f64 {
        self.drift_bound.iter().copied().fold(0.0, f64::max)
    }

    /// `−L·d²/λ`.
    pub fn contraction_bound(&self) -> f64 {
        -self.lipschitz * (self.dim() * self.dim()) as f64 / self.lambda
    }

    /// Same system with a different drift, e.g. for negative controls.
    pub fn with_drift(&self, name: impl Into<String>, drift: DriftFn) -> Self {
        Self { name: name.into(), drift, ..self.clone() }
    }

    pub fn with_sigma(&self, sigma: DiffusionFn) -> Self {
        Self { sigma, ..self.clone() }
    }
}

/// `σ(t) = scale · I` style helper: diagonal `σ_ii(t) = f(t)`, `m = d`.
pub fn diagonal_sigma(d: usize, f: fn(f64) -> f64) -> DiffusionFn {
    Arc::new(move |t, out: &mut [f64]| {
        out.fill(0.0);
        let v = f(t);
        for i in 0..d {
            out[i * d + i] = v;
        }
    })
}
