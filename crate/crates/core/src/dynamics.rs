//! Control-affine plant models and their dynamic extension.
//!
//! A plant is `ẋ = drift(x) + input_map(x)·u`, `y = output(x)`. The dynamic
//! extension appends the integrated input as state, `u̇ = φ + v`, so that the
//! filter acts on `v` while the plant still sees `u`.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};

/// Control-affine system with analytic derivatives.
///
/// Every map must be deterministic and return arrays with the declared
/// dimensions for every `x`.
pub trait SystemModel: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;

    fn drift(&self, x: &DVector<f64>) -> DVector<f64>;

    /// `n × m` matrix whose columns multiply the input components.
    fn input_map(&self, x: &DVector<f64>) -> DMatrix<f64>;

    fn output(&self, x: &DVector<f64>) -> DVector<f64>;

    /// `∂drift/∂x`, `n × n`.
    fn jac_drift(&self, x: &DVector<f64>) -> DMatrix<f64>;

    /// `∂output/∂x`, `m × n`.
    fn jac_output(&self, x: &DVector<f64>) -> DMatrix<f64>;

    /// `∂G_j/∂x` for column `j` of the input map, `n × n`.
    fn jac_input_map_column(&self, x: &DVector<f64>, column: usize) -> DMatrix<f64>;

    /// Second derivative of the drift contracted with a weight vector:
    /// `Σ_i w_i ∇²drift_i(x)`, `n × n`.
    fn drift_curvature(&self, x: &DVector<f64>, weights: &DVector<f64>) -> DMatrix<f64>;
}

/// `f(x, u) = drift(x) + input_map(x)·u`.
pub fn eval_f(model: &dyn SystemModel, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim("state", model.state_dim(), x.len())?;
    check_dim("input", model.input_dim(), u.len())?;
    Ok(flow(model, x, u))
}

/// Unchecked `f(x, u)` for hot paths whose dimensions were validated upstream.
pub(crate) fn flow(model: &dyn SystemModel, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    model.drift(x) + model.input_map(x) * u
}

/// `∂f/∂x` at `(x, u)`: the drift Jacobian plus the input-map terms.
pub(crate) fn flow_jacobian(model: &dyn SystemModel, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
    let mut jac = model.jac_drift(x);
    for (j, &uj) in u.iter().enumerate() {
        if uj != 0.0 {
            jac += model.jac_input_map_column(x, j) * uj;
        }
    }
    jac
}

/// Right-hand side of the extended system: `(f(x, u), φ + v)` stacked.
pub fn eval_extended(
    model: &dyn SystemModel,
    state: &ExtendedState,
    phi_val: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<DVector<f64>> {
    let m = model.input_dim();
    check_dim("phi", m, phi_val.len())?;
    check_dim("v", m, v.len())?;
    let fx = eval_f(model, &state.x, &state.u)?;
    let n = fx.len();
    let mut out = DVector::zeros(n + m);
    out.rows_mut(0, n).copy_from(&fx);
    out.rows_mut(n, m).copy_from(&(phi_val + v));
    Ok(out)
}

/// Plant state, integrated input, and time.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedState {
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub t: f64,
}

impl ExtendedState {
    pub fn new(x: DVector<f64>, u: DVector<f64>, t: f64) -> Result<Self> {
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("state x"));
        }
        if !u.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("state u"));
        }
        if !t.is_finite() {
            return Err(Error::NonFinite("time"));
        }
        Ok(Self { x, u, t })
    }

    pub fn stacked(&self) -> DVector<f64> {
        let n = self.x.len();
        let m = self.u.len();
        let mut out = DVector::zeros(n + m);
        out.rows_mut(0, n).copy_from(&self.x);
        out.rows_mut(n, m).copy_from(&self.u);
        out
    }

    pub fn from_stacked(stacked: &DVector<f64>, n: usize, t: f64) -> Result<Self> {
        if stacked.len() < n {
            return Err(Error::DimensionMismatch {
                what: "stacked state",
                expected: n,
                got: stacked.len(),
            });
        }
        let m = stacked.len() - n;
        Self::new(
            stacked.rows(0, n).into_owned(),
            stacked.rows(n, m).into_owned(),
            t,
        )
    }
}

/// Planar point mass with linear drag: `ẋ1 = x2`, `ẋ2 = −σ x2 + u`, `y = x2`.
///
/// The state is laid out as `(x1, x2)` with each block of size `dim`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoubleIntegratorDrag {
    sigma: f64,
    dim: usize,
}

impl DoubleIntegratorDrag {
    pub fn new(sigma: f64) -> Result<Self> {
        Self::with_dim(sigma, 2)
    }

    pub fn with_dim(sigma: f64, dim: usize) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::invalid("sigma", "must be finite and > 0"));
        }
        if dim == 0 {
            return Err(Error::invalid("dim", "must be > 0"));
        }
        Ok(Self { sigma, dim })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Size of one block (position or velocity).
    pub fn block_dim(&self) -> usize {
        self.dim
    }

    pub fn position<'a>(&self, x: &'a DVector<f64>) -> nalgebra::DVectorView<'a, f64> {
        x.rows(0, self.dim)
    }

    pub fn velocity<'a>(&self, x: &'a DVector<f64>) -> nalgebra::DVectorView<'a, f64> {
        x.rows(self.dim, self.dim)
    }
}

impl SystemModel for DoubleIntegratorDrag {
    fn state_dim(&self) -> usize {
        2 * self.dim
    }

    fn input_dim(&self) -> usize {
        self.dim
    }

    fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        let p = self.dim;
        let mut out = DVector::zeros(2 * p);
        for i in 0..p {
            out[i] = x[p + i];
            out[p + i] = -self.sigma * x[p + i];
        }
        out
    }

    fn input_map(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        let p = self.dim;
        let mut g = DMatrix::zeros(2 * p, p);
        for i in 0..p {
            g[(p + i, i)] = 1.0;
        }
        g
    }

    fn output(&self, x: &DVector<f64>) -> DVector<f64> {
        self.velocity(x).into_owned()
    }

    fn jac_drift(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        let p = self.dim;
        let mut j = DMatrix::zeros(2 * p, 2 * p);
        for i in 0..p {
            j[(i, p + i)] = 1.0;
            j[(p + i, p + i)] = -self.sigma;
        }
        j
    }

    fn jac_output(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        let p = self.dim;
        let mut j = DMatrix::zeros(p, 2 * p);
        for i in 0..p {
            j[(i, p + i)] = 1.0;
        }
        j
    }

    fn jac_input_map_column(&self, _x: &DVector<f64>, _column: usize) -> DMatrix<f64> {
        DMatrix::zeros(2 * self.dim, 2 * self.dim)
    }

    fn drift_curvature(&self, _x: &DVector<f64>, _weights: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(2 * self.dim, 2 * self.dim)
    }
}
