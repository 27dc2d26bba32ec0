//! Recursive control barrier functions and the safety constraint row.
//!
//! For a barrier `h(x)` whose relative degree with respect to `u` is two,
//! the chain
//!
//! ```text
//! h'(x)   = ḣ(x)  + κ1 h(x)
//! h''(x,u) = ḣ'(x,u) + κ2 h'(x)
//! ```
//!
//! is built from the analytic derivatives of `h` and of the model. `h''`
//! depends on `u`, so its time derivative along the extended dynamics
//! depends on `v`, which yields one affine row `a·v ≤ b`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{flow, flow_jacobian, SystemModel};
use crate::error::{check_dim, Error, Result};

/// Norm below which a row's normal is treated as zero.
pub const DEGENERATE_NORM: f64 = 1e-9;
/// A degenerate row `0·v ≤ b` is considered satisfied when `b ≥ -DEGENERATE_SLACK`.
pub const DEGENERATE_SLACK: f64 = 1e-9;

/// Linear extended class-K function `γ(s) = κ s` with `κ > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ClassK {
    slope: f64,
}

impl ClassK {
    pub fn new(slope: f64) -> Result<Self> {
        if slope.is_finite() && slope > 0.0 {
            Ok(Self { slope })
        } else {
            Err(Error::invalid("class-K slope", format!("{slope} is not > 0")))
        }
    }

    pub fn slope(&self) -> f64 {
        self.slope
    }

    pub fn apply(&self, s: f64) -> f64 {
        self.slope * s
    }
}

impl Default for ClassK {
    fn default() -> Self {
        Self { slope: 1.0 }
    }
}

impl TryFrom<f64> for ClassK {
    type Error = Error;

    fn try_from(slope: f64) -> Result<Self> {
        Self::new(slope)
    }
}

impl From<ClassK> for f64 {
    fn from(k: ClassK) -> f64 {
        k.slope
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintTag {
    Safety,
    Passivity,
}

impl ConstraintTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            ConstraintTag::Safety => "safety",
            ConstraintTag::Passivity => "passivity",
        }
    }
}

/// One affine inequality `a·v ≤ b` in filter-input space.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintRow {
    pub a: DVector<f64>,
    pub b: f64,
    pub tag: ConstraintTag,
}

impl ConstraintRow {
    pub fn new(a: DVector<f64>, b: f64, tag: ConstraintTag) -> Result<Self> {
        if !b.is_finite() || !a.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("constraint row"));
        }
        Ok(Self { a, b, tag })
    }

    /// `b − a·v`; non-negative iff the row is satisfied at `v`.
    pub fn residual(&self, v: &DVector<f64>) -> f64 {
        self.b - self.a.dot(v)
    }

    pub fn is_degenerate(&self) -> bool {
        self.a.norm() < DEGENERATE_NORM
    }
}

pub fn row_residual(row: &ConstraintRow, v: &DVector<f64>) -> f64 {
    row.residual(v)
}

/// Scalar state function with analytic derivatives up to third order.
pub trait BarrierFunction: Send + Sync {
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64>;
    /// Third derivative contracted with `w`: `Σ_k w_k ∂³h/∂x_i∂x_j∂x_k`.
    fn third_derivative(&self, x: &DVector<f64>, w: &DVector<f64>) -> DMatrix<f64>;
}

/// Keep-out disk on a block of the state: `h(x) = ‖x[block]‖² − d²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiskBarrier {
    radius: f64,
    offset: usize,
    dim: usize,
    state_dim: usize,
}

impl DiskBarrier {
    /// Disk of radius `radius` on `x[offset..offset + dim]` of an `state_dim` state.
    pub fn new(radius: f64, offset: usize, dim: usize, state_dim: usize) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::invalid("d", "keep-out radius must be > 0"));
        }
        if offset + dim > state_dim || dim == 0 {
            return Err(Error::invalid("disk block", "out of state range"));
        }
        Ok(Self {
            radius,
            offset,
            dim,
            state_dim,
        })
    }

    /// Disk on the position block of a planar double integrator.
    pub fn planar(radius: f64) -> Result<Self> {
        Self::new(radius, 0, 2, 4)
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }
}

impl BarrierFunction for DiskBarrier {
    fn value(&self, x: &DVector<f64>) -> f64 {
        x.rows(self.offset, self.dim).norm_squared() - self.radius * self.radius
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(self.state_dim);
        for i in self.offset..self.offset + self.dim {
            g[i] = 2.0 * x[i];
        }
        g
    }

    fn hessian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.state_dim, self.state_dim);
        for i in self.offset..self.offset + self.dim {
            h[(i, i)] = 2.0;
        }
        h
    }

    fn third_derivative(&self, _x: &DVector<f64>, _w: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(self.state_dim, self.state_dim)
    }
}

/// Values of the recursive chain at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HChain {
    pub h: f64,
    pub h_prime: f64,
    pub h_dprime: f64,
}

/// `h''` and its partial derivatives at one point.
struct SecondLevel {
    chain: HChain,
    d_dx: DVector<f64>,
    d_du: DVector<f64>,
    f: DVector<f64>,
}

/// Barrier of relative degree two in `u`, with slopes for both recursion
/// levels and the outer class-K function applied to `h''`.
#[derive(Debug, Clone)]
pub struct SafetyBarrier<B = DiskBarrier> {
    pub function: B,
    pub kappa1: ClassK,
    pub kappa2: ClassK,
    pub gamma_x: ClassK,
}

impl<B: BarrierFunction> SafetyBarrier<B> {
    pub fn new(function: B, kappa1: ClassK, kappa2: ClassK, gamma_x: ClassK) -> Self {
        Self {
            function,
            kappa1,
            kappa2,
            gamma_x,
        }
    }

    pub fn eval_h_chain(&self, model: &dyn SystemModel, x: &DVector<f64>, u: &DVector<f64>) -> Result<HChain> {
        check_dim("state", model.state_dim(), x.len())?;
        check_dim("input", model.input_dim(), u.len())?;
        Ok(self.second_level(model, x, u).chain)
    }

    /// Row `a·v ≤ b` encoding `ḣ'' + γ_x(h'') ≥ 0` along `u̇ = φ + v`.
    pub fn safety_row(
        &self,
        model: &dyn SystemModel,
        x: &DVector<f64>,
        u: &DVector<f64>,
        phi_val: &DVector<f64>,
    ) -> Result<ConstraintRow> {
        check_dim("state", model.state_dim(), x.len())?;
        check_dim("input", model.input_dim(), u.len())?;
        check_dim("phi", model.input_dim(), phi_val.len())?;
        let lvl = self.second_level(model, x, u);
        let b = lvl.d_dx.dot(&lvl.f) + lvl.d_du.dot(phi_val) + self.gamma_x.apply(lvl.chain.h_dprime);
        ConstraintRow::new(-lvl.d_du, b, ConstraintTag::Safety)
    }

    fn second_level(&self, model: &dyn SystemModel, x: &DVector<f64>, u: &DVector<f64>) -> SecondLevel {
        let k1 = self.kappa1.slope();
        let k2 = self.kappa2.slope();

        let h = self.function.value(x);
        let grad = self.function.gradient(x);
        let hess = self.function.hessian(x);
        let drift = model.drift(x);
        let jd = model.jac_drift(x);
        let g = model.input_map(x);
        debug_assert!(
            (g.transpose() * &grad).norm() <= 1e-9 * (1.0 + grad.norm()),
            "barrier must have relative degree two in u"
        );

        // h' depends on x only, because ∇h·G vanishes.
        let h1 = grad.dot(&drift) + k1 * h;
        let grad1 = &hess * &drift + jd.transpose() * &grad + &grad * k1;
        let hess1 = self.function.third_derivative(x, &drift)
            + &hess * &jd
            + model.drift_curvature(x, &grad)
            + jd.transpose() * &hess
            + &hess * k1;

        let f = flow(model, x, u);
        let h2 = grad1.dot(&f) + k2 * h1;
        let d_du = g.transpose() * &grad1;
        let jf = flow_jacobian(model, x, u);
        let d_dx = hess1.transpose() * &f + jf.transpose() * &grad1 + &grad1 * k2;

        SecondLevel {
            chain: HChain {
                h,
                h_prime: h1,
                h_dprime: h2,
            },
            d_dx,
            d_du,
            f,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::DoubleIntegratorDrag;
    use nalgebra::dvector;

    fn unit() -> (DoubleIntegratorDrag, SafetyBarrier) {
        let model = DoubleIntegratorDrag::new(1.0).unwrap();
        let bar = SafetyBarrier::new(
            DiskBarrier::planar(1.0).unwrap(),
            ClassK::default(),
            ClassK::default(),
            ClassK::default(),
        );
        (model, bar)
    }

    #[test]
    fn chain_examples() {
        let (m, bar) = unit();
        let z = DVector::zeros(2);
        let c = bar.eval_h_chain(&m, &dvector![1.0, 0.0, 0.0, 0.0], &z).unwrap();
        assert_eq!((c.h, c.h_prime, c.h_dprime), (0.0, 0.0, 0.0));
        let c = bar.eval_h_chain(&m, &dvector![2.0, 0.0, 0.0, 0.0], &z).unwrap();
        assert_eq!((c.h, c.h_prime, c.h_dprime), (3.0, 3.0, 3.0));
        let c = bar.eval_h_chain(&m, &dvector![0.0, 2.0, 1.0, 0.0], &z).unwrap();
        assert_eq!((c.h, c.h_prime, c.h_dprime), (3.0, 3.0, 5.0));
    }

    // The row normal is −∂h''/∂u = −2·x1.
    #[test]
    fn safety_row_examples() {
        let (m, bar) = unit();
        let z = DVector::zeros(2);
        let row = bar.safety_row(&m, &dvector![2.0, 0.0, 0.0, 0.0], &z, &z).unwrap();
        assert_eq!(row.a, dvector![-4.0, 0.0]);
        assert_eq!(row.b, 3.0);
        assert_eq!(row.tag, ConstraintTag::Safety);

        let row = bar.safety_row(&m, &dvector![1.0, 0.0, 0.0, 0.0], &z, &z).unwrap();
        assert_eq!(row.a, dvector![-2.0, 0.0]);
        assert_eq!(row.b, 0.0);

        let pushed = bar
            .safety_row(&m, &dvector![2.0, 0.0, 0.0, 0.0], &z, &dvector![10.0, 0.0])
            .unwrap();
        assert_eq!(pushed.b - 3.0, 40.0);
    }

    #[test]
    fn residual_examples() {
        let row = |a: DVector<f64>, b| ConstraintRow::new(a, b, ConstraintTag::Safety).unwrap();
        assert_eq!(row_residual(&row(dvector![1.0, 0.0], 0.0), &dvector![0.0, 0.0]), 0.0);
        assert_eq!(row_residual(&row(dvector![1.0, 0.0], 2.0), &dvector![1.0, 0.0]), 1.0);
        assert_eq!(row_residual(&row(dvector![-2.0, 0.0], 3.0), &dvector![1.0, 1.0]), 5.0);
    }

    #[test]
    fn class_k_rejects_non_positive() {
        assert!(ClassK::new(0.0).is_err());
        assert!(ClassK::new(-2.0).is_err());
        assert!(ClassK::new(f64::NAN).is_err());
        let k = ClassK::new(2.5).unwrap();
        assert_eq!(k.apply(0.0), 0.0);
        assert!(k.apply(1.0) > k.apply(0.5));
    }

    #[test]
    fn row_rejects_non_finite() {
        assert!(ConstraintRow::new(dvector![f64::NAN], 0.0, ConstraintTag::Safety).is_err());
        assert!(ConstraintRow::new(dvector![1.0], f64::INFINITY, ConstraintTag::Safety).is_err());
    }

    #[test]
    fn chain_rejects_bad_dims() {
        let (m, bar) = unit();
        assert!(bar.eval_h_chain(&m, &DVector::zeros(3), &DVector::zeros(2)).is_err());
    }
}
