//! Passivity expressed as an integral barrier on `(x, u)`.
//!
//! `h_u(x, u) = g(x)ᵀu − ∇V(x)·f(x, u)` is the power the plant dissipates
//! with respect to storage `V`. Keeping `h_u ≥ 0` forward invariant is the
//! same as `V̇ ≤ uᵀy`, so the passivity row is an ordinary barrier row built
//! on `h_u`.

use nalgebra::{DMatrix, DVector};

use crate::barrier::{ClassK, ConstraintRow, ConstraintTag};
use crate::dynamics::{flow, flow_jacobian, SystemModel};
use crate::error::{check_dim, Error, Result};

/// Positive definite storage function with closed-form gradient and Hessian.
pub trait StorageFunction: Send + Sync {
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64>;
}

/// `V(x) = xᵀ P x` with `P` symmetric positive definite.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticStorage {
    weight: DMatrix<f64>,
}

impl QuadraticStorage {
    pub fn new(weight: DMatrix<f64>) -> Result<Self> {
        if !weight.is_square() {
            return Err(Error::invalid("storage weight", "must be square"));
        }
        if (&weight - weight.transpose()).amax() > 1e-12 * (1.0 + weight.amax()) {
            return Err(Error::invalid("storage weight", "must be symmetric"));
        }
        if weight.clone().cholesky().is_none() {
            return Err(Error::invalid("storage weight", "must be positive definite"));
        }
        Ok(Self { weight })
    }

    /// `V(x) = ‖x‖²`.
    pub fn squared_norm(n: usize) -> Self {
        Self {
            weight: DMatrix::identity(n, n),
        }
    }
}

impl StorageFunction for QuadraticStorage {
    fn value(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.weight * x))
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        (&self.weight * x) * 2.0
    }

    fn hessian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        &self.weight * 2.0
    }
}

#[derive(Debug, Clone)]
pub struct PassivityBarrier<S = QuadraticStorage> {
    pub storage: S,
    pub gamma_u: ClassK,
}

impl<S: StorageFunction> PassivityBarrier<S> {
    pub fn new(storage: S, gamma_u: ClassK) -> Self {
        Self { storage, gamma_u }
    }

    pub fn eval_hu(&self, model: &dyn SystemModel, x: &DVector<f64>, u: &DVector<f64>) -> Result<f64> {
        check_dim("state", model.state_dim(), x.len())?;
        check_dim("input", model.input_dim(), u.len())?;
        Ok(self.hu_unchecked(model, x, u))
    }

    pub(crate) fn hu_unchecked(&self, model: &dyn SystemModel, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        model.output(x).dot(u) - self.storage.gradient(x).dot(&flow(model, x, u))
    }

    /// Row `a·v ≤ b` encoding `ḣ_u + γ_u(h_u) ≥ 0` along `u̇ = φ + v`,
    /// with `a = −∂h_u/∂u`.
    pub fn passivity_row(
        &self,
        model: &dyn SystemModel,
        x: &DVector<f64>,
        u: &DVector<f64>,
        phi_val: &DVector<f64>,
    ) -> Result<ConstraintRow> {
        check_dim("state", model.state_dim(), x.len())?;
        check_dim("input", model.input_dim(), u.len())?;
        check_dim("phi", model.input_dim(), phi_val.len())?;

        let y = model.output(x);
        let grad_v = self.storage.gradient(x);
        let hess_v = self.storage.hessian(x);
        let g = model.input_map(x);
        let f = flow(model, x, u);
        let jf = flow_jacobian(model, x, u);

        let hu = y.dot(u) - grad_v.dot(&f);
        let d_du = &y - g.transpose() * &grad_v;
        let d_dx = model.jac_output(x).transpose() * u - &hess_v * &f - jf.transpose() * &grad_v;

        let b = d_dx.dot(&f) + d_du.dot(phi_val) + self.gamma_u.apply(hu);
        ConstraintRow::new(-d_du, b, ConstraintTag::Passivity)
    }
}

/// Supplied power `uᵀy` and stored energy `V(x)` at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerSample {
    pub t: f64,
    pub supply: f64,
    pub storage: f64,
}

/// `∫ uᵀy dt − (V(x_T) − V(x_0))` by the trapezoidal rule.
///
/// Non-negative (within quadrature error) certifies passivity over the window.
pub fn passivity_budget(samples: &[PowerSample]) -> Result<f64> {
    prefix_budgets(samples)?.last().copied().ok_or(Error::EmptyTrace)
}

/// Budget over every prefix window `[t_0, t_k]`, `k ≥ 1`.
pub fn prefix_budgets(samples: &[PowerSample]) -> Result<Vec<f64>> {
    if samples.len() < 2 {
        return Err(Error::EmptyTrace);
    }
    let v0 = samples[0].storage;
    let mut supplied = 0.0;
    Ok(samples
        .windows(2)
        .map(|w| {
            supplied += 0.5 * (w[0].supply + w[1].supply) * (w[1].t - w[0].t);
            supplied - (w[1].storage - v0)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::DoubleIntegratorDrag;
    use nalgebra::dvector;

    fn unit() -> (DoubleIntegratorDrag, PassivityBarrier) {
        (
            DoubleIntegratorDrag::new(1.0).unwrap(),
            PassivityBarrier::new(QuadraticStorage::squared_norm(4), ClassK::default()),
        )
    }

    #[test]
    fn hu_examples() {
        let (m, pb) = unit();
        for (x1a, x1b, ua, ub) in [(3.0, -1.0, 0.5, 2.0), (0.0, 0.0, 0.0, 0.0), (-4.0, 0.1, -7.0, 1.0)] {
            let hu = pb.eval_hu(&m, &dvector![x1a, x1b, 0.0, 0.0], &dvector![ua, ub]).unwrap();
            assert_eq!(hu, 0.0);
        }
        let hu = pb.eval_hu(&m, &dvector![0.0, 0.0, 1.0, 0.0], &dvector![0.0, 0.0]).unwrap();
        assert_eq!(hu, 2.0);
        let hu = pb.eval_hu(&m, &dvector![1.0, 0.0, 1.0, 0.0], &dvector![1.0, 0.0]).unwrap();
        assert_eq!(hu, -1.0);
    }

    // Row values from ḣ_u = −(2+4σ²)‖x2‖² + 2σx1ᵀx2 − (2x1 − 5σx2)ᵀu − ‖u‖² − x2ᵀu̇.
    #[test]
    fn passivity_row_examples() {
        let (m, pb) = unit();
        let z = DVector::zeros(2);
        let row = pb.passivity_row(&m, &dvector![1.0, 0.0, 0.0, 0.0], &z, &z).unwrap();
        assert_eq!(row.a, dvector![0.0, 0.0]);
        assert_eq!(row.b, 0.0);
        assert!(row.is_degenerate());

        let row = pb
            .passivity_row(&m, &dvector![1.0, 0.0, 0.0, 0.0], &dvector![1.0, 0.0], &z)
            .unwrap();
        assert_eq!(row.a, dvector![0.0, 0.0]);
        assert_eq!(row.b, -3.0);

        let row = pb.passivity_row(&m, &dvector![0.0, 0.0, 1.0, 0.0], &z, &z).unwrap();
        assert_eq!(row.a, dvector![1.0, 0.0]);
        assert_eq!(row.b, -4.0);
        assert_eq!(row.tag, ConstraintTag::Passivity);
    }

    #[test]
    fn storage_rejects_indefinite_weight() {
        assert!(QuadraticStorage::new(DMatrix::from_diagonal(&dvector![1.0, -1.0])).is_err());
        assert!(QuadraticStorage::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0])).is_err());
        assert!(QuadraticStorage::new(DMatrix::identity(3, 3)).is_ok());
    }

    #[test]
    fn budget_of_rest_trace_is_zero() {
        let samples: Vec<_> = (0..10)
            .map(|k| PowerSample {
                t: k as f64 * 0.1,
                supply: 0.0,
                storage: 0.0,
            })
            .collect();
        assert_eq!(passivity_budget(&samples).unwrap(), 0.0);
    }

    #[test]
    fn budget_needs_two_samples() {
        assert!(matches!(passivity_budget(&[]), Err(Error::EmptyTrace)));
        let one = [PowerSample {
            t: 0.0,
            supply: 1.0,
            storage: 1.0,
        }];
        assert!(passivity_budget(&one).is_err());
    }

    #[test]
    fn budget_detects_generated_energy() {
        // Storage rises with no supplied power.
        let samples: Vec<_> = (0..5)
            .map(|k| PowerSample {
                t: k as f64,
                supply: 0.0,
                storage: k as f64,
            })
            .collect();
        assert_eq!(passivity_budget(&samples).unwrap(), -4.0);
    }
}
