//! Nominal dynamically defined controller for the extended input.
//!
//! `φ = L_f u_fb + u̇_h + β (u_fb + u_h − u)` makes `u` converge to the
//! desired input `û = u_fb(x) + u_h` at rate `2β` in `W = ½‖u − û‖²`
//! whenever the filter leaves `v = 0`.

use std::sync::{Arc, RwLock};

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{flow, SystemModel};
use crate::error::{check_dim, Error, Result};

/// State feedback `u_fb(x)` with its Jacobian, so that `L_f u_fb = J·f`.
pub trait FeedbackLaw: Send + Sync {
    fn eval(&self, x: &DVector<f64>) -> DVector<f64>;
    /// `∂u_fb/∂x`, `m × n`.
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;

    fn lie_derivative(&self, model: &dyn SystemModel, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        self.jacobian(x) * flow(model, x, u)
    }
}

/// `u_fb(x) = −k_P x1 − k_D x2` on a `(x1, x2)` state with blocks of size `dim`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdLaw {
    kp: f64,
    kd: f64,
    dim: usize,
}

impl PdLaw {
    pub fn new(kp: f64, kd: f64, dim: usize) -> Result<Self> {
        if !(kp.is_finite() && kp > 0.0) {
            return Err(Error::invalid("k_P", "must be > 0"));
        }
        if !(kd.is_finite() && kd > 0.0) {
            return Err(Error::invalid("k_D", "must be > 0"));
        }
        Ok(Self { kp, kd, dim })
    }

    pub fn kp(&self) -> f64 {
        self.kp
    }

    pub fn kd(&self) -> f64 {
        self.kd
    }
}

impl FeedbackLaw for PdLaw {
    fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        let p = self.dim;
        DVector::from_fn(p, |i, _| -self.kp * x[i] - self.kd * x[p + i])
    }

    fn jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        let p = self.dim;
        let mut j = DMatrix::zeros(p, 2 * p);
        for i in 0..p {
            j[(i, i)] = -self.kp;
            j[(i, p + i)] = -self.kd;
        }
        j
    }
}

/// Operator command `u_h(t)` and its time derivative.
pub trait HumanInput: Send + Sync {
    fn value(&self, t: f64) -> DVector<f64>;
    fn derivative(&self, t: f64) -> DVector<f64>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstantInput(pub DVector<f64>);

impl HumanInput for ConstantInput {
    fn value(&self, _t: f64) -> DVector<f64> {
        self.0.clone()
    }

    fn derivative(&self, _t: f64) -> DVector<f64> {
        DVector::zeros(self.0.len())
    }
}

/// Piecewise-constant schedule; each breakpoint holds until the next one.
/// Before the first breakpoint the first value applies.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseInput {
    breakpoints: Vec<(f64, DVector<f64>)>,
}

impl PiecewiseInput {
    pub fn new(mut breakpoints: Vec<(f64, DVector<f64>)>) -> Result<Self> {
        let Some(first) = breakpoints.first() else {
            return Err(Error::invalid("u_h", "schedule is empty"));
        };
        let dim = first.1.len();
        for (t, v) in &breakpoints {
            if !t.is_finite() || !v.iter().all(|x| x.is_finite()) {
                return Err(Error::NonFinite("u_h schedule"));
            }
            check_dim("u_h schedule", dim, v.len())?;
        }
        breakpoints.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Self { breakpoints })
    }
}

impl HumanInput for PiecewiseInput {
    fn value(&self, t: f64) -> DVector<f64> {
        let idx = self.breakpoints.partition_point(|(tk, _)| *tk <= t);
        self.breakpoints[idx.saturating_sub(1)].1.clone()
    }

    fn derivative(&self, _t: f64) -> DVector<f64> {
        DVector::zeros(self.breakpoints[0].1.len())
    }
}

/// Latest-value cell written by a network task and read by the control loop.
/// Held between writes, so its derivative is zero.
#[derive(Debug, Clone)]
pub struct LiveInput {
    cell: Arc<RwLock<DVector<f64>>>,
}

impl LiveInput {
    pub fn new(initial: DVector<f64>) -> Self {
        Self {
            cell: Arc::new(RwLock::new(initial)),
        }
    }

    pub fn set(&self, value: DVector<f64>) {
        *self.cell.write().unwrap_or_else(|e| e.into_inner()) = value;
    }

    pub fn get(&self) -> DVector<f64> {
        self.cell.read().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

impl HumanInput for LiveInput {
    fn value(&self, _t: f64) -> DVector<f64> {
        self.get()
    }

    fn derivative(&self, _t: f64) -> DVector<f64> {
        DVector::zeros(self.get().len())
    }
}

/// Coefficient `β` multiplying `(û − u)` in `φ`; decay rate of `W` is `2β`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingGain(f64);

impl TrackingGain {
    pub fn new(beta: f64) -> Result<Self> {
        if beta.is_finite() && beta > 0.0 {
            Ok(Self(beta))
        } else {
            Err(Error::invalid("beta", "must be > 0"))
        }
    }

    pub fn beta(&self) -> f64 {
        self.0
    }
}

/// Desired input `û = u_fb(x) + u_h(t)`.
pub fn desired_input(law: &dyn FeedbackLaw, hi: &dyn HumanInput, x: &DVector<f64>, t: f64) -> DVector<f64> {
    law.eval(x) + hi.value(t)
}

pub fn phi(
    model: &dyn SystemModel,
    law: &dyn FeedbackLaw,
    hi: &dyn HumanInput,
    gain: TrackingGain,
    x: &DVector<f64>,
    u: &DVector<f64>,
    t: f64,
) -> Result<DVector<f64>> {
    check_dim("state", model.state_dim(), x.len())?;
    check_dim("input", model.input_dim(), u.len())?;
    let uh = hi.value(t);
    check_dim("u_h", model.input_dim(), uh.len())?;
    let target = law.eval(x) + uh;
    Ok(law.lie_derivative(model, x, u) + hi.derivative(t) + (target - u) * gain.beta())
}

/// `W = ½‖u − u_fb(x) − u_h(t)‖²`.
pub fn tracking_error(law: &dyn FeedbackLaw, hi: &dyn HumanInput, x: &DVector<f64>, u: &DVector<f64>, t: f64) -> f64 {
    0.5 * (u - desired_input(law, hi, x, t)).norm_squared()
}
