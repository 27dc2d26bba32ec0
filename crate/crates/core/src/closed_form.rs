//! Hand-expanded rows for the planar example with `V = ‖x‖²`, a disk of
//! radius `d` and `κ1 = κ2 = 1`, used to cross-check the generic rows.
//!
//! [`short_form`] is the compact version of these rows in common use for
//! this example; [`expanded`] carries the derivation out in full. They
//! differ in `A_x` (factor 2) and in `b_u`.

use nalgebra::Vector2;

/// `A_x v ≤ b_x` and `A_u v ≤ b_u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanarRows {
    pub a_x: Vector2<f64>,
    pub b_x: f64,
    pub a_u: Vector2<f64>,
    pub b_u: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanarPoint {
    pub sigma: f64,
    pub d: f64,
    pub gamma_x: f64,
    pub gamma_u: f64,
    pub x1: Vector2<f64>,
    pub x2: Vector2<f64>,
    pub u: Vector2<f64>,
    pub phi: Vector2<f64>,
}

impl PlanarPoint {
    pub fn h_u(&self) -> f64 {
        2.0 * self.sigma * self.x2.norm_squared() - 2.0 * self.x1.dot(&self.x2) - self.x2.dot(&self.u)
    }

    pub fn h_x_prime(&self) -> f64 {
        2.0 * self.x1.dot(&self.x2) + self.x1.norm_squared() - self.d * self.d
    }

    pub fn h_x_dprime(&self) -> f64 {
        let (x1, x2, u) = (&self.x1, &self.x2, &self.u);
        x1.norm_squared() + 2.0 * x2.norm_squared() + 2.0 * (2.0 - self.sigma) * x1.dot(x2) + 2.0 * x1.dot(u)
            - self.d * self.d
    }

    fn b_x(&self) -> f64 {
        let (s, x1, x2, u, phi) = (self.sigma, &self.x1, &self.x2, &self.u, &self.phi);
        let accel = -s * x2 + u;
        (2.0 * x1 + 2.0 * (2.0 - s) * x2 + 2.0 * u).dot(x2)
            + (4.0 * x2 + 2.0 * (2.0 - s) * x1).dot(&accel)
            + 2.0 * x1.dot(phi)
            + self.gamma_x * self.h_x_dprime()
    }
}

pub fn short_form(p: &PlanarPoint) -> PlanarRows {
    let (s, x1, x2, u, phi) = (p.sigma, &p.x1, &p.x2, &p.u, &p.phi);
    let b_u = -(1.0 + 3.0 * s * s) * x2.norm_squared() + 2.0 * s * x1.dot(x2) - (2.0 * x1 - 3.0 * s * x2).dot(u)
        - x2.dot(phi)
        + p.gamma_u * p.h_u();
    PlanarRows {
        a_x: -x1,
        b_x: p.b_x(),
        a_u: *x2,
        b_u,
    }
}

pub fn expanded(p: &PlanarPoint) -> PlanarRows {
    let (s, x1, x2, u, phi) = (p.sigma, &p.x1, &p.x2, &p.u, &p.phi);
    let b_u = -(2.0 + 4.0 * s * s) * x2.norm_squared() + 2.0 * s * x1.dot(x2) - (2.0 * x1 - 5.0 * s * x2).dot(u)
        - u.norm_squared()
        - x2.dot(phi)
        + p.gamma_u * p.h_u();
    PlanarRows {
        a_x: -2.0 * x1,
        b_x: p.b_x(),
        a_u: *x2,
        b_u,
    }
}
