//! One tick of the safety-and-passivity filter: nominal `φ`, constraint rows
//! for the enabled mode, min-norm QP, and `u̇ = φ + v*`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::barrier::{BarrierFunction, ConstraintRow, ConstraintTag, SafetyBarrier};
use crate::dynamics::{ExtendedState, SystemModel};
use crate::error::{Error, Result};
use crate::passivity::{PassivityBarrier, StorageFunction};
use crate::qpsolver::{solve_min_norm, solve_with_slack, QpProblem, QpSolution, QpStatus};
use crate::tracking::{phi, FeedbackLaw, HumanInput, TrackingGain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMode {
    None,
    PassivityOnly,
    SafetyOnly,
    Both,
}

impl FilterMode {
    pub const ALL: [FilterMode; 4] = [
        FilterMode::None,
        FilterMode::PassivityOnly,
        FilterMode::SafetyOnly,
        FilterMode::Both,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            FilterMode::None => "none",
            FilterMode::PassivityOnly => "passivity_only",
            FilterMode::SafetyOnly => "safety_only",
            FilterMode::Both => "both",
        }
    }

    pub fn safety(&self) -> bool {
        matches!(self, FilterMode::SafetyOnly | FilterMode::Both)
    }

    pub fn passivity(&self) -> bool {
        matches!(self, FilterMode::PassivityOnly | FilterMode::Both)
    }
}

impl fmt::Display for FilterMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FilterMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FilterMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::invalid("mode", format!("unknown filter mode `{s}`")))
    }
}

/// What to do when the QP has no solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfeasibilityPolicy {
    /// Stop the run and report the tick.
    #[default]
    Halt,
    /// Loosen the passivity row by the smallest slack that restores
    /// feasibility; the safety row is kept exact.
    SafetyPrioritySlack,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterDiagnostics {
    pub h_x: f64,
    pub h_x_prime: f64,
    pub h_x_dprime: f64,
    pub h_u: f64,
    /// Rows handed to the QP, safety first.
    pub rows: Vec<ConstraintRow>,
    pub v_star: DVector<f64>,
    pub qp_status: QpStatus,
    pub active: Vec<ConstraintTag>,
    pub multipliers: Vec<f64>,
    pub phi_val: DVector<f64>,
    pub u_dot: DVector<f64>,
    /// Slack added to the passivity row by the fallback policy; zero otherwise.
    pub slack: f64,
}

impl FilterDiagnostics {
    fn apply_solution(&mut self, sol: &QpSolution) {
        self.qp_status = sol.status;
        self.v_star = sol.v_star.clone();
        self.active = sol.active_set.iter().map(|&i| self.rows[i].tag).collect();
        self.multipliers = sol.multipliers.clone();
        self.u_dot = &self.phi_val + &self.v_star;
    }

    /// Re-solve an infeasible tick with the passivity row relaxed.
    /// Ticks that are already optimal, or have no passivity row, are returned unchanged.
    pub fn with_passivity_slack(&self) -> Result<FilterDiagnostics> {
        let mut out = self.clone();
        if self.qp_status == QpStatus::Optimal {
            return Ok(out);
        }
        let Some(idx) = self.rows.iter().position(|r| r.tag == ConstraintTag::Passivity) else {
            return Ok(out);
        };
        let problem = QpProblem::new(self.v_star.len(), self.rows.clone())?;
        let (sol, slack) = solve_with_slack(&problem, idx)?;
        out.apply_solution(&sol);
        out.slack = slack;
        Ok(out)
    }
}

#[allow(clippy::too_many_arguments)]
pub fn filter_step<B: BarrierFunction, S: StorageFunction>(
    model: &dyn SystemModel,
    barrier: &SafetyBarrier<B>,
    passivity: &PassivityBarrier<S>,
    law: &dyn FeedbackLaw,
    hi: &dyn HumanInput,
    gain: TrackingGain,
    mode: FilterMode,
    state: &ExtendedState,
) -> Result<FilterDiagnostics> {
    let (x, u) = (&state.x, &state.u);
    let phi_val = phi(model, law, hi, gain, x, u, state.t)?;
    let chain = barrier.eval_h_chain(model, x, u)?;
    let h_u = passivity.eval_hu(model, x, u)?;

    let mut rows = Vec::with_capacity(2);
    if mode.safety() {
        rows.push(barrier.safety_row(model, x, u, &phi_val)?);
    }
    if mode.passivity() {
        rows.push(passivity.passivity_row(model, x, u, &phi_val)?);
    }

    let m = model.input_dim();
    let mut diag = FilterDiagnostics {
        h_x: chain.h,
        h_x_prime: chain.h_prime,
        h_x_dprime: chain.h_dprime,
        h_u,
        rows,
        v_star: DVector::zeros(m),
        qp_status: QpStatus::Optimal,
        active: Vec::new(),
        multipliers: Vec::new(),
        u_dot: phi_val.clone(),
        phi_val,
        slack: 0.0,
    };
    if !diag.rows.is_empty() {
        let problem = QpProblem::new(m, diag.rows.clone())?;
        diag.apply_solution(&solve_min_norm(&problem));
    }
    Ok(diag)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier::{ClassK, DiskBarrier};
    use crate::dynamics::DoubleIntegratorDrag;
    use crate::passivity::QuadraticStorage;
    use crate::qpsolver::brute_force_oracle;
    use crate::tracking::{desired_input, ConstantInput, PdLaw};
    use nalgebra::dvector;

    struct Fixture {
        model: DoubleIntegratorDrag,
        barrier: SafetyBarrier,
        passivity: PassivityBarrier,
        law: PdLaw,
        hi: ConstantInput,
        gain: TrackingGain,
    }

    impl Fixture {
        fn new() -> Self {
            Self {
                model: DoubleIntegratorDrag::new(1.0).unwrap(),
                barrier: SafetyBarrier::new(
                    DiskBarrier::planar(1.0).unwrap(),
                    ClassK::default(),
                    ClassK::default(),
                    ClassK::default(),
                ),
                passivity: PassivityBarrier::new(QuadraticStorage::squared_norm(4), ClassK::default()),
                law: PdLaw::new(1.0, 2.0, 2).unwrap(),
                hi: ConstantInput(dvector![-0.3, 0.0]),
                gain: TrackingGain::new(10.0).unwrap(),
            }
        }

        fn step(&self, mode: FilterMode, s: &ExtendedState) -> FilterDiagnostics {
            filter_step(
                &self.model,
                &self.barrier,
                &self.passivity,
                &self.law,
                &self.hi,
                self.gain,
                mode,
                s,
            )
            .unwrap()
        }

        fn at_uhat(&self, x: DVector<f64>) -> ExtendedState {
            let u = desired_input(&self.law, &self.hi, &x, 0.0);
            ExtendedState::new(x, u, 0.0).unwrap()
        }
    }

    #[test]
    fn mode_none_passes_phi_through() {
        let fx = Fixture::new();
        let s = ExtendedState::new(dvector![0.2, 0.1, 1.0, -3.0], dvector![4.0, 1.0], 0.0).unwrap();
        let d = fx.step(FilterMode::None, &s);
        assert!(d.rows.is_empty());
        assert_eq!(d.v_star, dvector![0.0, 0.0]);
        assert_eq!(d.u_dot, d.phi_val);
    }

    #[test]
    fn slack_rows_leave_input_untouched() {
        let fx = Fixture::new();
        // Far from the disk, at rest, u = û and û points toward the origin.
        let s = fx.at_uhat(dvector![5.0, 0.0, 0.0, 0.0]);
        let d = fx.step(FilterMode::Both, &s);
        assert_eq!(d.rows.len(), 2);
        assert_eq!(d.qp_status, QpStatus::Optimal);
        assert_eq!(d.v_star, dvector![0.0, 0.0]);
        assert!(d.active.is_empty());
    }

    #[test]
    fn near_boundary_filter_intervenes() {
        let fx = Fixture::new();
        let s = fx.at_uhat(dvector![1.05, 0.0, -0.5, 0.0]);
        let d = fx.step(FilterMode::Both, &s);
        assert_eq!(d.qp_status, QpStatus::Optimal);
        assert!(d.v_star.norm() > 0.0);
        for row in &d.rows {
            assert!(row.residual(&d.v_star) >= -1e-9);
        }
        let problem = QpProblem::new(2, d.rows.clone()).unwrap();
        let grid = brute_force_oracle(&problem, 20.0, 1601).unwrap().unwrap();
        assert!((grid - &d.v_star).norm() <= 2.0 * 40.0 / 1600.0);
    }

    #[test]
    fn rows_follow_mode_in_fixed_order() {
        let fx = Fixture::new();
        let s = fx.at_uhat(dvector![1.5, 0.5, -0.2, 0.1]);
        let tags = |m| fx.step(m, &s).rows.iter().map(|r| r.tag).collect::<Vec<_>>();
        assert_eq!(tags(FilterMode::None), vec![]);
        assert_eq!(tags(FilterMode::SafetyOnly), vec![ConstraintTag::Safety]);
        assert_eq!(tags(FilterMode::PassivityOnly), vec![ConstraintTag::Passivity]);
        assert_eq!(tags(FilterMode::Both), vec![ConstraintTag::Safety, ConstraintTag::Passivity]);
    }

    #[test]
    fn degenerate_passivity_row_reports_infeasible_and_slack_recovers() {
        let fx = Fixture::new();
        // x2 = 0 and 2x1ᵀu + ‖u‖² > 0: passivity row is 0·v ≤ b with b < 0.
        let s = ExtendedState::new(dvector![1.0, 0.0, 0.0, 0.0], dvector![1.0, 0.0], 0.0).unwrap();
        let d = fx.step(FilterMode::PassivityOnly, &s);
        assert_eq!(d.qp_status, QpStatus::Infeasible);
        let relaxed = d.with_passivity_slack().unwrap();
        assert_eq!(relaxed.qp_status, QpStatus::Optimal);
        assert!(relaxed.slack >= 3.0 - 1e-9 && relaxed.slack <= 3.0 + 1e-6);
    }

    #[test]
    fn mode_round_trips_through_str() {
        for m in FilterMode::ALL {
            assert_eq!(m.as_str().parse::<FilterMode>().unwrap(), m);
        }
        assert!("bogus".parse::<FilterMode>().is_err());
    }
}
