//! Fixed-step closed-loop simulation of the extended system.

use nalgebra::DVector;

use crate::dynamics::{eval_f, ExtendedState};
use crate::error::{Error, Result};
use crate::filter::{filter_step, FilterDiagnostics, FilterMode, InfeasibilityPolicy};
use crate::qpsolver::QpStatus;
use crate::scenario::{InitialInput, Plant, Scenario};
use crate::trace::TraceRecord;
use crate::tracking::{desired_input, HumanInput};

/// Classical fourth-order Runge–Kutta step.
///
/// Fails with [`Error::NonFinite`] when any stage derivative is not finite.
pub fn rk4_step<F>(mut deriv: F, state: &DVector<f64>, t: f64, dt: f64) -> Result<DVector<f64>>
where
    F: FnMut(&DVector<f64>, f64) -> DVector<f64>,
{
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::invalid("dt", "must be finite and > 0"));
    }
    let mut stage = |s: &DVector<f64>, t: f64| {
        let d = deriv(s, t);
        if d.iter().all(|v| v.is_finite()) {
            Ok(d)
        } else {
            Err(Error::NonFinite("derivative"))
        }
    };
    let half = 0.5 * dt;
    let k1 = stage(state, t)?;
    let k2 = stage(&(state + &k1 * half), t + half)?;
    let k3 = stage(&(state + &k2 * half), t + half)?;
    let k4 = stage(&(state + &k3 * dt), t + dt)?;
    Ok(state + (k1 + (k2 + k3) * 2.0 + k4) * (dt / 6.0))
}

/// Result of advancing one tick.
#[derive(Debug, Clone, PartialEq)]
pub enum TickOutcome {
    /// Record for the tick that was just integrated.
    Stepped(TraceRecord),
    /// The QP was infeasible under the halt policy; the state was not advanced.
    Halted(TraceRecord),
}

impl TickOutcome {
    pub fn record(&self) -> &TraceRecord {
        match self {
            TickOutcome::Stepped(r) | TickOutcome::Halted(r) => r,
        }
    }
}

/// Integration state at a tick, for rolling back a step.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    state: ExtendedState,
    tick: usize,
}

/// Tick-by-tick driver shared by batch runs and the live service.
pub struct Simulation {
    scenario: Scenario,
    plant: Plant,
    input: Box<dyn HumanInput>,
    state: ExtendedState,
    tick: usize,
}

impl Simulation {
    pub fn new(scenario: &Scenario, input: Box<dyn HumanInput>) -> Result<Self> {
        let plant = scenario.plant()?;
        let x0 = scenario.initial_x();
        let state = initial_state(scenario, &plant, input.as_ref(), x0)?;
        Ok(Self {
            scenario: scenario.clone(),
            plant,
            input,
            state,
            tick: 0,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn plant(&self) -> &Plant {
        &self.plant
    }

    pub fn state(&self) -> &ExtendedState {
        &self.state
    }

    pub fn tick(&self) -> usize {
        self.tick
    }

    pub fn time(&self) -> f64 {
        self.state.t
    }

    pub fn set_mode(&mut self, mode: FilterMode) {
        self.scenario.mode = mode;
    }

    /// Swap parameters while keeping the current state.
    pub fn reconfigure(&mut self, scenario: Scenario) -> Result<()> {
        self.plant = scenario.plant()?;
        self.scenario = scenario;
        Ok(())
    }

    /// Restart from `x0` (the scenario's own when `None`) at `t = 0`.
    pub fn reset(&mut self, x0: Option<[f64; 4]>) -> Result<()> {
        if let Some(x0) = x0 {
            let mut sc = self.scenario.clone();
            sc.x0 = x0;
            sc.validate()?;
            self.scenario = sc;
        }
        let x0 = self.scenario.initial_x();
        self.state = initial_state(&self.scenario, &self.plant, self.input.as_ref(), x0)?;
        self.tick = 0;
        Ok(())
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            state: self.state.clone(),
            tick: self.tick,
        }
    }

    /// Return to a state taken from this simulation; parameters are kept.
    pub fn restore(&mut self, snap: Snapshot) {
        self.state = snap.state;
        self.tick = snap.tick;
    }

    /// Filter output at the current state, with the fallback policy applied.
    pub fn evaluate(&self) -> Result<FilterDiagnostics> {
        let p = &self.plant;
        let diag = filter_step(
            &p.model,
            &p.barrier,
            &p.passivity,
            &p.law,
            self.input.as_ref(),
            p.gain,
            self.scenario.mode,
            &self.state,
        )?;
        match self.scenario.infeasibility {
            InfeasibilityPolicy::SafetyPrioritySlack if diag.qp_status == QpStatus::Infeasible => {
                diag.with_passivity_slack()
            }
            _ => Ok(diag),
        }
    }

    pub fn record(&self, diag: &FilterDiagnostics) -> TraceRecord {
        TraceRecord {
            t: self.state.t,
            x: self.state.x.clone(),
            u: self.state.u.clone(),
            uhat: desired_input(&self.plant.law, self.input.as_ref(), &self.state.x, self.state.t),
            phi: diag.phi_val.clone(),
            v_star: diag.v_star.clone(),
            h_x: diag.h_x,
            h_x_prime: diag.h_x_prime,
            h_x_dprime: diag.h_x_dprime,
            h_u: diag.h_u,
            qp_status: diag.qp_status,
            active: diag.active.clone(),
            slack: diag.slack,
        }
    }

    /// Integrate one tick with `u̇ = φ + v*` held over all four stages.
    pub fn advance(&mut self, diag: &FilterDiagnostics) -> Result<()> {
        let n = self.state.x.len();
        let model = &self.plant.model;
        let u_dot = &diag.u_dot;
        let dt = self.scenario.dt;
        let mut failure = None;
        let next = rk4_step(
            |s, _t| {
                let x = s.rows(0, n).into_owned();
                let u = s.rows(n, s.len() - n).into_owned();
                match eval_f(model, &x, &u) {
                    Ok(fx) => {
                        let mut out = DVector::zeros(s.len());
                        out.rows_mut(0, n).copy_from(&fx);
                        out.rows_mut(n, u_dot.len()).copy_from(u_dot);
                        out
                    }
                    Err(e) => {
                        failure = Some(e);
                        DVector::from_element(s.len(), f64::NAN)
                    }
                }
            },
            &self.state.stacked(),
            self.state.t,
            dt,
        );
        if let Some(e) = failure {
            return Err(e);
        }
        let next = next.map_err(|e| match e {
            Error::NonFinite(_) => Error::NonFiniteDerivative { tick: self.tick },
            other => other,
        })?;
        self.tick += 1;
        // Time from the tick count, so it never drifts from k·dt.
        self.state = ExtendedState::from_stacked(&next, n, self.tick as f64 * dt)
            .map_err(|_| Error::NonFiniteDerivative { tick: self.tick - 1 })?;
        Ok(())
    }

    pub fn step(&mut self) -> Result<TickOutcome> {
        let diag = self.evaluate()?;
        let rec = self.record(&diag);
        if diag.qp_status == QpStatus::Infeasible && self.scenario.infeasibility == InfeasibilityPolicy::Halt {
            return Ok(TickOutcome::Halted(rec));
        }
        self.advance(&diag)?;
        Ok(TickOutcome::Stepped(rec))
    }
}

fn initial_state(sc: &Scenario, plant: &Plant, input: &dyn HumanInput, x0: DVector<f64>) -> Result<ExtendedState> {
    let u0 = match sc.u0 {
        InitialInput::Value(u) => DVector::from_column_slice(&u),
        InitialInput::Keyword(_) => desired_input(&plant.law, input, &x0, 0.0),
    };
    ExtendedState::new(x0, u0, 0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub trace: Vec<TraceRecord>,
    /// Tick at which the halt policy stopped the run; the last record is that tick.
    pub halted_at: Option<usize>,
}

/// Run a scenario from `t = 0` to `T`: `T/dt + 1` records, the last one
/// evaluated at `T` without stepping further.
pub fn run_scenario(sc: &Scenario) -> Result<RunOutcome> {
    let input = sc.human_input()?;
    run_with_input(sc, input)
}

pub fn run_with_input(sc: &Scenario, input: Box<dyn HumanInput>) -> Result<RunOutcome> {
    let mut sim = Simulation::new(sc, input)?;
    let steps = sc.steps();
    let mut trace = Vec::with_capacity(steps + 1);
    for _ in 0..steps {
        match sim.step()? {
            TickOutcome::Stepped(r) => trace.push(r),
            TickOutcome::Halted(r) => {
                trace.push(r);
                return Ok(RunOutcome {
                    trace,
                    halted_at: Some(sim.tick()),
                });
            }
        }
    }
    let diag = sim.evaluate()?;
    trace.push(sim.record(&diag));
    Ok(RunOutcome {
        trace,
        halted_at: None,
    })
}
