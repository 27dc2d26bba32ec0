//! Tick-driven teleoperation loop. Owns the simulation; knows nothing about
//! clocks or sockets, so a scripted run is reproducible bit for bit.

use std::sync::Mutex;

use nalgebra::DVector;

use passafe_core::filter::InfeasibilityPolicy;
use passafe_core::protocol::{ClientCommand, ServerEvent, StateFrame};
use passafe_core::qpsolver::QpStatus;
use passafe_core::scenario::{HumanInputSpec, LiveKeyword, Scenario};
use passafe_core::sim::Simulation;
use passafe_core::trace::TraceRecord;
use passafe_core::tracking::LiveInput;

/// Lowest barrier value a broadcast frame may carry outside infeasibility events.
pub const FRAME_FLOOR: f64 = -1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineConfig {
    /// Integration step; also the wall-clock tick period.
    pub dt: f64,
    /// One frame per this many ticks.
    pub frame_every: u64,
}

impl Default for EngineConfig {
    /// 500 ticks/s and 62.5 frames/s.
    fn default() -> Self {
        Self {
            dt: 2e-3,
            frame_every: 8,
        }
    }
}

impl EngineConfig {
    pub fn frames_per_second(&self) -> f64 {
        1.0 / (self.dt * self.frame_every as f64)
    }
}

/// Output of one tick.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TickReport {
    pub frame: Option<StateFrame>,
    pub events: Vec<ServerEvent>,
}

pub struct TeleopEngine {
    sim: Simulation,
    live: LiveInput,
    cfg: EngineConfig,
    ticks: u64,
    frames: u64,
    paused: bool,
    halted: bool,
    /// Inside a run of infeasible ticks; events fire on the first one only.
    infeasible_run: bool,
}

fn clamp(u: [f64; 2], bound: f64) -> [f64; 2] {
    u.map(|v| v.clamp(-bound, bound))
}

impl TeleopEngine {
    /// The scenario's `dt` and `T` are replaced by the live settings; a
    /// constant or scheduled `u_h` only seeds the first operator input.
    pub fn new(base: &Scenario, cfg: EngineConfig) -> passafe_core::Result<Self> {
        if !(cfg.dt.is_finite() && cfg.dt > 0.0) || cfg.frame_every == 0 {
            return Err(passafe_core::Error::Scenario("invalid engine timing".into()));
        }
        let initial = match &base.u_h {
            HumanInputSpec::Live(_) => [0.0, 0.0],
            _ => {
                let v = base.human_input()?.value(0.0);
                [v[0], v[1]]
            }
        };
        let mut sc = base.clone();
        sc.dt = cfg.dt;
        sc.t_final = sc.t_final.max(cfg.dt);
        sc.u_h = HumanInputSpec::Live(LiveKeyword::Live);
        let live = LiveInput::new(DVector::from_column_slice(&clamp(initial, sc.input_clamp)));
        let sim = Simulation::new(&sc, Box::new(live.clone()))?;
        Ok(Self {
            sim,
            live,
            cfg,
            ticks: 0,
            frames: 0,
            paused: false,
            halted: false,
            infeasible_run: false,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        self.sim.scenario()
    }

    pub fn config(&self) -> EngineConfig {
        self.cfg
    }

    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    pub fn is_paused(&self) -> bool {
        self.paused
    }

    pub fn is_halted(&self) -> bool {
        self.halted
    }

    pub fn human_input(&self) -> [f64; 2] {
        let v = self.live.get();
        [v[0], v[1]]
    }

    /// Apply a command between ticks. On error nothing changes.
    pub fn apply(&mut self, cmd: ClientCommand) -> Result<(), String> {
        cmd.validate()?;
        match cmd {
            ClientCommand::SetHumanInput { u_h } => {
                let u = clamp(u_h, self.scenario().input_clamp);
                self.live.set(DVector::from_column_slice(&u));
            }
            ClientCommand::SetMode { mode } => self.sim.set_mode(mode),
            ClientCommand::SetGains { gains } => {
                let next = gains.apply(self.scenario());
                self.sim.reconfigure(next).map_err(|e| e.to_string())?;
                let u = clamp(self.human_input(), self.scenario().input_clamp);
                self.live.set(DVector::from_column_slice(&u));
            }
            ClientCommand::Reset { x0 } => {
                self.sim.reset(x0).map_err(|e| e.to_string())?;
                self.halted = false;
                self.infeasible_run = false;
            }
            ClientCommand::Pause {} => self.paused = true,
            ClientCommand::Resume {} => {
                self.paused = false;
                self.halted = false;
            }
        }
        Ok(())
    }

    /// Advance one tick (or hold, when paused or halted). `wall_ms` only
    /// stamps the frame.
    pub fn tick(&mut self, wall_ms: u64) -> TickReport {
        let emit = self.ticks % self.cfg.frame_every == 0;
        self.ticks += 1;
        let mut report = TickReport::default();
        let record = if self.paused || self.halted {
            self.sim.evaluate().ok().map(|d| self.sim.record(&d))
        } else {
            self.step(&mut report.events)
        };
        if emit {
            if let Some(rec) = record {
                report.frame = self.frame(&rec, wall_ms);
            }
        }
        report
    }

    fn step(&mut self, events: &mut Vec<ServerEvent>) -> Option<TraceRecord> {
        let tick = self.sim.tick() as u64;
        let t = self.sim.time();
        let stop = |this: &mut Self, events: &mut Vec<ServerEvent>, e: passafe_core::Error| {
            this.halted = true;
            events.push(ServerEvent::Error {
                message: format!("simulation stopped at t = {t}: {e}"),
            });
        };
        let diag = match self.sim.evaluate() {
            Ok(d) => d,
            Err(e) => {
                stop(self, events, e);
                return None;
            }
        };
        let rec = self.sim.record(&diag);
        let sc = self.scenario();
        let no_solution = diag.qp_status == QpStatus::Infeasible;
        // Near a vanishing row normal v* grows without bound while the QP
        // stays feasible; once one tick would move u further than the whole
        // operator range the sampled loop can no longer follow it.
        let overrun = diag.v_star.norm() * sc.dt > sc.input_clamp;
        let mut halted = overrun || (no_solution && sc.infeasibility == InfeasibilityPolicy::Halt);
        let mut reason = if overrun {
            Some("QP correction exceeds what the loop can realize at this rate")
        } else if halted {
            Some("QP infeasible")
        } else {
            None
        };
        if !halted {
            let snap = self.sim.snapshot();
            if let Err(e) = self.sim.advance(&diag) {
                stop(self, events, e);
                return Some(rec);
            }
            if self.leaves_floor(&rec, diag.slack > 0.0) {
                self.sim.restore(snap);
                halted = true;
                reason = Some("sampled step would cross the barrier floor");
            }
        }
        let infeasible = no_solution || halted || diag.slack > 0.0;
        if infeasible && !self.infeasible_run {
            let message = match reason {
                Some(r) => format!("{r}; halted until reset or resume"),
                None if diag.slack > 0.0 => "QP infeasible; passivity row relaxed".to_string(),
                None => "QP infeasible".to_string(),
            };
            events.push(ServerEvent::Infeasible {
                tick,
                t,
                halted,
                slack: diag.slack,
                message,
            });
        }
        self.infeasible_run = infeasible;
        self.halted = halted;
        Some(rec)
    }

    /// Sampled-data check on the step just taken: an enabled barrier that
    /// was above the frame floor must not end below it. The guarantees hold
    /// in continuous time only, and near a vanishing row normal one tick is
    /// too coarse.
    /// A relaxed passivity row gives no passivity promise, so only safety
    /// is checked then.
    fn leaves_floor(&self, before: &TraceRecord, relaxed: bool) -> bool {
        let mode = self.scenario().mode;
        let Ok(after) = self.sim.evaluate() else {
            return true;
        };
        let crosses = |b: f64, a: f64| b >= FRAME_FLOOR && !(a >= FRAME_FLOOR);
        (mode.safety() && crosses(before.h_x, after.h_x)) || (mode.passivity() && !relaxed && crosses(before.h_u, after.h_u))
    }

    fn frame(&mut self, rec: &TraceRecord, wall_ms: u64) -> Option<StateFrame> {
        let f = StateFrame::from_record(rec, self.scenario().mode, self.frames, wall_ms)?;
        self.frames += 1;
        Some(f)
    }
}

/// Single-slot mailbox: writers overwrite, the control loop takes.
#[derive(Debug, Default)]
pub struct LatestValue<T>(Mutex<Option<T>>);

impl<T> LatestValue<T> {
    pub fn new() -> Self {
        Self(Mutex::new(None))
    }

    pub fn put(&self, value: T) {
        *self.0.lock().unwrap_or_else(|e| e.into_inner()) = Some(value);
    }

    pub fn take(&self) -> Option<T> {
        self.0.lock().unwrap_or_else(|e| e.into_inner()).take()
    }
}
