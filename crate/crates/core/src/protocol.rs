//! JSON messages spoken by the service: the teleoperation channel and the
//! HTTP API bodies. Shared by the server, the client and the CLI.

use serde::{Deserialize, Deserializer, Serialize};

use crate::acceptance::Thresholds;
use crate::barrier::ConstraintTag;
use crate::filter::{FilterMode, InfeasibilityPolicy};
use crate::qpsolver::QpStatus;
use crate::scenario::{Figure, Scenario};
use crate::trace::{TraceRecord, TraceSummary};

pub const SCHEMA_VERSION: u32 = 1;

/// Sent by a teleoperation client, tagged by `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientCommand {
    SetHumanInput {
        #[serde(deserialize_with = "lenient_pair")]
        u_h: [f64; 2],
    },
    SetMode {
        mode: FilterMode,
    },
    SetGains {
        gains: GainOverrides,
    },
    Reset {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        x0: Option<[f64; 4]>,
    },
    // Braced so unknown keys are rejected like in the other variants.
    Pause {},
    Resume {},
}

/// Accepts `null` and the strings `"NaN"`, `"inf"`, `"-inf"` (and the
/// `Infinity` spellings) besides numbers, so a non-finite operator input
/// reaches validation and gets a precise reply instead of a parse error.
fn lenient_pair<'de, D: Deserializer<'de>>(de: D) -> Result<[f64; 2], D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Lenient {
        Num(f64),
        Text(String),
        Null(()),
    }
    let raw: [Lenient; 2] = Deserialize::deserialize(de)?;
    let mut out = [0.0; 2];
    for (slot, v) in out.iter_mut().zip(raw) {
        *slot = match v {
            Lenient::Num(x) => x,
            Lenient::Null(()) => f64::NAN,
            Lenient::Text(s) => match s.to_ascii_lowercase().as_str() {
                "nan" => f64::NAN,
                "inf" | "+inf" | "infinity" | "+infinity" => f64::INFINITY,
                "-inf" | "-infinity" => f64::NEG_INFINITY,
                _ => return Err(serde::de::Error::custom(format!("`{s}` is not a number"))),
            },
        };
    }
    Ok(out)
}

impl ClientCommand {
    /// Reject non-finite or non-positive values; the scenario is untouched
    /// when this fails.
    pub fn validate(&self) -> Result<(), String> {
        match self {
            ClientCommand::SetHumanInput { u_h } if !u_h.iter().all(|v| v.is_finite()) => {
                Err("non-finite input".into())
            }
            ClientCommand::Reset { x0: Some(x0) } if !x0.iter().all(|v| v.is_finite()) => {
                Err("non-finite input".into())
            }
            ClientCommand::SetGains { gains } => gains.validate(),
            _ => Ok(()),
        }
    }
}

/// Partial scenario update; absent fields keep their value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GainOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(rename = "k_P", skip_serializing_if = "Option::is_none")]
    pub k_p: Option<f64>,
    #[serde(rename = "k_D", skip_serializing_if = "Option::is_none")]
    pub k_d: Option<f64>,
    #[serde(alias = "k_I", skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_x: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_u: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_clamp: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub infeasibility: Option<InfeasibilityPolicy>,
}

impl GainOverrides {
    fn fields(&self) -> [(&'static str, Option<f64>); 10] {
        [
            ("sigma", self.sigma),
            ("k_P", self.k_p),
            ("k_D", self.k_d),
            ("beta", self.beta),
            ("kappa1", self.kappa1),
            ("kappa2", self.kappa2),
            ("gamma_x", self.gamma_x),
            ("gamma_u", self.gamma_u),
            ("d", self.d),
            ("input_clamp", self.input_clamp),
        ]
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, value) in self.fields() {
            if let Some(v) = value {
                if !(v.is_finite() && v > 0.0) {
                    return Err(format!("`{name}`: {v} is not a finite value > 0"));
                }
            }
        }
        Ok(())
    }

    pub fn apply(&self, base: &Scenario) -> Scenario {
        let mut sc = base.clone();
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut sc.sigma, self.sigma);
        set(&mut sc.k_p, self.k_p);
        set(&mut sc.k_d, self.k_d);
        set(&mut sc.beta, self.beta);
        set(&mut sc.kappa1, self.kappa1);
        set(&mut sc.kappa2, self.kappa2);
        set(&mut sc.gamma_x, self.gamma_x);
        set(&mut sc.gamma_u, self.gamma_u);
        set(&mut sc.d, self.d);
        set(&mut sc.input_clamp, self.input_clamp);
        if let Some(p) = self.infeasibility {
            sc.infeasibility = p;
        }
        sc
    }
}

/// One telemetry sample. Keys match the field names exactly; unknown keys
/// are rejected on decode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateFrame {
    /// Gap-free per connection.
    pub seq: u64,
    pub t: f64,
    pub x1: [f64; 2],
    pub x2: [f64; 2],
    pub u: [f64; 2],
    pub uhat: [f64; 2],
    pub v_star: [f64; 2],
    pub h_x: f64,
    pub h_u: f64,
    pub mode: FilterMode,
    pub qp_status: QpStatus,
    pub active: Vec<ConstraintTag>,
    /// Milliseconds since the Unix epoch (simulated in tick-driven runs).
    pub wall_ms: u64,
}

impl StateFrame {
    /// Planar subset of a trace record; `None` unless every field is finite.
    pub fn from_record(rec: &TraceRecord, mode: FilterMode, seq: u64, wall_ms: u64) -> Option<Self> {
        let pair = |v: &nalgebra::DVector<f64>| -> Option<[f64; 2]> {
            match v.as_slice() {
                [a, b] => Some([*a, *b]),
                _ => None,
            }
        };
        if rec.x.len() != 4 {
            return None;
        }
        let f = Self {
            seq,
            t: rec.t,
            x1: rec.x1(),
            x2: rec.x2(),
            u: pair(&rec.u)?,
            uhat: pair(&rec.uhat)?,
            v_star: pair(&rec.v_star)?,
            h_x: rec.h_x,
            h_u: rec.h_u,
            mode,
            qp_status: rec.qp_status,
            active: rec.active.clone(),
            wall_ms,
        };
        f.is_finite().then_some(f)
    }

    pub fn is_finite(&self) -> bool {
        [self.t, self.h_x, self.h_u]
            .into_iter()
            .chain(self.x1)
            .chain(self.x2)
            .chain(self.u)
            .chain(self.uhat)
            .chain(self.v_star)
            .all(f64::is_finite)
    }
}

pub fn encode_frame(f: &StateFrame) -> String {
    serde_json::to_string(f).expect("frame serializes")
}

pub fn decode_frame(text: &str) -> serde_json::Result<StateFrame> {
    serde_json::from_str(text)
}

/// Anything the server sends besides frames, tagged by `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ServerEvent {
    Hello {
        schema_version: u32,
        scenario: Scenario,
    },
    Error {
        message: String,
    },
    /// The QP had no solution at `tick`. `halted` means the loop stopped
    /// and waits for `reset` or `resume`; otherwise the passivity row was
    /// relaxed by `slack`.
    Infeasible {
        tick: u64,
        t: f64,
        halted: bool,
        slack: f64,
        message: String,
    },
}

impl ServerEvent {
    pub fn hello(scenario: &Scenario) -> Self {
        ServerEvent::Hello {
            schema_version: SCHEMA_VERSION,
            scenario: scenario.clone(),
        }
    }

    pub fn encode(&self) -> String {
        serde_json::to_string(self).expect("event serializes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ServerMessage {
    Frame(StateFrame),
    Event(ServerEvent),
}

impl ServerMessage {
    pub fn encode(&self) -> String {
        match self {
            ServerMessage::Frame(f) => encode_frame(f),
            ServerMessage::Event(e) => e.encode(),
        }
    }

    /// Frames carry no `kind`; everything else does.
    pub fn decode(text: &str) -> serde_json::Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        if value.get("kind").is_some() {
            Ok(ServerMessage::Event(serde_json::from_value(value)?))
        } else {
            Ok(ServerMessage::Frame(serde_json::from_value(value)?))
        }
    }
}

// HTTP bodies.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub schema_version: u32,
}

/// The scenario travels as TOML text so the server reports parse errors
/// against the file the user wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRequest {
    pub scenario_toml: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Halted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResponse {
    pub status: RunStatus,
    pub halted_at: Option<usize>,
    pub summary: TraceSummary,
    pub csv: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReproduceRequest {
    pub figure: Figure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproduceResponse {
    pub figure: Figure,
    pub run: RunResponse,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckRequest {
    pub thresholds: Option<Thresholds>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApiErrorKind {
    /// Unreadable or invalid input; the CLI maps it to exit 1.
    BadRequest,
    /// The simulation itself failed (non-finite state and the like).
    Simulation,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub kind: ApiErrorKind,
    pub message: String,
}
