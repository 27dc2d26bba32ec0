//! Run description for the planar teleoperation example, loaded from a flat
//! TOML key/value file. Missing keys take the defaults below.

use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::barrier::{ClassK, DiskBarrier, SafetyBarrier};
use crate::dynamics::DoubleIntegratorDrag;
use crate::error::{Error, Result};
use crate::filter::{FilterMode, InfeasibilityPolicy};
use crate::passivity::{PassivityBarrier, QuadraticStorage};
use crate::tracking::{ConstantInput, HumanInput, PdLaw, PiecewiseInput, TrackingGain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitKeyword {
    #[serde(rename = "init-to-uhat")]
    InitToUhat,
}

/// `u(0)`: either an explicit vector or `"init-to-uhat"` for `û(x0, 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialInput {
    Keyword(InitKeyword),
    Value([f64; 2]),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LiveKeyword {
    Live,
}

/// Human input signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HumanInputSpec {
    Constant([f64; 2]),
    /// Rows of `[t, u_h1, u_h2]`; each value holds until the next row.
    Schedule { schedule: Vec<[f64; 3]> },
    /// Supplied at run time by the teleoperation service.
    Live(LiveKeyword),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub sigma: f64,
    #[serde(rename = "k_P")]
    pub k_p: f64,
    #[serde(rename = "k_D")]
    pub k_d: f64,
    #[serde(alias = "k_I")]
    pub beta: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub gamma_x: f64,
    pub gamma_u: f64,
    pub d: f64,
    /// `(x1, x2)` stacked: position then velocity.
    pub x0: [f64; 4],
    pub u0: InitialInput,
    pub u_h: HumanInputSpec,
    pub mode: FilterMode,
    pub dt: f64,
    #[serde(rename = "T")]
    pub t_final: f64,
    pub infeasibility: InfeasibilityPolicy,
    /// Per-axis bound on live operator input.
    pub input_clamp: f64,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            k_p: 1.0,
            k_d: 2.0,
            beta: 10.0,
            kappa1: 5.0,
            kappa2: 5.0,
            gamma_x: 5.0,
            gamma_u: 10.0,
            d: 1.0,
            // Starts left of the target drifting outward, so the unfiltered
            // loop loses passivity early and the final approach comes from the left.
            x0: [-1.5, 1.0, -0.5, 0.0],
            u0: InitialInput::Keyword(InitKeyword::InitToUhat),
            u_h: HumanInputSpec::Constant([-0.3, 0.0]),
            mode: FilterMode::Both,
            dt: 1e-3,
            t_final: 30.0,
            infeasibility: InfeasibilityPolicy::Halt,
            input_clamp: 2.0,
        }
    }
}

/// Figures reproduced by `reproduce`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Figure {
    Fig3,
    Fig4,
    Fig5,
}

impl Figure {
    pub const ALL: [Figure; 3] = [Figure::Fig3, Figure::Fig4, Figure::Fig5];

    pub fn as_str(&self) -> &'static str {
        match self {
            Figure::Fig3 => "fig3",
            Figure::Fig4 => "fig4",
            Figure::Fig5 => "fig5",
        }
    }

    pub fn mode(&self) -> FilterMode {
        match self {
            Figure::Fig3 => FilterMode::None,
            Figure::Fig4 => FilterMode::PassivityOnly,
            Figure::Fig5 => FilterMode::Both,
        }
    }

    pub fn scenario(&self) -> Scenario {
        Scenario {
            mode: self.mode(),
            ..Scenario::default()
        }
    }
}

impl std::str::FromStr for Figure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Figure::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::invalid("figure", format!("unknown figure `{s}` (fig3|fig4|fig5)")))
    }
}

/// Components of the planar example built from a scenario.
#[derive(Debug, Clone)]
pub struct Plant {
    pub model: DoubleIntegratorDrag,
    pub barrier: SafetyBarrier<DiskBarrier>,
    pub passivity: PassivityBarrier<QuadraticStorage>,
    pub law: PdLaw,
    pub gain: TrackingGain,
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::Scenario(e.message().to_string()))?;
        let sc: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let msg = e.inner().message().to_string();
            Error::Scenario(if path == "." { msg } else { format!("`{path}`: {msg}") })
        })?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("sigma", self.sigma),
            ("k_P", self.k_p),
            ("k_D", self.k_d),
            ("beta", self.beta),
            ("kappa1", self.kappa1),
            ("kappa2", self.kappa2),
            ("gamma_x", self.gamma_x),
            ("gamma_u", self.gamma_u),
            ("d", self.d),
            ("dt", self.dt),
            ("input_clamp", self.input_clamp),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::invalid(name, format!("{value} is not a finite value > 0")));
            }
        }
        if !(self.t_final.is_finite() && self.t_final >= self.dt) {
            return Err(Error::invalid("T", "must be finite and ≥ dt"));
        }
        if !self.x0.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("x0", "non-finite entry"));
        }
        if let InitialInput::Value(u0) = self.u0 {
            if !u0.iter().all(|v| v.is_finite()) {
                return Err(Error::invalid("u0", "non-finite entry"));
            }
        }
        match &self.u_h {
            HumanInputSpec::Constant(v) if !v.iter().all(|x| x.is_finite()) => {
                return Err(Error::invalid("u_h", "non-finite entry"));
            }
            HumanInputSpec::Schedule { schedule } if schedule.is_empty() => {
                return Err(Error::invalid("u_h", "schedule is empty"));
            }
            HumanInputSpec::Schedule { schedule } if !schedule.iter().flatten().all(|x| x.is_finite()) => {
                return Err(Error::invalid("u_h", "non-finite entry"));
            }
            _ => {}
        }
        Ok(())
    }

    /// Number of integration steps; the trace holds one more record.
    pub fn steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    pub fn plant(&self) -> Result<Plant> {
        self.validate()?;
        let model = DoubleIntegratorDrag::new(self.sigma)?;
        Ok(Plant {
            model,
            barrier: SafetyBarrier::new(
                DiskBarrier::planar(self.d)?,
                ClassK::new(self.kappa1)?,
                ClassK::new(self.kappa2)?,
                ClassK::new(self.gamma_x)?,
            ),
            passivity: PassivityBarrier::new(QuadraticStorage::squared_norm(4), ClassK::new(self.gamma_u)?),
            law: PdLaw::new(self.k_p, self.k_d, 2)?,
            gain: TrackingGain::new(self.beta)?,
        })
    }

    /// Offline human input. Live input has no offline meaning.
    pub fn human_input(&self) -> Result<Box<dyn HumanInput>> {
        match &self.u_h {
            HumanInputSpec::Constant(v) => Ok(Box::new(ConstantInput(DVector::from_column_slice(v)))),
            HumanInputSpec::Schedule { schedule } => Ok(Box::new(PiecewiseInput::new(
                schedule
                    .iter()
                    .map(|r| (r[0], DVector::from_column_slice(&r[1..])))
                    .collect(),
            )?)),
            HumanInputSpec::Live(_) => Err(Error::invalid("u_h", "`live` input needs the teleoperation service")),
        }
    }

    pub fn initial_x(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.x0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        assert_eq!(Scenario::from_toml_str("").unwrap(), Scenario::default());
    }

    #[test]
    fn parses_all_keys() {
        let text = r#"
            sigma = 2.0
            k_P = 1.5
            k_D = 3.0
            k_I = 7.0
            kappa1 = 1.0
            kappa2 = 2.0
            gamma_x = 4.0
            gamma_u = 5.0
            d = 0.5
            x0 = [1.0, -1.0, 0.0, 0.5]
            u0 = [0.1, 0.2]
            u_h = { schedule = [[0.0, -0.3, 0.0], [5.0, 0.0, 0.3]] }
            mode = "safety_only"
            dt = 0.002
            T = 4.0
            infeasibility = "safety_priority_slack"
            input_clamp = 1.0
        "#;
        let sc = Scenario::from_toml_str(text).unwrap();
        assert_eq!(sc.beta, 7.0);
        assert_eq!(sc.u0, InitialInput::Value([0.1, 0.2]));
        assert_eq!(sc.mode, FilterMode::SafetyOnly);
        assert_eq!(sc.infeasibility, InfeasibilityPolicy::SafetyPrioritySlack);
        assert_eq!(sc.steps(), 2000);
        let hi = sc.human_input().unwrap();
        assert_eq!(hi.value(6.0).as_slice(), &[0.0, 0.3]);
    }

    #[test]
    fn keyword_values() {
        let sc = Scenario::from_toml_str("u0 = \"init-to-uhat\"\nu_h = \"live\"").unwrap();
        assert_eq!(sc.u0, InitialInput::Keyword(InitKeyword::InitToUhat));
        assert!(sc.human_input().is_err());
    }

    #[test]
    fn unknown_key_is_named() {
        let err = Scenario::from_toml_str("sigmaa = 1.0").unwrap_err().to_string();
        assert!(err.contains("sigmaa"), "{err}");
    }

    #[test]
    fn type_errors_name_the_key() {
        for (text, key) in [("sigma = \"a\"", "sigma"), ("x0 = [1.0]", "x0"), ("mode = \"zz\"", "mode"), ("u_h = 3", "u_h")] {
            let err = Scenario::from_toml_str(text).unwrap_err().to_string();
            assert!(err.contains(key), "{err}");
        }
    }

    #[test]
    fn invalid_values_are_named() {
        let err = Scenario::from_toml_str("dt = -1.0").unwrap_err().to_string();
        assert!(err.contains("dt"), "{err}");
        let err = Scenario::from_toml_str("k_P = 0.0").unwrap_err().to_string();
        assert!(err.contains("k_P"), "{err}");
        let err = Scenario::from_toml_str("T = 0.0001").unwrap_err().to_string();
        assert!(err.contains('T'), "{err}");
    }

    #[test]
    fn round_trips_through_toml() {
        let sc = Figure::Fig4.scenario();
        assert_eq!(Scenario::from_toml_str(&sc.to_toml_string()).unwrap(), sc);
    }

    #[test]
    fn figure_presets_select_modes() {
        assert_eq!(Figure::Fig3.scenario().mode, FilterMode::None);
        assert_eq!(Figure::Fig4.scenario().mode, FilterMode::PassivityOnly);
        assert_eq!(Figure::Fig5.scenario().mode, FilterMode::Both);
        assert_eq!("fig5".parse::<Figure>().unwrap(), Figure::Fig5);
        assert!("fig6".parse::<Figure>().is_err());
    }
}
