//! Request handlers behind the HTTP routes, free of any transport.

use passafe_core::acceptance::{run_all, AcceptanceReport, Thresholds};
use passafe_core::protocol::{
    ApiError, ApiErrorKind, CheckRequest, ReproduceRequest, ReproduceResponse, RunRequest, RunResponse, RunStatus,
};
use passafe_core::scenario::Scenario;
use passafe_core::sim::run_scenario;
use passafe_core::trace::{trace_csv_string, TraceSummary};
use passafe_core::Error;

fn api_error(e: Error) -> ApiError {
    let kind = match e {
        Error::Scenario(_) | Error::InvalidParameter { .. } => ApiErrorKind::BadRequest,
        Error::NonFinite(_) | Error::NonFiniteDerivative { .. } | Error::DimensionMismatch { .. } => {
            ApiErrorKind::Simulation
        }
        _ => ApiErrorKind::Internal,
    };
    ApiError {
        kind,
        message: e.to_string(),
    }
}

pub fn simulate(sc: &Scenario) -> Result<RunResponse, ApiError> {
    let out = run_scenario(sc).map_err(api_error)?;
    Ok(RunResponse {
        status: if out.halted_at.is_some() {
            RunStatus::Halted
        } else {
            RunStatus::Completed
        },
        halted_at: out.halted_at,
        summary: TraceSummary::of(&out.trace).map_err(api_error)?,
        csv: trace_csv_string(&out.trace).map_err(api_error)?,
    })
}

pub fn run(req: &RunRequest) -> Result<RunResponse, ApiError> {
    let sc = Scenario::from_toml_str(&req.scenario_toml).map_err(api_error)?;
    simulate(&sc)
}

pub fn reproduce(req: &ReproduceRequest) -> Result<ReproduceResponse, ApiError> {
    Ok(ReproduceResponse {
        figure: req.figure,
        run: simulate(&req.figure.scenario())?,
    })
}

pub fn check(req: &CheckRequest) -> AcceptanceReport {
    run_all(&req.thresholds.clone().unwrap_or_else(Thresholds::default))
}

#[cfg(test)]
mod tests {
    use super::*;
    use passafe_core::scenario::Figure;

    #[test]
    fn unknown_key_is_a_bad_request() {
        let err = run(&RunRequest {
            scenario_toml: "k_X = 1.0".into(),
        })
        .unwrap_err();
        assert_eq!(err.kind, ApiErrorKind::BadRequest);
        assert!(err.message.contains("k_X"), "{}", err.message);
    }

    #[test]
    fn short_run_completes() {
        let resp = run(&RunRequest {
            scenario_toml: "T = 0.01".into(),
        })
        .unwrap();
        assert_eq!(resp.status, RunStatus::Completed);
        assert_eq!(resp.summary.records, 11);
        assert_eq!(resp.csv.lines().count(), 12);
    }

    #[test]
    fn reproduce_is_pure() {
        let req = ReproduceRequest { figure: Figure::Fig3 };
        assert_eq!(reproduce(&req).unwrap(), reproduce(&req).unwrap());
    }
}
