//! `passafe`: run scenarios, reproduce the three figure presets, run the
//! acceptance suite, or serve the live teleoperation loop.
//!
//! Batch commands are HTTP clients of the service: of the one at `--server`
//! when given, otherwise of a private instance started on loopback for the
//! duration of the command.
//!
//! Exit codes: 0 success, 1 usage, input or check failure, 2 the run halted
//! on an infeasible QP. The last stdout line is always
//! `RESULT exit=<code> reason="<one line>"`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::{Parser, Subcommand};

use passafe_client::{Client, ClientError};
use passafe_core::acceptance::Thresholds;
use passafe_core::protocol::{RunResponse, RunStatus};
use passafe_core::scenario::{Figure, Scenario};
use passafe_core::trace::TraceSummary;
use passafe_service::{start, start_batch, RunningService, ServiceConfig};

#[derive(Parser)]
#[command(name = "passafe", version, about = "Safety and passivity input filter: simulator and teleoperation service")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario file and write its trace as CSV.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Use a running service instead of a private one.
        #[arg(long, value_name = "URL")]
        server: Option<String>,
    },
    /// Run a figure preset and write `<figure>.csv` and `<figure>.summary`.
    Reproduce {
        #[arg(long, value_parser = PossibleValuesParser::new(["fig3", "fig4", "fig5"]).map(|s| s.parse::<Figure>().expect("listed value")))]
        figure: Figure,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, value_name = "URL")]
        server: Option<String>,
    },
    /// Run the acceptance suite and write a JSON report.
    Check {
        #[arg(long)]
        report: PathBuf,
        #[arg(long, value_name = "URL")]
        server: Option<String>,
        /// JSON file overriding acceptance thresholds.
        #[arg(long, hide = true)]
        thresholds: Option<PathBuf>,
    },
    /// Serve the HTTP API and the live loop on `scenario` until interrupted.
    Serve {
        #[arg(long, value_name = "ADDR:PORT")]
        bind: String,
        #[arg(long)]
        scenario: PathBuf,
    },
}

struct Outcome {
    code: u8,
    reason: String,
}

impl Outcome {
    fn ok(reason: impl Into<String>) -> Self {
        Self {
            code: 0,
            reason: reason.into(),
        }
    }

    fn fail(reason: impl Into<String>) -> Self {
        Self {
            code: 1,
            reason: reason.into(),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            if !e.use_stderr() {
                // --help, --version
                return ExitCode::SUCCESS;
            }
            finish(Outcome::fail(format!("usage: {}", e.kind())));
            return ExitCode::from(1);
        }
    };
    let rt = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            finish(Outcome::fail(format!("cannot start runtime: {e}")));
            return ExitCode::from(1);
        }
    };
    let outcome = rt.block_on(dispatch(cli.cmd)).unwrap_or_else(|o| o);
    let code = outcome.code;
    finish(outcome);
    ExitCode::from(code)
}

fn finish(o: Outcome) {
    if o.code != 0 {
        eprintln!("error: {}", o.reason);
    }
    println!("RESULT exit={} reason={:?}", o.code, o.reason);
}

async fn dispatch(cmd: Command) -> Result<Outcome, Outcome> {
    match cmd {
        Command::Run { scenario, out, server } => {
            let text = read(&scenario)?;
            with_client(server, |c| async move { run(&c, &text, &out).await }).await
        }
        Command::Reproduce {
            figure,
            out_dir,
            server,
        } => with_client(server, |c| async move { reproduce(&c, figure, &out_dir).await }).await,
        Command::Check {
            report,
            server,
            thresholds,
        } => {
            let th = match thresholds {
                Some(p) => Some(
                    serde_json::from_str::<Thresholds>(&read(&p)?)
                        .map_err(|e| Outcome::fail(format!("{}: {e}", p.display())))?,
                ),
                None => None,
            };
            with_client(server, |c| async move { check(&c, th, &report).await }).await
        }
        Command::Serve { bind, scenario } => serve(&bind, &scenario).await,
    }
}

fn read(path: &Path) -> Result<String, Outcome> {
    std::fs::read_to_string(path).map_err(|e| Outcome::fail(format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, contents: &str) -> Result<(), Outcome> {
    std::fs::write(path, contents).map_err(|e| Outcome::fail(format!("cannot write {}: {e}", path.display())))
}

fn client_failure(e: ClientError) -> Outcome {
    Outcome::fail(e.to_string())
}

/// Run `f` against `server`, or against a private loopback service.
async fn with_client<F, Fut>(server: Option<String>, f: F) -> Result<Outcome, Outcome>
where
    F: FnOnce(Client) -> Fut,
    Fut: std::future::Future<Output = Result<Outcome, Outcome>>,
{
    let (client, local): (Client, Option<RunningService>) = match server {
        Some(url) => (Client::new(&url).map_err(client_failure)?, None),
        None => {
            let svc = start_batch("127.0.0.1:0")
                .await
                .map_err(|e| Outcome::fail(format!("cannot start local service: {e}")))?;
            (Client::new(&svc.base_url()).map_err(client_failure)?, Some(svc))
        }
    };
    let result = f(client).await;
    if let Some(svc) = local {
        let _ = svc.shutdown().await;
    }
    result
}

fn summary_fields(s: &TraceSummary) -> String {
    format!(
        "records={} final_t={} final_x1={:e},{:e} min_h_x={:e} min_h_u={:e} infeasible_ticks={}",
        s.records, s.final_t, s.final_x1[0], s.final_x1[1], s.min_h_x, s.min_h_u, s.infeasible_ticks
    )
}

fn run_outcome(resp: &RunResponse) -> Outcome {
    match (resp.status, resp.halted_at) {
        (RunStatus::Completed, _) => Outcome::ok("completed"),
        (RunStatus::Halted, tick) => Outcome {
            code: 2,
            reason: format!(
                "QP infeasible at tick {} (t = {}); halted",
                tick.unwrap_or(resp.summary.records.saturating_sub(1)),
                resp.summary.final_t
            ),
        },
    }
}

fn status_str(s: RunStatus) -> &'static str {
    match s {
        RunStatus::Completed => "completed",
        RunStatus::Halted => "halted",
    }
}

async fn run(client: &Client, scenario_toml: &str, out: &Path) -> Result<Outcome, Outcome> {
    let resp = client.run(scenario_toml).await.map_err(client_failure)?;
    write(out, &resp.csv)?;
    println!(
        "RESULT run status={} {} out={}",
        status_str(resp.status),
        summary_fields(&resp.summary),
        out.display()
    );
    Ok(run_outcome(&resp))
}

async fn reproduce(client: &Client, figure: Figure, out_dir: &Path) -> Result<Outcome, Outcome> {
    let resp = client.reproduce(figure).await.map_err(client_failure)?;
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Outcome::fail(format!("cannot create {}: {e}", out_dir.display())))?;
    let csv = out_dir.join(format!("{}.csv", figure.as_str()));
    write(&csv, &resp.run.csv)?;
    let line = format!(
        "RESULT reproduce figure={} status={} {}",
        figure.as_str(),
        status_str(resp.run.status),
        summary_fields(&resp.run.summary)
    );
    write(&out_dir.join(format!("{}.summary", figure.as_str())), &format!("{line}\n"))?;
    println!("{line} out={}", csv.display());
    Ok(run_outcome(&resp.run))
}

async fn check(client: &Client, thresholds: Option<Thresholds>, report_path: &Path) -> Result<Outcome, Outcome> {
    let report = client.check(thresholds).await.map_err(client_failure)?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| Outcome::fail(e.to_string()))?;
    write(report_path, &format!("{json}\n"))?;
    for c in &report.checks {
        println!("RESULT {}", c.line());
    }
    let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.id.as_str()).collect();
    println!(
        "RESULT check passed={}/{} report={}",
        report.checks.len() - failed.len(),
        report.checks.len(),
        report_path.display()
    );
    if report.passed {
        Ok(Outcome::ok("all checks passed"))
    } else {
        Ok(Outcome::fail(format!("failed: {}", failed.join(", "))))
    }
}

async fn serve(bind: &str, scenario_path: &Path) -> Result<Outcome, Outcome> {
    let scenario = Scenario::load(scenario_path).map_err(|e| Outcome::fail(e.to_string()))?;
    let filter = tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into());
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
    let mut svc = start(bind, &scenario, ServiceConfig::default())
        .await
        .map_err(|e| Outcome::fail(e.to_string()))?;
    let addr = svc.local_addr();
    println!("RESULT serve listening=http://{addr} ws=ws://{addr}/ws");
    let stopped = tokio::select! {
        _ = tokio::signal::ctrl_c() => None,
        r = svc.wait() => Some(r),
    };
    match stopped {
        None => {
            let _ = svc.shutdown().await;
            Ok(Outcome::ok("interrupted"))
        }
        Some(Ok(())) => Ok(Outcome::ok("server stopped")),
        Some(Err(e)) => Err(Outcome::fail(format!("server failed: {e}"))),
    }
}
