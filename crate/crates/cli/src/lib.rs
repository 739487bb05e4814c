//! Command-line driver for the `calibra` experiments.
//!
//! [`run`] turns parsed arguments into a [`report::Report`] and an exit
//! status: 0 when every check passes, 1 when a check fails or a computation
//! errors, 2 for usage and configuration errors.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod report;
pub mod suite;

use std::io::Write;
use std::time::Instant;

use chrono::{SecondsFormat, Utc};
use serde_json::json;

pub use args::{Cli, Command, CommonArgs};
pub use config::{RunConfig, DEFAULT_SEED};
pub use error::CliError;
pub use report::Report;

/// Rendered output of one run.
pub struct RunOutcome {
    pub report: Report,
    /// CSV text when `--csv` was requested.
    pub csv: Option<String>,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.report.pass {
            0
        } else {
            1
        }
    }

    pub fn rendered(&self) -> String {
        self.csv.clone().unwrap_or_else(|| self.report.to_json())
    }
}

/// Executes a resolved configuration. Computation errors are folded into a
/// failing report; only usage errors come back as `Err`.
pub fn run_config(config: &RunConfig) -> Result<RunOutcome, CliError> {
    let started_at = Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true);
    let clock = Instant::now();
    let result = match config.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::usage(format!("cannot start {n} workers: {e}")))?
            .install(|| commands::execute(config)),
        None => commands::execute(config),
    };
    let duration_ms = clock.elapsed().as_millis() as u64;
    let (results, pass, history) = match result {
        Ok(out) => (out.results, out.pass, out.history),
        Err(CliError::Usage(msg)) => return Err(CliError::Usage(msg)),
        Err(e) => (json!({ "error": e.to_string() }), false, None),
    };
    let csv = match (config.format, history) {
        (config::Format::Csv, Some(h)) => Some(
            report::history_csv(&h)
                .map_err(|e| CliError::usage(format!("cannot format CSV: {e}")))?,
        ),
        _ => None,
    };
    Ok(RunOutcome {
        report: Report::new(config, started_at, duration_ms, results, pass),
        csv,
    })
}

/// Full pipeline behind the binary; returns the exit status.
pub fn run(cli: &Cli) -> i32 {
    match try_run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("calibra: {e}");
            e.exit_code()
        }
    }
}

fn try_run(cli: &Cli) -> Result<i32, CliError> {
    let config = RunConfig::resolve(&cli.command, &cli.common)?;
    let outcome = run_config(&config)?;
    let text = outcome.rendered();
    match &config.output {
        Some(path) => std::fs::write(path, &text).map_err(|source| CliError::Output {
            path: path.display().to_string(),
            source,
        })?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|source| CliError::Output {
                    path: "stdout".into(),
                    source,
                })?;
        }
    }
    if let Some(err) = outcome.report.results.get("error") {
        eprintln!("calibra: {}", err.as_str().unwrap_or("computation failed"));
    }
    Ok(outcome.exit_code())
}
