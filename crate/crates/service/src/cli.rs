//! The `echo` command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use echo_core::events::EventLog;
use echo_metrics::KappaMethod;
use echo_sim::run::{replay_ctr, RunInputs, CTR_FILE};
use echo_sim::{run_experiment, ScenarioFile};

use crate::app::App;
use crate::clock::SystemClock;
use crate::config::EngineConfig;
use crate::error::ServiceError;

#[derive(Debug, Parser)]
#[command(name = "echo", version, about = "Author-labeling engine: server, simulator and analysis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Serve the session HTTP API.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// Run a simulated experiment and write its artifacts.
    RunSim {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare label sources in an annotation record file.
    Analyze {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value = "cohen")]
        kappa: KappaMethod,
    },
    /// Rebuild a run from its event log and check the regenerated ctr.csv.
    Replay {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        seed: u64,
    },
}

/// Exit status for an error: 2 for configuration problems, 1 otherwise.
pub fn exit_code(e: &ServiceError) -> ExitCode {
    if e.is_config() {
        ExitCode::from(2)
    } else {
        ExitCode::from(1)
    }
}

pub fn run(cli: Cli) -> Result<(), ServiceError> {
    match cli.command {
        Command::Serve { config, port, host } => serve(&config, &host, port),
        Command::RunSim { scenario, out } => run_sim(&scenario, &out),
        Command::Analyze { records, report, kappa } => analyze(&records, &report, kappa),
        Command::Replay { log, seed } => replay(&log, seed),
    }
}

fn serve(config: &Path, host: &str, port: u16) -> Result<(), ServiceError> {
    let cfg = EngineConfig::load(config)?;
    let app = App::from_config(&cfg, Arc::new(SystemClock))?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind((host, port)).await?;
        println!("listening on http://{}", listener.local_addr()?);
        println!("data directory {}", cfg.data_dir.display());
        crate::http::serve(app, listener).await
    })?;
    Ok(())
}

fn run_sim(scenario: &Path, out: &Path) -> Result<(), ServiceError> {
    let file = ScenarioFile::load(scenario)?;
    let exp = run_experiment(&file)?;
    exp.write_artifacts(out)?;
    let s = &exp.summary;
    println!(
        "sessions {} events {} labels {} completion {:.4} ctr ratio {}",
        s.sessions,
        s.events,
        s.labels,
        s.completion_rate.unwrap_or(0.0),
        s.ctr_ratio.map_or("n/a".to_string(), |r| format!("{r:.3}")),
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn analyze(records: &Path, report: &Path, kappa: KappaMethod) -> Result<(), ServiceError> {
    let recs = echo_metrics::records::load(records)
        .map_err(|e| ServiceError::Config(format!("{}: {e}", records.display())))?;
    let opts = echo_metrics::AnalysisOptions {
        kappa,
        ..Default::default()
    };
    let analysis = echo_metrics::report::analyze_default(&recs, &opts)?;
    for path in analysis.write_reports(report)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn replay(log_path: &Path, seed: u64) -> Result<(), ServiceError> {
    let dir = log_path.parent().unwrap_or(Path::new("."));
    let inputs = RunInputs::load(dir)?;
    if inputs.params.seed != seed {
        return Err(ServiceError::Config(format!(
            "--seed {seed} differs from the run's seed {}",
            inputs.params.seed
        )));
    }
    let log = EventLog::load(log_path).map_err(|e| ServiceError::Config(format!("{}: {e}", log_path.display())))?;
    let ctr = replay_ctr(inputs, &log)?;
    print!("{ctr}");
    let recorded = dir.join(CTR_FILE);
    match std::fs::read_to_string(&recorded) {
        Ok(expected) if expected == ctr => {
            eprintln!("replay matches {}", recorded.display());
            Ok(())
        }
        Ok(_) => Err(ServiceError::Storage(format!("replayed CTR differs from {}", recorded.display()))),
        Err(_) => {
            eprintln!("replay consistent with the log; no {CTR_FILE} to compare");
            Ok(())
        }
    }
}
