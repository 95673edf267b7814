//! The `commtrace` command: simulate traces, correlate them, analyze or
//! serve the curated result.

pub mod output;
pub mod query;
pub mod server;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use commtrace_core::analytics::{Analyzer, View};
use commtrace_core::correlate::{correlate, CorrelateError, CorrelateOptions, TraceSet};
use commtrace_core::model::{read_curated, write_curated, CuratedError};
use commtrace_core::sim::{simulate, Scenario, SimError};

pub const LOG_ENV: &str = "COMMTRACE_LOG_LEVEL";
pub const CURATED_FILE: &str = "curated.trace";
pub const REPORT_FILE: &str = "match-report.json";

#[derive(Debug, Parser)]
#[command(name = "commtrace", version, about = "Simulate, correlate and explore UCX-style communication traces")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate per-process logs and ground truth from a scenario file.
    Simulate {
        scenario: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Replaces the scenario's protocol seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Correlate a directory of logs into a curated trace and match report.
    Correlate {
        log_dir: PathBuf,
        /// Output directory; defaults to the log directory.
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[arg(long)]
        no_ucp_attribution: bool,
        #[arg(long)]
        no_device_attribution: bool,
        #[arg(long)]
        no_mpi_attribution: bool,
    },
    /// Print one view of a curated trace as JSON.
    Analyze {
        curated: PathBuf,
        view: View,
        #[command(flatten)]
        filter: FilterArgs,
        /// Timeline bin width in nanoseconds.
        #[arg(long)]
        bin_ns: Option<u64>,
    },
    /// Serve the views of a curated trace over HTTP.
    Serve {
        curated: PathBuf,
        #[arg(short, long, default_value_t = 8080, value_parser = clap::value_parser!(u16).range(1024..))]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}

/// Same fields and value syntax as the HTTP query parameters.
#[derive(Debug, Clone, Default, Args)]
pub struct FilterArgs {
    #[arg(long = "transport")]
    pub transports: Vec<String>,
    #[arg(long = "uct-fn")]
    pub uct_fns: Vec<String>,
    #[arg(long = "mpi-fn")]
    pub mpi_fns: Vec<String>,
    #[arg(long = "node")]
    pub nodes: Vec<String>,
    #[arg(long = "proc")]
    pub procs: Vec<String>,
    #[arg(long)]
    pub t_min: Option<String>,
    #[arg(long)]
    pub t_max: Option<String>,
    #[arg(long)]
    pub metric: Option<String>,
}

impl FilterArgs {
    fn pairs(&self) -> Vec<(&'static str, &str)> {
        let mut v = Vec::new();
        for (key, vals) in [
            ("transports", &self.transports),
            ("uct_fns", &self.uct_fns),
            ("mpi_fns", &self.mpi_fns),
            ("nodes", &self.nodes),
            ("procs", &self.procs),
        ] {
            v.extend(vals.iter().map(|x| (key, x.as_str())));
        }
        for (key, val) in [("t_min", &self.t_min), ("t_max", &self.t_max), ("metric", &self.metric)] {
            v.extend(val.as_deref().map(|x| (key, x)));
        }
        v
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad input: scenario, logs, curated file or arguments.
    #[error("{0}")]
    User(String),
    /// A broken invariant inside the tool.
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::User(_) => 2,
            CliError::Internal(_) => 3,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::User(format!("{}: {e}", path.display()))
}

fn read_scenario(path: &Path) -> Result<Scenario, CliError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::User(format!("{}: {e}", path.display())))
}

pub fn cmd_simulate(scenario: &Path, out: &Path, seed: Option<u64>) -> Result<String, CliError> {
    let mut s = read_scenario(scenario)?;
    if let Some(seed) = seed {
        s.protocol.seed = seed;
    }
    let sim = simulate(&s).map_err(|e: SimError| {
        let msg = format!("{}: {e}", scenario.display());
        if e.is_user_error() {
            CliError::User(msg)
        } else {
            CliError::Internal(msg)
        }
    })?;
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    for (name, bytes) in sim.files() {
        let path = out.join(&name);
        output::write_atomic(&path, &bytes).map_err(io_err(&path))?;
        log::info!("wrote {}", path.display());
    }
    Ok(format!(
        "simulated {} processes, {} messages, {} uct ops -> {}",
        sim.processes.len(),
        sim.messages.len(),
        sim.uct_op_count(),
        out.display()
    ))
}

pub fn cmd_correlate(log_dir: &Path, out: Option<&Path>, opts: &CorrelateOptions) -> Result<String, CliError> {
    let set = TraceSet::load_dir(log_dir).map_err(|e: CorrelateError| CliError::User(e.to_string()))?;
    let (trace, report) = correlate(&set, opts);
    let out = out.unwrap_or(log_dir);
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let bytes = write_curated(&trace).map_err(|e| CliError::Internal(e.to_string()))?;
    let path = out.join(CURATED_FILE);
    output::write_atomic(&path, &bytes).map_err(io_err(&path))?;
    let path = out.join(REPORT_FILE);
    output::write_atomic(&path, &report.to_json()).map_err(io_err(&path))?;
    for issue in report.issues.iter().take(20) {
        log::warn!("{issue:?}");
    }
    Ok(format!(
        "correlated {} processes: {} of {} uct ops curated, {} ucp pairs, {} issues ({} ambiguities) -> {}",
        report.processes,
        trace.comms.len(),
        report.uct_ops,
        trace.ucp_pairs.len(),
        report.issues.len(),
        report.ambiguities(),
        out.display()
    ))
}

pub fn load_analyzer(curated: &Path) -> Result<Analyzer, CliError> {
    let bytes = std::fs::read(curated).map_err(io_err(curated))?;
    let trace = read_curated(&bytes).map_err(|e: CuratedError| CliError::User(format!("{}: {e}", curated.display())))?;
    Analyzer::new(trace).map_err(|e| CliError::User(format!("{}: {e}", curated.display())))
}

/// The view document `analyze` prints, without the trailing newline.
pub fn cmd_analyze(curated: &Path, view: View, filter: &FilterArgs, bin_ns: Option<u64>) -> Result<Vec<u8>, CliError> {
    let q = query::parse_pairs(filter.pairs(), false).map_err(|e| CliError::User(e.0))?;
    let a = load_analyzer(curated)?;
    a.render(view, &q.filter, bin_ns).map_err(|e| CliError::User(e.to_string()))
}

fn cmd_serve(curated: &Path, host: &str, port: u16) -> Result<String, CliError> {
    let analyzer = Arc::new(load_analyzer(curated)?);
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Internal(e.to_string()))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((host, port))
            .await
            .map_err(|e| CliError::User(format!("cannot listen on {host}:{port}: {e}")))?;
        let addr = listener.local_addr().map_err(|e| CliError::Internal(e.to_string()))?;
        eprintln!("serving {} on http://{addr}", curated.display());
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        server::serve(listener, analyzer, shutdown).await.map_err(|e| CliError::Internal(e.to_string()))
    })?;
    Ok("server stopped".into())
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { scenario, out, seed } => println!("{}", cmd_simulate(&scenario, &out, seed)?),
        Command::Correlate { log_dir, out, no_ucp_attribution, no_device_attribution, no_mpi_attribution } => {
            let opts = CorrelateOptions {
                ucp_attribution: !no_ucp_attribution,
                device_attribution: !no_device_attribution,
                mpi_attribution: !no_mpi_attribution,
            };
            println!("{}", cmd_correlate(&log_dir, out.as_deref(), &opts)?);
        }
        Command::Analyze { curated, view, filter, bin_ns } => {
            let mut doc = cmd_analyze(&curated, view, &filter, bin_ns)?;
            doc.push(b'\n');
            std::io::stdout().lock().write_all(&doc).map_err(|e| CliError::User(format!("stdout: {e}")))?;
        }
        Command::Serve { curated, port, host } => log::info!("{}", cmd_serve(&curated, &host, port)?),
    }
    Ok(())
}

pub fn init_logging() {
    let env = env_logger::Env::new().filter_or(LOG_ENV, "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp_millis().try_init();
}

pub fn run() -> ExitCode {
    init_logging();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("commtrace: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
