//! Operator command line: server lifecycle, ingestion, export, fixtures and
//! user administration. Every command goes through the same service calls
//! as the HTTP API, acting as the local system operator.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use basinfo_core::analysis::{AggregationPolicy, AggregationStep, GapPolicy};
use basinfo_core::ingest::FormatSpec;
use basinfo_core::model::{SeriesId, StationId, UserId, Variable};
use basinfo_server::config::ConfigFile;
use basinfo_server::permissions::{Action, ObjectRef, Subject};
use basinfo_server::service::{ExportItem, ExportRequest, IngestRequest, NewGrant, NewUser};
use basinfo_server::{Config, Service, ServiceError, Session};
use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

#[derive(Debug, Parser)]
#[command(name = "basinfo", version, about = "River-basin hydro-meteorological information system")]
pub struct Cli {
    /// TOML file with data_dir, secret, port, pbkdf2_iterations, asset_limit.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Store directory (overrides BASINFO_DATA_DIR and the config file).
    #[arg(long, global = true, value_name = "DIR")]
    pub data_dir: Option<PathBuf>,
    /// More logging; repeat for debug output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP API until interrupted.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long, default_value = "127.0.0.1")]
        bind: String,
    },
    /// Parse a delimited file and register it as a new series.
    Ingest {
        #[arg(long)]
        station: String,
        #[arg(long)]
        variable: String,
        /// JSON format spec; tab-separated ISO dates when omitted.
        #[arg(long, value_name = "SPEC")]
        format: Option<PathBuf>,
        /// Defaults to `<station>-<variable>`.
        #[arg(long)]
        series_id: Option<String>,
        file: PathBuf,
    },
    /// Write series as delimited text, optionally aggregated.
    Export(ExportArgs),
    /// Manage accounts and grants.
    User {
        #[command(subcommand)]
        command: UserCommand,
    },
    /// Load bundled datasets.
    Fixture {
        #[command(subcommand)]
        command: FixtureCommand,
    },
    /// Replay the log and check every stored object.
    Validate,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Series to export, as `id` or `id@version`.
    #[arg(long = "series", required = true, value_name = "ID[@VERSION]")]
    pub series: Vec<String>,
    #[arg(long, value_name = "SPEC")]
    pub format: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub step: Option<Step>,
    #[arg(long, value_enum, default_value = "strict", requires = "step")]
    pub gap_policy: GapChoice,
    /// Largest missing fraction a period may have under `--gap-policy tolerant`.
    #[arg(long, default_value_t = 0.1)]
    pub max_missing: f64,
    #[arg(long, default_value_t = 4)]
    pub hydro_start_month: u32,
    /// Defaults to standard output.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Step {
    Monthly,
    Yearly,
    HydroYear,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GapChoice {
    Strict,
    Tolerant,
    UseFilled,
}

#[derive(Debug, Subcommand)]
pub enum UserCommand {
    /// Create an account. The password is read from standard input.
    Add {
        username: String,
        #[arg(long = "group")]
        groups: Vec<String>,
        #[arg(long)]
        admin: bool,
    },
    /// Grant actions on an object to a user or group.
    Grant {
        #[arg(long, conflicts_with = "group", required_unless_present = "group")]
        user: Option<String>,
        #[arg(long)]
        group: Option<String>,
        /// `series:<id>`, `station:<id>`, `catchment:<id>`, `asset:<id>` or `study-area:<id>`.
        #[arg(long, value_name = "KIND:ID")]
        object: String,
        /// view-metadata, view-data, download, edit or manage.
        #[arg(long = "action", required = true, value_delimiter = ',')]
        actions: Vec<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum FixtureCommand {
    /// Load the synthetic Kara basin dataset.
    Load { name: String },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    User(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::User(_) => 1,
            CliError::Internal(_) => 2,
        }
    }
}

impl From<ServiceError> for CliError {
    fn from(e: ServiceError) -> Self {
        if e.status() >= 500 {
            CliError::Internal(e.to_string())
        } else {
            CliError::User(e.to_string())
        }
    }
}

fn user(msg: impl Into<String>) -> CliError {
    CliError::User(msg.into())
}

/// Parse `argv`, run the command and return the process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_logging(cli.verbose);
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        _ => tracing::Level::DEBUG,
    };
    let _ = tracing_subscriber::fmt().with_max_level(level).with_writer(std::io::stderr).try_init();
}

fn load_config(cli: &Cli, port: Option<u16>) -> Result<Config, CliError> {
    let file = match &cli.config {
        None => ConfigFile::default(),
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| user(format!("{}: {e}", path.display())))?;
            toml::from_str(&text).map_err(|e| user(format!("{}: {e}", path.display())))?
        }
    };
    let data_dir = cli.data_dir.clone();
    let cfg = Config::resolve(file, |key| match key {
        "BASINFO_DATA_DIR" if data_dir.is_some() => data_dir.as_ref().map(|d| d.display().to_string()),
        "BASINFO_PORT" if port.is_some() => port.map(|p| p.to_string()),
        _ => std::env::var(key).ok(),
    })
    .map_err(user)?;
    Ok(cfg)
}

fn open(cfg: Config) -> Result<Service, CliError> {
    let dir = cfg.data_dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| user(format!("data directory {}: {e}", dir.display())))?;
    Service::open(cfg).map_err(|e| match e {
        ServiceError::Storage(io) if io.kind() == std::io::ErrorKind::WouldBlock => {
            user(format!("data directory {} is in use by another process", dir.display()))
        }
        ServiceError::Storage(io) if io.kind() == std::io::ErrorKind::PermissionDenied => {
            user(format!("data directory {} is not writable: {io}", dir.display()))
        }
        other => CliError::Internal(format!("cannot open store in {}: {other}", dir.display())),
    })
}

fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| user(format!("cannot read {}: {e}", path.display())))
}

fn read_format(path: Option<&PathBuf>) -> Result<FormatSpec, CliError> {
    match path {
        None => Ok(FormatSpec::default()),
        Some(p) => serde_json::from_str(&read_file(p)?).map_err(|e| user(format!("{}: {e}", p.display()))),
    }
}

fn print_json(v: &impl serde::Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(v).map_err(|e| CliError::Internal(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn kebab<T: serde::de::DeserializeOwned>(what: &str, value: &str) -> Result<T, CliError> {
    serde_json::from_value(serde_json::Value::String(value.to_string()))
        .map_err(|_| user(format!("unknown {what} '{value}'")))
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let port = match &cli.command {
        Command::Serve { port, .. } => *port,
        _ => None,
    };
    let cfg = load_config(&cli, port)?;
    let system = Session::system();
    match cli.command {
        Command::Serve { bind, .. } => serve(cfg, &bind),
        Command::Ingest {
            station,
            variable,
            format,
            series_id,
            file,
        } => {
            // inputs are checked before the store is touched
            let data = read_file(&file)?;
            let format = read_format(format.as_ref())?;
            let variable: Variable = kebab("variable", &variable)?;
            let svc = open(cfg)?;
            let summary = svc.ingest(
                &system,
                &IngestRequest {
                    station_id: StationId::new(station),
                    variable,
                    series_id: series_id.map(SeriesId::new),
                    format,
                    data,
                },
            )?;
            print_json(&summary)
        }
        Command::Export(args) => {
            let req = export_request(&args)?;
            let svc = open(cfg)?;
            let text = svc.export(&system, &req)?;
            match &args.output {
                None => std::io::stdout()
                    .write_all(text.as_bytes())
                    .map_err(|e| CliError::Internal(e.to_string())),
                Some(p) => std::fs::write(p, text).map_err(|e| user(format!("cannot write {}: {e}", p.display()))),
            }
        }
        Command::User { command } => match command {
            UserCommand::Add { username, groups, admin } => {
                let mut password = String::new();
                std::io::stdin()
                    .read_to_string(&mut password)
                    .map_err(|e| user(format!("cannot read password from standard input: {e}")))?;
                let password = password.lines().next().unwrap_or("").to_string();
                let svc = open(cfg)?;
                let view = svc.create_user(
                    &system,
                    &NewUser {
                        username,
                        password,
                        groups,
                        is_admin: admin,
                    },
                )?;
                print_json(&view)
            }
            UserCommand::Grant {
                user: who,
                group,
                object,
                actions,
            } => {
                let subject = match (who, group) {
                    (Some(u), None) => Subject::User(UserId::new(u)),
                    (None, Some(g)) => Subject::Group(g),
                    _ => return Err(user("give exactly one of --user or --group")),
                };
                let object = parse_object(&object)?;
                let actions = actions
                    .iter()
                    .map(|a| kebab::<Action>("action", a))
                    .collect::<Result<Vec<_>, _>>()?;
                let svc = open(cfg)?;
                let grant = svc.create_grant(&system, &NewGrant { subject, object, actions })?;
                print_json(&grant)
            }
        },
        Command::Fixture {
            command: FixtureCommand::Load { name },
        } => {
            if name != "kara" {
                return Err(user(format!("unknown fixture '{name}'; available: kara")));
            }
            let svc = open(cfg)?;
            print_json(&svc.load_fixture_kara(&system)?)
        }
        Command::Validate => {
            let svc = open(cfg)?;
            let report = svc.validate()?;
            print_json(&report)?;
            if report.problems.is_empty() {
                Ok(())
            } else {
                Err(CliError::Internal(format!("{} integrity problems found", report.problems.len())))
            }
        }
    }
}

fn parse_object(spec: &str) -> Result<ObjectRef, CliError> {
    let (kind, id) = spec
        .split_once(':')
        .ok_or_else(|| user(format!("object '{spec}' is not KIND:ID")))?;
    serde_json::from_value(serde_json::json!({ kind: id })).map_err(|_| user(format!("unknown object kind '{kind}'")))
}

fn export_request(args: &ExportArgs) -> Result<ExportRequest, CliError> {
    let series = args
        .series
        .iter()
        .map(|s| match s.split_once('@') {
            None => Ok(ExportItem::Latest(SeriesId::new(s.as_str()))),
            Some((id, v)) => v
                .parse()
                .map(|version| ExportItem::Version {
                    id: SeriesId::new(id),
                    version,
                })
                .map_err(|_| user(format!("bad version in '{s}'"))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let aggregation = args.step.map(|step| AggregationPolicy {
        step: match step {
            Step::Monthly => AggregationStep::Monthly,
            Step::Yearly => AggregationStep::Yearly,
            Step::HydroYear => AggregationStep::HydroYear,
        },
        gap_policy: match args.gap_policy {
            GapChoice::Strict => GapPolicy::Strict,
            GapChoice::Tolerant => GapPolicy::Tolerant {
                max_missing_fraction: args.max_missing,
            },
            GapChoice::UseFilled => GapPolicy::UseFilled,
        },
        hydro_start_month: args.hydro_start_month,
    });
    Ok(ExportRequest {
        series,
        format: read_format(args.format.as_ref())?,
        aggregation,
    })
}

fn serve(cfg: Config, bind: &str) -> Result<(), CliError> {
    let port = cfg.port;
    let svc = Arc::new(open(cfg)?);
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Internal(e.to_string()))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((bind, port))
            .await
            .map_err(|e| user(format!("cannot listen on {bind}:{port}: {e}")))?;
        let addr = listener.local_addr().map_err(|e| CliError::Internal(e.to_string()))?;
        println!("listening on http://{addr}");
        let _ = std::io::stdout().flush();
        tracing::info!(%addr, "serving");
        basinfo_server::api::serve(listener, svc, shutdown_signal())
            .await
            .map_err(|e| CliError::Internal(e.to_string()))
    })
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
    tracing::info!("shutting down");
}
