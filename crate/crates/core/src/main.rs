//! `workpod`: serve live sessions, replay scenarios, score logs.
//!
//! Exit codes: 0 success, 1 a scenario threshold failed, 2 invalid input or
//! startup failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

use workpod::api::{self, AppState};
use workpod::config::EngineConfig;
use workpod::mediation::llm::{ChatBackend, FixtureBackend, HttpChatBackend};
use workpod::mediation::memory::MemoryStore;
use workpod::mediation::Mediator;
use workpod::metrics::{compute_report, render, Format};
use workpod::model::{BackendKind, SessionLog};
use workpod::replay::{replay, ReplayOptions, DEFAULT_PARTICIPANT};
use workpod::session::{ClockMode, Runtime};
use workpod::simuser::load_scenario;

#[derive(Parser)]
#[command(name = "workpod", version, about = "Adaptive workpod orchestration engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Backend {
    Oracle,
    Llm,
}

impl From<Backend> for BackendKind {
    fn from(b: Backend) -> Self {
        match b {
            Backend::Oracle => BackendKind::Oracle,
            Backend::Llm => BackendKind::Llm,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP + WebSocket service.
    Serve {
        #[arg(long, env = "WORKPOD_ADDR", default_value = "127.0.0.1:8080")]
        addr: String,
        #[arg(long, value_enum, default_value = "oracle")]
        backend: Backend,
        /// Bearer token every client must present.
        #[arg(long, env = "WORKPOD_TOKEN", hide_env_values = true)]
        token: String,
        /// Directory for session logs and memory files.
        #[arg(long, env = "WORKPOD_DATA_DIR", default_value = "workpod-data")]
        data_dir: PathBuf,
        /// Allowed CORS origin (`*` for any).
        #[arg(long, env = "WORKPOD_CORS_ORIGIN")]
        cors_origin: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Replay a scenario against a simulated participant.
    Replay {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 4)]
        sessions: u32,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the scenario's profile (`responsive`, `non_responsive`).
        #[arg(long)]
        profile: Option<String>,
        /// Withhold raw utterance text from the logs.
        #[arg(long)]
        redact: bool,
        #[arg(long, default_value_t = 0)]
        actuator_delay_ms: u64,
        #[arg(long, value_enum, default_value = "oracle")]
        backend: Backend,
        /// Answer LLM requests from recorded fixtures instead of the network.
        #[arg(long)]
        llm_fixtures: Option<PathBuf>,
        #[arg(long, default_value = DEFAULT_PARTICIPANT)]
        participant: String,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Compute the metrics report of sealed session logs.
    Metrics {
        #[arg(required = true)]
        logs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let result = match Cli::parse().command {
        Command::Serve { addr, backend, token, data_dir, cors_origin, config } => {
            serve(&addr, backend, token, &data_dir, cors_origin.as_deref(), config.as_deref())
        }
        Command::Replay {
            scenario,
            sessions,
            seed,
            out,
            profile,
            redact,
            actuator_delay_ms,
            backend,
            llm_fixtures,
            participant,
            format,
            config,
        } => (|| {
            let config = load_config(config.as_deref())?;
            let chat = match backend {
                Backend::Llm => Some(chat_backend(&config, llm_fixtures.as_deref())?),
                Backend::Oracle => None,
            };
            let script = load_scenario(&scenario).map_err(|e| e.to_string())?;
            let opts = ReplayOptions {
                sessions,
                seed,
                profile,
                participant,
                store_raw_utterances: !redact,
                actuator_delay_ms,
                backend: backend.into(),
                chat,
                config,
            };
            let outcome = replay(&script, &opts, out.as_deref()).map_err(|e| e.to_string())?;
            print!("{}", render(&outcome.report, format));
            Ok(if outcome.passed { ExitCode::SUCCESS } else { ExitCode::from(1) })
        })(),
        Command::Metrics { logs, format, config } => (|| {
            let config = load_config(config.as_deref())?;
            let logs = logs
                .iter()
                .map(|p| {
                    let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
                    SessionLog::from_text(&text).map_err(|e| format!("{}: {e}", p.display()))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let report = compute_report(&logs, &config.metrics).map_err(|e| e.to_string())?;
            print!("{}", render(&report, format));
            Ok(ExitCode::SUCCESS)
        })(),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::from(2)
    })
}

fn load_config(path: Option<&Path>) -> Result<EngineConfig, String> {
    path.map_or_else(|| Ok(EngineConfig::default()), |p| EngineConfig::load(p).map_err(|e| e.to_string()))
}

fn chat_backend(config: &EngineConfig, fixtures: Option<&Path>) -> Result<Arc<dyn ChatBackend>, String> {
    Ok(match fixtures {
        Some(dir) => Arc::new(FixtureBackend::replay(dir)),
        None => Arc::new(HttpChatBackend::from_env(config.llm.base_url.clone()).map_err(|e| e.to_string())?),
    })
}

fn serve(
    addr: &str,
    backend: Backend,
    token: String,
    data_dir: &Path,
    cors_origin: Option<&str>,
    config: Option<&Path>,
) -> Result<ExitCode, String> {
    if token.is_empty() {
        return Err("WORKPOD_TOKEN must not be empty".into());
    }
    let config = load_config(config)?;
    let mediator = match backend {
        Backend::Oracle => Mediator::oracle(config.mediation.clone()),
        Backend::Llm => Mediator::with_backend(config.mediation.clone(), chat_backend(&config, None)?),
    };
    let memory = MemoryStore::open(data_dir).map_err(|e| e.to_string())?;
    let mut runtime = Runtime {
        mediator: Arc::new(mediator),
        memory: Arc::new(memory),
        actuators: config.actuators.clone(),
        clock: ClockMode::Measured,
        log_dir: Some(data_dir.to_path_buf()),
        ..Runtime::default()
    };
    match std::env::var("WORKPOD_REDACTION_KEY") {
        Ok(k) if !k.is_empty() => runtime.redaction_key = Arc::from(k.as_bytes()),
        _ => tracing::warn!("WORKPOD_REDACTION_KEY is unset; utterance digests use the built-in key"),
    }
    let cors = api::cors(cors_origin)?;
    let state = AppState::new(runtime, backend.into(), token, config.metrics.clone());

    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| format!("cannot bind {addr}: {e}"))?;
        let local = listener.local_addr().map_err(|e| e.to_string())?;
        tracing::info!(%local, data_dir = %data_dir.display(), "listening");
        api::serve(listener, state, cors, api::shutdown_signal()).await.map_err(|e| e.to_string())
    })?;
    Ok(ExitCode::SUCCESS)
}
