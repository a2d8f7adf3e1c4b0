//! Single entry point: serve the broker, serve the synthetic tool server,
//! or run one benchmark experiment. Exit codes are a stable contract:
//! 0 success, 2 benchmark hard-assert failure, 64 usage error, 78 config
//! error; operational failures (bind, I/O) exit 1.

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;
use std::sync::Arc;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use agentgate::broker::audit::AuditSink;
use agentgate::broker::{http as broker_http, Broker, HttpDownstream};
use agentgate::clock::SystemClock;
use agentgate::config::AppConfig;
use agentgate::harness::{report, run_experiment, ExperimentId, HarnessError};
use agentgate::synth::{http as synth_http, ErrorStyle, SynthState};

const EXIT_OK: u8 = 0;
const EXIT_OPERATIONAL: u8 = 1;
const EXIT_HARD_ASSERT: u8 = 2;
const EXIT_USAGE: u8 = 64;
const EXIT_CONFIG: u8 = 78;

#[derive(Parser)]
#[command(
    name = "agentgate",
    version,
    about = "Identity-scoped tool gateway, synthetic tool server, and benchmark harness"
)]
struct Cli {
    /// Path to a TOML config file; defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve the policy broker over HTTP.
    BrokerServe {
        /// Listen address, overriding the config.
        #[arg(long, value_name = "ADDR")]
        listen: Option<String>,
        /// Downstream /rpc endpoint, overriding the config.
        #[arg(long, value_name = "URL")]
        downstream: Option<String>,
    },
    /// Serve the synthetic multi-tenant tool server over HTTP.
    SynthServe {
        /// Listen address, overriding the config.
        #[arg(long, value_name = "ADDR")]
        listen: Option<String>,
        /// Master seed for all simulated draws, overriding the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run one experiment (h1, h2, h3, h4, serf_policy) and write reports.
    Bench {
        /// Experiment identifier.
        experiment: String,
        /// Master seed, overriding the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Trials per arm, overriding the experiment default.
        #[arg(long)]
        trials: Option<u32>,
        /// Report directory, overriding the config.
        #[arg(long, value_name = "DIR")]
        out: Option<String>,
        /// Enforce publication-grade minimum trial counts.
        #[arg(long)]
        strict: bool,
    },
}

fn main() -> ExitCode {
    ExitCode::from(run())
}

fn run() -> u8 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };

    let mut cfg = match load_config(cli.config.as_deref()) {
        Ok(cfg) => cfg,
        Err(msg) => {
            eprintln!("config error: {msg}");
            return EXIT_CONFIG;
        }
    };
    init_logging(&cfg);

    match cli.command {
        Command::BrokerServe { listen, downstream } => {
            if let Some(listen) = listen {
                cfg.broker.listen = listen;
            }
            if let Some(downstream) = downstream {
                cfg.broker.downstream = downstream;
            }
            if let Err(e) = cfg.validate() {
                eprintln!("config error: {e}");
                return EXIT_CONFIG;
            }
            serve_broker(&cfg)
        }
        Command::SynthServe { listen, seed } => {
            if let Some(listen) = listen {
                cfg.synth.listen = listen;
            }
            if let Some(seed) = seed {
                cfg.synth.seed = seed;
            }
            if let Err(e) = cfg.validate() {
                eprintln!("config error: {e}");
                return EXIT_CONFIG;
            }
            serve_synth(&cfg)
        }
        Command::Bench {
            experiment,
            seed,
            trials,
            out,
            strict,
        } => {
            let id = match ExperimentId::from_str(&experiment) {
                Ok(id) => id,
                Err(msg) => {
                    eprintln!("usage error: {msg}");
                    return EXIT_USAGE;
                }
            };
            if let Some(seed) = seed {
                cfg.bench.seed = seed;
            }
            if let Some(trials) = trials {
                cfg.bench.trials = Some(trials);
            }
            if let Some(out) = out {
                cfg.bench.out_dir = out;
            }
            if strict {
                cfg.bench.strict = true;
            }
            bench(&cfg, id)
        }
    }
}

fn load_config(path: Option<&std::path::Path>) -> Result<AppConfig, String> {
    let mut cfg = match path {
        Some(p) => AppConfig::load(&p.to_string_lossy()).map_err(|e| e.to_string())?,
        None => AppConfig::default(),
    };
    cfg.apply_env_overrides(std::env::vars())
        .map_err(|e| e.to_string())?;
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn init_logging(cfg: &AppConfig) {
    let filter = EnvFilter::try_new(cfg.log_level.as_filter())
        .unwrap_or_else(|_| EnvFilter::new("info"));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

fn server_runtime() -> Result<tokio::runtime::Runtime, std::io::Error> {
    tokio::runtime::Builder::new_multi_thread().enable_all().build()
}

fn serve_broker(cfg: &AppConfig) -> u8 {
    let rt = match server_runtime() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("runtime error: {e}");
            return EXIT_OPERATIONAL;
        }
    };
    rt.block_on(async {
        let downstream = match HttpDownstream::new(&cfg.broker.downstream) {
            Ok(d) => Arc::new(d),
            Err(e) => {
                eprintln!("config error: downstream: {e}");
                return EXIT_CONFIG;
            }
        };
        let audit = match AuditSink::to_file(&cfg.broker.audit_path) {
            Ok(a) => a,
            Err(e) => {
                eprintln!("audit sink {}: {e}", cfg.broker.audit_path);
                return EXIT_OPERATIONAL;
            }
        };
        let broker = match Broker::from_config(&cfg.broker, downstream, Arc::new(SystemClock), audit)
        {
            Ok(b) => Arc::new(b),
            Err(e) => {
                eprintln!("config error: {e}");
                return EXIT_CONFIG;
            }
        };
        let server = match broker_http::serve(broker, &cfg.broker.listen).await {
            Ok(s) => s,
            Err(e) => {
                eprintln!("bind {}: {e}", cfg.broker.listen);
                return EXIT_OPERATIONAL;
            }
        };
        tracing::info!(addr = %server.addr, "broker serving");
        wait_for_interrupt().await;
        server.shutdown().await;
        EXIT_OK
    })
}

fn serve_synth(cfg: &AppConfig) -> u8 {
    let rt = match server_runtime() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("runtime error: {e}");
            return EXIT_OPERATIONAL;
        }
    };
    rt.block_on(async {
        let state = match SynthState::new(cfg.synth.clone(), Arc::new(SystemClock), ErrorStyle::Serf)
        {
            Ok(s) => Arc::new(s),
            Err(e) => {
                eprintln!("config error: {e}");
                return EXIT_CONFIG;
            }
        };
        let server = match synth_http::serve(state, &cfg.synth.listen).await {
            Ok(s) => s,
            Err(e) => {
                eprintln!("bind {}: {e}", cfg.synth.listen);
                return EXIT_OPERATIONAL;
            }
        };
        tracing::info!(addr = %server.addr, "synthetic tool server serving");
        wait_for_interrupt().await;
        server.shutdown().await;
        EXIT_OK
    })
}

async fn wait_for_interrupt() {
    if tokio::signal::ctrl_c().await.is_err() {
        // Signal handling unavailable: park forever rather than busy-exit.
        std::future::pending::<()>().await;
    }
}

fn bench(cfg: &AppConfig, id: ExperimentId) -> u8 {
    let stats = match run_experiment(cfg, id) {
        Ok(stats) => stats,
        Err(HarnessError::Config(msg)) => {
            eprintln!("config error: {msg}");
            return EXIT_CONFIG;
        }
        Err(e) => {
            eprintln!("bench error: {e}");
            return EXIT_OPERATIONAL;
        }
    };
    let out_dir = PathBuf::from(&cfg.bench.out_dir);
    match report::write_reports(&stats, &out_dir) {
        Ok((json_path, _)) => tracing::info!(path = %json_path.display(), "report written"),
        Err(e) => {
            eprintln!("write report to {}: {e}", out_dir.display());
            return EXIT_OPERATIONAL;
        }
    }
    print!("{}", report::render_text(&stats));
    if stats.passed() {
        EXIT_OK
    } else {
        for assert in stats.failed_asserts() {
            eprintln!("hard assert failed: {} ({})", assert.name, assert.detail);
        }
        EXIT_HARD_ASSERT
    }
}
