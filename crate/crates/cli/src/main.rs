mod config;
mod error;
mod fleet;
mod serve;

use std::io::Read;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use webenv_core::compile_observation;
use webenv_core::obs::RawDomSnapshot;

use config::{CliConfig, Overrides};
use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "webenv", version, about = "Web-agent environments: observations, fleets, episodes")]
struct Cli {
    /// Machine-readable output.
    #[arg(long, global = true)]
    json: bool,
    /// tracing filter, e.g. `info` or `webenv_core=debug`.
    #[arg(long, global = true)]
    log_level: Option<String>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compile a raw DOM snapshot into an observation.
    Parse {
        /// Snapshot JSON file, or `-` for stdin.
        snapshot: PathBuf,
        #[arg(long)]
        pretty: bool,
    },
    /// Manage web-server containers.
    Fleet {
        #[command(flatten)]
        runtime: RuntimeArgs,
        #[command(subcommand)]
        cmd: fleet::FleetCmd,
    },
    /// Run the episode service over HTTP.
    Serve(serve::ServeArgs),
}

/// Where containers run.
#[derive(Debug, Clone, Args)]
pub struct RuntimeArgs {
    /// Config file (TOML or JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Runtime API socket.
    #[arg(long)]
    socket: Option<PathBuf>,
    /// Separate fleet config file.
    #[arg(long)]
    fleet_config: Option<PathBuf>,
    /// Use the in-process simulated runtime, persisted in this state file.
    #[arg(long, value_name = "STATE_FILE")]
    fake_runtime: Option<PathBuf>,
    /// Multiplier on the simulated runtime's latencies.
    #[arg(long, default_value_t = 1.0)]
    fake_scale: f64,
}

impl RuntimeArgs {
    fn overrides(&self, log_level: Option<String>, browser_endpoint: Option<String>) -> Overrides {
        Overrides {
            runtime_socket: self.socket.clone(),
            browser_endpoint,
            fleet_config: self.fleet_config.clone(),
            log_level,
        }
    }
}

fn init_logging(level: Option<&str>) {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .ok()
        .or_else(|| level.and_then(|l| tracing_subscriber::EnvFilter::try_new(l).ok()))
        .unwrap_or_else(|| tracing_subscriber::EnvFilter::new("warn"));
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).try_init();
}

fn cmd_parse(path: &PathBuf, pretty: bool) -> Result<String, CliError> {
    let text = if path.as_os_str() == "-" {
        let mut s = String::new();
        std::io::stdin().read_to_string(&mut s).map_err(|e| CliError::input(format!("stdin: {e}")))?;
        s
    } else {
        std::fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?
    };
    let snap = RawDomSnapshot::from_json(&text)?;
    let obs = compile_observation(&snap)?;
    Ok(if pretty { obs.to_json_pretty() } else { obs.to_json() })
}

async fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Command::Parse { snapshot, pretty } => {
            init_logging(cli.log_level.as_deref());
            println!("{}", cmd_parse(&snapshot, pretty)?);
            Ok(())
        }
        Command::Fleet { runtime, cmd } => {
            let cfg = CliConfig::load_opt(runtime.config.as_deref())?.resolve(&runtime.overrides(cli.log_level, None));
            init_logging(cfg.log_level.as_deref());
            fleet::run(&runtime, &cfg, cmd, cli.json).await
        }
        Command::Serve(args) => {
            let over = args.runtime.overrides(cli.log_level.clone(), args.browser_endpoint.clone());
            let cfg = CliConfig::load_opt(args.runtime.config.as_deref())?.resolve(&over);
            init_logging(cfg.log_level.as_deref());
            serve::run(&args, cfg, cli.json).await
        }
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    let cli = Cli::parse();
    let json = cli.json;
    match run(cli).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if json {
                eprintln!("{}", serde_json::to_string(&e).expect("error serializes"));
            } else {
                eprintln!("webenv: {e}");
            }
            e.exit_code()
        }
    }
}
