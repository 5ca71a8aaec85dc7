use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use clap::Args;
use tracing::info;
use webenv_core::driver::cdp::CdpConnector;
use webenv_core::driver::sim::SimConnector;
use webenv_core::driver::BrowserConnector;
use webenv_core::service::http::router;
use webenv_core::EpisodeService;

use crate::config::CliConfig;
use crate::error::CliError;
use crate::fleet::Fleet;
use crate::RuntimeArgs;

pub const DEFAULT_PORT: u16 = 8700;

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub runtime: RuntimeArgs,
    /// Bind address.
    #[arg(long)]
    pub host: Option<String>,
    /// 0 picks a free port.
    #[arg(long)]
    pub port: Option<u16>,
    /// Episodes wait for a human verdict before each action unless they opt out.
    #[arg(long)]
    pub oversight: bool,
    /// Browser remote-debugging endpoint.
    #[arg(long)]
    pub browser_endpoint: Option<String>,
    /// Maximum concurrent episodes.
    #[arg(long)]
    pub capacity: Option<usize>,
    /// Write each finished trajectory here.
    #[arg(long)]
    pub trajectory_dir: Option<PathBuf>,
}

async fn shutdown_signal() {
    let ctrl_c = tokio::signal::ctrl_c();
    #[cfg(unix)]
    {
        let mut term =
            tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()).expect("signal handler");
        tokio::select! {
            _ = ctrl_c => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    let _ = ctrl_c.await;
}

pub async fn run(args: &ServeArgs, mut cfg: CliConfig, json: bool) -> Result<(), CliError> {
    if let Some(p) = args.port {
        cfg.port = Some(p);
    }
    if let Some(h) = &args.host {
        cfg.host = Some(h.clone());
    }
    if args.oversight {
        cfg.service.oversight = true;
    }
    if let Some(c) = args.capacity {
        cfg.service.capacity = c;
    }
    if let Some(d) = &args.trajectory_dir {
        cfg.service.trajectory_dir = Some(d.clone());
    }
    cfg.service.session.validate().map_err(|e| CliError::env(e.to_string()))?;

    let fleet = Fleet::open(&args.runtime, &cfg).await?;
    let connector: Arc<dyn BrowserConnector> = match &fleet.fake {
        Some((rt, _)) => Arc::new(SimConnector::new(rt.clone())),
        None => Arc::new(CdpConnector),
    };
    let svc = Arc::new(EpisodeService::new(fleet.manager.clone(), connector, cfg.service.clone()));

    let addr = format!("{}:{}", cfg.host.as_deref().unwrap_or("127.0.0.1"), cfg.port.unwrap_or(DEFAULT_PORT));
    let listener =
        tokio::net::TcpListener::bind(&addr).await.map_err(|e| CliError::env(format!("cannot bind {addr}: {e}")))?;
    let local = listener.local_addr().map_err(|e| CliError::env(e.to_string()))?;
    if json {
        println!("{}", serde_json::json!({"listening": local.to_string(), "oversight": cfg.service.oversight}));
    } else {
        println!("listening on {local}");
    }
    let _ = std::io::stdout().flush();

    let closer = svc.clone();
    let served = axum::serve(listener, router(svc.clone()))
        .with_graceful_shutdown(async move {
            shutdown_signal().await;
            info!("shutting down");
            // Closing first ends the event streams so connections can drain.
            closer.close_all().await;
        })
        .await;
    let closed = svc.close_all().await;
    fleet.save()?;
    served.map_err(|e| CliError::runtime(e.to_string()))?;
    if json {
        println!("{}", serde_json::json!({"closed_episodes": closed, "live_containers": fleet.manager.live_count()}));
    } else {
        println!("closed {closed} episodes; {} containers live", fleet.manager.live_count());
    }
    Ok(())
}
