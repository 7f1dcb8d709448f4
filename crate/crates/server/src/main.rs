use std::io::BufRead;
use std::net::SocketAddr;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::Parser;
use tracing_subscriber::EnvFilter;

use parley_server::config::{Cli, Command};
use parley_server::{auth, router, AppState};

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    let cli = Cli::parse();

    if let Some(Command::HashPassword) = cli.command {
        let mut line = String::new();
        if std::io::stdin().lock().read_line(&mut line).is_err() {
            return ExitCode::FAILURE;
        }
        println!("{}", auth::hash_password(line.trim_end_matches(['\r', '\n'])));
        return ExitCode::SUCCESS;
    }

    let args = cli.serve;
    let setup = || -> Result<_, String> { Ok((args.credentials()?, args.platform()?)) };
    let (credentials, platform) = match setup() {
        Ok(v) => v,
        Err(e) => {
            eprintln!("parley-server: {e}");
            return ExitCode::FAILURE;
        }
    };
    let platform = Arc::new(platform);

    if let Some(hours) = args.session_auto_close_hours {
        let platform = platform.clone();
        let max_age = chrono::Duration::hours(hours as i64);
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(Duration::from_secs(300));
            loop {
                tick.tick().await;
                match platform.close_stale_sessions(max_age) {
                    Ok(0) => {}
                    Ok(n) => tracing::info!(closed = n, "closed stale sessions"),
                    Err(e) => tracing::error!(error = %e, "closing stale sessions failed"),
                }
            }
        });
    }

    let app = router(AppState::new(platform, credentials, args.settings()));
    let listener = match tokio::net::TcpListener::bind(args.bind).await {
        Ok(l) => l,
        Err(e) => {
            eprintln!("parley-server: cannot bind {}: {e}", args.bind);
            return ExitCode::FAILURE;
        }
    };
    tracing::info!(addr = %args.bind, storage = %args.storage, "listening");
    let served = axum::serve(listener, app.into_make_service_with_connect_info::<SocketAddr>())
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await;
    match served {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("parley-server: {e}");
            ExitCode::FAILURE
        }
    }
}
