use std::net::SocketAddr;
use std::sync::Arc;

use provbase::config::Config;
use tokio::net::TcpListener;

use crate::api::router;
use crate::app::App;
use crate::error::{GatewayError, Result};

pub async fn bind(config: &Config) -> Result<TcpListener> {
    let addr = format!("{}:{}", config.server.bind, config.server.port);
    TcpListener::bind(&addr).await.map_err(|e| match e.kind() {
        std::io::ErrorKind::AddrInUse => GatewayError::PortInUse(config.server.port),
        _ => GatewayError::Core(e.into()),
    })
}

/// Serves until `shutdown` resolves, then flushes the log.
pub async fn serve(
    app: Arc<App>,
    listener: TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> Result<()> {
    axum::serve(listener, router(app.clone()))
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(|e| GatewayError::Core(e.into()))?;
    app.shutdown()
}

/// Binds, replays the store and serves until interrupted. `on_ready`
/// receives the bound address.
pub async fn run(config: Config, on_ready: impl FnOnce(SocketAddr)) -> Result<()> {
    let listener = bind(&config).await?;
    let app = App::open(config)?;
    on_ready(
        listener
            .local_addr()
            .map_err(|e| GatewayError::Core(e.into()))?,
    );
    serve(app, listener, shutdown_signal()).await
}

async fn shutdown_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        let mut term = match signal(SignalKind::terminate()) {
            Ok(s) => s,
            Err(_) => {
                let _ = tokio::signal::ctrl_c().await;
                return;
            }
        };
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    {
        let _ = tokio::signal::ctrl_c().await;
    }
}
