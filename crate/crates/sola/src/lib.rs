//! HTTP server and command-line front end for [`sola_core`].

pub mod cli;
pub mod config;
pub mod http;

use std::sync::Arc;

use sola_core::service::{Service, ServiceOptions, SystemClock};
use sola_core::storage::FileStorage;

use crate::config::ApiConfig;

/// Opens the configured store and serves until interrupted.
pub async fn serve(config: ApiConfig) -> Result<(), Box<dyn std::error::Error>> {
    let storage = Arc::new(FileStorage::with_secrets_dir(&config.data_dir, config.secrets_path())?);
    let options = ServiceOptions { session_ttl: config.session_ttl(), verifiers: config.verifier_registry() };
    let svc = Arc::new(Service::open(storage, Arc::new(SystemClock), options)?);
    let app = http::router(svc, &config.cors_origins);
    let listener = tokio::net::TcpListener::bind(config.listen).await?;
    tracing::info!(addr = %listener.local_addr()?, data_dir = %config.data_dir.display(), "listening");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
