//! Services around the program database: the HTTP database master, evaluator
//! workers, sampler workers with LLM or mock mutators, the deterministic
//! local driver and log reports.

pub mod client;
pub mod config;
pub mod db;
pub mod evaluator;
pub mod local;
pub mod mutator;
pub mod report;
pub mod sampler;
pub mod wire;

use thiserror::Error;

pub use config::{DistributedConfig, RunConfig, RunManifest};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("config: {0}")]
    Config(String),
    #[error("http transport: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("{endpoint} returned {status}: {body}")]
    Status { endpoint: String, status: u16, body: String },
    #[error(transparent)]
    Wire(#[from] wire::WireError),
    #[error(transparent)]
    Evolution(#[from] ahd_core::evolution::EvolutionError),
    #[error(transparent)]
    Scoring(#[from] ahd_core::scoring::ScoringError),
    #[error(transparent)]
    Mutator(#[from] mutator::MutatorError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// A running HTTP service on a background task.
#[derive(Debug)]
pub struct ServiceHandle {
    pub addr: std::net::SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    task: tokio::task::JoinHandle<std::io::Result<()>>,
}

impl ServiceHandle {
    pub async fn spawn(listener: tokio::net::TcpListener, router: axum::Router) -> std::io::Result<Self> {
        let addr = listener.local_addr()?;
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let task = tokio::spawn(async move {
            axum::serve(listener, router)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await
        });
        Ok(ServiceHandle { addr, shutdown: Some(tx), task })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub async fn shutdown(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        let _ = self.task.await;
    }

    /// Resolves when the server stops on its own.
    pub async fn join(self) -> std::io::Result<()> {
        self.task.await.unwrap_or_else(|e| Err(std::io::Error::other(e)))
    }
}
