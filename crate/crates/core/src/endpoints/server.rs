use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use tracing::{info, warn};

use super::store::ContentStore;
use crate::crypto::DhParams;
use crate::transport::{Received, TransportError, UdpEndpoint};
use crate::wire::{ConfigError, ServerHost, SessionConfig, DEFAULT_MAX_SESSIONS};

/// Longest the event loop blocks before checking the shutdown flag.
const SHUTDOWN_POLL: Duration = Duration::from_millis(100);

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub bind: SocketAddr,
    pub root: PathBuf,
    pub session: SessionConfig,
    pub dh: DhParams,
    pub log_level: String,
    pub max_sessions: usize,
    /// Seed for session ids and per-session secrets; drawn from the OS when
    /// absent.
    pub seed: Option<u64>,
}

impl ServerConfig {
    pub fn new(bind: SocketAddr, root: impl Into<PathBuf>) -> Self {
        Self {
            bind,
            root: root.into(),
            session: SessionConfig::default(),
            dh: DhParams::default(),
            log_level: "info".into(),
            max_sessions: DEFAULT_MAX_SESSIONS,
            seed: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("invalid session config: {0}")]
    Config(#[from] ConfigError),
    #[error("content root {path} is unusable")]
    Root {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Transport(#[from] TransportError),
}

/// A bound server, ready to run.
pub struct Server {
    endpoint: UdpEndpoint,
    host: ServerHost<SocketAddr>,
    local_addr: SocketAddr,
}

impl Server {
    pub fn bind(config: &ServerConfig) -> Result<Self, ServeError> {
        config.session.validate()?;
        let store = ContentStore::open(&config.root).map_err(|source| ServeError::Root {
            path: config.root.clone(),
            source,
        })?;
        let endpoint = UdpEndpoint::bind(config.bind)?;
        let local_addr = endpoint.local_addr()?;
        let seed = config.seed.unwrap_or_else(rand::random);
        let host = ServerHost::new(
            config.session.clone(),
            config.dh.clone(),
            Arc::new(store),
            seed,
        )
        .with_max_sessions(config.max_sessions);
        Ok(Self {
            endpoint,
            host,
            local_addr,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    /// Serves until `shutdown` is set. Per-session failures are logged and
    /// never end the loop; only socket errors do.
    pub fn run(mut self, shutdown: &AtomicBool) -> Result<(), ServeError> {
        info!(addr = %self.local_addr, "listening");
        let epoch = Instant::now();
        let now_ms = || epoch.elapsed().as_millis() as u64;
        while !shutdown.load(Ordering::Relaxed) {
            let now = now_ms();
            let wait = self
                .host
                .next_deadline()
                .map(|d| Duration::from_millis(d.saturating_sub(now)))
                .unwrap_or(SHUTDOWN_POLL)
                .min(SHUTDOWN_POLL);
            let replies = match self.endpoint.recv(wait)? {
                Received::Datagram { from, bytes } => {
                    self.host.handle_datagram(now_ms(), from, &bytes)
                }
                Received::Timeout => Vec::new(),
            };
            self.send_all(replies);
            let due = self.host.handle_timeout(now_ms());
            self.send_all(due);
        }
        let stats = self.host.stats();
        info!(
            sessions = stats.sessions_opened,
            datagrams_in = stats.datagrams_in,
            datagrams_out = stats.datagrams_out,
            "shutting down"
        );
        Ok(())
    }

    fn send_all(&self, datagrams: Vec<(SocketAddr, Vec<u8>)>) {
        for (peer, bytes) in datagrams {
            if let Err(err) = self.endpoint.send_to(&bytes, peer) {
                warn!(%peer, %err, "send failed");
            }
        }
    }
}

pub fn serve(config: &ServerConfig, shutdown: Arc<AtomicBool>) -> Result<(), ServeError> {
    Server::bind(config)?.run(&shutdown)
}
