use std::io::{self, Write};
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr, SocketAddr};
use std::time::{Duration, Instant};

use tracing::debug;

use crate::crypto::{CryptoError, DhParams};
use crate::token::AckToken;
use crate::transport::{Received, TransportError, UdpEndpoint};
use crate::wire::{ClientConfig, ClientDriver, ClientSession, FetchReport, Outcome, TokenPolicy};

#[derive(Debug, thiserror::Error)]
pub enum FetchError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("client key generation failed: {0}")]
    Keygen(#[from] CryptoError),
}

/// Client-side knobs shared by [`fetch`] and the attacker harnesses.
#[derive(Debug, Clone, Default)]
pub struct FetchOptions {
    pub client: ClientConfig,
    pub dh: DhParams,
}

/// Drives `session` against `server` over a fresh UDP socket until it
/// reaches a terminal state.
pub fn run_session<W: Write>(
    server: SocketAddr,
    session: ClientSession,
    sink: W,
) -> Result<(FetchReport, ClientDriver<W>), FetchError> {
    let local: IpAddr = match server {
        SocketAddr::V4(_) => Ipv4Addr::UNSPECIFIED.into(),
        SocketAddr::V6(_) => Ipv6Addr::UNSPECIFIED.into(),
    };
    let mut endpoint = UdpEndpoint::bind(SocketAddr::new(local, 0))?;
    let mut driver = ClientDriver::new(session, sink);
    let epoch = Instant::now();
    let now_ms = || epoch.elapsed().as_millis() as u64;

    for datagram in driver.start(now_ms()) {
        endpoint.send_to(&datagram, server)?;
    }
    while !driver.is_finished() {
        let now = now_ms();
        let wait = driver
            .next_deadline()
            .map_or(Duration::from_millis(100), |d| {
                Duration::from_millis(d.saturating_sub(now))
            });
        let replies = match endpoint.recv(wait)? {
            Received::Datagram { from, bytes } if from == server => {
                driver.handle_datagram(now_ms(), &bytes)
            }
            Received::Datagram { from, .. } => {
                debug!(%from, "ignoring datagram from unexpected peer");
                Vec::new()
            }
            Received::Timeout => Vec::new(),
        };
        let due = driver.handle_timeout(now_ms());
        for datagram in replies.into_iter().chain(due) {
            endpoint.send_to(&datagram, server)?;
        }
    }
    Ok((driver.report(), driver))
}

fn run_policy<W: Write>(
    server: SocketAddr,
    name: &str,
    sink: W,
    seed: u64,
    options: &FetchOptions,
    policy: TokenPolicy,
) -> Result<(FetchReport, ClientDriver<W>), FetchError> {
    let session = ClientSession::new(
        name,
        options.client.clone(),
        options.dh.clone(),
        policy,
        seed,
    )?;
    run_session(server, session, sink)
}

/// Honest fetch; content is written to `sink` in order as windows complete.
pub fn fetch<W: Write>(
    server: SocketAddr,
    name: &str,
    sink: W,
    seed: u64,
) -> Result<FetchReport, FetchError> {
    fetch_with(server, name, sink, seed, &FetchOptions::default())
}

pub fn fetch_with<W: Write>(
    server: SocketAddr,
    name: &str,
    sink: W,
    seed: u64,
    options: &FetchOptions,
) -> Result<FetchReport, FetchError> {
    Ok(run_policy(server, name, sink, seed, options, TokenPolicy::Honest)?.0)
}

/// Completes the handshake and collects chunks but never returns a token.
pub fn attack_no_token(
    server: SocketAddr,
    name: &str,
    seed: u64,
    options: &FetchOptions,
) -> Result<FetchReport, FetchError> {
    Ok(run_policy(
        server,
        name,
        io::sink(),
        seed,
        options,
        TokenPolicy::Withhold,
    )?
    .0)
}

/// Presents `captured` (tokens from an earlier session) instead of the
/// tokens this session requires.
pub fn attack_replay(
    server: SocketAddr,
    name: &str,
    captured: Vec<AckToken>,
    seed: u64,
    options: &FetchOptions,
) -> Result<FetchReport, FetchError> {
    let policy = TokenPolicy::Replay(captured);
    Ok(run_policy(server, name, io::sink(), seed, options, policy)?.0)
}

/// Runs an honest fetch and returns the tokens it was entitled to, as an
/// attacker replaying its own earlier transcript would hold them.
pub fn capture_tokens(
    server: SocketAddr,
    name: &str,
    seed: u64,
    options: &FetchOptions,
) -> Result<(FetchReport, Vec<AckToken>), FetchError> {
    let (report, driver) =
        run_policy(server, name, io::sink(), seed, options, TokenPolicy::Honest)?;
    let windows = match report.outcome {
        Outcome::Done => driver.session().metafile().map_or(0, |m| m.window_count()),
        _ => 0,
    };
    Ok((report, driver.session().genuine_tokens(windows)))
}

/// An attack is contained when the server halted it and it saw at most one
/// window of content.
pub fn attack_contained(report: &FetchReport) -> bool {
    matches!(report.outcome, Outcome::Halted(_))
        && report.bytes_received <= report.window_bytes.unwrap_or(0)
}
