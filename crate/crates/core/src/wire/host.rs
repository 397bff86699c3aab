//! Multi-session server core, still free of I/O.
//!
//! The host decodes datagrams, opens a [`ServerSession`] per Hello, routes
//! everything else by session id and keeps per-session timer deadlines in
//! the caller's clock (milliseconds, any epoch). Drivers feed it datagrams
//! and `now`, send what it returns, and wake it at [`ServerHost::next_deadline`].

use std::collections::BTreeMap;
use std::fmt::Debug;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tracing::{debug, warn};

use super::codec::{decode, encode, Message};
use super::content::ContentCatalog;
use super::server::{
    ServerAction, ServerEvent, ServerSession, ServerSessionStats, ServerState, ServerTimer,
    SessionConfig, SessionSeeds,
};
use crate::crypto::DhParams;

pub const DEFAULT_MAX_SESSIONS: usize = 1024;
/// Closed-session records kept for inspection.
const CLOSED_HISTORY: usize = 4096;

struct Hosted<P> {
    peer: P,
    session: ServerSession,
    timers: BTreeMap<ServerTimer, u64>,
}

/// Final record of a session that has been discarded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClosedSession {
    pub id: u64,
    pub state: ServerState,
    pub stats: ServerSessionStats,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct HostStats {
    pub datagrams_in: u64,
    pub datagrams_out: u64,
    pub decode_errors: u64,
    pub unroutable: u64,
    pub sessions_opened: u64,
}

pub struct ServerHost<P> {
    config: SessionConfig,
    params: Arc<DhParams>,
    catalog: Arc<dyn ContentCatalog>,
    rng: ChaCha8Rng,
    max_sessions: usize,
    sessions: BTreeMap<u64, Hosted<P>>,
    closed: Vec<ClosedSession>,
    stats: HostStats,
}

impl<P: Clone + Eq + Debug> ServerHost<P> {
    /// `seed` drives session ids, DH secrets and token nonces.
    pub fn new(
        config: SessionConfig,
        params: DhParams,
        catalog: Arc<dyn ContentCatalog>,
        seed: u64,
    ) -> Self {
        Self {
            config,
            params: Arc::new(params),
            catalog,
            rng: ChaCha8Rng::seed_from_u64(seed),
            max_sessions: DEFAULT_MAX_SESSIONS,
            sessions: BTreeMap::new(),
            closed: Vec::new(),
            stats: HostStats::default(),
        }
    }

    pub fn with_max_sessions(mut self, max: usize) -> Self {
        self.max_sessions = max;
        self
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn stats(&self) -> HostStats {
        self.stats
    }

    pub fn active_sessions(&self) -> impl Iterator<Item = &ServerSession> {
        self.sessions.values().map(|h| &h.session)
    }

    pub fn closed_sessions(&self) -> &[ClosedSession] {
        &self.closed
    }

    /// Live sessions plus closed ones, in id order.
    pub fn all_sessions(&self) -> Vec<ClosedSession> {
        let mut all: Vec<ClosedSession> = self
            .sessions
            .values()
            .map(|h| ClosedSession {
                id: h.session.id(),
                state: h.session.state().clone(),
                stats: h.session.stats(),
            })
            .chain(self.closed.iter().cloned())
            .collect();
        all.sort_by_key(|s| s.id);
        all
    }

    pub fn next_deadline(&self) -> Option<u64> {
        self.sessions
            .values()
            .flat_map(|h| h.timers.values().copied())
            .min()
    }

    pub fn handle_datagram(&mut self, now: u64, peer: P, datagram: &[u8]) -> Vec<(P, Vec<u8>)> {
        self.stats.datagrams_in += 1;
        let packet = match decode(datagram) {
            Ok(packet) => packet,
            Err(err) => {
                self.stats.decode_errors += 1;
                debug!(?peer, %err, "dropping undecodable datagram");
                return Vec::new();
            }
        };
        let mut out = Vec::new();
        if let Message::Hello { .. } = packet.message {
            if packet.session_id != 0 {
                self.stats.unroutable += 1;
                return out;
            }
            if self.sessions.len() >= self.max_sessions {
                warn!(?peer, "session table full, ignoring hello");
                return out;
            }
            let id = loop {
                let candidate: u64 = self.rng.gen();
                if candidate != 0 && !self.sessions.contains_key(&candidate) {
                    break candidate;
                }
            };
            let seeds = SessionSeeds {
                dh_seed: self.rng.gen(),
                token_nonce: self.rng.gen(),
            };
            let session = ServerSession::new(
                id,
                seeds,
                self.config.clone(),
                self.params.clone(),
                self.catalog.clone(),
            );
            self.stats.sessions_opened += 1;
            self.sessions.insert(
                id,
                Hosted {
                    peer,
                    session,
                    timers: BTreeMap::new(),
                },
            );
            self.dispatch(now, id, ServerEvent::Received(packet.message), &mut out);
            return out;
        }
        match self.sessions.get(&packet.session_id) {
            Some(hosted) if hosted.peer == peer => {
                self.dispatch(
                    now,
                    packet.session_id,
                    ServerEvent::Received(packet.message),
                    &mut out,
                );
            }
            _ => {
                self.stats.unroutable += 1;
                debug!(?peer, session_id = packet.session_id, "no such session");
            }
        }
        out
    }

    /// Fires every timer due at or before `now`, earliest first.
    pub fn handle_timeout(&mut self, now: u64) -> Vec<(P, Vec<u8>)> {
        let mut out = Vec::new();
        loop {
            let due = self
                .sessions
                .iter()
                .flat_map(|(id, h)| h.timers.iter().map(move |(t, d)| (*d, *id, *t)))
                .filter(|(d, _, _)| *d <= now)
                .min();
            let Some((_, id, timer)) = due else { break };
            self.sessions
                .get_mut(&id)
                .expect("listed")
                .timers
                .remove(&timer);
            self.dispatch(now, id, ServerEvent::Timer(timer), &mut out);
        }
        out
    }

    fn dispatch(&mut self, now: u64, id: u64, event: ServerEvent, out: &mut Vec<(P, Vec<u8>)>) {
        let hosted = self
            .sessions
            .get_mut(&id)
            .expect("dispatch to live session");
        let mut close = false;
        for action in hosted.session.step(event) {
            match action {
                ServerAction::Send(packet) => match encode(&packet) {
                    Ok(bytes) => {
                        self.stats.datagrams_out += 1;
                        out.push((hosted.peer.clone(), bytes));
                    }
                    Err(err) => warn!(session_id = id, %err, "failed to encode outgoing packet"),
                },
                ServerAction::Arm { timer, after_ms } => {
                    hosted
                        .timers
                        .insert(timer, now.saturating_add(after_ms.max(1)));
                }
                ServerAction::Cancel(timer) => {
                    hosted.timers.remove(&timer);
                }
                ServerAction::Close => close = true,
            }
        }
        if close {
            let hosted = self.sessions.remove(&id).expect("present");
            if self.closed.len() == CLOSED_HISTORY {
                self.closed.remove(0);
            }
            self.closed.push(ClosedSession {
                id,
                state: hosted.session.state().clone(),
                stats: hosted.session.stats(),
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{dh_keygen, RsaKeyPair};
    use crate::wire::client::{ClientConfig, ClientSession, TokenPolicy};
    use crate::wire::codec::{HaltReason, Packet};
    use crate::wire::content::MemoryCatalog;
    use crate::wire::driver::ClientDriver;

    fn host() -> ServerHost<u8> {
        let catalog = MemoryCatalog::new().with("a", vec![1; 5000]);
        let config = SessionConfig {
            chunk_size: 100,
            window_size: 4,
            ..SessionConfig::default()
        };
        ServerHost::new(config, DhParams::default(), Arc::new(catalog), 1)
    }

    fn client(name: &str, seed: u64) -> ClientDriver<Vec<u8>> {
        let params = DhParams::default();
        let session = ClientSession::with_keys(
            name,
            ClientConfig::default(),
            params.clone(),
            TokenPolicy::Honest,
            RsaKeyPair::generate(128, seed).unwrap(),
            dh_keygen(&params, seed),
        );
        ClientDriver::new(session, Vec::new())
    }

    /// Runs both directions until quiet, without timers.
    fn exchange(
        host: &mut ServerHost<u8>,
        peer: u8,
        client: &mut ClientDriver<Vec<u8>>,
        first: Vec<Vec<u8>>,
    ) {
        let mut to_server = first;
        while !to_server.is_empty() {
            let mut to_client = Vec::new();
            for d in to_server.drain(..) {
                to_client.extend(
                    host.handle_datagram(0, peer, &d)
                        .into_iter()
                        .map(|(_, b)| b),
                );
            }
            for d in to_client {
                to_server.extend(client.handle_datagram(0, &d));
            }
        }
    }

    #[test]
    fn sessions_are_isolated() {
        let mut host = host();
        let mut a = client("a", 1);
        let mut b = client("a", 2);
        let start_a = a.start(0);
        let start_b = b.start(0);
        // only the handshakes and window 0: withhold the tokens for now
        let window0 = |host: &mut ServerHost<u8>, peer, start: Vec<Vec<u8>>| -> Vec<Vec<u8>> {
            start
                .iter()
                .flat_map(|d| host.handle_datagram(0, peer, d))
                .map(|(_, bytes)| bytes)
                .collect()
        };
        let to_a = window0(&mut host, 1, start_a);
        let to_b = window0(&mut host, 2, start_b);
        to_a.iter().for_each(|d| drop(a.handle_datagram(0, d)));
        to_b.iter().for_each(|d| drop(b.handle_datagram(0, d)));
        let (sid_a, sid_b) = (
            a.session().session_id().unwrap(),
            b.session().session_id().unwrap(),
        );
        assert_ne!(sid_a, sid_b);

        // a's genuine token presented inside b's session
        let stolen = a.session().genuine_tokens(1)[0];
        let forged = encode(&Packet::new(sid_b, Message::AckToken(stolen))).unwrap();
        let replies = host.handle_datagram(1, 2, &forged);
        let halt = decode(&replies[0].1).unwrap();
        assert_eq!(
            halt.message,
            Message::Halt {
                reason: HaltReason::TokenInvalid
            }
        );
        assert_eq!(halt.session_id, sid_b);

        // a is unaffected and can still complete
        let own = encode(&Packet::new(sid_a, Message::AckToken(stolen))).unwrap();
        exchange(&mut host, 1, &mut a, vec![own]);
        assert!(a.is_finished());
        assert_eq!(a.report().outcome, crate::wire::Outcome::Done);
        assert_eq!(a.sink(), &vec![1u8; 5000]);
    }

    #[test]
    fn not_found_keeps_no_state() {
        let mut host = host();
        let mut c = client("missing", 3);
        let start = c.start(0);
        exchange(&mut host, 9, &mut c, start);
        assert_eq!(host.active_sessions().count(), 0);
        assert_eq!(host.next_deadline(), None);
        assert_eq!(
            c.report().outcome,
            crate::wire::Outcome::Aborted(crate::wire::AbortReason::NotFound)
        );
    }

    #[test]
    fn routing_requires_matching_peer() {
        let mut host = host();
        let mut c = client("a", 4);
        let start = c.start(0);
        let replies: Vec<_> = start
            .iter()
            .flat_map(|d| host.handle_datagram(0, 1, d))
            .collect();
        replies
            .iter()
            .for_each(|(_, d)| drop(c.handle_datagram(0, d)));
        let sid = c.session().session_id().unwrap();
        let token = c.session().genuine_tokens(1)[0];
        let datagram = encode(&Packet::new(sid, Message::AckToken(token))).unwrap();
        assert!(host.handle_datagram(0, 2, &datagram).is_empty());
        assert_eq!(host.stats().unroutable, 1);
        assert!(!host.handle_datagram(0, 1, &datagram).is_empty());
    }

    #[test]
    fn hello_must_use_session_zero() {
        let mut host = host();
        let mut c = client("a", 5);
        let mut hello = decode(&c.start(0)[0]).unwrap();
        hello.session_id = 3;
        assert!(host
            .handle_datagram(0, 1, &encode(&hello).unwrap())
            .is_empty());
        assert_eq!(host.stats().sessions_opened, 0);
    }

    #[test]
    fn garbage_counted() {
        let mut host = host();
        assert!(host.handle_datagram(0, 1, b"hello").is_empty());
        assert_eq!(host.stats().decode_errors, 1);
    }

    #[test]
    fn timers_fire_and_sessions_close() {
        let mut host = host();
        let mut c = client("a", 6);
        let start = c.start(0);
        for d in &start {
            host.handle_datagram(0, 1, d);
        }
        assert_eq!(host.next_deadline(), Some(2000));
        let mut t = 0;
        while let Some(deadline) = host.next_deadline() {
            t = deadline;
            host.handle_timeout(t);
        }
        // three pokes, the halt, then the linger period
        assert_eq!(t, 4 * 2000 + 8000);
        assert_eq!(host.active_sessions().count(), 0);
        let closed = &host.closed_sessions()[0];
        assert_eq!(
            closed.state,
            ServerState::Halted {
                reason: HaltReason::TokenTimeout
            }
        );
        assert_eq!(closed.stats.pokes, 3);
    }

    #[test]
    fn session_table_limit() {
        let mut host = host().with_max_sessions(1);
        for seed in 0..2 {
            let mut c = client("a", 10 + seed);
            for d in c.start(0) {
                host.handle_datagram(0, seed as u8, &d);
            }
        }
        assert_eq!(host.active_sessions().count(), 1);
    }
}
