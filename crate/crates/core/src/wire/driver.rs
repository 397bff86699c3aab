//! Timer and sink bookkeeping around a [`ClientSession`].

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use tracing::{debug, warn};

use super::client::{
    AbortReason, ClientAction, ClientEvent, ClientSession, ClientState, ClientTimer,
};
use super::codec::{decode, encode, HaltReason};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    Done,
    Halted(HaltReason),
    Aborted(AbortReason),
    /// The fetch has not reached a terminal state.
    Incomplete,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Done => f.write_str("done"),
            Self::Halted(reason) => write!(f, "halted({reason})"),
            Self::Aborted(reason) => write!(f, "aborted({reason})"),
            Self::Incomplete => f.write_str("incomplete"),
        }
    }
}

/// Summary of one fetch (or attack) from the client's point of view.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FetchReport {
    pub outcome: Outcome,
    pub session_id: Option<u64>,
    pub content_length: Option<u64>,
    /// Content bytes one window carries (`window_size * chunk_size`).
    pub window_bytes: Option<u64>,
    pub bytes_received: u64,
    pub chunks_received: u64,
    pub chunks_retransmitted: u64,
    pub crc_failures: u64,
    pub nacks_sent: u64,
    pub tokens_sent: u64,
    pub hellos_sent: u64,
    pub duration_ms: u64,
}

impl FetchReport {
    /// One `key=value` per line.
    pub fn to_kv_lines(&self) -> String {
        let opt = |v: Option<u64>| v.map_or_else(|| "-".to_string(), |v| v.to_string());
        let mut s = String::new();
        s += &format!("outcome={}\n", self.outcome);
        s += &format!(
            "session_id={}\n",
            self.session_id
                .map_or_else(|| "-".into(), |v| format!("{v:016x}"))
        );
        s += &format!("content_length={}\n", opt(self.content_length));
        s += &format!("window_bytes={}\n", opt(self.window_bytes));
        s += &format!("bytes_received={}\n", self.bytes_received);
        s += &format!("chunks_received={}\n", self.chunks_received);
        s += &format!("chunks_retransmitted={}\n", self.chunks_retransmitted);
        s += &format!("crc_failures={}\n", self.crc_failures);
        s += &format!("nacks_sent={}\n", self.nacks_sent);
        s += &format!("tokens_sent={}\n", self.tokens_sent);
        s += &format!("hellos_sent={}\n", self.hellos_sent);
        s += &format!("duration_ms={}\n", self.duration_ms);
        s
    }
}

pub struct ClientDriver<W> {
    session: ClientSession,
    timers: BTreeMap<ClientTimer, u64>,
    sink: W,
    started_at: Option<u64>,
    finished_at: Option<u64>,
}

impl<W: Write> ClientDriver<W> {
    pub fn new(session: ClientSession, sink: W) -> Self {
        Self {
            session,
            timers: BTreeMap::new(),
            sink,
            started_at: None,
            finished_at: None,
        }
    }

    pub fn session(&self) -> &ClientSession {
        &self.session
    }

    pub fn sink(&self) -> &W {
        &self.sink
    }

    pub fn into_sink(self) -> W {
        self.sink
    }

    pub fn is_finished(&self) -> bool {
        self.session.state().is_terminal()
    }

    pub fn start(&mut self, now: u64) -> Vec<Vec<u8>> {
        self.started_at.get_or_insert(now);
        self.run(now, ClientEvent::Start)
    }

    pub fn handle_datagram(&mut self, now: u64, datagram: &[u8]) -> Vec<Vec<u8>> {
        match decode(datagram) {
            Ok(packet) => self.run(now, ClientEvent::Received(packet)),
            Err(err) => {
                debug!(%err, "client dropping undecodable datagram");
                Vec::new()
            }
        }
    }

    pub fn next_deadline(&self) -> Option<u64> {
        self.timers.values().copied().min()
    }

    pub fn handle_timeout(&mut self, now: u64) -> Vec<Vec<u8>> {
        let mut out = Vec::new();
        while let Some((&timer, _)) = self
            .timers
            .iter()
            .filter(|(_, d)| **d <= now)
            .min_by_key(|(t, d)| (**d, **t))
        {
            self.timers.remove(&timer);
            out.extend(self.run(now, ClientEvent::Timer(timer)));
        }
        out
    }

    fn run(&mut self, now: u64, event: ClientEvent) -> Vec<Vec<u8>> {
        let actions = self.session.step(event);
        let out = self.apply(now, actions);
        if self.is_finished() {
            self.finished_at.get_or_insert(now);
            let _ = self.sink.flush();
        }
        out
    }

    fn apply(&mut self, now: u64, actions: Vec<ClientAction>) -> Vec<Vec<u8>> {
        let mut out = Vec::new();
        let mut pending = actions;
        while !pending.is_empty() {
            let mut follow_up = Vec::new();
            for action in pending {
                match action {
                    ClientAction::Send(packet) => match encode(&packet) {
                        Ok(bytes) => out.push(bytes),
                        Err(err) => warn!(%err, "failed to encode client packet"),
                    },
                    ClientAction::Arm { timer, after_ms } => {
                        self.timers
                            .insert(timer, now.saturating_add(after_ms.max(1)));
                    }
                    ClientAction::Cancel(timer) => {
                        self.timers.remove(&timer);
                    }
                    ClientAction::Deliver(bytes) => {
                        if let Err(err) = self.sink.write_all(&bytes) {
                            warn!(%err, "output sink failed");
                            follow_up.extend(self.session.abort(AbortReason::Internal));
                        }
                    }
                }
            }
            pending = follow_up;
        }
        out
    }

    pub fn report(&self) -> FetchReport {
        let stats = self.session.stats();
        let outcome = match self.session.state() {
            ClientState::Done => Outcome::Done,
            ClientState::Aborted {
                reason: AbortReason::Halted(reason),
            } => Outcome::Halted(*reason),
            ClientState::Aborted { reason } => Outcome::Aborted(*reason),
            _ => Outcome::Incomplete,
        };
        let end = self.finished_at.or(self.started_at).unwrap_or(0);
        FetchReport {
            outcome,
            session_id: self.session.session_id(),
            content_length: self.session.metafile().map(|m| m.content_length),
            window_bytes: self
                .session
                .metafile()
                .map(|m| m.window_size as u64 * m.chunk_size as u64),
            bytes_received: stats.bytes_received,
            chunks_received: stats.chunks_received,
            chunks_retransmitted: stats.chunks_retransmitted,
            crc_failures: stats.crc_failures,
            nacks_sent: stats.nacks_sent,
            tokens_sent: stats.tokens_sent,
            hellos_sent: stats.hellos_sent,
            duration_ms: end.saturating_sub(self.started_at.unwrap_or(end)),
        }
    }
}
