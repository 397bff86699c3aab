//! Server side of a streaming session as a pure transition function.
//!
//! [`ServerSession::step`] consumes one event and returns the actions to
//! perform; it owns no socket and no clock. Timers are named and re-armed
//! through actions, so the same machine runs under the simulator's virtual
//! clock and under a real UDP driver.
//!
//! Gating: chunks of window `w + 1` are only produced by the transition that
//! accepts the token for window `w`. Retransmissions (Nack, poke) are
//! restricted to the current window.

use std::collections::BTreeSet;
use std::sync::Arc;

use num_bigint::BigUint;
use tracing::{debug, info};

use super::codec::{
    HaltReason, HelloStatus, Message, Packet, HEADER_LEN, MAX_CHUNK_PAYLOAD, MAX_DATAGRAM,
};
use super::content::ContentCatalog;
use super::metafile::{build_metafile_with_digest, SessionMetafile};
use crate::crypto::{dh_keygen, dh_shared, encrypt_bytes, to_be_fixed, DhParams, RsaPublicKey};
use crate::token::{Rejection, TokenNonce, TokenVerifier};

/// Metafile message overhead after the header: three u16 counters.
const METAFILE_OVERHEAD: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionConfig {
    pub chunk_size: u16,
    pub window_size: u16,
    pub token_timeout_ms: u64,
    pub max_pokes: u32,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            chunk_size: 1024,
            window_size: 32,
            token_timeout_ms: 2000,
            max_pokes: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("chunk_size must be in 1..={MAX_CHUNK_PAYLOAD}, got {0}")]
    ChunkSize(u16),
    #[error("window_size must be at least 1")]
    WindowSize,
    #[error("token timeout must be at least 1 ms")]
    Timeout,
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.chunk_size == 0 || self.chunk_size as usize > MAX_CHUNK_PAYLOAD {
            return Err(ConfigError::ChunkSize(self.chunk_size));
        }
        if self.window_size == 0 {
            return Err(ConfigError::WindowSize);
        }
        if self.token_timeout_ms == 0 {
            return Err(ConfigError::Timeout);
        }
        Ok(())
    }

    /// How long a finished or halted session keeps answering stragglers.
    pub fn linger_ms(&self) -> u64 {
        self.token_timeout_ms
            .saturating_mul(self.max_pokes as u64 + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ServerState {
    AwaitHello,
    SentMetafile,
    StreamingWindow {
        window: u32,
        outstanding: BTreeSet<u32>,
    },
    AwaitToken {
        window: u32,
        pokes_sent: u32,
    },
    Finished,
    Halted {
        reason: HaltReason,
    },
    /// Hello was unusable (unknown content or bad keys); nothing retained.
    Rejected,
}

impl ServerState {
    pub fn is_terminal(&self) -> bool {
        matches!(self, Self::Finished | Self::Halted { .. } | Self::Rejected)
    }

    fn label(&self) -> String {
        match self {
            Self::AwaitHello => "await_hello".into(),
            Self::SentMetafile => "sent_metafile".into(),
            Self::StreamingWindow { window, .. } => format!("streaming_window({window})"),
            Self::AwaitToken { window, pokes_sent } => {
                format!("await_token({window},pokes={pokes_sent})")
            }
            Self::Finished => "finished".into(),
            Self::Halted { reason } => format!("halted({reason})"),
            Self::Rejected => "rejected".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ServerTimer {
    Token,
    Linger,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ServerEvent {
    Received(Message),
    Timer(ServerTimer),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ServerAction {
    Send(Packet),
    Arm {
        timer: ServerTimer,
        after_ms: u64,
    },
    Cancel(ServerTimer),
    /// Session can be discarded.
    Close,
}

/// Per-session randomness, drawn by whoever allocates the session.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SessionSeeds {
    pub dh_seed: u64,
    pub token_nonce: TokenNonce,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ServerSessionStats {
    pub chunks_sent: u64,
    pub chunks_retransmitted: u64,
    pub pokes: u64,
    pub tokens_accepted: u32,
    /// Highest chunk sequence number ever emitted.
    pub max_seq_sent: Option<u32>,
}

struct Streaming {
    content: Arc<super::content::Content>,
    metafile: SessionMetafile,
    verifier: TokenVerifier,
}

pub struct ServerSession {
    id: u64,
    config: SessionConfig,
    params: Arc<DhParams>,
    catalog: Arc<dyn ContentCatalog>,
    seeds: SessionSeeds,
    state: ServerState,
    streaming: Option<Streaming>,
    stats: ServerSessionStats,
}

impl std::fmt::Debug for ServerSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ServerSession")
            .field("id", &self.id)
            .field("state", &self.state)
            .finish_non_exhaustive()
    }
}

impl ServerSession {
    pub fn new(
        id: u64,
        seeds: SessionSeeds,
        config: SessionConfig,
        params: Arc<DhParams>,
        catalog: Arc<dyn ContentCatalog>,
    ) -> Self {
        Self {
            id,
            config,
            params,
            catalog,
            seeds,
            state: ServerState::AwaitHello,
            streaming: None,
            stats: ServerSessionStats::default(),
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn state(&self) -> &ServerState {
        &self.state
    }

    pub fn stats(&self) -> ServerSessionStats {
        self.stats
    }

    pub fn metafile(&self) -> Option<&SessionMetafile> {
        self.streaming.as_ref().map(|s| &s.metafile)
    }

    /// Windows whose tokens have been accepted, always a prefix `0..k`.
    pub fn accepted_windows(&self) -> u32 {
        self.streaming
            .as_ref()
            .map_or(0, |s| s.verifier.accepted_count())
    }

    pub fn step(&mut self, event: ServerEvent) -> Vec<ServerAction> {
        let mut out = Vec::new();
        match (self.state.clone(), event) {
            (ServerState::AwaitHello, ServerEvent::Received(msg @ Message::Hello { .. })) => {
                self.on_hello(msg, &mut out);
            }
            (
                ServerState::AwaitToken { window, .. },
                ServerEvent::Received(Message::AckToken(token)),
            ) => {
                let streaming = self.streaming.as_mut().expect("streaming state present");
                match streaming.verifier.verify(&token) {
                    Ok(()) => {
                        self.stats.tokens_accepted += 1;
                        out.push(ServerAction::Cancel(ServerTimer::Token));
                        if window + 1 >= streaming.metafile.window_count() {
                            self.finish(&mut out);
                        } else {
                            self.stream_window(window + 1, &mut out);
                        }
                    }
                    Err(Rejection::Invalid) => self.halt(HaltReason::TokenInvalid, &mut out),
                    Err(Rejection::Replay) => self.halt(HaltReason::Replay, &mut out),
                }
            }
            (
                ServerState::AwaitToken { window, .. },
                ServerEvent::Received(Message::Nack { missing_seqs }),
            ) => {
                let streaming = self.streaming.as_ref().expect("streaming state present");
                let current = streaming.metafile.window_seqs(window);
                let wanted: BTreeSet<u32> = missing_seqs
                    .into_iter()
                    .filter(|s| current.contains(s))
                    .collect();
                for seq in wanted {
                    self.stats.chunks_retransmitted += 1;
                    self.send_chunk(seq, &mut out);
                }
            }
            (
                ServerState::AwaitToken { window, pokes_sent },
                ServerEvent::Timer(ServerTimer::Token),
            ) => {
                if pokes_sent < self.config.max_pokes {
                    let last = self
                        .streaming
                        .as_ref()
                        .expect("streaming")
                        .metafile
                        .window_seqs(window)
                        .end
                        - 1;
                    self.stats.pokes += 1;
                    self.send_chunk(last, &mut out);
                    self.transition(ServerState::AwaitToken {
                        window,
                        pokes_sent: pokes_sent + 1,
                    });
                    out.push(ServerAction::Arm {
                        timer: ServerTimer::Token,
                        after_ms: self.config.token_timeout_ms,
                    });
                } else {
                    self.halt(HaltReason::TokenTimeout, &mut out);
                }
            }
            (ServerState::Finished, ServerEvent::Received(Message::AckToken(token))) => {
                // a lost Fin makes the client repeat its final token
                let streaming = self.streaming.as_mut().expect("finished after streaming");
                let last = streaming.metafile.window_count().checked_sub(1);
                if Some(token.window_index) == last
                    && streaming.verifier.verify(&token) == Err(Rejection::Replay)
                {
                    let content_sha256 = streaming.metafile.content_sha256;
                    out.push(self.packet(Message::Fin { content_sha256 }));
                }
            }
            (ServerState::Halted { reason }, ServerEvent::Received(msg)) => {
                debug!(session_id = self.id, kind = ?msg.message_type(), "repeating halt");
                out.push(self.packet(Message::Halt { reason }));
            }
            (state, ServerEvent::Timer(ServerTimer::Linger)) if state.is_terminal() => {
                out.push(ServerAction::Close);
            }
            (state, event) => {
                debug!(session_id = self.id, state = %state.label(), ?event, "ignored event");
            }
        }
        out
    }

    fn packet(&self, message: Message) -> ServerAction {
        ServerAction::Send(Packet::new(self.id, message))
    }

    fn transition(&mut self, to: ServerState) {
        debug!(session_id = self.id, from = %self.state.label(), to = %to.label(), "transition");
        self.state = to;
    }

    fn reject(&mut self, why: &str, out: &mut Vec<ServerAction>) {
        info!(session_id = self.id, reason = why, "hello rejected");
        self.transition(ServerState::Rejected);
        out.push(ServerAction::Close);
    }

    fn on_hello(&mut self, hello: Message, out: &mut Vec<ServerAction>) {
        let Message::Hello {
            content_name,
            dh_public,
            rsa_n,
            rsa_e,
        } = hello
        else {
            unreachable!("caller matched Hello");
        };
        let Ok(rsa) = RsaPublicKey::new(rsa_n, rsa_e) else {
            return self.reject("bad rsa key", out);
        };
        if rsa.block_capacity() < 3
            || rsa.modulus_len() + 2 + METAFILE_OVERHEAD + HEADER_LEN > MAX_DATAGRAM
        {
            return self.reject("rsa modulus size unusable", out);
        }
        if !self.params.is_valid_public(&dh_public) {
            return self.reject("bad dh public value", out);
        }
        let Some(content) = self.catalog.lookup(&content_name) else {
            out.push(self.packet(Message::HelloReply {
                dh_public: BigUint::default(),
                status: HelloStatus::NotFound,
            }));
            return self.reject("content not found", out);
        };
        let metafile = match build_metafile_with_digest(
            content.len() as u64,
            *content.sha256(),
            self.config.chunk_size,
            self.config.window_size,
            self.seeds.token_nonce,
        ) {
            Ok(m) => m,
            Err(err) => return self.reject(&err.to_string(), out),
        };
        let own = dh_keygen(&self.params, self.seeds.dh_seed);
        let secret = dh_shared(&own, &dh_public, &self.params).expect("peer public validated");
        let blocks = match encrypt_bytes(&metafile.to_bytes(), &rsa) {
            Ok(blocks) => blocks,
            Err(err) => return self.reject(&err.to_string(), out),
        };
        let width = rsa.modulus_len();
        let blocks: Vec<Vec<u8>> = blocks
            .iter()
            .map(|c| to_be_fixed(c, width).expect("ciphertext below modulus"))
            .collect();

        out.push(self.packet(Message::HelloReply {
            dh_public: own.public().clone(),
            status: HelloStatus::Ok,
        }));
        let per_message = (MAX_DATAGRAM - HEADER_LEN - METAFILE_OVERHEAD) / (width + 2);
        let total_blocks = blocks.len() as u16;
        for (i, group) in blocks.chunks(per_message).enumerate() {
            out.push(self.packet(Message::Metafile {
                total_blocks,
                first_block: (i * per_message) as u16,
                blocks: group.to_vec(),
            }));
        }
        info!(session_id = self.id, content = %content_name, chunks = metafile.total_chunks, "session opened");
        self.streaming = Some(Streaming {
            content,
            metafile,
            verifier: TokenVerifier::new(secret, self.seeds.token_nonce),
        });
        self.transition(ServerState::SentMetafile);
        if self.streaming.as_ref().unwrap().metafile.total_chunks == 0 {
            self.finish(out);
        } else {
            self.stream_window(0, out);
        }
    }

    fn stream_window(&mut self, window: u32, out: &mut Vec<ServerAction>) {
        let seqs = self
            .streaming
            .as_ref()
            .expect("streaming")
            .metafile
            .window_seqs(window);
        self.transition(ServerState::StreamingWindow {
            window,
            outstanding: seqs.clone().collect(),
        });
        for seq in seqs {
            self.send_chunk(seq, out);
        }
        self.transition(ServerState::AwaitToken {
            window,
            pokes_sent: 0,
        });
        out.push(ServerAction::Arm {
            timer: ServerTimer::Token,
            after_ms: self.config.token_timeout_ms,
        });
    }

    fn send_chunk(&mut self, seq: u32, out: &mut Vec<ServerAction>) {
        let streaming = self.streaming.as_ref().expect("streaming");
        let range = streaming.metafile.chunk_range(seq);
        let payload = streaming.content.bytes()[range.start as usize..range.end as usize].to_vec();
        self.stats.chunks_sent += 1;
        self.stats.max_seq_sent = Some(self.stats.max_seq_sent.map_or(seq, |m| m.max(seq)));
        out.push(self.packet(Message::chunk(seq, payload)));
    }

    fn finish(&mut self, out: &mut Vec<ServerAction>) {
        let digest = self
            .streaming
            .as_ref()
            .expect("streaming")
            .metafile
            .content_sha256;
        out.push(self.packet(Message::Fin {
            content_sha256: digest,
        }));
        self.transition(ServerState::Finished);
        info!(session_id = self.id, "session finished");
        out.push(ServerAction::Arm {
            timer: ServerTimer::Linger,
            after_ms: self.config.linger_ms(),
        });
    }

    fn halt(&mut self, reason: HaltReason, out: &mut Vec<ServerAction>) {
        info!(session_id = self.id, %reason, "halting session");
        out.push(self.packet(Message::Halt { reason }));
        self.transition(ServerState::Halted { reason });
        out.push(ServerAction::Cancel(ServerTimer::Token));
        out.push(ServerAction::Arm {
            timer: ServerTimer::Linger,
            after_ms: self.config.linger_ms(),
        });
    }
}
