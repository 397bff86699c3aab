//! Client side of a streaming session.
//!
//! The client holds the RSA key pair the metafile is encrypted to, agrees a
//! DH secret with the server and returns one ack token per completed window.
//! [`TokenPolicy`] swaps the honest token behaviour for the attacker models
//! used in tests and by the `attack` command.
//!
//! Recovery rules, all driven by timers the caller arms:
//! - Hello is repeated until a handshake completes (each repeat opens a
//!   fresh server session; the first one to complete wins).
//! - A stalled window is Nacked after the gap timer.
//! - A token is repeated when the server pokes with the window's last chunk,
//!   and the final token is repeated until Fin arrives.

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigUint;
use sha2::{Digest, Sha256};
use tracing::{debug, info};

use super::codec::{
    chunk_crc, HaltReason, HelloStatus, Message, Packet, MAX_CHUNK_PAYLOAD, MAX_NACK_SEQS,
};
use super::metafile::SessionMetafile;
use crate::crypto::{decrypt_bytes, dh_shared, DhKeyPair, DhParams, RsaKeyPair, SharedSecret};
use crate::token::{derive_token, AckToken};

/// Metafile ciphertext blocks a client is willing to collect.
const MAX_METAFILE_BLOCKS: u16 = 64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientConfig {
    pub rsa_bits: u64,
    pub hello_retry_ms: u64,
    pub max_hello_attempts: u32,
    pub gap_ms: u64,
    pub final_retry_ms: u64,
    /// Silence from the session's server after which the fetch is abandoned.
    pub idle_timeout_ms: u64,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            rsa_bits: 512,
            hello_retry_ms: 1000,
            max_hello_attempts: 5,
            gap_ms: 250,
            final_retry_ms: 1000,
            idle_timeout_ms: 10_000,
        }
    }
}

/// What the client does when a window completes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenPolicy {
    /// Derive and send the genuine token.
    Honest,
    /// Never send a token.
    Withhold,
    /// Send tokens captured from an earlier session instead of deriving them.
    Replay(Vec<AckToken>),
    /// Honest for window 0, then present window 0's token again.
    ReplayOwn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AbortReason {
    Halted(HaltReason),
    NotFound,
    Timeout,
    Internal,
}

impl std::fmt::Display for AbortReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Halted(reason) => write!(f, "halted({reason})"),
            Self::NotFound => f.write_str("not_found"),
            Self::Timeout => f.write_str("timeout"),
            Self::Internal => f.write_str("internal"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClientState {
    Idle,
    SentHello,
    AwaitMetafile,
    Receiving {
        window: u32,
        received: BTreeSet<u32>,
    },
    SentToken {
        window: u32,
    },
    /// Empty content: nothing to receive but Fin.
    AwaitFin,
    Done,
    Aborted {
        reason: AbortReason,
    },
}

impl ClientState {
    pub fn is_terminal(&self) -> bool {
        matches!(self, Self::Done | Self::Aborted { .. })
    }

    fn label(&self) -> String {
        match self {
            Self::Idle => "idle".into(),
            Self::SentHello => "sent_hello".into(),
            Self::AwaitMetafile => "await_metafile".into(),
            Self::Receiving { window, received } => {
                format!("receiving({window},{})", received.len())
            }
            Self::SentToken { window } => format!("sent_token({window})"),
            Self::AwaitFin => "await_fin".into(),
            Self::Done => "done".into(),
            Self::Aborted { reason } => format!("aborted({reason})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ClientTimer {
    HelloRetry,
    Gap,
    FinalRetry,
    Idle,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClientEvent {
    Start,
    Received(Packet),
    Timer(ClientTimer),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClientAction {
    Send(Packet),
    Arm {
        timer: ClientTimer,
        after_ms: u64,
    },
    Cancel(ClientTimer),
    /// Next contiguous run of content bytes, in order.
    Deliver(Vec<u8>),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClientStats {
    /// Payload bytes of distinct valid chunks.
    pub bytes_received: u64,
    pub chunks_received: u64,
    /// Chunks that arrived after being listed in a Nack.
    pub chunks_retransmitted: u64,
    pub crc_failures: u64,
    pub nacks_sent: u64,
    pub tokens_sent: u64,
    pub hellos_sent: u64,
}

#[derive(Debug, Default)]
struct PendingHandshake {
    dh_public: Option<BigUint>,
    total_blocks: Option<u16>,
    blocks: BTreeMap<u16, Vec<u8>>,
}

impl PendingHandshake {
    fn complete(&self) -> bool {
        self.dh_public.is_some()
            && self
                .total_blocks
                .is_some_and(|t| self.blocks.len() == t as usize)
    }
}

struct Active {
    session_id: u64,
    metafile: SessionMetafile,
    secret: SharedSecret,
    window_data: BTreeMap<u32, Vec<u8>>,
    nacked: BTreeSet<u32>,
    hasher: Sha256,
}

pub struct ClientSession {
    content_name: String,
    config: ClientConfig,
    params: DhParams,
    rsa: RsaKeyPair,
    dh: DhKeyPair,
    policy: TokenPolicy,
    state: ClientState,
    pending: BTreeMap<u64, PendingHandshake>,
    active: Option<Active>,
    hello_attempts: u32,
    stats: ClientStats,
}

impl std::fmt::Debug for ClientSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ClientSession")
            .field("content_name", &self.content_name)
            .field("state", &self.state)
            .finish_non_exhaustive()
    }
}

impl ClientSession {
    /// Generates the session's RSA key pair; expensive at real key sizes.
    pub fn new(
        content_name: impl Into<String>,
        config: ClientConfig,
        params: DhParams,
        policy: TokenPolicy,
        seed: u64,
    ) -> Result<Self, crate::crypto::CryptoError> {
        let rsa = RsaKeyPair::generate(config.rsa_bits, seed)?;
        let dh = crate::crypto::dh_keygen(&params, seed ^ 0x9e37_79b9_7f4a_7c15);
        Ok(Self::with_keys(
            content_name,
            config,
            params,
            policy,
            rsa,
            dh,
        ))
    }

    pub fn with_keys(
        content_name: impl Into<String>,
        config: ClientConfig,
        params: DhParams,
        policy: TokenPolicy,
        rsa: RsaKeyPair,
        dh: DhKeyPair,
    ) -> Self {
        Self {
            content_name: content_name.into(),
            config,
            params,
            rsa,
            dh,
            policy,
            state: ClientState::Idle,
            pending: BTreeMap::new(),
            active: None,
            hello_attempts: 0,
            stats: ClientStats::default(),
        }
    }

    pub fn state(&self) -> &ClientState {
        &self.state
    }

    pub fn stats(&self) -> ClientStats {
        self.stats
    }

    pub fn session_id(&self) -> Option<u64> {
        self.active.as_ref().map(|a| a.session_id)
    }

    pub fn metafile(&self) -> Option<&SessionMetafile> {
        self.active.as_ref().map(|a| &a.metafile)
    }

    /// Tokens this session would present for windows `0..count`; what a
    /// passive observer of an honest session could capture.
    pub fn genuine_tokens(&self, count: u32) -> Vec<AckToken> {
        self.active
            .as_ref()
            .map(|a| {
                (0..count)
                    .map(|w| derive_token(&a.secret, &a.metafile.token_nonce, w))
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Marks the fetch failed from outside, e.g. when the output sink fails.
    pub fn abort(&mut self, reason: AbortReason) -> Vec<ClientAction> {
        let mut out = Vec::new();
        if !self.state.is_terminal() {
            self.terminate(ClientState::Aborted { reason }, &mut out);
        }
        out
    }

    pub fn step(&mut self, event: ClientEvent) -> Vec<ClientAction> {
        let mut out = Vec::new();
        if self.state.is_terminal() {
            return out;
        }
        match event {
            ClientEvent::Start => {
                if self.state == ClientState::Idle {
                    self.send_hello(&mut out);
                    self.transition(ClientState::SentHello);
                    self.arm_idle(&mut out);
                }
            }
            ClientEvent::Received(packet) => self.on_packet(packet, &mut out),
            ClientEvent::Timer(timer) => self.on_timer(timer, &mut out),
        }
        out
    }

    fn transition(&mut self, to: ClientState) {
        debug!(session_id = ?self.session_id(), from = %self.state.label(), to = %to.label(), "client transition");
        self.state = to;
    }

    fn terminate(&mut self, to: ClientState, out: &mut Vec<ClientAction>) {
        info!(session_id = ?self.session_id(), outcome = %to.label(), "fetch finished");
        self.transition(to);
        for timer in [
            ClientTimer::HelloRetry,
            ClientTimer::Gap,
            ClientTimer::FinalRetry,
            ClientTimer::Idle,
        ] {
            out.push(ClientAction::Cancel(timer));
        }
    }

    fn arm_idle(&self, out: &mut Vec<ClientAction>) {
        out.push(ClientAction::Arm {
            timer: ClientTimer::Idle,
            after_ms: self.config.idle_timeout_ms,
        });
    }

    fn send(&self, session_id: u64, message: Message, out: &mut Vec<ClientAction>) {
        out.push(ClientAction::Send(Packet::new(session_id, message)));
    }

    fn send_hello(&mut self, out: &mut Vec<ClientAction>) {
        self.hello_attempts += 1;
        self.stats.hellos_sent += 1;
        let hello = Message::Hello {
            content_name: self.content_name.clone(),
            dh_public: self.dh.public().clone(),
            rsa_n: self.rsa.n().clone(),
            rsa_e: self.rsa.e().clone(),
        };
        self.send(0, hello, out);
        out.push(ClientAction::Arm {
            timer: ClientTimer::HelloRetry,
            after_ms: self.config.hello_retry_ms,
        });
    }

    fn handshaking(&self) -> bool {
        matches!(
            self.state,
            ClientState::SentHello | ClientState::AwaitMetafile | ClientState::AwaitFin
        )
    }

    fn on_packet(&mut self, packet: Packet, out: &mut Vec<ClientAction>) {
        let sid = packet.session_id;
        let from_active = self.active.as_ref().is_some_and(|a| a.session_id == sid);
        match packet.message {
            Message::HelloReply { dh_public, status } if self.handshaking() && !from_active => {
                if status == HelloStatus::NotFound {
                    return self.terminate(
                        ClientState::Aborted {
                            reason: AbortReason::NotFound,
                        },
                        out,
                    );
                }
                if !self.params.is_valid_public(&dh_public) {
                    debug!(
                        session_id = sid,
                        "ignoring hello reply with invalid dh value"
                    );
                    return;
                }
                self.pending.entry(sid).or_default().dh_public = Some(dh_public);
                if self.state == ClientState::SentHello {
                    self.transition(ClientState::AwaitMetafile);
                }
                self.try_activate(sid, out);
            }
            Message::Metafile {
                total_blocks,
                first_block,
                blocks,
            } if self.handshaking() && !from_active => {
                if total_blocks == 0 || total_blocks > MAX_METAFILE_BLOCKS {
                    return;
                }
                let entry = self.pending.entry(sid).or_default();
                if *entry.total_blocks.get_or_insert(total_blocks) != total_blocks {
                    return;
                }
                for (i, block) in blocks.into_iter().enumerate() {
                    entry.blocks.insert(first_block + i as u16, block);
                }
                self.try_activate(sid, out);
            }
            _ if !from_active => {
                debug!(session_id = sid, "ignoring packet from inactive session");
            }
            Message::Chunk {
                seq,
                payload,
                crc32,
            } => {
                self.arm_idle(out);
                self.on_chunk(seq, payload, crc32, out);
            }
            Message::Fin { content_sha256 } => {
                if matches!(self.state, ClientState::AwaitFin)
                    || matches!(self.state, ClientState::SentToken { window } if self.is_last_window(window))
                {
                    let active = self.active.as_mut().expect("from active");
                    let digest: [u8; 32] = active.hasher.clone().finalize().into();
                    if digest == active.metafile.content_sha256 && digest == content_sha256 {
                        self.terminate(ClientState::Done, out);
                    } else {
                        self.terminate(
                            ClientState::Aborted {
                                reason: AbortReason::Internal,
                            },
                            out,
                        );
                    }
                }
            }
            Message::Halt { reason } => {
                self.terminate(
                    ClientState::Aborted {
                        reason: AbortReason::Halted(reason),
                    },
                    out,
                );
            }
            other => debug!(session_id = sid, kind = ?other.message_type(), "unexpected message"),
        }
    }

    fn try_activate(&mut self, sid: u64, out: &mut Vec<ClientAction>) {
        if !self
            .pending
            .get(&sid)
            .is_some_and(PendingHandshake::complete)
        {
            return;
        }
        let pending = self.pending.remove(&sid).expect("checked");
        let ciphertexts: Vec<BigUint> = pending
            .blocks
            .values()
            .map(|b| BigUint::from_bytes_be(b))
            .collect();
        let metafile = decrypt_bytes(&ciphertexts, &self.rsa)
            .ok()
            .and_then(|bytes| SessionMetafile::from_bytes(&bytes).ok())
            .filter(|m| m.chunk_size as usize <= MAX_CHUNK_PAYLOAD);
        let Some(metafile) = metafile else {
            return self.terminate(
                ClientState::Aborted {
                    reason: AbortReason::Internal,
                },
                out,
            );
        };
        let peer_public = pending.dh_public.expect("complete");
        let secret = dh_shared(&self.dh, &peer_public, &self.params).expect("validated on receipt");
        let empty = metafile.total_chunks == 0;
        self.active = Some(Active {
            session_id: sid,
            metafile,
            secret,
            window_data: BTreeMap::new(),
            nacked: BTreeSet::new(),
            hasher: Sha256::new(),
        });
        info!(session_id = sid, "handshake complete");
        self.arm_idle(out);
        if empty {
            // Fin may be lost; keep re-handshaking until one arrives
            self.transition(ClientState::AwaitFin);
        } else {
            out.push(ClientAction::Cancel(ClientTimer::HelloRetry));
            self.pending.clear();
            self.enter_window(0, out);
        }
    }

    fn enter_window(&mut self, window: u32, out: &mut Vec<ClientAction>) {
        self.transition(ClientState::Receiving {
            window,
            received: BTreeSet::new(),
        });
        out.push(ClientAction::Arm {
            timer: ClientTimer::Gap,
            after_ms: self.config.gap_ms,
        });
    }

    fn is_last_window(&self, window: u32) -> bool {
        self.active
            .as_ref()
            .is_some_and(|a| window + 1 == a.metafile.window_count())
    }

    fn on_chunk(&mut self, seq: u32, payload: Vec<u8>, crc32: u32, out: &mut Vec<ClientAction>) {
        if chunk_crc(seq, &payload) != crc32 {
            self.stats.crc_failures += 1;
            return;
        }
        let active = self.active.as_ref().expect("chunk from active session");
        let metafile = &active.metafile;
        if seq >= metafile.total_chunks || payload.len() != metafile.chunk_len(seq) {
            debug!(seq, "chunk outside content bounds");
            return;
        }
        let chunk_window = metafile.window_of(seq);
        let window_last = metafile.window_seqs(chunk_window).end - 1;
        match self.state.clone() {
            ClientState::SentToken { window } if chunk_window == window + 1 => {
                self.enter_window(chunk_window, out);
                self.accept_chunk(seq, payload, out);
            }
            ClientState::SentToken { window } if chunk_window == window && seq == window_last => {
                // poke: the server has not seen our token
                self.send_token(window, out);
            }
            ClientState::Receiving { window, .. } if chunk_window == window => {
                self.accept_chunk(seq, payload, out);
            }
            _ => {}
        }
    }

    fn accept_chunk(&mut self, seq: u32, payload: Vec<u8>, out: &mut Vec<ClientAction>) {
        let ClientState::Receiving { window, received } = &mut self.state else {
            unreachable!("only called while receiving");
        };
        let window = *window;
        if !received.insert(seq) {
            return;
        }
        let have = received.len();
        let active = self.active.as_mut().expect("active");
        self.stats.bytes_received += payload.len() as u64;
        self.stats.chunks_received += 1;
        if active.nacked.remove(&seq) {
            self.stats.chunks_retransmitted += 1;
        }
        active.window_data.insert(seq, payload);
        let expected = active.metafile.window_seqs(window).len();
        if have < expected {
            out.push(ClientAction::Arm {
                timer: ClientTimer::Gap,
                after_ms: self.config.gap_ms,
            });
            return;
        }
        let mut bytes = Vec::new();
        for (_, data) in std::mem::take(&mut active.window_data) {
            active.hasher.update(&data);
            bytes.extend_from_slice(&data);
        }
        active.nacked.clear();
        out.push(ClientAction::Cancel(ClientTimer::Gap));
        out.push(ClientAction::Deliver(bytes));
        self.transition(ClientState::SentToken { window });
        self.send_token(window, out);
        if self.is_last_window(window) {
            out.push(ClientAction::Arm {
                timer: ClientTimer::FinalRetry,
                after_ms: self.config.final_retry_ms,
            });
        }
    }

    fn send_token(&mut self, window: u32, out: &mut Vec<ClientAction>) {
        let active = self.active.as_ref().expect("active");
        let token = match &self.policy {
            TokenPolicy::Honest => Some(derive_token(
                &active.secret,
                &active.metafile.token_nonce,
                window,
            )),
            TokenPolicy::Withhold => None,
            TokenPolicy::Replay(captured) => {
                captured.iter().find(|t| t.window_index == window).copied()
            }
            TokenPolicy::ReplayOwn => Some(derive_token(
                &active.secret,
                &active.metafile.token_nonce,
                0,
            )),
        };
        if let Some(token) = token {
            self.stats.tokens_sent += 1;
            self.send(active.session_id, Message::AckToken(token), out);
        }
    }

    fn on_timer(&mut self, timer: ClientTimer, out: &mut Vec<ClientAction>) {
        match (timer, self.state.clone()) {
            (ClientTimer::Idle, _) => {
                self.terminate(
                    ClientState::Aborted {
                        reason: AbortReason::Timeout,
                    },
                    out,
                );
            }
            (ClientTimer::HelloRetry, state) if self.handshaking() => {
                if self.hello_attempts >= self.config.max_hello_attempts {
                    if state != ClientState::AwaitFin {
                        self.terminate(
                            ClientState::Aborted {
                                reason: AbortReason::Timeout,
                            },
                            out,
                        );
                    }
                    return;
                }
                self.send_hello(out);
            }
            (ClientTimer::Gap, ClientState::Receiving { window, received }) => {
                let active = self.active.as_mut().expect("active");
                let missing: Vec<u32> = active
                    .metafile
                    .window_seqs(window)
                    .filter(|s| !received.contains(s))
                    .take(MAX_NACK_SEQS)
                    .collect();
                if !missing.is_empty() {
                    active.nacked.extend(missing.iter().copied());
                    self.stats.nacks_sent += 1;
                    let sid = active.session_id;
                    self.send(
                        sid,
                        Message::Nack {
                            missing_seqs: missing,
                        },
                        out,
                    );
                }
                out.push(ClientAction::Arm {
                    timer: ClientTimer::Gap,
                    after_ms: self.config.gap_ms,
                });
            }
            (ClientTimer::FinalRetry, ClientState::SentToken { window })
                if self.is_last_window(window) =>
            {
                self.send_token(window, out);
                out.push(ClientAction::Arm {
                    timer: ClientTimer::FinalRetry,
                    after_ms: self.config.final_retry_ms,
                });
            }
            (timer, state) => debug!(?timer, state = %state.label(), "stale timer"),
        }
    }
}
