//! Per-window acknowledgement tokens.
//!
//! A token for window `w` is the first 16 bytes of
//! `SHA-256(secret ‖ nonce ‖ w as u32be)`. Only a peer holding the
//! Diffie-Hellman secret of the session can produce it.

use std::collections::BTreeSet;

use sha2::{Digest, Sha256};

use crate::crypto::SharedSecret;

pub const TOKEN_LEN: usize = 16;
pub const NONCE_LEN: usize = 16;

pub type TokenNonce = [u8; NONCE_LEN];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AckToken {
    pub window_index: u32,
    pub value: [u8; TOKEN_LEN],
}

pub fn derive_token(secret: &SharedSecret, nonce: &TokenNonce, window_index: u32) -> AckToken {
    let mut hasher = Sha256::new();
    hasher.update(secret.as_bytes());
    hasher.update(nonce);
    hasher.update(window_index.to_be_bytes());
    let digest = hasher.finalize();
    let mut value = [0u8; TOKEN_LEN];
    value.copy_from_slice(&digest[..TOKEN_LEN]);
    AckToken {
        window_index,
        value,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rejection {
    /// Value does not match the derivation, or the window is not the one
    /// currently expected.
    Invalid,
    /// The genuine token of an already-accepted window.
    Replay,
}

/// Checks tokens for one session, strictly in window order.
#[derive(Debug)]
pub struct TokenVerifier {
    secret: SharedSecret,
    nonce: TokenNonce,
    accepted: BTreeSet<u32>,
    next: u32,
}

impl TokenVerifier {
    pub fn new(secret: SharedSecret, nonce: TokenNonce) -> Self {
        Self {
            secret,
            nonce,
            accepted: BTreeSet::new(),
            next: 0,
        }
    }

    /// The only window index that can currently be accepted.
    pub fn expected_window(&self) -> u32 {
        self.next
    }

    /// Number of windows accepted so far; always `0..accepted_count()`.
    pub fn accepted_count(&self) -> u32 {
        self.accepted.len() as u32
    }

    pub fn verify(&mut self, token: &AckToken) -> Result<(), Rejection> {
        let genuine = derive_token(&self.secret, &self.nonce, token.window_index);
        let matches = constant_time_eq(&genuine.value, &token.value);
        if self.accepted.contains(&token.window_index) {
            return Err(if matches {
                Rejection::Replay
            } else {
                Rejection::Invalid
            });
        }
        if token.window_index != self.next || !matches {
            return Err(Rejection::Invalid);
        }
        self.accepted.insert(token.window_index);
        self.next += 1;
        Ok(())
    }
}

fn constant_time_eq(a: &[u8; TOKEN_LEN], b: &[u8; TOKEN_LEN]) -> bool {
    let diff = a
        .iter()
        .zip(b.iter())
        .fold(0u8, |acc, (x, y)| acc | (x ^ y));
    std::hint::black_box(diff) == 0
}
