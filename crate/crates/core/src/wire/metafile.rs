//! The session descriptor delivered RSA-encrypted before streaming starts.
//!
//! Plaintext layout, 64 bytes, big-endian:
//!
//! ```text
//! content_length u64 | chunk_size u16 | total_chunks u32 | window_size u16
//! token_nonce [16]   | content_sha256 [32]
//! ```

use std::ops::Range;

use sha2::{Digest, Sha256};

use crate::token::TokenNonce;

pub const METAFILE_LEN: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionMetafile {
    pub content_length: u64,
    pub chunk_size: u16,
    pub total_chunks: u32,
    pub window_size: u16,
    pub token_nonce: TokenNonce,
    pub content_sha256: [u8; 32],
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetafileError {
    #[error("chunk_size must be at least 1")]
    ZeroChunkSize,
    #[error("window_size must be at least 1")]
    ZeroWindow,
    #[error("content needs {0} chunks, more than a u32 sequence space")]
    TooManyChunks(u64),
    #[error("metafile must be {METAFILE_LEN} bytes, got {0}")]
    BadLength(usize),
    #[error("total_chunks disagrees with content_length / chunk_size")]
    Inconsistent,
}

pub fn build_metafile(
    content: &[u8],
    chunk_size: u16,
    window_size: u16,
    token_nonce: TokenNonce,
) -> Result<SessionMetafile, MetafileError> {
    build_metafile_with_digest(
        content.len() as u64,
        Sha256::digest(content).into(),
        chunk_size,
        window_size,
        token_nonce,
    )
}

/// Same as [`build_metafile`] when the digest is already known.
pub fn build_metafile_with_digest(
    content_length: u64,
    content_sha256: [u8; 32],
    chunk_size: u16,
    window_size: u16,
    token_nonce: TokenNonce,
) -> Result<SessionMetafile, MetafileError> {
    if chunk_size == 0 {
        return Err(MetafileError::ZeroChunkSize);
    }
    if window_size == 0 {
        return Err(MetafileError::ZeroWindow);
    }
    let chunks = content_length.div_ceil(chunk_size as u64);
    let total_chunks = u32::try_from(chunks).map_err(|_| MetafileError::TooManyChunks(chunks))?;
    Ok(SessionMetafile {
        content_length,
        chunk_size,
        total_chunks,
        window_size,
        token_nonce,
        content_sha256,
    })
}

impl SessionMetafile {
    pub fn to_bytes(&self) -> [u8; METAFILE_LEN] {
        let mut out = [0u8; METAFILE_LEN];
        out[0..8].copy_from_slice(&self.content_length.to_be_bytes());
        out[8..10].copy_from_slice(&self.chunk_size.to_be_bytes());
        out[10..14].copy_from_slice(&self.total_chunks.to_be_bytes());
        out[14..16].copy_from_slice(&self.window_size.to_be_bytes());
        out[16..32].copy_from_slice(&self.token_nonce);
        out[32..64].copy_from_slice(&self.content_sha256);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, MetafileError> {
        let bytes: &[u8; METAFILE_LEN] = bytes
            .try_into()
            .map_err(|_| MetafileError::BadLength(bytes.len()))?;
        let parsed = Self {
            content_length: u64::from_be_bytes(bytes[0..8].try_into().unwrap()),
            chunk_size: u16::from_be_bytes(bytes[8..10].try_into().unwrap()),
            total_chunks: u32::from_be_bytes(bytes[10..14].try_into().unwrap()),
            window_size: u16::from_be_bytes(bytes[14..16].try_into().unwrap()),
            token_nonce: bytes[16..32].try_into().unwrap(),
            content_sha256: bytes[32..64].try_into().unwrap(),
        };
        let rebuilt = build_metafile_with_digest(
            parsed.content_length,
            parsed.content_sha256,
            parsed.chunk_size,
            parsed.window_size,
            parsed.token_nonce,
        )?;
        if rebuilt.total_chunks != parsed.total_chunks {
            return Err(MetafileError::Inconsistent);
        }
        Ok(parsed)
    }

    pub fn window_count(&self) -> u32 {
        self.total_chunks.div_ceil(self.window_size as u32)
    }

    pub fn window_of(&self, seq: u32) -> u32 {
        seq / self.window_size as u32
    }

    /// Sequence numbers belonging to window `w`.
    pub fn window_seqs(&self, w: u32) -> Range<u32> {
        let start = (w as u64 * self.window_size as u64).min(self.total_chunks as u64) as u32;
        let end = (start as u64 + self.window_size as u64).min(self.total_chunks as u64) as u32;
        start..end
    }

    /// Byte range of chunk `seq` within the content.
    pub fn chunk_range(&self, seq: u32) -> Range<u64> {
        let start = seq as u64 * self.chunk_size as u64;
        let end = (start + self.chunk_size as u64).min(self.content_length);
        start..end
    }

    pub fn chunk_len(&self, seq: u32) -> usize {
        let r = self.chunk_range(seq);
        (r.end - r.start) as usize
    }
}
