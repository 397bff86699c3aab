//! Bit-exact datagram codec.
//!
//! ```text
//! offset  size  field
//! 0       2     magic 0x53 0x56
//! 2       1     version 0x01
//! 3       1     message type (0x01 Hello .. 0x08 Fin)
//! 4       8     session id, u64 big-endian (0 in Hello)
//! 12      ..    body, fields in declaration order
//! ```
//!
//! Integers in bodies are big-endian. Big integers and byte strings carry a
//! u16 length prefix; the content name carries a u8 one. Big integers use
//! the minimal encoding (no leading zero byte, zero is empty).

use num_bigint::BigUint;

use crate::crypto::to_be_minimal;
use crate::token::{AckToken, TOKEN_LEN};

pub const MAGIC: [u8; 2] = [0x53, 0x56];
pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 12;
/// Ethernet MTU minus IPv4 and UDP headers.
pub const MAX_DATAGRAM: usize = 1472;
pub const MAX_NAME_LEN: usize = 255;
pub const MAX_NACK_SEQS: usize = 256;
/// seq (4) + payload length (2) + crc (4).
pub const CHUNK_OVERHEAD: usize = 10;
pub const MAX_CHUNK_PAYLOAD: usize = MAX_DATAGRAM - HEADER_LEN - CHUNK_OVERHEAD;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MessageType {
    Hello = 0x01,
    HelloReply = 0x02,
    Metafile = 0x03,
    Chunk = 0x04,
    AckToken = 0x05,
    Nack = 0x06,
    Halt = 0x07,
    Fin = 0x08,
}

impl MessageType {
    fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            0x01 => Self::Hello,
            0x02 => Self::HelloReply,
            0x03 => Self::Metafile,
            0x04 => Self::Chunk,
            0x05 => Self::AckToken,
            0x06 => Self::Nack,
            0x07 => Self::Halt,
            0x08 => Self::Fin,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum HelloStatus {
    Ok = 0,
    NotFound = 1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum HaltReason {
    TokenTimeout = 0,
    TokenInvalid = 1,
    Replay = 2,
    Internal = 3,
}

impl HaltReason {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::TokenTimeout => "token_timeout",
            Self::TokenInvalid => "token_invalid",
            Self::Replay => "replay",
            Self::Internal => "internal",
        }
    }
}

impl std::fmt::Display for HaltReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    Hello {
        content_name: String,
        dh_public: BigUint,
        rsa_n: BigUint,
        rsa_e: BigUint,
    },
    /// The session id lives in the packet header.
    HelloReply {
        dh_public: BigUint,
        status: HelloStatus,
    },
    /// Blocks `first_block..first_block + blocks.len()` of `total_blocks`
    /// RSA ciphertext blocks.
    Metafile {
        total_blocks: u16,
        first_block: u16,
        blocks: Vec<Vec<u8>>,
    },
    Chunk {
        seq: u32,
        payload: Vec<u8>,
        crc32: u32,
    },
    AckToken(AckToken),
    Nack {
        missing_seqs: Vec<u32>,
    },
    Halt {
        reason: HaltReason,
    },
    Fin {
        content_sha256: [u8; 32],
    },
}

impl Message {
    /// Chunk with its checksum filled in.
    pub fn chunk(seq: u32, payload: Vec<u8>) -> Self {
        let crc32 = chunk_crc(seq, &payload);
        Self::Chunk {
            seq,
            payload,
            crc32,
        }
    }

    pub fn message_type(&self) -> MessageType {
        match self {
            Self::Hello { .. } => MessageType::Hello,
            Self::HelloReply { .. } => MessageType::HelloReply,
            Self::Metafile { .. } => MessageType::Metafile,
            Self::Chunk { .. } => MessageType::Chunk,
            Self::AckToken(_) => MessageType::AckToken,
            Self::Nack { .. } => MessageType::Nack,
            Self::Halt { .. } => MessageType::Halt,
            Self::Fin { .. } => MessageType::Fin,
        }
    }
}

/// CRC-32 (IEEE) over `seq as u32be ‖ payload`.
pub fn chunk_crc(seq: u32, payload: &[u8]) -> u32 {
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(&seq.to_be_bytes());
    hasher.update(payload);
    hasher.finalize()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub session_id: u64,
    pub message: Message,
}

impl Packet {
    pub fn new(session_id: u64, message: Message) -> Self {
        Self {
            session_id,
            message,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EncodeError {
    #[error("field `{field}` is {len} long, limit {limit}")]
    FieldTooLong {
        field: &'static str,
        len: usize,
        limit: usize,
    },
    #[error("metafile block range exceeds total_blocks")]
    BlockRange,
    #[error("encoded datagram is {0} bytes, limit {MAX_DATAGRAM}")]
    DatagramTooLarge(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    #[error("truncated datagram")]
    Truncated,
    #[error("datagram of {0} bytes exceeds {MAX_DATAGRAM}")]
    Oversize(usize),
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0:#04x}")]
    BadVersion(u8),
    #[error("unknown message type {0:#04x}")]
    UnknownType(u8),
    #[error("{0} trailing bytes after body")]
    TrailingBytes(usize),
    #[error("invalid field `{0}`")]
    InvalidField(&'static str),
}

pub fn encode(packet: &Packet) -> Result<Vec<u8>, EncodeError> {
    let mut out = Vec::with_capacity(64);
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(packet.message.message_type() as u8);
    out.extend_from_slice(&packet.session_id.to_be_bytes());
    match &packet.message {
        Message::Hello {
            content_name,
            dh_public,
            rsa_n,
            rsa_e,
        } => {
            let name = content_name.as_bytes();
            if name.len() > MAX_NAME_LEN {
                return Err(EncodeError::FieldTooLong {
                    field: "content_name",
                    len: name.len(),
                    limit: MAX_NAME_LEN,
                });
            }
            out.push(name.len() as u8);
            out.extend_from_slice(name);
            put_big(&mut out, "dh_public", dh_public)?;
            put_big(&mut out, "rsa_n", rsa_n)?;
            put_big(&mut out, "rsa_e", rsa_e)?;
        }
        Message::HelloReply { dh_public, status } => {
            put_big(&mut out, "dh_public", dh_public)?;
            out.push(*status as u8);
        }
        Message::Metafile {
            total_blocks,
            first_block,
            blocks,
        } => {
            let count = checked_u16("blocks", blocks.len())?;
            if *first_block as usize + count as usize > *total_blocks as usize {
                return Err(EncodeError::BlockRange);
            }
            out.extend_from_slice(&total_blocks.to_be_bytes());
            out.extend_from_slice(&first_block.to_be_bytes());
            out.extend_from_slice(&count.to_be_bytes());
            for block in blocks {
                put_bytes(&mut out, "block", block)?;
            }
        }
        Message::Chunk {
            seq,
            payload,
            crc32,
        } => {
            if payload.len() > MAX_CHUNK_PAYLOAD {
                return Err(EncodeError::FieldTooLong {
                    field: "payload",
                    len: payload.len(),
                    limit: MAX_CHUNK_PAYLOAD,
                });
            }
            out.extend_from_slice(&seq.to_be_bytes());
            put_bytes(&mut out, "payload", payload)?;
            out.extend_from_slice(&crc32.to_be_bytes());
        }
        Message::AckToken(token) => {
            out.extend_from_slice(&token.window_index.to_be_bytes());
            out.extend_from_slice(&token.value);
        }
        Message::Nack { missing_seqs } => {
            if missing_seqs.len() > MAX_NACK_SEQS {
                return Err(EncodeError::FieldTooLong {
                    field: "missing_seqs",
                    len: missing_seqs.len(),
                    limit: MAX_NACK_SEQS,
                });
            }
            out.extend_from_slice(&(missing_seqs.len() as u16).to_be_bytes());
            for seq in missing_seqs {
                out.extend_from_slice(&seq.to_be_bytes());
            }
        }
        Message::Halt { reason } => out.push(*reason as u8),
        Message::Fin { content_sha256 } => out.extend_from_slice(content_sha256),
    }
    if out.len() > MAX_DATAGRAM {
        return Err(EncodeError::DatagramTooLarge(out.len()));
    }
    Ok(out)
}

fn checked_u16(field: &'static str, len: usize) -> Result<u16, EncodeError> {
    u16::try_from(len).map_err(|_| EncodeError::FieldTooLong {
        field,
        len,
        limit: u16::MAX as usize,
    })
}

fn put_bytes(out: &mut Vec<u8>, field: &'static str, bytes: &[u8]) -> Result<(), EncodeError> {
    out.extend_from_slice(&checked_u16(field, bytes.len())?.to_be_bytes());
    out.extend_from_slice(bytes);
    Ok(())
}

fn put_big(out: &mut Vec<u8>, field: &'static str, value: &BigUint) -> Result<(), EncodeError> {
    put_bytes(out, field, &to_be_minimal(value))
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.buf.len() < n {
            return Err(DecodeError::Truncated);
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], DecodeError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, DecodeError> {
        Ok(u16::from_be_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_be_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_be_bytes(self.array()?))
    }

    fn bytes16(&mut self) -> Result<&'a [u8], DecodeError> {
        let len = self.u16()? as usize;
        self.take(len)
    }

    fn big(&mut self, field: &'static str) -> Result<BigUint, DecodeError> {
        let raw = self.bytes16()?;
        if raw.first() == Some(&0) {
            return Err(DecodeError::InvalidField(field));
        }
        Ok(BigUint::from_bytes_be(raw))
    }
}

pub fn decode(datagram: &[u8]) -> Result<Packet, DecodeError> {
    if datagram.len() > MAX_DATAGRAM {
        return Err(DecodeError::Oversize(datagram.len()));
    }
    let mut r = Reader { buf: datagram };
    if r.array::<2>()? != MAGIC {
        return Err(DecodeError::BadMagic);
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(DecodeError::BadVersion(version));
    }
    let type_byte = r.u8()?;
    let kind = MessageType::from_byte(type_byte).ok_or(DecodeError::UnknownType(type_byte))?;
    let session_id = r.u64()?;
    let message = match kind {
        MessageType::Hello => {
            let name_len = r.u8()? as usize;
            let content_name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| DecodeError::InvalidField("content_name"))?
                .to_owned();
            Message::Hello {
                content_name,
                dh_public: r.big("dh_public")?,
                rsa_n: r.big("rsa_n")?,
                rsa_e: r.big("rsa_e")?,
            }
        }
        MessageType::HelloReply => {
            let dh_public = r.big("dh_public")?;
            let status = match r.u8()? {
                0 => HelloStatus::Ok,
                1 => HelloStatus::NotFound,
                _ => return Err(DecodeError::InvalidField("status")),
            };
            Message::HelloReply { dh_public, status }
        }
        MessageType::Metafile => {
            let total_blocks = r.u16()?;
            let first_block = r.u16()?;
            let count = r.u16()?;
            if first_block as usize + count as usize > total_blocks as usize {
                return Err(DecodeError::InvalidField("first_block"));
            }
            let mut blocks = Vec::with_capacity((count as usize).min(MAX_DATAGRAM / 2));
            for _ in 0..count {
                blocks.push(r.bytes16()?.to_vec());
            }
            Message::Metafile {
                total_blocks,
                first_block,
                blocks,
            }
        }
        MessageType::Chunk => {
            let seq = r.u32()?;
            let payload = r.bytes16()?.to_vec();
            let crc32 = r.u32()?;
            Message::Chunk {
                seq,
                payload,
                crc32,
            }
        }
        MessageType::AckToken => {
            let window_index = r.u32()?;
            let value = r.array::<TOKEN_LEN>()?;
            Message::AckToken(AckToken {
                window_index,
                value,
            })
        }
        MessageType::Nack => {
            let count = r.u16()? as usize;
            if count > MAX_NACK_SEQS {
                return Err(DecodeError::InvalidField("missing_seqs"));
            }
            let missing_seqs = (0..count).map(|_| r.u32()).collect::<Result<_, _>>()?;
            Message::Nack { missing_seqs }
        }
        MessageType::Halt => {
            let reason = match r.u8()? {
                0 => HaltReason::TokenTimeout,
                1 => HaltReason::TokenInvalid,
                2 => HaltReason::Replay,
                3 => HaltReason::Internal,
                _ => return Err(DecodeError::InvalidField("reason")),
            };
            Message::Halt { reason }
        }
        MessageType::Fin => Message::Fin {
            content_sha256: r.array()?,
        },
    };
    if !r.buf.is_empty() {
        return Err(DecodeError::TrailingBytes(r.buf.len()));
    }
    Ok(Packet {
        session_id,
        message,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halt_layout() {
        let bytes = encode(&Packet::new(
            7,
            Message::Halt {
                reason: HaltReason::TokenTimeout,
            },
        ))
        .unwrap();
        assert_eq!(
            bytes,
            [0x53, 0x56, 0x01, 0x07, 0, 0, 0, 0, 0, 0, 0, 0x07, 0x00]
        );
        assert_eq!(decode(&bytes).unwrap().session_id, 7);
    }

    #[test]
    fn ack_token_layout() {
        let msg = Message::AckToken(AckToken {
            window_index: 0x0102_0304,
            value: [0xaa; 16],
        });
        let bytes = encode(&Packet::new(1, msg.clone())).unwrap();
        assert_eq!(bytes.len(), 12 + 4 + 16);
        assert_eq!(&bytes[12..16], &[1, 2, 3, 4]);
        assert_eq!(decode(&bytes).unwrap().message, msg);
    }

    #[test]
    fn hello_name_bound() {
        let hello = |len| Message::Hello {
            content_name: "a".repeat(len),
            dh_public: BigUint::from(5u8),
            rsa_n: BigUint::from(33u8),
            rsa_e: BigUint::from(3u8),
        };
        assert!(encode(&Packet::new(0, hello(255))).is_ok());
        assert!(matches!(
            encode(&Packet::new(0, hello(256))),
            Err(EncodeError::FieldTooLong {
                field: "content_name",
                ..
            })
        ));
    }

    #[test]
    fn chunk_payload_bound() {
        assert!(
            encode(&Packet::new(
                1,
                Message::chunk(0, vec![0; MAX_CHUNK_PAYLOAD])
            ))
            .unwrap()
            .len()
                == MAX_DATAGRAM
        );
        assert!(encode(&Packet::new(
            1,
            Message::chunk(0, vec![0; MAX_CHUNK_PAYLOAD + 1])
        ))
        .is_err());
    }

    #[test]
    fn nack_bound() {
        let ok = Message::Nack {
            missing_seqs: (0..256).collect(),
        };
        assert!(encode(&Packet::new(1, ok)).is_ok());
        let too_many = Message::Nack {
            missing_seqs: (0..257).collect(),
        };
        assert!(encode(&Packet::new(1, too_many)).is_err());
    }

    #[test]
    fn structured_errors() {
        assert_eq!(decode(&[]), Err(DecodeError::Truncated));
        assert_eq!(decode(&[0x53, 0x57, 1, 1]), Err(DecodeError::BadMagic));
        assert_eq!(decode(&[0x53, 0x56, 2, 1]), Err(DecodeError::BadVersion(2)));
        assert_eq!(
            decode(&[0x53, 0x56, 1, 9, 0, 0, 0, 0, 0, 0, 0, 0]),
            Err(DecodeError::UnknownType(9))
        );
        assert_eq!(
            decode(&[0x53, 0x56, 1, 7, 0, 0, 0]),
            Err(DecodeError::Truncated)
        );
        assert_eq!(
            decode(&[0x53, 0x56, 1, 7, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0]),
            Err(DecodeError::TrailingBytes(1))
        );
        assert_eq!(
            decode(&[0x53, 0x56, 1, 7, 0, 0, 0, 0, 0, 0, 0, 1, 9]),
            Err(DecodeError::InvalidField("reason"))
        );
        assert_eq!(
            decode(&vec![0u8; MAX_DATAGRAM + 1]),
            Err(DecodeError::Oversize(MAX_DATAGRAM + 1))
        );
    }

    #[test]
    fn non_minimal_integer_rejected() {
        let mut bytes = encode(&Packet::new(
            3,
            Message::HelloReply {
                dh_public: BigUint::from(0x99u8),
                status: HelloStatus::Ok,
            },
        ))
        .unwrap();
        assert_eq!(&bytes[12..], &[0, 1, 0x99, 0]);
        bytes.splice(12..15, [0, 2, 0, 0x99]);
        assert_eq!(decode(&bytes), Err(DecodeError::InvalidField("dh_public")));
    }

    #[test]
    fn flipped_crc_still_decodes() {
        let mut bytes = encode(&Packet::new(4, Message::chunk(9, b"payload".to_vec()))).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x01;
        let packet = decode(&bytes).unwrap();
        match packet.message {
            Message::Chunk {
                seq,
                payload,
                crc32,
            } => assert_ne!(crc32, chunk_crc(seq, &payload)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn metafile_block_range() {
        let bad = Message::Metafile {
            total_blocks: 1,
            first_block: 1,
            blocks: vec![vec![1]],
        };
        assert_eq!(encode(&Packet::new(1, bad)), Err(EncodeError::BlockRange));
    }

    #[test]
    fn reference_datagrams() {
        let hex_of =
            |session_id, message| hex::encode(encode(&Packet::new(session_id, message)).unwrap());
        let cases = [
            (
                hex_of(
                    0,
                    Message::Hello {
                        content_name: "a.bin".into(),
                        dh_public: BigUint::from(5u8),
                        rsa_n: BigUint::from(33823u32),
                        rsa_e: BigUint::from(3u8),
                    },
                ),
                "53560101 0000000000000000 05 612e62696e 000105 0002841f 000103",
            ),
            (
                hex_of(
                    42,
                    Message::HelloReply {
                        dh_public: BigUint::from(0x0102u16),
                        status: HelloStatus::Ok,
                    },
                ),
                "53560102 000000000000002a 0002 0102 00",
            ),
            (
                hex_of(
                    42,
                    Message::Metafile {
                        total_blocks: 2,
                        first_block: 0,
                        blocks: vec![vec![0x12, 0x34], vec![0x56, 0x78]],
                    },
                ),
                "53560103 000000000000002a 0002 0000 0002 00021234 00025678",
            ),
            (hex_of(42, Message::chunk(3, b"hi".to_vec())), "53560104 000000000000002a 00000003 0002 6869 2ace27a9"),
            (
                hex_of(42, Message::Nack { missing_seqs: vec![3, 5] }),
                "53560106 000000000000002a 0002 00000003 00000005",
            ),
            (
                hex_of(
                    42,
                    Message::Fin {
                        content_sha256: <sha2::Sha256 as sha2::Digest>::digest(b"").into(),
                    },
                ),
                "53560108 000000000000002a e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855",
            ),
        ];
        for (got, want) in cases {
            assert_eq!(got, want.replace(' ', ""));
        }
    }
}
