//! Datagram codec and the sans-I/O session machines built on it.

mod client;
mod codec;
mod content;
mod driver;
mod host;
mod metafile;
mod server;

pub use client::{
    AbortReason, ClientAction, ClientConfig, ClientEvent, ClientSession, ClientState, ClientStats,
    ClientTimer, TokenPolicy,
};
pub use codec::{
    chunk_crc, decode, encode, DecodeError, EncodeError, HaltReason, HelloStatus, Message,
    MessageType, Packet, CHUNK_OVERHEAD, HEADER_LEN, MAGIC, MAX_CHUNK_PAYLOAD, MAX_DATAGRAM,
    MAX_NACK_SEQS, MAX_NAME_LEN, VERSION,
};
pub use content::{Content, ContentCatalog, MemoryCatalog};
pub use driver::{ClientDriver, FetchReport, Outcome};
pub use host::{ClosedSession, HostStats, ServerHost, DEFAULT_MAX_SESSIONS};
pub use metafile::{
    build_metafile, build_metafile_with_digest, MetafileError, SessionMetafile, METAFILE_LEN,
};
pub use server::{
    ConfigError, ServerAction, ServerEvent, ServerSession, ServerSessionStats, ServerState,
    ServerTimer, SessionConfig, SessionSeeds,
};
