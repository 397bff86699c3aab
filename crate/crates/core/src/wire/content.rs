use std::collections::BTreeMap;
use std::sync::Arc;

use sha2::{Digest, Sha256};

/// Immutable content bytes with their digest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Content {
    bytes: Vec<u8>,
    sha256: [u8; 32],
}

impl Content {
    pub fn new(bytes: Vec<u8>) -> Self {
        let sha256 = Sha256::digest(&bytes).into();
        Self { bytes, sha256 }
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn sha256(&self) -> &[u8; 32] {
        &self.sha256
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }
}

/// Name → content resolution used by server sessions.
pub trait ContentCatalog: Send + Sync {
    fn lookup(&self, name: &str) -> Option<Arc<Content>>;
}

/// Fixed in-memory catalog.
#[derive(Debug, Default, Clone)]
pub struct MemoryCatalog {
    items: BTreeMap<String, Arc<Content>>,
}

impl MemoryCatalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: impl Into<String>, bytes: Vec<u8>) -> Self {
        self.insert(name, bytes);
        self
    }

    pub fn insert(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.items
            .insert(name.into(), Arc::new(Content::new(bytes)));
    }
}

impl ContentCatalog for MemoryCatalog {
    fn lookup(&self, name: &str) -> Option<Arc<Content>> {
        self.items.get(name).cloned()
    }
}
