use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::{Component, Path, PathBuf};
use std::sync::{Arc, Mutex};

use tracing::debug;

use crate::wire::{Content, ContentCatalog};

/// Files under a root directory, addressed by relative path and cached
/// after the first read.
#[derive(Debug)]
pub struct ContentStore {
    root: PathBuf,
    cache: Mutex<HashMap<String, Arc<Content>>>,
}

impl ContentStore {
    pub fn open(root: impl AsRef<Path>) -> io::Result<Self> {
        let root = fs::canonicalize(root.as_ref())?;
        if !root.is_dir() {
            return Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                format!("{} is not a directory", root.display()),
            ));
        }
        Ok(Self {
            root,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Path for `name` if it names a regular file inside the root.
    pub fn resolve(&self, name: &str) -> Option<PathBuf> {
        if name.is_empty() || name.contains('\0') || name.contains('\\') {
            return None;
        }
        let relative = Path::new(name);
        if !relative
            .components()
            .all(|c| matches!(c, Component::Normal(_)))
        {
            return None;
        }
        // symlinks may still point outside, so compare the real path
        let path = fs::canonicalize(self.root.join(relative)).ok()?;
        (path.starts_with(&self.root) && path.is_file()).then_some(path)
    }
}

impl ContentCatalog for ContentStore {
    fn lookup(&self, name: &str) -> Option<Arc<Content>> {
        if let Some(hit) = self.cache.lock().expect("cache lock").get(name) {
            return Some(Arc::clone(hit));
        }
        let path = self.resolve(name)?;
        let bytes = match fs::read(&path) {
            Ok(bytes) => bytes,
            Err(err) => {
                debug!(name, %err, "content read failed");
                return None;
            }
        };
        let content = Arc::new(Content::new(bytes));
        self.cache
            .lock()
            .expect("cache lock")
            .insert(name.to_string(), Arc::clone(&content));
        Some(content)
    }
}
