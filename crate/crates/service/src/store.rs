//! Session persistence.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use parking_lot::Mutex;

use crate::session::Session;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: corrupt session record: {source}")]
    Corrupt { path: PathBuf, source: serde_json::Error },
}

pub trait SessionStore: Send + Sync {
    fn get(&self, id: &str) -> Result<Option<Session>, StoreError>;
    fn put(&self, session: &Session) -> Result<(), StoreError>;
    /// Returns whether the session existed.
    fn delete(&self, id: &str) -> Result<bool, StoreError>;
    /// Ids in lexicographic order.
    fn list(&self) -> Result<Vec<String>, StoreError>;
}

#[derive(Default)]
pub struct MemoryStore {
    sessions: Mutex<BTreeMap<String, Session>>,
}

impl SessionStore for MemoryStore {
    fn get(&self, id: &str) -> Result<Option<Session>, StoreError> {
        Ok(self.sessions.lock().get(id).cloned())
    }

    fn put(&self, session: &Session) -> Result<(), StoreError> {
        self.sessions.lock().insert(session.id.clone(), session.clone());
        Ok(())
    }

    fn delete(&self, id: &str) -> Result<bool, StoreError> {
        Ok(self.sessions.lock().remove(id).is_some())
    }

    fn list(&self) -> Result<Vec<String>, StoreError> {
        Ok(self.sessions.lock().keys().cloned().collect())
    }
}

/// One JSON file per session, replaced atomically on every write.
pub struct FileStore {
    dir: PathBuf,
}

impl FileStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|source| StoreError::Io { path: dir.clone(), source })?;
        Ok(FileStore { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// `None` for ids that could not have been issued, so they never reach the filesystem.
    fn path(&self, id: &str) -> Option<PathBuf> {
        let valid = !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-');
        valid.then(|| self.dir.join(format!("{id}.json")))
    }
}

impl SessionStore for FileStore {
    fn get(&self, id: &str) -> Result<Option<Session>, StoreError> {
        let Some(path) = self.path(id) else { return Ok(None) };
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(source) => return Err(StoreError::Io { path, source }),
        };
        serde_json::from_str(&text).map(Some).map_err(|source| StoreError::Corrupt { path, source })
    }

    fn put(&self, session: &Session) -> Result<(), StoreError> {
        let path = self.path(&session.id).ok_or_else(|| StoreError::Io {
            path: self.dir.clone(),
            source: io::Error::new(io::ErrorKind::InvalidInput, format!("invalid session id {:?}", session.id)),
        })?;
        let tmp = path.with_extension("json.tmp");
        let text = serde_json::to_vec(session).expect("session serializes");
        fs::write(&tmp, text).map_err(|source| StoreError::Io { path: tmp.clone(), source })?;
        fs::rename(&tmp, &path).map_err(|source| StoreError::Io { path, source })
    }

    fn delete(&self, id: &str) -> Result<bool, StoreError> {
        let Some(path) = self.path(id) else { return Ok(false) };
        match fs::remove_file(&path) {
            Ok(()) => Ok(true),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(false),
            Err(source) => Err(StoreError::Io { path, source }),
        }
    }

    fn list(&self) -> Result<Vec<String>, StoreError> {
        let entries = fs::read_dir(&self.dir).map_err(|source| StoreError::Io { path: self.dir.clone(), source })?;
        let mut ids = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|source| StoreError::Io { path: self.dir.clone(), source })?;
            let name = entry.file_name();
            if let Some(id) = name.to_str().and_then(|n| n.strip_suffix(".json")) {
                ids.push(id.to_string());
            }
        }
        ids.sort();
        Ok(ids)
    }
}
