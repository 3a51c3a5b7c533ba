//! Filesystem-backed session store: one `<id>.json` per session.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use vloss_core::{DeficitModel, GaussianKernel};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown session")]
    NotFound,
    #[error("session storage failure: {0}")]
    Storage(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub id: String,
    pub model: DeficitModel,
    /// Milliseconds since the Unix epoch.
    pub updated_at: u64,
}

/// On-disk envelope: the model fields plus `id` and `updated_at`.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SessionFile {
    id: String,
    updated_at: u64,
    version: u32,
    lambda: f64,
    kernels: Vec<GaussianKernel>,
}

impl From<&Session> for SessionFile {
    fn from(s: &Session) -> Self {
        SessionFile {
            id: s.id.clone(),
            updated_at: s.updated_at,
            version: s.model.version,
            lambda: s.model.lambda,
            kernels: s.model.kernels.clone(),
        }
    }
}

impl From<SessionFile> for Session {
    fn from(f: SessionFile) -> Self {
        Session {
            id: f.id,
            updated_at: f.updated_at,
            model: DeficitModel {
                version: f.version,
                lambda: f.lambda,
                kernels: f.kernels,
            },
        }
    }
}

pub struct SessionStore {
    dir: PathBuf,
    write_locks: Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 64
        && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

fn now_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

impl SessionStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)
            .map_err(|e| StoreError::Storage(format!("{}: {e}", dir.display())))?;
        Ok(SessionStore {
            dir,
            write_locks: Mutex::new(HashMap::new()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.json"))
    }

    fn write_lock(&self, id: &str) -> Arc<tokio::sync::Mutex<()>> {
        let mut locks = self.write_locks.lock().expect("lock table poisoned");
        locks.entry(id.to_owned()).or_default().clone()
    }

    fn persist(&self, session: &Session) -> Result<(), StoreError> {
        let body = serde_json::to_vec_pretty(&SessionFile::from(session))
            .map_err(|e| StoreError::Storage(e.to_string()))?;
        vloss_core::io::write_atomic(&self.path(&session.id), &body)
            .map_err(|e| StoreError::Storage(e.to_string()))
    }

    pub fn create(&self) -> Result<Session, StoreError> {
        let session = Session {
            id: uuid::Uuid::new_v4().simple().to_string(),
            model: DeficitModel::default(),
            updated_at: now_millis(),
        };
        self.persist(&session)?;
        Ok(session)
    }

    /// Reads the current snapshot of a session from disk.
    pub fn load(&self, id: &str) -> Result<Session, StoreError> {
        if !valid_id(id) {
            return Err(StoreError::NotFound);
        }
        let text = match std::fs::read_to_string(self.path(id)) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(StoreError::NotFound),
            Err(e) => return Err(StoreError::Storage(e.to_string())),
        };
        let file: SessionFile = serde_json::from_str(&text)
            .map_err(|e| StoreError::Storage(format!("corrupt session {id}: {e}")))?;
        Ok(file.into())
    }

    /// Replaces the model of an existing session. Writers to the same
    /// session are serialized; the last one wins.
    pub async fn replace_model(&self, id: &str, model: DeficitModel) -> Result<Session, StoreError> {
        let lock = self.write_lock(id);
        let _guard = lock.lock().await;
        let mut session = self.load(id)?;
        session.model = model;
        session.updated_at = now_millis().max(session.updated_at);
        self.persist(&session)?;
        Ok(session)
    }
}
