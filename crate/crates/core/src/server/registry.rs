//! Sessions on disk: one store directory per INIT, `session-<id>`.

use crate::model::SessionSchema;
use crate::storage::{open_snapshot, Snapshot, StorageError, Store, StoreOptions};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

const SESSION_PREFIX: &str = "session-";

pub fn session_dir_name(id: u64) -> String {
    format!("{SESSION_PREFIX}{id}")
}

struct Entry {
    dir: PathBuf,
    /// Present while an ingestion connection owns the session.
    live: Option<Arc<Store>>,
}

/// All sessions under a data directory. Sessions found at startup are
/// served read-only; new ones are created by INIT.
pub struct Registry {
    data_dir: PathBuf,
    options: StoreOptions,
    sessions: Mutex<BTreeMap<u64, Entry>>,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct SessionInfo {
    pub id: u64,
    pub live: bool,
    pub episode_count: usize,
}

impl Registry {
    pub fn open(data_dir: impl AsRef<Path>, options: StoreOptions) -> Result<Registry, StorageError> {
        let data_dir = data_dir.as_ref().to_path_buf();
        fs::create_dir_all(&data_dir)?;
        let mut sessions = BTreeMap::new();
        for item in fs::read_dir(&data_dir)? {
            let item = item?;
            let name = item.file_name();
            let Some(id) = name.to_str().and_then(|n| n.strip_prefix(SESSION_PREFIX)).and_then(|n| n.parse::<u64>().ok()) else {
                continue;
            };
            if item.path().is_dir() {
                sessions.insert(id, Entry { dir: item.path(), live: None });
            }
        }
        Ok(Registry { data_dir, options, sessions: Mutex::new(sessions) })
    }

    pub fn data_dir(&self) -> &Path {
        &self.data_dir
    }

    pub fn options(&self) -> &StoreOptions {
        &self.options
    }

    /// Allocates the next session id and creates its store.
    pub fn create(&self, schema: SessionSchema) -> Result<(u64, Arc<Store>), StorageError> {
        let mut sessions = self.sessions.lock().unwrap();
        let id = sessions.keys().next_back().map_or(0, |k| k + 1);
        let dir = self.data_dir.join(session_dir_name(id));
        let store = Arc::new(Store::create(&dir, schema, self.options.clone())?);
        sessions.insert(id, Entry { dir, live: Some(store.clone()) });
        Ok((id, store))
    }

    /// Drops the live handle; the store itself commits on its last drop.
    pub fn release(&self, id: u64) {
        if let Some(e) = self.sessions.lock().unwrap().get_mut(&id) {
            e.live = None;
        }
    }

    /// The live store of a session with an open ingestion connection.
    pub fn store(&self, id: u64) -> Option<Arc<Store>> {
        self.sessions.lock().unwrap().get(&id).and_then(|e| e.live.clone())
    }

    pub fn latest(&self) -> Option<u64> {
        self.sessions.lock().unwrap().keys().next_back().copied()
    }

    pub fn contains(&self, id: u64) -> bool {
        self.sessions.lock().unwrap().contains_key(&id)
    }

    /// Current snapshot of a session (`None` if unknown): live stores
    /// publish in memory, finished ones are read from disk.
    pub fn snapshot(&self, id: u64) -> Option<Result<Snapshot, StorageError>> {
        let (dir, live) = {
            let sessions = self.sessions.lock().unwrap();
            let e = sessions.get(&id)?;
            (e.dir.clone(), e.live.clone())
        };
        Some(match live {
            Some(store) => Ok(store.snapshot()),
            None => open_snapshot(dir),
        })
    }

    pub fn list(&self) -> Vec<SessionInfo> {
        let ids: Vec<(u64, bool)> = self.sessions.lock().unwrap().iter().map(|(k, e)| (*k, e.live.is_some())).collect();
        ids.into_iter()
            .map(|(id, live)| SessionInfo { id, live, episode_count: self.snapshot(id).and_then(Result::ok).map_or(0, |s| s.episode_count()) })
            .collect()
    }
}
