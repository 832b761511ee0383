//! Persistence behind a small interface.
//!
//! Each community is stored as one snapshot document, written whole after
//! every committed change; the person directory and the per-community secrets
//! live in their own documents. Snapshots keep insertion order (they are not
//! canonicalized), which is what makes exports stable across restarts.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;

use thiserror::Error;

use crate::model::CommunityId;
use crate::participation::CommunitySecret;
use crate::service::{CommunityState, Directory};

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("storage i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt snapshot {name}: {message}")]
    Corrupt { name: String, message: String },
    #[error("storage unavailable")]
    Unavailable,
}

/// Everything a service needs to resume.
#[derive(Debug, Default)]
pub struct Loaded {
    pub directory: Directory,
    pub communities: Vec<CommunityState>,
    pub secrets: HashMap<CommunityId, CommunitySecret>,
}

pub trait Storage: Send + Sync {
    fn load(&self) -> Result<Loaded, StorageError>;
    /// Durably replaces the snapshot of one community.
    fn save_community(&self, state: &CommunityState) -> Result<(), StorageError>;
    fn save_directory(&self, directory: &Directory) -> Result<(), StorageError>;
    fn save_secret(&self, community: &CommunityId, secret: &CommunitySecret) -> Result<(), StorageError>;
}

fn encode<T: serde::Serialize>(value: &T) -> Vec<u8> {
    serde_json::to_vec(value).expect("snapshot types serialize")
}

fn decode<T: serde::de::DeserializeOwned>(name: &str, bytes: &[u8]) -> Result<T, StorageError> {
    serde_json::from_slice(bytes).map_err(|e| StorageError::Corrupt { name: name.to_string(), message: e.to_string() })
}

/// In-process storage. Documents are still serialized so a reload exercises
/// the same path as the file store. `set_failing(true)` makes every write
/// fail, for testing that failed commits leave no trace.
#[derive(Debug, Default)]
pub struct MemoryStorage {
    docs: Mutex<HashMap<String, Vec<u8>>>,
    failing: AtomicBool,
}

impl MemoryStorage {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_failing(&self, failing: bool) {
        self.failing.store(failing, Ordering::SeqCst);
    }

    fn put(&self, key: String, bytes: Vec<u8>) -> Result<(), StorageError> {
        if self.failing.load(Ordering::SeqCst) {
            return Err(StorageError::Unavailable);
        }
        self.docs.lock().unwrap_or_else(|e| e.into_inner()).insert(key, bytes);
        Ok(())
    }
}

impl Storage for MemoryStorage {
    fn load(&self) -> Result<Loaded, StorageError> {
        let docs = self.docs.lock().unwrap_or_else(|e| e.into_inner());
        let mut loaded = Loaded::default();
        let mut keys: Vec<&String> = docs.keys().collect();
        keys.sort();
        for key in keys {
            let bytes = &docs[key];
            if key == "directory" {
                loaded.directory = decode(key, bytes)?;
            } else if key.starts_with("community/") {
                loaded.communities.push(decode(key, bytes)?);
            } else if let Some(id) = key.strip_prefix("secret/") {
                loaded.secrets.insert(CommunityId::from(id), decode(key, bytes)?);
            }
        }
        Ok(loaded)
    }

    fn save_community(&self, state: &CommunityState) -> Result<(), StorageError> {
        self.put(format!("community/{}", state.community.id), encode(state))
    }

    fn save_directory(&self, directory: &Directory) -> Result<(), StorageError> {
        self.put("directory".into(), encode(directory))
    }

    fn save_secret(&self, community: &CommunityId, secret: &CommunitySecret) -> Result<(), StorageError> {
        self.put(format!("secret/{community}"), encode(secret))
    }
}

/// Directory-backed storage:
///
/// ```text
/// <root>/directory.json
/// <root>/communities/<community-id>.json
/// <root>/secrets/<community-id>.key      (mode 0600 on unix)
/// ```
///
/// The secrets directory can be placed elsewhere with
/// [`FileStorage::with_secrets_dir`].
///
/// Writes go to a temporary file that is synced and then renamed over the
/// old snapshot, so a crash leaves either the old or the new version.
#[derive(Debug, Clone)]
pub struct FileStorage {
    root: PathBuf,
    secrets: PathBuf,
}

impl FileStorage {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StorageError> {
        let root = root.into();
        let secrets = root.join("secrets");
        Self::with_secrets_dir(root, secrets)
    }

    pub fn with_secrets_dir(root: impl Into<PathBuf>, secrets: impl Into<PathBuf>) -> Result<Self, StorageError> {
        let (root, secrets) = (root.into(), secrets.into());
        fs::create_dir_all(root.join("communities"))?;
        fs::create_dir_all(&secrets)?;
        Ok(Self { root, secrets })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn write_atomic(&self, path: &Path, bytes: &[u8], private: bool) -> Result<(), StorageError> {
        let tmp = path.with_extension("tmp");
        {
            let mut opts = fs::OpenOptions::new();
            opts.write(true).create(true).truncate(true);
            #[cfg(unix)]
            if private {
                use std::os::unix::fs::OpenOptionsExt;
                opts.mode(0o600);
            }
            #[cfg(not(unix))]
            let _ = private;
            let mut file = opts.open(&tmp)?;
            file.write_all(bytes)?;
            file.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        if let Some(dir) = path.parent() {
            // make the rename itself durable
            if let Ok(d) = fs::File::open(dir) {
                let _ = d.sync_all();
            }
        }
        Ok(())
    }

    fn safe_name(id: &CommunityId) -> Result<&str, StorageError> {
        let s = id.as_str();
        if s.is_empty() || !s.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(StorageError::Corrupt { name: s.to_string(), message: "unsafe community id".into() });
        }
        Ok(s)
    }
}

impl Storage for FileStorage {
    fn load(&self) -> Result<Loaded, StorageError> {
        let mut loaded = Loaded::default();
        let dir_path = self.root.join("directory.json");
        if dir_path.exists() {
            loaded.directory = decode("directory.json", &fs::read(&dir_path)?)?;
        }
        let mut entries: Vec<PathBuf> = fs::read_dir(self.root.join("communities"))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        entries.sort();
        for path in entries {
            let name = path.display().to_string();
            loaded.communities.push(decode(&name, &fs::read(&path)?)?);
        }
        for entry in fs::read_dir(&self.secrets)? {
            let path = entry?.path();
            if path.extension().is_some_and(|x| x == "key") {
                let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
                loaded.secrets.insert(CommunityId(stem), decode(&path.display().to_string(), &fs::read(&path)?)?);
            }
        }
        Ok(loaded)
    }

    fn save_community(&self, state: &CommunityState) -> Result<(), StorageError> {
        let name = Self::safe_name(&state.community.id)?;
        self.write_atomic(&self.root.join("communities").join(format!("{name}.json")), &encode(state), false)
    }

    fn save_directory(&self, directory: &Directory) -> Result<(), StorageError> {
        self.write_atomic(&self.root.join("directory.json"), &encode(directory), true)
    }

    fn save_secret(&self, community: &CommunityId, secret: &CommunitySecret) -> Result<(), StorageError> {
        let name = Self::safe_name(community)?;
        self.write_atomic(&self.secrets.join(format!("{name}.key")), &encode(secret), true)
    }
}
