//! Per-customer AES-256 keys stored as 32-byte files.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use agora_core::billing::LogKey;
use rand::RngCore;

use crate::error::{AgoraError, Result};

/// Environment variable naming the key directory when no path is configured.
pub const KEY_DIR_ENV: &str = "AGORA_KEY_DIR";

pub fn key_path(dir: &Path, customer_id: u64) -> PathBuf {
    dir.join(format!("customer-{customer_id}.key"))
}

/// Configured directory, else the environment variable.
pub fn resolve_key_dir(configured: Option<&Path>) -> Result<PathBuf> {
    match configured {
        Some(p) => Ok(p.to_path_buf()),
        None => std::env::var_os(KEY_DIR_ENV)
            .map(PathBuf::from)
            .ok_or_else(|| AgoraError::Config(format!("no key directory configured and {KEY_DIR_ENV} is unset"))),
    }
}

pub fn read_key(dir: &Path, customer_id: u64) -> Result<LogKey> {
    let path = key_path(dir, customer_id);
    let bytes = fs::read(&path).map_err(AgoraError::at_path(&path))?;
    LogKey::from_slice(&bytes)
        .ok_or_else(|| AgoraError::Config(format!("{}: key files hold exactly 32 bytes", path.display())))
}

pub fn write_key(dir: &Path, customer_id: u64, key: &LogKey) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(AgoraError::at_path(dir))?;
    let path = key_path(dir, customer_id);
    fs::write(&path, key.as_bytes()).map_err(AgoraError::at_path(&path))?;
    Ok(path)
}

pub fn generate_key() -> LogKey {
    let mut b = [0u8; 32];
    rand::rng().fill_bytes(&mut b);
    LogKey::new(b)
}

/// Key lookup with caching; missing customers are not cached.
#[derive(Debug)]
pub struct KeyStore {
    dir: PathBuf,
    cache: Mutex<HashMap<u64, LogKey>>,
}

impl KeyStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn get(&self, customer_id: u64) -> Option<LogKey> {
        let mut cache = self.cache.lock().unwrap();
        if let Some(k) = cache.get(&customer_id) {
            return Some(k.clone());
        }
        let k = read_key(&self.dir, customer_id).ok()?;
        cache.insert(customer_id, k.clone());
        Some(k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_read_and_cache() {
        let dir = tempfile::tempdir().unwrap();
        let k = generate_key();
        write_key(dir.path(), 7, &k).unwrap();
        assert_eq!(read_key(dir.path(), 7).unwrap(), k);
        let ks = KeyStore::new(dir.path());
        assert_eq!(ks.get(7), Some(k));
        assert_eq!(ks.get(8), None);
        fs::write(key_path(dir.path(), 9), [0u8; 31]).unwrap();
        assert!(matches!(read_key(dir.path(), 9), Err(AgoraError::Config(_))));
    }
}
