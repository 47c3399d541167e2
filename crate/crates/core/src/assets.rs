//! Content-addressed asset storage.

use std::collections::HashMap;
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Default upper bound on a single asset.
pub const DEFAULT_MAX_ASSET_BYTES: usize = 32 * 1024 * 1024;

/// Reference to immutable stored bytes. `id` is the lowercase hex SHA-256.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AssetRef {
    pub id: String,
    pub media_type: String,
    pub byte_length: u64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AssetError {
    #[error("asset not found: {0}")]
    NotFound(String),
    #[error("asset too large: {size} bytes exceeds cap of {cap}")]
    TooLarge { size: usize, cap: usize },
    #[error("media type must not be empty")]
    EmptyMediaType,
    #[error("asset {id} failed integrity check")]
    Corrupt { id: String },
    #[error("storage failure: {0}")]
    Storage(String),
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn is_asset_id(s: &str) -> bool {
    s.len() == 64 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
}

pub trait AssetStore: Send + Sync {
    /// Store bytes; idempotent for identical content.
    fn put(&self, bytes: &[u8], media_type: &str) -> Result<AssetRef, AssetError>;
    fn get(&self, id: &str) -> Result<Vec<u8>, AssetError>;
    fn meta(&self, id: &str) -> Result<AssetRef, AssetError>;

    fn contains(&self, id: &str) -> bool {
        self.meta(id).is_ok()
    }
}

/// Validation shared by every store implementation.
pub fn check_put(bytes: &[u8], media_type: &str, cap: usize) -> Result<(), AssetError> {
    if media_type.trim().is_empty() {
        return Err(AssetError::EmptyMediaType);
    }
    if bytes.len() > cap {
        return Err(AssetError::TooLarge {
            size: bytes.len(),
            cap,
        });
    }
    Ok(())
}

/// In-process store; used by replay, tests and as the server's read cache model.
pub struct MemoryAssetStore {
    cap: usize,
    verify_on_read: bool,
    inner: RwLock<HashMap<String, (AssetRef, Vec<u8>)>>,
}

impl Default for MemoryAssetStore {
    fn default() -> Self {
        Self::new(DEFAULT_MAX_ASSET_BYTES)
    }
}

impl MemoryAssetStore {
    pub fn new(cap: usize) -> Self {
        Self {
            cap,
            verify_on_read: false,
            inner: RwLock::new(HashMap::new()),
        }
    }

    /// Recompute the digest on every read.
    pub fn checking(mut self) -> Self {
        self.verify_on_read = true;
        self
    }

    pub fn len(&self) -> usize {
        self.inner.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[cfg(test)]
    pub(crate) fn corrupt(&self, id: &str) {
        if let Some((_, bytes)) = self.inner.write().unwrap().get_mut(id) {
            bytes.push(0);
        }
    }
}

impl AssetStore for MemoryAssetStore {
    fn put(&self, bytes: &[u8], media_type: &str) -> Result<AssetRef, AssetError> {
        check_put(bytes, media_type, self.cap)?;
        let id = sha256_hex(bytes);
        let mut map = self.inner.write().unwrap();
        let entry = map.entry(id.clone()).or_insert_with(|| {
            (
                AssetRef {
                    id,
                    media_type: media_type.to_string(),
                    byte_length: bytes.len() as u64,
                },
                bytes.to_vec(),
            )
        });
        Ok(entry.0.clone())
    }

    fn get(&self, id: &str) -> Result<Vec<u8>, AssetError> {
        let map = self.inner.read().unwrap();
        let (_, bytes) = map
            .get(id)
            .ok_or_else(|| AssetError::NotFound(id.to_string()))?;
        if self.verify_on_read && sha256_hex(bytes) != id {
            return Err(AssetError::Corrupt { id: id.to_string() });
        }
        Ok(bytes.clone())
    }

    fn meta(&self, id: &str) -> Result<AssetRef, AssetError> {
        self.inner
            .read()
            .unwrap()
            .get(id)
            .map(|(r, _)| r.clone())
            .ok_or_else(|| AssetError::NotFound(id.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn put_is_idempotent() {
        let store = MemoryAssetStore::default();
        let a = store.put(b"abc", "text/plain").unwrap();
        let b = store.put(b"abc", "text/plain").unwrap();
        assert_eq!(a, b);
        assert_eq!(store.len(), 1);
        assert_eq!(store.get(&a.id).unwrap(), b"abc");
    }

    #[test]
    fn unknown_id_is_not_found() {
        let store = MemoryAssetStore::default();
        assert_eq!(
            store.get("00"),
            Err(AssetError::NotFound("00".to_string()))
        );
    }

    #[test]
    fn cap_and_media_type_enforced() {
        let store = MemoryAssetStore::new(4);
        assert!(matches!(
            store.put(b"12345", "a/b"),
            Err(AssetError::TooLarge { size: 5, cap: 4 })
        ));
        assert_eq!(store.put(b"1", " "), Err(AssetError::EmptyMediaType));
    }

    #[test]
    fn checking_mode_detects_corruption() {
        let store = MemoryAssetStore::default().checking();
        let r = store.put(b"payload", "application/octet-stream").unwrap();
        store.corrupt(&r.id);
        assert!(matches!(store.get(&r.id), Err(AssetError::Corrupt { .. })));
    }

    #[test]
    fn asset_id_shape() {
        assert!(is_asset_id(&sha256_hex(b"")));
        assert!(!is_asset_id("ABC"));
    }
}
