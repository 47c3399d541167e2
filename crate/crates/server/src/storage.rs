//! On-disk persistence: one JSON file per document and a flat directory of
//! content-addressed assets. Every write goes to a temporary file, is
//! synced, then renamed into place, so a crash leaves either the old or the
//! new version and never a torn one.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};

use deckflow_core::assets::{check_put, is_asset_id, sha256_hex, AssetError, AssetRef, AssetStore};
use deckflow_core::{Document, DocId};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("storage failure: {0}")]
    Io(String),
    #[error("document not found: {0}")]
    NotFound(String),
    #[error("document {doc} is unreadable: {message}")]
    Malformed { doc: String, message: String },
    #[error("document {doc} references asset {asset} that is not stored")]
    MissingAsset { doc: String, asset: String },
    #[error("invalid document id {0:?}")]
    InvalidId(String),
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Write `bytes` to `path` atomically and durably.
fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let tmp = dir.join(format!(
        ".tmp-{}-{}",
        std::process::id(),
        TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    let result = (|| {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)?;
        // Make the rename itself durable. Not supported everywhere.
        if let Ok(d) = File::open(dir) {
            let _ = d.sync_all();
        }
        Ok(())
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

fn io(e: std::io::Error) -> StorageError {
    StorageError::Io(e.to_string())
}

/// Assets as `<dir>/<id>` plus a `<dir>/<id>.type` media-type sidecar. The
/// sidecar is written second, and an asset counts as present only once it
/// exists.
pub struct FsAssetStore {
    dir: PathBuf,
    cap: usize,
    verify_on_read: bool,
}

impl FsAssetStore {
    pub fn open(dir: impl Into<PathBuf>, cap: usize) -> Result<Self, StorageError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(io)?;
        Ok(Self { dir, cap, verify_on_read: false })
    }

    /// Recompute the hash of every asset read.
    pub fn checking(mut self) -> Self {
        self.verify_on_read = true;
        self
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn paths(&self, id: &str) -> Result<(PathBuf, PathBuf), AssetError> {
        if !is_asset_id(id) {
            return Err(AssetError::NotFound(id.to_string()));
        }
        Ok((self.dir.join(id), self.dir.join(format!("{id}.type"))))
    }
}

impl AssetStore for FsAssetStore {
    fn put(&self, bytes: &[u8], media_type: &str) -> Result<AssetRef, AssetError> {
        check_put(bytes, media_type, self.cap)?;
        let id = sha256_hex(bytes);
        let (data, meta) = self.paths(&id)?;
        if let Ok(existing) = self.meta(&id) {
            return Ok(existing);
        }
        let storage = |e: std::io::Error| AssetError::Storage(e.to_string());
        write_atomic(&data, bytes).map_err(storage)?;
        write_atomic(&meta, media_type.as_bytes()).map_err(storage)?;
        Ok(AssetRef {
            id,
            media_type: media_type.to_string(),
            byte_length: bytes.len() as u64,
        })
    }

    fn get(&self, id: &str) -> Result<Vec<u8>, AssetError> {
        let (data, meta) = self.paths(id)?;
        if !meta.exists() {
            return Err(AssetError::NotFound(id.to_string()));
        }
        let bytes = fs::read(&data).map_err(|_| AssetError::NotFound(id.to_string()))?;
        if self.verify_on_read && sha256_hex(&bytes) != id {
            return Err(AssetError::Corrupt { id: id.to_string() });
        }
        Ok(bytes)
    }

    fn meta(&self, id: &str) -> Result<AssetRef, AssetError> {
        let (data, meta) = self.paths(id)?;
        let media_type = fs::read_to_string(&meta).map_err(|_| AssetError::NotFound(id.to_string()))?;
        let len = fs::metadata(&data).map_err(|_| AssetError::NotFound(id.to_string()))?.len();
        Ok(AssetRef {
            id: id.to_string(),
            media_type,
            byte_length: len,
        })
    }
}

/// Documents as `<dir>/<doc_id>.json` in the canonical encoding.
pub struct DocStore {
    dir: PathBuf,
    fail_writes: AtomicBool,
}

impl DocStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StorageError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(io)?;
        Ok(Self {
            dir,
            fail_writes: AtomicBool::new(false),
        })
    }

    /// Make every save fail, for exercising the storage-failure path.
    pub fn set_fail_writes(&self, fail: bool) {
        self.fail_writes.store(fail, Ordering::SeqCst);
    }

    pub fn path(&self, doc_id: &DocId) -> Result<PathBuf, StorageError> {
        if !doc_id.is_valid() {
            return Err(StorageError::InvalidId(doc_id.to_string()));
        }
        Ok(self.dir.join(format!("{}.json", doc_id.as_str())))
    }

    /// Write `doc`. Refuses if any asset it references is not yet durable in
    /// `assets`, so a stored document never points at missing content.
    pub fn save(&self, doc: &Document, assets: &dyn AssetStore) -> Result<(), StorageError> {
        let path = self.path(&doc.doc_id)?;
        for card in doc.data_cards.values() {
            if let Some(a) = card.asset() {
                if !assets.contains(&a.id) {
                    return Err(StorageError::MissingAsset {
                        doc: doc.doc_id.to_string(),
                        asset: a.id.clone(),
                    });
                }
            }
        }
        if self.fail_writes.load(Ordering::SeqCst) {
            return Err(StorageError::Io("writes disabled".into()));
        }
        write_atomic(&path, doc.to_json().as_bytes()).map_err(io)
    }

    pub fn load(&self, doc_id: &DocId) -> Result<Document, StorageError> {
        let path = self.path(doc_id)?;
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(StorageError::NotFound(doc_id.to_string()))
            }
            Err(e) => return Err(io(e)),
        };
        let doc = Document::from_json(&text).map_err(|e| StorageError::Malformed {
            doc: doc_id.to_string(),
            message: e.to_string(),
        })?;
        if &doc.doc_id != doc_id {
            return Err(StorageError::Malformed {
                doc: doc_id.to_string(),
                message: format!("file holds document {}", doc.doc_id),
            });
        }
        Ok(doc)
    }

    /// Ids of all stored documents, sorted.
    pub fn list(&self) -> Result<Vec<DocId>, StorageError> {
        let mut ids: Vec<DocId> = fs::read_dir(&self.dir)
            .map_err(io)?
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                let stem = name.strip_suffix(".json")?;
                Some(DocId::new(stem)).filter(DocId::is_valid)
            })
            .collect();
        ids.sort();
        Ok(ids)
    }
}

/// The standard layout under a data directory.
pub struct DataDir {
    pub assets: FsAssetStore,
    pub docs: DocStore,
}

impl DataDir {
    pub fn open(root: &Path, asset_cap: usize) -> Result<Self, StorageError> {
        Ok(Self {
            assets: FsAssetStore::open(root.join("assets"), asset_cap)?,
            docs: DocStore::open(root.join("docs"))?,
        })
    }
}
