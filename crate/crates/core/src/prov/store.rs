use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use super::document::{InvalidDocument, ProvDocument};
use crate::digest::Digest;

pub const PROV_SCHEME: &str = "prov";
pub const DATA_SCHEME: &str = "data";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("checksum mismatch for {uri}: expected {expected}, found {actual}")]
    ChecksumMismatch { uri: String, expected: Digest, actual: Digest },
    #[error("malformed uri `{0}`")]
    BadUri(String),
    #[error(transparent)]
    Invalid(#[from] InvalidDocument),
    #[error("stored document does not parse: {0}")]
    Unparseable(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Immutable blobs addressed by their SHA-256, laid out as
/// `<root>/<first two hex chars>/<remaining hex chars>`.
pub struct ContentStore {
    root: PathBuf,
    scheme: &'static str,
}

/// Result of a put: where the blob lives and whether this call created it.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Stored {
    pub uri: String,
    pub checksum: Digest,
    pub created: bool,
}

impl ContentStore {
    pub fn new(root: impl Into<PathBuf>, scheme: &'static str) -> Self {
        ContentStore { root: root.into(), scheme }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn uri_for(&self, checksum: &Digest) -> String {
        let hex = checksum.to_hex();
        format!("{}://{}/{}", self.scheme, &hex[..2], &hex[2..])
    }

    pub fn path_for(&self, checksum: &Digest) -> PathBuf {
        let hex = checksum.to_hex();
        self.root.join(&hex[..2]).join(&hex[2..])
    }

    /// Maps a URI of this store back to its file path.
    pub fn path_of_uri(&self, uri: &str) -> Result<PathBuf, StoreError> {
        let bad = || StoreError::BadUri(uri.to_string());
        let rest = uri.strip_prefix(self.scheme).and_then(|r| r.strip_prefix("://")).ok_or_else(bad)?;
        let (dir, file) = rest.split_once('/').ok_or_else(bad)?;
        let ok = |s: &str| s.bytes().all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase());
        if dir.len() != 2 || file.len() != 62 || !ok(dir) || !ok(file) {
            return Err(bad());
        }
        Ok(self.root.join(dir).join(file))
    }

    pub fn put(&self, bytes: &[u8]) -> Result<Stored, StoreError> {
        let checksum = Digest::of(bytes);
        let path = self.path_for(&checksum);
        let uri = self.uri_for(&checksum);
        if path.exists() {
            return Ok(Stored { uri, checksum, created: false });
        }
        let dir = path.parent().expect("blob path has a parent");
        fs::create_dir_all(dir)?;
        static SEQ: AtomicU64 = AtomicU64::new(0);
        let tmp = dir.join(format!(".{}.{}.tmp", std::process::id(), SEQ.fetch_add(1, Ordering::Relaxed)));
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, &path)?;
        Ok(Stored { uri, checksum, created: true })
    }

    /// Reads the blob at `uri` and checks it against `expected`.
    pub fn get(&self, uri: &str, expected: &Digest) -> Result<Vec<u8>, StoreError> {
        let path = self.path_of_uri(uri)?;
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(StoreError::NotFound(uri.to_string())),
            Err(e) => return Err(e.into()),
        };
        let actual = Digest::of(&bytes);
        if actual != *expected {
            return Err(StoreError::ChecksumMismatch { uri: uri.to_string(), expected: *expected, actual });
        }
        Ok(bytes)
    }

    pub fn remove(&self, checksum: &Digest) -> Result<(), StoreError> {
        match fs::remove_file(self.path_for(checksum)) {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
            Err(e) => Err(e.into()),
        }
    }

    /// Names of all stored blobs, sorted.
    pub fn list(&self) -> Result<Vec<String>, StoreError> {
        let mut out = Vec::new();
        if !self.root.exists() {
            return Ok(out);
        }
        for dir in fs::read_dir(&self.root)? {
            let dir = dir?;
            let name = dir.file_name().to_string_lossy().into_owned();
            if name.len() != 2 || !dir.file_type()?.is_dir() {
                continue;
            }
            for f in fs::read_dir(dir.path())? {
                let f = f?.file_name().to_string_lossy().into_owned();
                if !f.starts_with('.') {
                    out.push(format!("{name}{f}"));
                }
            }
        }
        out.sort();
        Ok(out)
    }

    /// Digest over the sorted list of stored blob names.
    pub fn digest(&self) -> Result<Digest, StoreError> {
        Ok(crate::canonical::canonical_digest(&self.list()?))
    }
}

/// Provenance documents on top of a [`ContentStore`], stored in canonical form.
pub struct ProvStore {
    blobs: ContentStore,
}

impl ProvStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        ProvStore { blobs: ContentStore::new(root, PROV_SCHEME) }
    }

    pub fn blobs(&self) -> &ContentStore {
        &self.blobs
    }

    pub fn store_document(&self, doc: &ProvDocument) -> Result<Stored, StoreError> {
        doc.validate()?;
        self.blobs.put(&doc.canonical_bytes())
    }

    pub fn fetch_document(&self, uri: &str, expected: &Digest) -> Result<ProvDocument, StoreError> {
        let bytes = self.blobs.get(uri, expected)?;
        let doc: ProvDocument = serde_json::from_slice(&bytes).map_err(|e| StoreError::Unparseable(e.to_string()))?;
        doc.validate()?;
        Ok(doc)
    }
}
