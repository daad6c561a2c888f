//! Persistent embedding cache.
//!
//! On-disk layout is an append-only sequence of records, all integers and
//! floats little-endian:
//!
//! ```text
//! key digest  u64
//! dim         u32
//! values      dim × f64
//! crc32       u32   (over digest, dim and values)
//! ```
//!
//! Records failing the checksum are dropped on load and the file is
//! rewritten without them. A later record for the same key wins.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, RwLock};

use thiserror::Error;

use super::{EmbeddingVector, ProviderKey};

const HEADER_LEN: usize = 12;
const CRC_LEN: usize = 4;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cache I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("corrupt cache record at byte {offset}: {reason}")]
    Corrupt { offset: usize, reason: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub entries: usize,
    pub hits: usize,
    pub misses: usize,
    /// Records dropped at load time because they failed validation.
    pub evicted: usize,
}

/// Thread-safe vector cache, optionally backed by a record file.
#[derive(Debug)]
pub struct VectorCache {
    path: Option<PathBuf>,
    entries: RwLock<HashMap<u64, EmbeddingVector>>,
    file: Mutex<Option<File>>,
    hits: AtomicUsize,
    misses: AtomicUsize,
    evicted: usize,
}

impl VectorCache {
    /// Cache that lives only as long as the process.
    pub fn in_memory() -> Self {
        VectorCache {
            path: None,
            entries: RwLock::new(HashMap::new()),
            file: Mutex::new(None),
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
            evicted: 0,
        }
    }

    /// Opens (or creates) a cache file, loading every valid record.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, CacheError> {
        let path = path.as_ref().to_path_buf();
        let io_err = |source| CacheError::Io {
            path: path.clone(),
            source,
        };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(io_err)?;
        }
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(io_err(e)),
        };
        let (records, problems) = decode_records(&bytes);
        for problem in &problems {
            log::warn!("{}: {problem}; entry evicted", path.display());
        }
        let mut entries = HashMap::with_capacity(records.len());
        for (digest, vector) in records {
            entries.insert(digest, vector);
        }
        if !problems.is_empty() {
            rewrite(&path, &entries).map_err(io_err)?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err)?;
        Ok(VectorCache {
            path: Some(path),
            entries: RwLock::new(entries),
            file: Mutex::new(Some(file)),
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
            evicted: problems.len(),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, key: &ProviderKey) -> Option<EmbeddingVector> {
        let found = self
            .entries
            .read()
            .expect("cache lock poisoned")
            .get(&key.digest())
            .cloned();
        let counter = if found.is_some() { &self.hits } else { &self.misses };
        counter.fetch_add(1, Ordering::Relaxed);
        found
    }

    pub fn put(&self, key: &ProviderKey, vector: &EmbeddingVector) -> Result<(), CacheError> {
        let digest = key.digest();
        let mut file = self.file.lock().expect("cache lock poisoned");
        if self
            .entries
            .read()
            .expect("cache lock poisoned")
            .get(&digest)
            .is_some_and(|v| v == vector)
        {
            return Ok(());
        }
        if let Some(file) = file.as_mut() {
            let record = encode_record(digest, vector);
            file.write_all(&record)
                .and_then(|_| file.flush())
                .map_err(|source| CacheError::Io {
                    path: self.path.clone().unwrap_or_default(),
                    source,
                })?;
        }
        self.entries
            .write()
            .expect("cache lock poisoned")
            .insert(digest, vector.clone());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops every entry, truncating the backing file.
    pub fn clear(&self) -> Result<(), CacheError> {
        let mut file = self.file.lock().expect("cache lock poisoned");
        if let Some(path) = &self.path {
            let io_err = |source| CacheError::Io {
                path: path.clone(),
                source,
            };
            File::create(path).map_err(io_err)?;
            *file = Some(
                OpenOptions::new()
                    .append(true)
                    .open(path)
                    .map_err(io_err)?,
            );
        }
        self.entries.write().expect("cache lock poisoned").clear();
        Ok(())
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            entries: self.len(),
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
            evicted: self.evicted,
        }
    }
}

fn encode_record(digest: u64, vector: &EmbeddingVector) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * vector.dim() + CRC_LEN);
    out.extend_from_slice(&digest.to_le_bytes());
    out.extend_from_slice(&(vector.dim() as u32).to_le_bytes());
    for v in vector.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn decode_records(bytes: &[u8]) -> (Vec<(u64, EmbeddingVector)>, Vec<CacheError>) {
    let mut records = Vec::new();
    let mut problems = Vec::new();
    let mut offset = 0;
    while offset < bytes.len() {
        let rest = &bytes[offset..];
        if rest.len() < HEADER_LEN + CRC_LEN {
            problems.push(CacheError::Corrupt {
                offset,
                reason: format!("truncated record ({} trailing bytes)", rest.len()),
            });
            break;
        }
        let digest = u64::from_le_bytes(rest[..8].try_into().unwrap());
        let dim = u32::from_le_bytes(rest[8..12].try_into().unwrap()) as usize;
        let body_len = HEADER_LEN + dim.saturating_mul(8);
        if dim == 0 || body_len.saturating_add(CRC_LEN) > rest.len() {
            // Framing is unrecoverable past this point.
            problems.push(CacheError::Corrupt {
                offset,
                reason: format!("implausible dimension {dim}"),
            });
            break;
        }
        let stored_crc = u32::from_le_bytes(rest[body_len..body_len + CRC_LEN].try_into().unwrap());
        offset += body_len + CRC_LEN;
        if crc32fast::hash(&rest[..body_len]) != stored_crc {
            problems.push(CacheError::Corrupt {
                offset: offset - body_len - CRC_LEN,
                reason: "checksum mismatch".into(),
            });
            continue;
        }
        let values = rest[HEADER_LEN..body_len]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        match EmbeddingVector::new(values) {
            Ok(v) => records.push((digest, v)),
            Err(_) => problems.push(CacheError::Corrupt {
                offset: offset - body_len - CRC_LEN,
                reason: "non-finite values".into(),
            }),
        }
    }
    (records, problems)
}

fn rewrite(path: &Path, entries: &HashMap<u64, EmbeddingVector>) -> io::Result<()> {
    let mut digests: Vec<_> = entries.keys().copied().collect();
    digests.sort_unstable();
    let mut bytes = Vec::new();
    for d in digests {
        bytes.extend(encode_record(d, &entries[&d]));
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)
}
