//! Content-addressed response cache.
//!
//! Layout: `{dir}/{key[0..2]}/{key}.json`, each file holding the request,
//! the response text and a unix timestamp. Writes go through a temp file in
//! the same directory followed by a rename, so concurrent writers of the
//! same key never expose a partial file.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{GatewayError, GenerationRequest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub request: GenerationRequest,
    pub response: String,
    pub timestamp: u64,
}

#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.dir
            .join(&key[..2.min(key.len())])
            .join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Result<Option<CacheEntry>, GatewayError> {
        let path = self.path_for(key);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(cache_io(key, &path, e)),
        };
        serde_json::from_slice(&bytes)
            .map(Some)
            .map_err(|e| cache_io(key, &path, e))
    }

    pub fn put(
        &self,
        key: &str,
        request: &GenerationRequest,
        response: &str,
    ) -> Result<(), GatewayError> {
        let path = self.path_for(key);
        let parent = path.parent().expect("cache path has a fan-out parent");
        fs::create_dir_all(parent).map_err(|e| cache_io(key, parent, e))?;
        let entry = CacheEntry {
            request: request.clone(),
            response: response.to_owned(),
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        let body = serde_json::to_vec_pretty(&entry).map_err(|e| cache_io(key, &path, e))?;
        let mut tmp =
            tempfile::NamedTempFile::new_in(parent).map_err(|e| cache_io(key, parent, e))?;
        tmp.write_all(&body)
            .map_err(|e| cache_io(key, tmp.path(), e))?;
        tmp.persist(&path)
            .map_err(|e| cache_io(key, &path, e.error))?;
        Ok(())
    }

    /// Keys of every stored entry, sorted.
    pub fn keys(&self) -> io::Result<Vec<String>> {
        let mut keys = Vec::new();
        let shards = match fs::read_dir(&self.dir) {
            Ok(rd) => rd,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(keys),
            Err(e) => return Err(e),
        };
        for shard in shards {
            let shard = shard?;
            if !shard.file_type()?.is_dir() {
                continue;
            }
            for file in fs::read_dir(shard.path())? {
                let name = file?.file_name();
                if let Some(key) = name.to_str().and_then(|n| n.strip_suffix(".json")) {
                    keys.push(key.to_owned());
                }
            }
        }
        keys.sort();
        Ok(keys)
    }
}

fn cache_io(key: &str, path: &Path, err: impl std::fmt::Display) -> GatewayError {
    GatewayError::CacheIo {
        key: key.to_owned(),
        message: format!("{}: {err}", path.display()),
    }
}
