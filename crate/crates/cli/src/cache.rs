//! On-disk result cache keyed by configuration fingerprint.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use ruinlab::{Error, Result};

/// Environment variable naming the cache directory.
pub const CACHE_ENV: &str = "RUINLAB_CACHE_DIR";

/// Directory used when neither a flag nor the environment names one.
pub const DEFAULT_CACHE_DIR: &str = ".ruinlab-cache";

/// Where a cached value came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub key: String,
    pub file: String,
    pub created_unix: u64,
    pub code_version: String,
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    provenance: Provenance,
    value: T,
}

pub struct Cache {
    dir: Option<PathBuf>,
}

impl Cache {
    /// `flag` overrides the environment; `enabled = false` disables caching.
    pub fn resolve(flag: Option<&Path>, enabled: bool) -> Self {
        if !enabled {
            return Cache { dir: None };
        }
        let dir = match flag {
            Some(p) => p.to_path_buf(),
            None => std::env::var_os(CACHE_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(DEFAULT_CACHE_DIR)),
        };
        Cache { dir: Some(dir) }
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{key}.json")))
    }

    /// Look up `key`; unreadable or foreign entries count as misses.
    pub fn get<T: DeserializeOwned>(&self, key: &str) -> Option<(T, Provenance)> {
        let path = self.path(key)?;
        let text = fs::read_to_string(path).ok()?;
        let env: Envelope<T> = serde_json::from_str(&text).ok()?;
        (env.provenance.key == key).then_some((env.value, env.provenance))
    }

    /// Store `value` under `key` (no-op when caching is disabled).
    pub fn put<T: Serialize>(&self, key: &str, value: &T) -> Result<()> {
        let (Some(dir), Some(path)) = (self.dir.as_ref(), self.path(key)) else {
            return Ok(());
        };
        fs::create_dir_all(dir)?;
        let created_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let env = Envelope {
            provenance: Provenance {
                key: key.to_string(),
                file: path.display().to_string(),
                created_unix,
                code_version: ruinlab::estimate::CODE_VERSION.to_string(),
            },
            value,
        };
        // Write-then-rename so a concurrent reader never sees half a file.
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_vec(&env)?)?;
        fs::rename(&tmp, &path)?;
        Ok(())
    }

    /// Keys of all entries.
    pub fn list(&self) -> Result<Vec<String>> {
        let Some(dir) = self.dir.as_ref() else { return Ok(Vec::new()) };
        if !dir.exists() {
            return Ok(Vec::new());
        }
        let mut keys: Vec<String> = fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix(".json")).map(str::to_string))
            .collect();
        keys.sort();
        Ok(keys)
    }

    /// Remove all entries; returns how many were removed.
    pub fn clear(&self) -> Result<usize> {
        let keys = self.list()?;
        for k in &keys {
            if let Some(p) = self.path(k) {
                fs::remove_file(p)?;
            }
        }
        Ok(keys.len())
    }

    /// The raw stored envelope for `key`.
    pub fn show(&self, key: &str) -> Result<serde_json::Value> {
        let path = self.path(key).ok_or_else(|| Error::Config("caching is disabled".into()))?;
        let text = fs::read_to_string(&path).map_err(|_| Error::NoData(format!("no cache entry {key}")))?;
        Ok(serde_json::from_str(&text)?)
    }
}
