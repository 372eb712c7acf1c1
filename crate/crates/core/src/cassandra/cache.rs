use std::fs;
use std::io::{self, Read};
use std::path::{Path, PathBuf};
use std::time::Duration;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::benchmarks;

pub const DEFAULT_BASE_URL: &str = "http://pomdp.org/examples/";

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("no benchmark named `{0}`")]
    NotFound(String),
    #[error("checksum mismatch for {path}: recorded {expected}, found {actual}")]
    ChecksumMismatch { path: PathBuf, expected: String, actual: String },
    #[error("network unavailable: {0}")]
    NetworkUnavailable(String),
    #[error("cache i/o error: {0}")]
    Io(#[from] io::Error),
}

/// Source of raw benchmark bytes, swappable in tests.
pub trait Fetcher {
    fn fetch(&self, file_name: &str) -> Result<Vec<u8>, CacheError>;
}

pub struct HttpFetcher {
    pub base_url: String,
    pub timeout: Duration,
}

impl Default for HttpFetcher {
    fn default() -> Self {
        HttpFetcher { base_url: DEFAULT_BASE_URL.to_string(), timeout: Duration::from_secs(20) }
    }
}

impl Fetcher for HttpFetcher {
    fn fetch(&self, file_name: &str) -> Result<Vec<u8>, CacheError> {
        let url = format!("{}{}", self.base_url, file_name);
        let agent = ureq::AgentBuilder::new().timeout(self.timeout).build();
        let resp = agent.get(&url).call().map_err(|e| CacheError::NetworkUnavailable(e.to_string()))?;
        let mut body = Vec::new();
        resp.into_reader()
            .take(64 << 20)
            .read_to_end(&mut body)
            .map_err(|e| CacheError::NetworkUnavailable(format!("{url}: {e}")))?;
        Ok(body)
    }
}

/// Never touches the network; only files already in the cache resolve.
pub struct OfflineFetcher;

impl Fetcher for OfflineFetcher {
    fn fetch(&self, file_name: &str) -> Result<Vec<u8>, CacheError> {
        Err(CacheError::NetworkUnavailable(format!("offline, {file_name} not cached")))
    }
}

/// Upstream file name for a registry key.
pub fn remote_file_name(name: &str) -> Option<&'static str> {
    benchmarks::lookup(name).map(|b| b.remote_file)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

/// Returns `<cache_dir>/<name>.pomdp`, downloading it on first use.
///
/// A `<name>.sha256` file is written next to the download and checked on
/// each later call.
pub fn fetch_and_cache_with(name: &str, cache_dir: &Path, fetcher: &dyn Fetcher) -> Result<PathBuf, CacheError> {
    let remote = remote_file_name(name).ok_or_else(|| CacheError::NotFound(name.to_string()))?;
    let path = cache_dir.join(format!("{name}.pomdp"));
    let sum_path = cache_dir.join(format!("{name}.sha256"));
    if path.exists() {
        let bytes = fs::read(&path)?;
        let actual = sha256_hex(&bytes);
        match fs::read_to_string(&sum_path) {
            Ok(expected) => {
                let expected = expected.trim().to_string();
                if expected != actual {
                    return Err(CacheError::ChecksumMismatch { path, expected, actual });
                }
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => write_atomic(&sum_path, actual.as_bytes())?,
            Err(e) => return Err(e.into()),
        }
        return Ok(path);
    }
    let bytes = fetcher.fetch(remote)?;
    fs::create_dir_all(cache_dir)?;
    write_atomic(&path, &bytes)?;
    write_atomic(&sum_path, sha256_hex(&bytes).as_bytes())?;
    Ok(path)
}

/// As [`fetch_and_cache_with`] using HTTP and `POMDP_CACHE_DIR` when `cache_dir` is `None`.
pub fn fetch_and_cache(name: &str, cache_dir: Option<&Path>) -> Result<PathBuf, CacheError> {
    let dir = match cache_dir {
        Some(d) => d.to_path_buf(),
        None => default_cache_dir(),
    };
    fetch_and_cache_with(name, &dir, &HttpFetcher::default())
}

pub fn default_cache_dir() -> PathBuf {
    if let Some(dir) = std::env::var_os("POMDP_CACHE_DIR") {
        return PathBuf::from(dir);
    }
    std::env::var_os("HOME")
        .map(|h| PathBuf::from(h).join(".cache").join("smf-pomdp"))
        .unwrap_or_else(|| PathBuf::from(".pomdp-cache"))
}
