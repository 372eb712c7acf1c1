//! Registry of the benchmark instances used in tests and the CLI.
//!
//! Each entry carries a bundled copy so that everything runs offline.
//! Only `tiger` is the library file verbatim; the others are
//! reconstructions or stand-ins, see [`Provenance`].

use std::path::{Path, PathBuf};

use crate::cassandra::{self, default_cache_dir, fetch_and_cache_with, CacheError, Fetcher, HttpFetcher, ParseError};
use crate::model::PomdpInstance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    /// Byte-for-byte copy of the pomdp.org file.
    Original,
    /// Rebuilt from the published problem description; dimensions and
    /// zero pattern agree with the library statistics.
    Reconstruction,
    /// Hand-written instance with the library file's dimensions only.
    StandIn,
}

#[derive(Debug, Clone, Copy)]
pub struct Benchmark {
    pub name: &'static str,
    pub remote_file: &'static str,
    pub provenance: Provenance,
    pub text: &'static str,
}

pub const REGISTRY: &[Benchmark] = &[
    Benchmark {
        name: "tiger",
        remote_file: "tiger.aaai.POMDP",
        provenance: Provenance::Original,
        text: include_str!("../data/tiger.POMDP"),
    },
    Benchmark {
        name: "paint",
        remote_file: "paint.95.POMDP",
        provenance: Provenance::Reconstruction,
        text: include_str!("../data/paint.POMDP"),
    },
    Benchmark {
        name: "1d",
        remote_file: "1d.POMDP",
        provenance: Provenance::Reconstruction,
        text: include_str!("../data/1d.POMDP"),
    },
    Benchmark {
        name: "ejs1",
        remote_file: "ejs1.POMDP",
        provenance: Provenance::Reconstruction,
        text: include_str!("../data/ejs1.POMDP"),
    },
    Benchmark {
        name: "ejs2",
        remote_file: "ejs2.POMDP",
        provenance: Provenance::StandIn,
        text: include_str!("../data/ejs2.POMDP"),
    },
    Benchmark {
        name: "ejs3",
        remote_file: "ejs3.POMDP",
        provenance: Provenance::StandIn,
        text: include_str!("../data/ejs3.POMDP"),
    },
    Benchmark {
        name: "web-mall",
        remote_file: "web-mall.POMDP",
        provenance: Provenance::StandIn,
        text: include_str!("../data/web-mall.POMDP"),
    },
];

pub fn lookup(name: &str) -> Option<&'static Benchmark> {
    REGISTRY.iter().find(|b| b.name == name)
}

/// Parses the bundled copy. Panics only if a bundled file is broken,
/// which the unit tests rule out.
pub fn bundled(name: &str) -> Option<PomdpInstance> {
    lookup(name).map(|b| cassandra::parse(b.text).unwrap_or_else(|e| panic!("bundled {name} is invalid: {e}")))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Source {
    File(PathBuf),
    Cache(PathBuf),
    Bundled(Provenance),
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("{path}: {source}")]
    Parse { path: String, source: ParseError },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Cache(#[from] CacheError),
}

/// Resolves a path or registry name.
///
/// Existing paths are parsed directly. Names go through the download
/// cache, falling back to the bundled copy when the network is down.
pub fn load(spec: &str, cache_dir: Option<&Path>) -> Result<(PomdpInstance, Source), LoadError> {
    load_with(spec, cache_dir, &HttpFetcher::default())
}

/// As [`load`] with an explicit download source.
pub fn load_with(spec: &str, cache_dir: Option<&Path>, fetcher: &dyn Fetcher) -> Result<(PomdpInstance, Source), LoadError> {
    let path = Path::new(spec);
    if path.is_file() {
        let text = std::fs::read_to_string(path).map_err(|e| LoadError::Io { path: spec.into(), source: e })?;
        let inst = cassandra::parse(&text).map_err(|e| LoadError::Parse { path: spec.into(), source: e })?;
        return Ok((inst, Source::File(path.to_path_buf())));
    }
    let Some(bench) = lookup(spec) else {
        return Err(CacheError::NotFound(spec.to_string()).into());
    };
    let dir = cache_dir.map_or_else(default_cache_dir, Path::to_path_buf);
    match fetch_and_cache_with(spec, &dir, fetcher) {
        Ok(p) => {
            let text = std::fs::read_to_string(&p).map_err(|e| LoadError::Io { path: p.display().to_string(), source: e })?;
            let inst =
                cassandra::parse(&text).map_err(|e| LoadError::Parse { path: p.display().to_string(), source: e })?;
            Ok((inst, Source::Cache(p)))
        }
        Err(CacheError::NetworkUnavailable(msg)) => {
            log::warn!("{msg}; using the bundled copy of {spec} ({:?})", bench.provenance);
            Ok((bundled(spec).expect("registry entry"), Source::Bundled(bench.provenance)))
        }
        Err(e) => Err(e.into()),
    }
}
