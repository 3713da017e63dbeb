use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;

use super::{
    Backend, Backends, BackendsBuilder, CachedBackend, FixtureBackend, HttpBackend, Operation,
    ReplayBackend, ResponseCache,
};
use crate::error::BackendError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Fixture,
    Replay,
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_retries() -> u32 {
    2
}

type Instantiated = (Arc<dyn Backend>, Option<Arc<ResponseCache>>);

/// One `[[backend]]` table of a backends file.
///
/// Secrets never live here: `auth_env` names the environment variable that
/// holds the token.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    /// Fixture file or replay archive.
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// Operations served; empty means every operation not claimed elsewhere.
    #[serde(default)]
    pub operations: Vec<Operation>,
    #[serde(default)]
    pub single_flight: bool,
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), BackendError> {
        let err = |m: &str| Err(BackendError::Config(m.to_string()));
        if self.timeout_ms == 0 {
            return err("timeout_ms must be positive");
        }
        match self.kind {
            BackendKind::Http if self.endpoint.is_none() => err("http backend requires endpoint"),
            BackendKind::Fixture | BackendKind::Replay if self.path.is_none() => {
                err("fixture and replay backends require path")
            }
            _ => Ok(()),
        }
    }

    fn resolve(&self, base: &Path, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }

    fn instantiate(
        &self,
        base: &Path,
        cache_override: Option<&Path>,
        use_cache: bool,
    ) -> Result<Instantiated, BackendError> {
        self.validate()?;
        let backend: Arc<dyn Backend> = match self.kind {
            BackendKind::Fixture => Arc::new(FixtureBackend::load(
                &self.resolve(base, self.path.as_ref().unwrap()),
            )?),
            BackendKind::Replay => Arc::new(ReplayBackend::load(
                &self.resolve(base, self.path.as_ref().unwrap()),
            )?),
            BackendKind::Http => {
                let token = match &self.auth_env {
                    Some(var) => Some(std::env::var(var).map_err(|_| {
                        BackendError::Config(format!("environment variable {var} is not set"))
                    })?),
                    None => None,
                };
                Arc::new(HttpBackend::new(
                    self.endpoint.as_ref().unwrap(),
                    token,
                    self.timeout_ms,
                    self.retries,
                ))
            }
        };
        let cache_dir = cache_override
            .map(Path::to_path_buf)
            .or_else(|| self.cache_dir.as_ref().map(|d| self.resolve(base, d)));
        match cache_dir {
            Some(dir) if use_cache => {
                let cache = Arc::new(ResponseCache::open(&dir)?);
                Ok((
                    Arc::new(CachedBackend::new(backend, cache.clone())),
                    Some(cache),
                ))
            }
            _ => Ok((backend, None)),
        }
    }
}

/// Contents of a backends TOML file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendsFile {
    /// Shared dimension of text and image embeddings, checked on every call.
    #[serde(default)]
    pub embedding_dim: Option<usize>,
    #[serde(rename = "backend")]
    pub backends: Vec<BackendConfig>,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl BackendsFile {
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path).map_err(|source| BackendError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut file = Self::parse(&text)
            .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
        file.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(file)
    }

    pub fn parse(text: &str) -> Result<Self, BackendError> {
        let file: Self = toml::from_str(text).map_err(|e| BackendError::Config(e.to_string()))?;
        if file.backends.is_empty() {
            return Err(BackendError::Config("no [[backend]] tables".into()));
        }
        if file.embedding_dim == Some(0) {
            return Err(BackendError::Config(
                "embedding_dim must be positive".into(),
            ));
        }
        for b in &file.backends {
            b.validate()?;
        }
        Ok(file)
    }

    /// Cache directories named by the file, resolved.
    pub fn cache_dirs(&self) -> Vec<PathBuf> {
        let mut dirs: Vec<PathBuf> = self
            .backends
            .iter()
            .filter_map(|b| b.cache_dir.as_ref().map(|d| b.resolve(&self.base_dir, d)))
            .collect();
        dirs.sort();
        dirs.dedup();
        dirs
    }

    /// Instantiate every backend and route operations to them. Later tables
    /// do not override operations claimed by earlier ones.
    pub fn build(
        &self,
        cache_override: Option<&Path>,
        use_cache: bool,
    ) -> Result<BackendsBuilder, BackendError> {
        let mut builder = Backends::builder();
        if let Some(d) = self.embedding_dim {
            builder = builder.embedding_dim(d);
        }
        let mut claimed = std::collections::BTreeSet::new();
        for cfg in &self.backends {
            let (backend, cache) = cfg.instantiate(&self.base_dir, cache_override, use_cache)?;
            if let Some(c) = cache {
                builder = builder.cache(c);
            }
            let backend = if cfg.single_flight {
                builder::serialized(backend)
            } else {
                backend
            };
            if cfg.operations.is_empty() {
                builder = builder.fallback_if_unset(backend);
            } else {
                for op in &cfg.operations {
                    if claimed.insert(*op) {
                        builder = builder.route(*op, backend.clone());
                    }
                }
            }
        }
        Ok(builder)
    }
}

mod builder {
    use std::sync::{Arc, Mutex};

    use crate::backends::{Backend, Request, Response};
    use crate::error::BackendError;

    struct Serialized {
        inner: Arc<dyn Backend>,
        lock: Mutex<()>,
    }

    impl Backend for Serialized {
        fn call(&self, request: &Request) -> Result<Response, BackendError> {
            let _guard = self.lock.lock().unwrap_or_else(|p| p.into_inner());
            self.inner.call(request)
        }

        fn single_flight(&self) -> bool {
            true
        }

        fn name(&self) -> String {
            self.inner.name()
        }
    }

    pub(crate) fn serialized(inner: Arc<dyn Backend>) -> Arc<dyn Backend> {
        if inner.single_flight() {
            return inner;
        }
        Arc::new(Serialized {
            inner,
            lock: Mutex::new(()),
        })
    }
}
