use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use tracescope_core::index::shard_dirs;
use tracescope_core::{validate_shard, Index, TraceConfig, Tracer};

pub const MIN_BODY_LIMIT: usize = 1 << 20;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub index_root: PathBuf,
    pub listen: SocketAddr,
    /// Worker threads for per-position queries; 0 means one per CPU.
    pub parallelism: usize,
    pub trace_defaults: TraceConfig,
    pub body_limit: usize,
    pub timeout: Duration,
    /// Shared secret for the takedown endpoint; takedowns are refused when unset.
    pub admin_token: Option<String>,
}

impl ServiceConfig {
    pub fn new(index_root: impl Into<PathBuf>) -> Self {
        ServiceConfig {
            index_root: index_root.into(),
            listen: SocketAddr::from(([127, 0, 0, 1], 8080)),
            parallelism: 0,
            trace_defaults: TraceConfig::default(),
            body_limit: 4 * MIN_BODY_LIMIT,
            timeout: Duration::from_secs(30),
            admin_token: None,
        }
    }

    /// Reads `TRACESCOPE_INDEX_ROOT`, `TRACESCOPE_LISTEN`, and
    /// `TRACESCOPE_ADMIN_TOKEN`.
    pub fn from_env() -> Result<Self, String> {
        let root = std::env::var("TRACESCOPE_INDEX_ROOT").map_err(|_| "TRACESCOPE_INDEX_ROOT is not set".to_string())?;
        let mut config = ServiceConfig::new(root);
        if let Ok(listen) = std::env::var("TRACESCOPE_LISTEN") {
            config.listen = listen
                .parse()
                .map_err(|e| format!("TRACESCOPE_LISTEN={listen:?}: {e}"))?;
        }
        config.admin_token = std::env::var("TRACESCOPE_ADMIN_TOKEN").ok().filter(|t| !t.is_empty());
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.timeout.is_zero() {
            return Err("timeout must be positive".into());
        }
        if self.body_limit < MIN_BODY_LIMIT {
            return Err(format!("body limit must be at least {MIN_BODY_LIMIT} bytes"));
        }
        self.trace_defaults.validate().map_err(|e| e.to_string())
    }
}

#[derive(Clone)]
pub enum LoadState {
    Loading,
    Ready(Arc<Tracer>),
    Failed { message: String, shard: Option<String> },
}

pub struct AppState {
    pub config: ServiceConfig,
    load: RwLock<LoadState>,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Arc<Self> {
        Arc::new(AppState {
            config,
            load: RwLock::new(LoadState::Loading),
        })
    }

    pub fn load_state(&self) -> LoadState {
        self.load.read().expect("load state lock").clone()
    }

    pub fn set_state(&self, state: LoadState) {
        *self.load.write().expect("load state lock") = state;
    }

    pub fn tracer(&self) -> Option<Arc<Tracer>> {
        match &*self.load.read().expect("load state lock") {
            LoadState::Ready(t) => Some(t.clone()),
            _ => None,
        }
    }

    /// Validates every shard, opens the index, and publishes the result.
    /// Blocking.
    pub fn load(&self) {
        let state = match open_validated(&self.config.index_root, self.config.parallelism) {
            Ok(tracer) => {
                log::info!(
                    "index loaded: {} shards, {} tokens",
                    tracer.index().shards().len(),
                    tracer.index().num_tokens()
                );
                LoadState::Ready(Arc::new(tracer))
            }
            Err(failed) => {
                log::error!("index failed to load: {}", failed.message());
                failed
            }
        };
        self.set_state(state);
    }
}

impl LoadState {
    fn message(&self) -> &str {
        match self {
            LoadState::Failed { message, .. } => message,
            LoadState::Loading => "loading",
            LoadState::Ready(_) => "ready",
        }
    }
}

fn open_validated(root: &Path, parallelism: usize) -> Result<Tracer, LoadState> {
    let fail = |message: String, shard: Option<String>| LoadState::Failed { message, shard };
    let dirs = shard_dirs(root).map_err(|e| fail(e.to_string(), None))?;
    for dir in &dirs {
        let name = dir.file_name().map(|n| n.to_string_lossy().into_owned());
        let report = validate_shard(dir).map_err(|e| fail(e.to_string(), name.clone()))?;
        if !report.passed() {
            let failed: Vec<&str> = report.failed().map(|c| c.name).collect();
            return Err(fail(
                format!("shard {} failed checks: {}", name.as_deref().unwrap_or("?"), failed.join(", ")),
                name,
            ));
        }
    }
    let index = Index::open(root).map_err(|e| fail(e.to_string(), None))?;
    Tracer::new(Arc::new(index), parallelism).map_err(|e| fail(e.to_string(), None))
}
