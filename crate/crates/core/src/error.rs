use std::path::PathBuf;

/// Errors raised by models, cursors, stores and the harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("provider unavailable: {0}")]
    ProviderUnavailable(String),

    #[error("authentication rejected by provider (HTTP {status})")]
    AuthFailure { status: u16 },

    #[error("rate limited by provider after {attempts} attempt(s)")]
    RateLimited { attempts: u32 },

    #[error("provider rejected the request (HTTP {status}): {body}")]
    RequestRejected { status: u16, body: String },

    #[error("malformed provider response: {0}")]
    MalformedResponse(String),

    #[error("provider request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },

    #[error(
        "replay miss for key {digest} (prompt {prompt:?}): requested position {position}, \
         stored length {stored_len}"
    )]
    ReplayMiss {
        digest: String,
        prompt: String,
        position: u64,
        stored_len: u64,
    },

    #[error("cache i/o error at {path}: {source}")]
    StoreIo {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("corrupt cache entry {digest}: {reason}")]
    CorruptEntry { digest: String, reason: String },

    #[error("corrupt cache index at {path}: {reason}")]
    CorruptIndex { path: PathBuf, reason: String },

    #[error("cache directory {path} is locked by process {owner}")]
    LockHeld { path: PathBuf, owner: String },

    #[error("cache directory {0} was opened read-only")]
    ReadOnly(PathBuf),

    #[error("destination {0} is not empty")]
    DestinationNotEmpty(PathBuf),

    #[error("{0} is not a cache directory")]
    NotACacheDir(PathBuf),

    #[error("invalid sampling parameters: {0}")]
    InvalidParams(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::StoreIo {
            path: path.into(),
            source,
        }
    }

    /// Whether retrying the same request may succeed.
    pub fn is_transient(&self) -> bool {
        matches!(
            self,
            Error::ProviderUnavailable(_) | Error::RateLimited { .. } | Error::Timeout { .. }
        )
    }
}
