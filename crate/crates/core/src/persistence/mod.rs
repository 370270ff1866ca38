//! Bit-exact on-disk cache format: canonical keys, append-only entry files,
//! an index of record counts, a single-owner lockfile, plus slicing,
//! verification and statistics over whole directories.

mod dir;
mod key;
mod lock;
mod slice;
mod stats;
mod verify;

pub use dir::{index_header, CacheDir, ENTRIES_DIR, FORMAT_VERSION, INDEX_FILE};
pub use key::{canonical_bytes, canonical_key, QueryKey, HASH_ALGORITHM};
pub use lock::LOCK_FILE;
pub use slice::{slice_cache, SliceReport};
pub use stats::{cache_stats, CacheStats};
pub use verify::{verify_cache, Defect, VerifyReport};
