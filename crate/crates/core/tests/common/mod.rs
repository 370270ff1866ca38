#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use iidcache::harness::seed_example_cache;
use iidcache::{Clock, ScriptedProvider};

/// The committed seeded cache for the guessing-game examples.
pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join("guess-cache")
}

/// Provider the fixture was seeded with.
pub fn fixture_provider() -> ScriptedProvider {
    ScriptedProvider::new(0).with_clock(Clock::deterministic())
}

pub fn seed_fresh(dir: &Path) {
    seed_example_cache(dir, &fixture_provider()).unwrap();
}

/// Every regular file under `root`, keyed by relative path.
pub fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

/// Copies a cache tree into `dst`.
pub fn copy_tree(src: &Path, dst: &Path) {
    for (rel, bytes) in snapshot(src) {
        let path = dst.join(rel);
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(path, bytes).unwrap();
    }
}
