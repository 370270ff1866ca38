use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::persistence::dir::CacheDir;
use crate::persistence::key::QueryKey;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SliceReport {
    pub keys: u64,
    pub records: u64,
}

/// Copies the first `min(len, max_per_key)` records of every selected key
/// from `src` into a new cache at `dst`. Record lines are copied verbatim.
///
/// `dst` must be absent or an empty directory.
pub fn slice_cache(
    src: &CacheDir,
    dst: impl AsRef<Path>,
    selector: impl Fn(&QueryKey) -> bool,
    max_per_key: Option<u64>,
) -> Result<SliceReport> {
    let dst = dst.as_ref();
    if let Some(0) = max_per_key {
        return Err(Error::InvalidArgument("max_per_key must be >= 1".into()));
    }
    if dst.exists() {
        let mut contents = fs::read_dir(dst).map_err(|e| Error::io(dst, e))?;
        if contents.next().is_some() {
            return Err(Error::DestinationNotEmpty(dst.to_path_buf()));
        }
    }
    // Resolve the selection before creating anything, so a corrupt source
    // leaves no half-written destination behind.
    let mut selected = Vec::new();
    for (digest, _) in src.entries() {
        let key = src.entry_key(digest)?;
        if selector(&key) {
            let mut lines = src.record_lines(digest)?;
            if let Some(cap) = max_per_key {
                lines.truncate(cap.min(lines.len() as u64) as usize);
            }
            selected.push((key, lines));
        }
    }

    let mut out = CacheDir::open(dst)?;
    let mut report = SliceReport::default();
    for (key, lines) in selected {
        if lines.is_empty() {
            continue;
        }
        out.append_lines(&key, &lines)?;
        report.keys += 1;
        report.records += lines.len() as u64;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Clock, Origin, ResponseRecord, SamplingParams};
    use crate::persistence::{canonical_key, verify_cache};

    fn source() -> tempfile::TempDir {
        let tmp = tempfile::tempdir().unwrap();
        let mut dir = CacheDir::open(tmp.path()).unwrap();
        for (prompt, texts) in [("alpha", &["1", "2", "3"][..]), ("beta", &["4"][..])] {
            let key = canonical_key("scripted", &SamplingParams::new("m"), prompt);
            for t in texts {
                let rec = ResponseRecord {
                    text: (*t).into(),
                    prompt_tokens: 1,
                    completion_tokens: 1,
                    api_time_ms: 1,
                    provider_id: "scripted".into(),
                    created_at: Clock::deterministic().now(),
                    origin: Origin::Provider,
                };
                dir.append_response(&key, &rec).unwrap();
            }
        }
        tmp
    }

    #[test]
    fn empty_selection_gives_empty_valid_cache() {
        let src = source();
        let dst = tempfile::tempdir().unwrap();
        let out = dst.path().join("slice");
        let src_dir = CacheDir::open_read_only(src.path()).unwrap();
        let report = slice_cache(&src_dir, &out, |_| false, None).unwrap();
        assert_eq!(report, SliceReport::default());
        assert!(verify_cache(&out).is_ok());
        assert!(CacheDir::open_read_only(&out).unwrap().is_empty());
    }

    #[test]
    fn caps_per_key() {
        let src = source();
        let dst = tempfile::tempdir().unwrap();
        let src_dir = CacheDir::open_read_only(src.path()).unwrap();
        let report = slice_cache(&src_dir, dst.path(), |_| true, Some(2)).unwrap();
        assert_eq!(report, SliceReport { keys: 2, records: 3 });
        let out = CacheDir::open_read_only(dst.path()).unwrap();
        let alpha = canonical_key("scripted", &SamplingParams::new("m"), "alpha");
        let texts: Vec<_> = out.load_entry(&alpha).unwrap().into_iter().map(|r| r.text).collect();
        assert_eq!(texts, ["1", "2"]);
    }

    #[test]
    fn refuses_non_empty_destination() {
        let src = source();
        let dst = tempfile::tempdir().unwrap();
        fs::write(dst.path().join("keep"), "x").unwrap();
        let src_dir = CacheDir::open_read_only(src.path()).unwrap();
        let err = slice_cache(&src_dir, dst.path(), |_| true, None).unwrap_err();
        assert!(matches!(err, Error::DestinationNotEmpty(_)));
        assert_eq!(fs::read_dir(dst.path()).unwrap().count(), 1);
    }
}
