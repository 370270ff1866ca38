//! Canonical query keys.
//!
//! The digest is SHA-256 over a length-framed, fixed-order byte encoding of
//! `(provider_id, params, prompt)`. `extra` keys are emitted in sorted order
//! and floats in their shortest round-trip decimal form, so the digest does
//! not depend on insertion order, process, or platform.

use std::fmt::Write as _;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::{SamplingParams, Scalar};

/// Name of the hash recorded in the index header.
pub const HASH_ALGORITHM: &str = "sha256";

const KEY_FORMAT_TAG: &str = "iidcache-key/v1";

/// Canonical identity of a sampling distribution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryKey {
    digest: String,
    provider_id: String,
    params: SamplingParams,
    prompt: String,
}

impl QueryKey {
    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn provider_id(&self) -> &str {
        &self.provider_id
    }

    pub fn params(&self) -> &SamplingParams {
        &self.params
    }

    pub fn prompt(&self) -> &str {
        &self.prompt
    }

    /// Single-line JSON manifest, written as line 1 of an entry file.
    pub fn manifest_line(&self) -> String {
        serde_json::to_string(self).expect("query key serializes")
    }

    /// Parses a manifest line without trusting its recorded digest.
    /// Returns the recomputed key and the digest the manifest claims.
    pub fn from_manifest_line(line: &str) -> serde_json::Result<(QueryKey, String)> {
        let claimed: QueryKey = serde_json::from_str(line)?;
        let key = canonical_key(&claimed.provider_id, &claimed.params, &claimed.prompt);
        Ok((key, claimed.digest))
    }
}

impl PartialEq for QueryKey {
    fn eq(&self, other: &Self) -> bool {
        self.digest == other.digest
    }
}

impl Eq for QueryKey {}

impl Hash for QueryKey {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.digest.hash(state);
    }
}

fn push_framed(buf: &mut Vec<u8>, label: &str, bytes: &[u8]) {
    buf.extend_from_slice(label.as_bytes());
    buf.push(b' ');
    buf.extend_from_slice(bytes.len().to_string().as_bytes());
    buf.push(b':');
    buf.extend_from_slice(bytes);
    buf.push(b'\n');
}

fn push_line(buf: &mut Vec<u8>, label: &str, value: &str) {
    buf.extend_from_slice(label.as_bytes());
    buf.push(b' ');
    buf.extend_from_slice(value.as_bytes());
    buf.push(b'\n');
}

/// Shortest round-trip decimal rendering; `-0` is folded into `0`.
fn render_float(x: f64) -> String {
    let x = if x == 0.0 { 0.0 } else { x };
    let mut out = String::new();
    write!(out, "{x:?}").unwrap();
    out
}

/// The exact bytes that are hashed into a key digest.
pub fn canonical_bytes(provider_id: &str, params: &SamplingParams, prompt: &str) -> Vec<u8> {
    let mut buf = Vec::with_capacity(prompt.len() + 128);
    buf.extend_from_slice(KEY_FORMAT_TAG.as_bytes());
    buf.push(b'\n');
    push_framed(&mut buf, "provider_id", provider_id.as_bytes());
    push_framed(&mut buf, "model_id", params.model_id.as_bytes());
    push_line(&mut buf, "temperature", &render_float(params.temperature));
    push_line(&mut buf, "top_p", &render_float(params.top_p));
    push_line(&mut buf, "max_tokens", &params.max_tokens.to_string());
    push_line(&mut buf, "extra", &params.extra.len().to_string());
    // BTreeMap iterates in byte-lexicographic key order.
    for (name, value) in &params.extra {
        push_framed(&mut buf, "name", name.as_bytes());
        match value {
            Scalar::Bool(b) => push_line(&mut buf, "bool", if *b { "true" } else { "false" }),
            Scalar::Int(i) => push_line(&mut buf, "int", &i.to_string()),
            Scalar::Float(x) => push_line(&mut buf, "float", &render_float(*x)),
            Scalar::Str(s) => push_framed(&mut buf, "str", s.as_bytes()),
        }
    }
    push_framed(&mut buf, "prompt", prompt.as_bytes());
    buf
}

/// Builds the canonical key for a distribution.
pub fn canonical_key(provider_id: &str, params: &SamplingParams, prompt: &str) -> QueryKey {
    let digest = hex::encode(Sha256::digest(canonical_bytes(provider_id, params, prompt)));
    let mut params = params.clone();
    if params.temperature == 0.0 {
        params.temperature = 0.0;
    }
    if params.top_p == 0.0 {
        params.top_p = 0.0;
    }
    QueryKey {
        digest,
        provider_id: provider_id.to_owned(),
        params,
        prompt: prompt.to_owned(),
    }
}

/// True for a 64-character lowercase hex string.
pub(crate) fn is_digest(s: &str) -> bool {
    s.len() == 64 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> SamplingParams {
        SamplingParams::new("gpt-4.1-mini")
    }

    #[test]
    fn deterministic_digest() {
        let a = canonical_key("p", &params(), "hello");
        let b = canonical_key("p", &params(), "hello");
        assert_eq!(a.digest(), b.digest());
        assert!(is_digest(a.digest()));
    }

    #[test]
    fn trailing_space_is_distinct() {
        let a = canonical_key("p", &params(), "a");
        let b = canonical_key("p", &params(), "a ");
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn empty_and_whitespace_prompts_are_distinct() {
        let a = canonical_key("p", &params(), "");
        let b = canonical_key("p", &params(), " ");
        assert_ne!(a, b);
    }

    #[test]
    fn extra_insertion_order_is_irrelevant() {
        let mut xy = params();
        xy.extra.insert("x".into(), Scalar::Int(1));
        xy.extra.insert("y".into(), Scalar::Int(2));
        let mut yx = params();
        yx.extra.insert("y".into(), Scalar::Int(2));
        yx.extra.insert("x".into(), Scalar::Int(1));
        // Oracle: the serialized forms themselves are equal.
        assert_eq!(canonical_bytes("p", &xy, "q"), canonical_bytes("p", &yx, "q"));
        assert_eq!(canonical_key("p", &xy, "q"), canonical_key("p", &yx, "q"));
    }

    #[test]
    fn every_field_changes_identity() {
        let base = canonical_key("p", &params(), "q");
        let variants = [
            canonical_key("p2", &params(), "q"),
            canonical_key("p", &SamplingParams::new("other"), "q"),
            canonical_key("p", &params().with_temperature(0.7), "q"),
            canonical_key("p", &params().with_top_p(0.9), "q"),
            canonical_key("p", &params().with_max_tokens(12), "q"),
            canonical_key("p", &params().with_extra("seed", Scalar::Int(1)), "q"),
            canonical_key("p", &params(), "q2"),
        ];
        for v in &variants {
            assert_ne!(base, *v);
        }
    }

    #[test]
    fn int_and_float_extras_are_distinct() {
        let a = canonical_key("p", &params().with_extra("k", Scalar::Int(1)), "q");
        let b = canonical_key("p", &params().with_extra("k", Scalar::Float(1.0)), "q");
        assert_ne!(a, b);
    }

    #[test]
    fn length_framing_prevents_field_bleed() {
        let a = canonical_key("ab", &SamplingParams::new("c"), "q");
        let b = canonical_key("a", &SamplingParams::new("bc"), "q");
        assert_ne!(a, b);
    }

    #[test]
    fn negative_zero_folds() {
        let a = canonical_key("p", &params().with_temperature(0.0), "q");
        let b = canonical_key("p", &params().with_temperature(-0.0), "q");
        assert_eq!(a, b);
        assert_eq!(a.manifest_line(), b.manifest_line());
    }

    #[test]
    fn manifest_round_trip() {
        let key = canonical_key(
            "p",
            &params()
                .with_temperature(0.1)
                .with_extra("s", Scalar::Str("line\nbreak".into())),
            "multi\nline prompt",
        );
        let line = key.manifest_line();
        assert!(!line.contains('\n'));
        let (parsed, claimed) = QueryKey::from_manifest_line(&line).unwrap();
        assert_eq!(parsed, key);
        assert_eq!(claimed, key.digest());
        assert_eq!(parsed.manifest_line(), line);
    }

    #[test]
    fn float_extras_survive_the_manifest() {
        for x in [97045.75842124783, 0.1 + 0.2, 1e-300, f64::MAX] {
            let key = canonical_key("p", &params().with_extra("x", Scalar::Float(x)), "q");
            let (parsed, _) = QueryKey::from_manifest_line(&key.manifest_line()).unwrap();
            assert_eq!(parsed.digest(), key.digest(), "{x:?}");
        }
    }
}
