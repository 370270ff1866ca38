mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::{copy_tree, fixture_dir, snapshot};
use serde_json::Value;

fn iidcache(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iidcache"))
        .args(args)
        .env_remove("OPENAI_API_KEY")
        .output()
        .unwrap()
}

fn json_of(args: &[&str]) -> (i32, Value) {
    let mut full = vec!["--json"];
    full.extend_from_slice(args);
    let out = iidcache(&full);
    let v = serde_json::from_slice(&out.stdout)
        .unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)));
    (out.status.code().unwrap(), v)
}

fn fixture_copy() -> tempfile::TempDir {
    let tmp = tempfile::tempdir().unwrap();
    copy_tree(&fixture_dir(), tmp.path());
    tmp
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn inspect_lists_the_seeded_keys() {
    let fx = fixture_copy();
    let (code, v) = json_of(&["inspect", "--cache", s(fx.path())]);
    assert_eq!(code, 0);
    let mut counts: Vec<u64> = v["keys"].as_array().unwrap().iter().map(|k| k["count"].as_u64().unwrap()).collect();
    counts.sort_unstable_by(|a, b| b.cmp(a));
    assert_eq!(counts, [4, 2, 2, 1]);

    let (_, v) = json_of(&["inspect", "--cache", s(fx.path()), "--select", "Bob"]);
    assert_eq!(v["keys"].as_array().unwrap().len(), 2);
}

#[test]
fn inspect_empty_dir_is_empty_listing() {
    let tmp = tempfile::tempdir().unwrap();
    let (code, v) = json_of(&["inspect", "--cache", s(tmp.path())]);
    assert_eq!(code, 0);
    assert_eq!(v["keys"].as_array().unwrap().len(), 0);
    let (code, v) = json_of(&["stats", "--cache", s(tmp.path())]);
    assert_eq!(code, 0);
    assert_eq!(v["records"], 0);
}

#[test]
fn read_only_commands_leave_bytes_untouched() {
    let fx = fixture_copy();
    let before = snapshot(fx.path());
    for cmd in ["inspect", "verify", "stats"] {
        for json in [false, true] {
            let mut args = vec![cmd, "--cache", s(fx.path())];
            if json {
                args.push("--json");
            }
            assert_eq!(iidcache(&args).status.code(), Some(0), "{cmd}");
        }
    }
    assert_eq!(snapshot(fx.path()), before);
}

#[test]
fn verify_reports_defects() {
    let fx = fixture_copy();
    let out = iidcache(&["verify", "--cache", s(fx.path())]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok"));

    let entries = fx.path().join("entries");
    let victim = std::fs::read_dir(&entries).unwrap().next().unwrap().unwrap().path();
    let bytes = std::fs::read(&victim).unwrap();
    std::fs::write(&victim, &bytes[..bytes.len() - 5]).unwrap();
    let (code, v) = json_of(&["verify", "--cache", s(fx.path())]);
    assert_eq!(code, 1);
    assert_eq!(v["ok"], false);
    assert!(!v["defects"].as_array().unwrap().is_empty());

    let empty = tempfile::tempdir().unwrap();
    let (code, v) = json_of(&["verify", "--cache", s(empty.path())]);
    assert_eq!(code, 1);
    assert_eq!(v["error"]["kind"], "not-a-cache-dir");
}

#[test]
fn slice_by_selector_and_cap() {
    let fx = fixture_copy();
    let out = tempfile::tempdir().unwrap();
    let dst = out.path().join("alice");
    let run = iidcache(&["slice", s(fx.path()), s(&dst), "--select", "Alice", "--max-per-key", "2"]);
    assert_eq!(run.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), "2 keys, 4 records");

    // Non-empty destination: refused, nothing written.
    let before = snapshot(&dst);
    let (code, v) = json_of(&["slice", s(fx.path()), s(&dst)]);
    assert_eq!(code, 1);
    assert_eq!(v["error"]["kind"], "destination-not-empty");
    assert_eq!(snapshot(&dst), before);
}

#[test]
fn full_slice_preserves_stats() {
    let fx = fixture_copy();
    let out = tempfile::tempdir().unwrap();
    let dst = out.path().join("all");
    assert_eq!(iidcache(&["slice", s(fx.path()), s(&dst)]).status.code(), Some(0));
    let (_, a) = json_of(&["stats", "--cache", s(fx.path())]);
    let (_, b) = json_of(&["stats", "--cache", s(&dst)]);
    assert_eq!(a, b);
}

#[test]
fn game_prints_the_golden_list() {
    let fx = fixture_copy();
    let out = iidcache(&["game", "--layering", "persistent-only", "--cache", s(fx.path())]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        stdout.contains(r#"responses: ["2", "1393", "2", "297", "1740", "297", "2", "1393", "2"]"#),
        "{stdout}"
    );
    assert!(stdout.contains("prompt tokens") && stdout.contains("cost ($)"));
}

#[test]
fn game_replay_miss_exits_one_with_context() {
    let fx = fixture_copy();
    let cfg = fx.path().join("bob.toml");
    std::fs::write(&cfg, "users = [\"Bob\", \"Bob\", \"Bob\"]\nintervals = [\"[1, 1000]\"]\nlayering = \"independent-over-persistent\"\n").unwrap();
    let out = iidcache(&[
        "game",
        "--layering",
        "independent-over-persistent",
        "--mode",
        "replay-strict",
        "--cache",
        s(fx.path()),
        "--config",
        s(&cfg),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("replay miss") && stderr.contains("position 2"), "{stderr}");
    assert!(stderr.contains("Bob"), "{stderr}");
}

#[test]
fn repair_replay_costs_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let cache = tmp.path().join("cache");
    let (code, rec) = json_of(&["repair", "--cache", s(&cache), "--seed", "4", "--deterministic-clock"]);
    assert_eq!(code, 0);
    assert!(rec["provider_calls"].as_u64().unwrap() > 0);

    let (code, replay) = json_of(&["repair", "--cache", s(&cache), "--mode", "replay-strict"]);
    assert_eq!(code, 0);
    assert_eq!(replay["provider_calls"], 0);
    let u = &replay["usage"];
    assert_eq!(
        (&u["prompt_tokens"], &u["completion_tokens"], &u["total_tokens"], &u["api_time_s"], &u["cost_usd"]),
        (&0.into(), &0.into(), &0.into(), &0.0.into(), &"0.00".into())
    );
    assert_eq!(replay["results"], rec["results"]);
}

#[test]
fn lock_held_exits_one() {
    let fx = fixture_copy();
    let _owner = iidcache::CacheDir::open(fx.path()).unwrap();
    let (code, v) = json_of(&["game", "--cache", s(fx.path())]);
    assert_eq!(code, 1);
    assert_eq!(v["error"]["kind"], "lock-held");
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(iidcache(&["game"]).status.code(), Some(2));
    assert_eq!(iidcache(&["verify"]).status.code(), Some(2));
    assert_eq!(iidcache(&["game", "--cache", "x", "--mode", "sometimes"]).status.code(), Some(2));
    assert_eq!(iidcache(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn http_provider_requires_explicit_endpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let (code, v) = json_of(&["game", "--cache", s(tmp.path()), "--provider", "http"]);
    assert_eq!(code, 1);
    assert_eq!(v["error"]["kind"], "invalid-argument");
    assert!(snapshot(tmp.path()).is_empty());
}

#[test]
fn every_subcommand_emits_one_json_document() {
    let fx = fixture_copy();
    let out = tempfile::tempdir().unwrap();
    let dst = out.path().join("d");
    let runs: Vec<Vec<&str>> = vec![
        vec!["inspect", "--cache", s(fx.path())],
        vec!["verify", "--cache", s(fx.path())],
        vec!["stats", "--cache", s(fx.path())],
        vec!["slice", s(fx.path()), s(&dst)],
        vec!["game", "--cache", s(fx.path()), "--mode", "replay-strict"],
        vec!["repair", "--cache", s(out.path()), "--c", "4", "--e", "2"],
    ];
    for args in runs {
        let (code, v) = json_of(&args);
        assert_eq!(code, 0, "{args:?}");
        assert!(v.is_object(), "{args:?}");
    }
}
