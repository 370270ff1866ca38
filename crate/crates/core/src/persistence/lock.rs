//! Single-owner lockfile for a cache directory.
//!
//! The lockfile records the owner's PID and the kernel boot id. A lock whose
//! owner is no longer running, or was written under a different boot, is
//! stale and gets taken over.

use std::fs::{self, OpenOptions};
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const LOCK_FILE: &str = "LOCK";

#[derive(Debug)]
pub(crate) struct DirLock {
    path: PathBuf,
}

#[derive(Debug, PartialEq, Eq)]
struct Owner {
    pid: u32,
    boot_id: String,
}

fn current_boot_id() -> String {
    fs::read_to_string("/proc/sys/kernel/random/boot_id")
        .map(|s| s.trim().to_owned())
        .unwrap_or_default()
}

fn parse_owner(content: &str) -> Option<Owner> {
    let mut pid = None;
    let mut boot_id = String::new();
    for line in content.lines() {
        if let Some(v) = line.strip_prefix("pid=") {
            pid = v.trim().parse().ok();
        } else if let Some(v) = line.strip_prefix("boot=") {
            boot_id = v.trim().to_owned();
        }
    }
    Some(Owner { pid: pid?, boot_id })
}

#[cfg(unix)]
fn process_alive(pid: u32) -> bool {
    let Ok(pid) = libc::pid_t::try_from(pid) else {
        return false;
    };
    // Signal 0 performs the permission and existence checks only.
    let rc = unsafe { libc::kill(pid, 0) };
    rc == 0 || std::io::Error::last_os_error().raw_os_error() == Some(libc::EPERM)
}

#[cfg(not(unix))]
fn process_alive(_pid: u32) -> bool {
    true
}

fn is_stale(owner: &Option<Owner>) -> bool {
    match owner {
        // Unparseable lockfile: a crash mid-write. Nobody can own it.
        None => true,
        Some(o) => {
            let boot = current_boot_id();
            (!o.boot_id.is_empty() && !boot.is_empty() && o.boot_id != boot)
                || !process_alive(o.pid)
        }
    }
}

impl DirLock {
    /// Acquires the lock in `root`. With `force`, any existing lock is removed.
    pub(crate) fn acquire(root: &Path, force: bool) -> Result<DirLock> {
        let path = root.join(LOCK_FILE);
        if force {
            match fs::remove_file(&path) {
                Ok(()) => {}
                Err(e) if e.kind() == ErrorKind::NotFound => {}
                Err(e) => return Err(Error::io(&path, e)),
            }
        }
        for _ in 0..2 {
            match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut file) => {
                    let body = format!("pid={}\nboot={}\n", std::process::id(), current_boot_id());
                    file.write_all(body.as_bytes())
                        .map_err(|e| Error::io(&path, e))?;
                    return Ok(DirLock { path });
                }
                Err(e) if e.kind() == ErrorKind::AlreadyExists => {
                    let content = fs::read_to_string(&path).unwrap_or_default();
                    let owner = parse_owner(&content);
                    if is_stale(&owner) {
                        let _ = fs::remove_file(&path);
                        continue;
                    }
                    return Err(Error::LockHeld {
                        path: root.to_path_buf(),
                        owner: owner.map(|o| o.pid.to_string()).unwrap_or_default(),
                    });
                }
                Err(e) => return Err(Error::io(&path, e)),
            }
        }
        Err(Error::LockHeld {
            path: root.to_path_buf(),
            owner: "unknown".into(),
        })
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn second_acquire_in_live_process_fails() {
        let dir = tempfile::tempdir().unwrap();
        let first = DirLock::acquire(dir.path(), false).unwrap();
        let err = DirLock::acquire(dir.path(), false).unwrap_err();
        assert!(matches!(err, Error::LockHeld { .. }));
        drop(first);
        assert!(!dir.path().join(LOCK_FILE).exists());
        DirLock::acquire(dir.path(), false).unwrap();
    }

    #[test]
    fn stale_lock_is_taken_over() {
        let dir = tempfile::tempdir().unwrap();
        // PIDs above the kernel's pid_max (at most 2^22) cannot exist.
        fs::write(
            dir.path().join(LOCK_FILE),
            format!("pid=99999999\nboot={}\n", current_boot_id()),
        )
        .unwrap();
        DirLock::acquire(dir.path(), false).unwrap();
    }

    #[test]
    fn lock_from_other_boot_is_stale() {
        let dir = tempfile::tempdir().unwrap();
        if current_boot_id().is_empty() {
            return;
        }
        fs::write(
            dir.path().join(LOCK_FILE),
            format!("pid={}\nboot=not-this-boot\n", std::process::id()),
        )
        .unwrap();
        DirLock::acquire(dir.path(), false).unwrap();
    }

    #[test]
    fn force_unlock_removes_live_lock() {
        let dir = tempfile::tempdir().unwrap();
        let held = DirLock::acquire(dir.path(), false).unwrap();
        std::mem::forget(held);
        DirLock::acquire(dir.path(), true).unwrap();
    }
}
