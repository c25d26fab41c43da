//! Content-addressed run directories that never overwrite earlier runs.

use std::io;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Creates `<root>/<command>-<hash12>` where the hash covers `key`. If that
/// directory exists, `-1`, `-2`, … are appended until a fresh name is found.
pub fn create_run_dir(root: &Path, command: &str, key: &[u8]) -> io::Result<PathBuf> {
    std::fs::create_dir_all(root)?;
    let base = format!("{command}-{}", &sha256_hex(key)[..12]);
    for n in 0usize.. {
        let name = if n == 0 { base.clone() } else { format!("{base}-{n}") };
        let dir = root.join(name);
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e),
        }
    }
    unreachable!("unbounded suffix search")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn collisions_get_suffixes() {
        let root = tempfile::tempdir().unwrap();
        let a = create_run_dir(root.path(), "train", b"k").unwrap();
        let b = create_run_dir(root.path(), "train", b"k").unwrap();
        let c = create_run_dir(root.path(), "train", b"other").unwrap();
        assert_ne!(a, b);
        assert!(b.file_name().unwrap().to_str().unwrap().ends_with("-1"));
        assert_ne!(a.file_name(), c.file_name());
    }
}
