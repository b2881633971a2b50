//! Files compiled into the library: the Client example repository and the
//! offline install toolchain used by the default execution profile.

use std::io;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use sha2::{Digest, Sha256};

/// The two-bug example repository: an undeclared third-party package and an
/// import of a module path that does not exist.
pub const CLIENT_FIXTURE: &[(&str, &str)] = &[
    ("main.py", include_str!("../fixtures/client/main.py")),
    ("requirements.txt", include_str!("../fixtures/client/requirements.txt")),
    ("src/__init__.py", include_str!("../fixtures/client/src/__init__.py")),
    ("src/client.py", include_str!("../fixtures/client/src/client.py")),
];

const TOOLCHAIN: &[(&str, &str)] = &[
    ("offline_install.py", include_str!("../assets/offline_install.py")),
    (
        "store/colorama/colorama/__init__.py",
        include_str!("../assets/store/colorama/colorama/__init__.py"),
    ),
    (
        "store/requests/requests/__init__.py",
        include_str!("../assets/store/requests/requests/__init__.py"),
    ),
    (
        "store/tabulate/tabulate/__init__.py",
        include_str!("../assets/store/tabulate/tabulate/__init__.py"),
    ),
];

/// Distributions the bundled store can install.
pub fn store_packages() -> Vec<&'static str> {
    TOOLCHAIN
        .iter()
        .filter_map(|(path, _)| path.strip_prefix("store/")?.split('/').next())
        .collect()
}

pub fn write_files(dest: &Path, files: &[(&str, &str)]) -> io::Result<()> {
    for (rel, body) in files {
        let path = dest.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, body)?;
    }
    Ok(())
}

pub fn write_client_fixture(dest: &Path) -> io::Result<()> {
    write_files(dest, CLIENT_FIXTURE)
}

/// Directory holding the installer script and package store, written once
/// per process under a content-addressed name in the temp directory.
pub fn toolchain_dir() -> io::Result<PathBuf> {
    static DIR: OnceLock<Result<PathBuf, String>> = OnceLock::new();
    DIR.get_or_init(|| materialize_toolchain().map_err(|e| e.to_string()))
        .clone()
        .map_err(io::Error::other)
}

fn materialize_toolchain() -> io::Result<PathBuf> {
    let mut hasher = Sha256::new();
    for (path, body) in TOOLCHAIN {
        hasher.update(path.as_bytes());
        hasher.update([0]);
        hasher.update(body.as_bytes());
        hasher.update([0]);
    }
    let digest = hex::encode(hasher.finalize());
    let dir = std::env::temp_dir().join(format!("envalign-toolchain-{}", &digest[..16]));
    if dir.join("offline_install.py").is_file() {
        return Ok(dir);
    }
    let staging = tempfile::Builder::new()
        .prefix("envalign-toolchain-staging-")
        .tempdir_in(std::env::temp_dir())?;
    write_files(staging.path(), TOOLCHAIN)?;
    match std::fs::rename(staging.path(), &dir) {
        Ok(()) => {
            // The directory now lives at its final name; nothing left to clean.
            let _ = staging.keep();
            Ok(dir)
        }
        // Another process won the race.
        Err(_) if dir.join("offline_install.py").is_file() => Ok(dir),
        Err(e) => Err(e),
    }
}
