use std::path::{Path, PathBuf};

use crate::env::{build_env, BuiltEnv};
use crate::knowledge::PackageKnowledge;
use crate::scan::ScanConfig;

pub fn write_repo(files: &[(&str, &str)]) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for (rel, body) in files {
        let path = dir.path().join(rel);
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(path, body).unwrap();
    }
    dir
}

pub fn env_of(root: &Path) -> BuiltEnv {
    build_env(root, &ScanConfig::default(), &PackageKnowledge::bundled()).unwrap()
}

pub fn client_fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/client")
}
