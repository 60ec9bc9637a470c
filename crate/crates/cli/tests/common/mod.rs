//! Helpers shared by the integration and acceptance suites.
#![allow(dead_code)]

use sha2::{Digest, Sha256};
use std::path::Path;
use std::process::{Command, Output};

/// The compiled binary with PESINLAB_WORKERS scrubbed, so ambient settings
/// cannot leak into test runs.
pub fn pesinlab() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pesinlab"));
    cmd.env_remove("PESINLAB_WORKERS");
    cmd
}

/// Writes `config` under `dir` and invokes `pesinlab <subcommand>` on it.
/// Does not check the exit status; callers assert what they expect.
pub fn run(dir: &Path, subcommand: &str, config: &serde_json::Value, extra: &[&str]) -> Output {
    let cfg_path = dir.join(format!("{subcommand}-config.json"));
    std::fs::write(&cfg_path, serde_json::to_vec_pretty(config).unwrap()).unwrap();
    pesinlab()
        .arg(subcommand)
        .arg("--config")
        .arg(&cfg_path)
        .args(extra)
        .output()
        .expect("failed to spawn pesinlab")
}

pub fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn sha256_file(path: &Path) -> String {
    let bytes =
        std::fs::read(path).unwrap_or_else(|e| panic!("cannot read {}: {e}", path.display()));
    hex::encode(Sha256::digest(&bytes))
}

pub fn read_json(path: &Path) -> serde_json::Value {
    let bytes =
        std::fs::read(path).unwrap_or_else(|e| panic!("cannot read {}: {e}", path.display()));
    serde_json::from_slice(&bytes)
        .unwrap_or_else(|e| panic!("{} is not valid JSON: {e}", path.display()))
}

/// The (name, sha256) pairs a manifest advertises, sorted by name.
pub fn manifest_digests(manifest: &serde_json::Value) -> Vec<(String, String)> {
    let mut pairs: Vec<(String, String)> = manifest["files"]
        .as_array()
        .expect("manifest.files must be an array")
        .iter()
        .map(|f| {
            (
                f["name"].as_str().expect("file name").to_owned(),
                f["sha256"].as_str().expect("file digest").to_owned(),
            )
        })
        .collect();
    pairs.sort();
    pairs
}
