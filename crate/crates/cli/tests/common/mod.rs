#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_geoanchor"))
}

/// Backend command line running this build's pass-through mock.
pub fn mock_backend() -> String {
    format!("{} mock-backend", bin().display())
}

/// Runs the binary with a clean backend environment.
pub fn geoanchor(args: &[&str]) -> Output {
    geoanchor_env(args, &[])
}

pub fn geoanchor_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(bin());
    cmd.args(args).env_remove("GEOANCHOR_BACKEND_CMD").env("RUST_LOG", "warn");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn assert_ok(out: &Output) {
    assert!(out.status.success(), "exit {:?}\n{}", out.status.code(), stderr(out));
}

pub fn gen_scene(dir: &Path, seed: u64, difficulty: &str) {
    assert_ok(&geoanchor(&["gen-scene", "--seed", &seed.to_string(), "--difficulty", difficulty, "--out-dir", p(dir)]));
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

pub fn schema_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schemas/v1").join(format!("{name}.schema.json"))
}

pub fn read_json(path: &Path) -> Value {
    let bytes = std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    serde_json::from_slice(&bytes).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Validation errors of `instance` against schema `name`.
pub fn schema_errors(name: &str, instance: &Value) -> Vec<String> {
    let schema = read_json(&schema_path(name));
    let validator =
        jsonschema::validator_for(&schema).unwrap_or_else(|e| panic!("schema {name} does not compile: {e}"));
    validator.iter_errors(instance).map(|e| format!("{} at {}", e, e.instance_path)).collect()
}

pub fn assert_schema(name: &str, file: &Path) {
    let errors = schema_errors(name, &read_json(file));
    assert!(errors.is_empty(), "{} violates {name}: {errors:#?}", file.display());
}

/// Relative path -> SHA-256 of every file below `dir`.
pub fn tree_digests(dir: &Path) -> BTreeMap<String, String> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, geoanchor_core::io::file_digest(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}
