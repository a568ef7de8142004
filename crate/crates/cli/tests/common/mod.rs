#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use jsonschema::{Resource, Validator};
use serde_json::Value;

pub const SCHEMAS: [&str; 6] = [
    "boundreport",
    "figure1",
    "manifest",
    "metrics_record",
    "ot",
    "summary",
];

pub fn darsa(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_darsa"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn schema_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas")
}

fn load(name: &str) -> Value {
    let path = schema_dir().join(format!("{name}.schema.json"));
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Validator for one shipped schema, with every sibling schema registered so
/// relative references resolve offline.
pub fn validator(name: &str) -> Validator {
    let mut opts = jsonschema::options();
    for other in SCHEMAS {
        let doc = load(other);
        let id = doc["$id"].as_str().unwrap().to_string();
        opts = opts.with_resource(id, Resource::from_contents(doc).unwrap());
    }
    opts.build(&load(name)).unwrap()
}

pub fn assert_valid(name: &str, instance: &Value) {
    let v = validator(name);
    let errors: Vec<String> = v.iter_errors(instance).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{name}: {errors:?}\n{instance}");
}

pub fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}
