//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use serde_json::Value;

pub fn examples() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples")
}

/// Copies a bundled config with absolute inputs and `output_dir` set to `out`.
pub fn rebased_config(name: &str, out: &Path, dir: &Path) -> PathBuf {
    let base = examples().join("configs");
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(base.join(name)).unwrap()).unwrap();
    let obj = v.as_object_mut().unwrap();
    for key in ["manifest", "data_dir", "tasks_file", "token_table", "model"] {
        if let Some(Value::String(p)) = obj.get(key) {
            let abs = base.join(p);
            obj.insert(key.into(), Value::String(abs.to_string_lossy().into_owned()));
        }
    }
    if let Some(Value::Array(list)) = obj.get_mut("audit_schemas") {
        for p in list.iter_mut() {
            *p = Value::String(base.join(p.as_str().unwrap()).to_string_lossy().into_owned());
        }
    }
    obj.insert("output_dir".into(), Value::String(out.to_string_lossy().into_owned()));
    let path = dir.join(format!("{}-{name}", out.file_name().unwrap().to_string_lossy()));
    std::fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    path
}

