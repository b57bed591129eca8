#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

/// Search-space override small enough for desk-scale runs.
pub const DESK_SPACE: &str = r#"{"model.n_layers": {"type": "int_uniform", "low": 1, "high": 2}, "model.width": {"type": "int_uniform", "low": 32, "high": 128, "step": 32}}"#;

pub fn tabopt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tabopt"))
        .args(args)
        .env("TABOPT_THREADS", "1")
        .output()
        .expect("spawn tabopt")
}

/// Run and require success, returning stdout.
pub fn ok(args: &[&str]) -> String {
    let out = tabopt(args);
    assert!(
        out.status.success(),
        "tabopt {args:?} failed ({:?}):\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}
