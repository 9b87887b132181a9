#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;

pub struct Output {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn vdr(args: &[&str]) -> Output {
    vdr_env(args, &[])
}

pub fn vdr_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_vdr"));
    cmd.args(args).env_remove("VDR_SEED");
    for (k, v) in env {
        cmd.env(k, v);
    }
    let out = cmd.output().expect("run vdr");
    Output {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

pub fn ok(args: &[&str]) -> Output {
    let out = vdr(args);
    assert_eq!(out.code, 0, "vdr {args:?}\nstdout:\n{}\nstderr:\n{}", out.stdout, out.stderr);
    out
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Writes a synthetic corpus into `dir` and returns `dir`.
pub fn synthetic(dir: &Path, extra: &[&str]) -> PathBuf {
    let mut args = vec!["gen-synthetic", "--out-dir", s(dir)];
    args.extend_from_slice(extra);
    ok(&args);
    dir.to_path_buf()
}

/// The JSON echoed on the `<command> config:` line.
pub fn echoed_config(stdout: &str, command: &str) -> serde_json::Value {
    let prefix = format!("{command} config: ");
    let line = stdout
        .lines()
        .find_map(|l| l.strip_prefix(&prefix))
        .unwrap_or_else(|| panic!("no config line in\n{stdout}"));
    serde_json::from_str(line).expect("config line is JSON")
}
