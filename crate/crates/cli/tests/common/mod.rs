#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

pub const BIN: &str = env!("CARGO_BIN_EXE_broyden-lm");

pub fn grid(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Writes `x1,y` rows with full precision.
pub fn write_csv(path: &Path, xs: &[f64], ys: &[f64]) {
    let mut text = String::from("x1,y\n");
    for (x, y) in xs.iter().zip(ys) {
        text.push_str(&format!("{x:?},{y:?}\n"));
    }
    fs::write(path, text).unwrap();
}

pub fn write(dir: &Path, name: &str, contents: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, contents).unwrap();
    path
}

pub fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .stdin(Stdio::null())
        .output()
        .expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Pulls the value following `label: ` out of check-jacobian output.
pub fn reported(out: &str, label: &str) -> f64 {
    out.lines()
        .find_map(|l| l.strip_prefix(&format!("{label}: ")))
        .and_then(|rest| rest.split_whitespace().next())
        .and_then(|v| v.parse().ok())
        .unwrap_or_else(|| panic!("no `{label}` in output:\n{out}"))
}

#[cfg(unix)]
pub fn script(dir: &Path, name: &str, body: &str) -> PathBuf {
    use std::os::unix::fs::PermissionsExt;
    let path = write(dir, name, &format!("#!/bin/sh\n{body}\n"));
    fs::set_permissions(&path, fs::Permissions::from_mode(0o755)).unwrap();
    path
}

/// Shell evaluator replying with residuals equal to the parameters.
pub const ECHO: &str = r#"while IFS= read -r line; do
  id=$(printf '%s' "$line" | sed 's/.*"id":\([-0-9]*\).*/\1/')
  params=$(printf '%s' "$line" | sed 's/.*"params":\(\[[^]]*\]\).*/\1/')
  printf '{"v":1,"id":%s,"residuals":%s}\n' "$id" "$params"
done"#;
