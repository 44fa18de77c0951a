//! Helpers shared by the CLI test targets.
#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const ACTIVITIES: [&str; 6] = ["Walking", "Jogging", "Upstairs", "Downstairs", "Sitting", "Standing"];

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Runs the `har` binary with `HAR_DATA_DIR` cleared unless given in `env`.
pub fn har(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_har"));
    cmd.args(args).env_remove("HAR_DATA_DIR");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("failed to launch har")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Value of `key=value` in a block of lines.
pub fn kv(text: &str, key: &str) -> Option<String> {
    text.lines().find_map(|l| {
        l.strip_prefix(key)
            .and_then(|r| r.strip_prefix('='))
            .map(str::to_string)
    })
}

/// Raw records where each activity holds a distinct constant acceleration
/// with a small deterministic wobble: `runs_per_class` runs of `run_len`
/// samples, subjects cycling through 1..=5.
pub fn separable_raw(runs_per_class: usize, run_len: usize) -> String {
    let levels = [
        [2.0, 9.0, 0.0],
        [-2.0, 9.0, 0.0],
        [0.0, 9.0, 2.0],
        [0.0, 9.0, -2.0],
        [6.0, 2.0, 6.0],
        [0.0, 4.0, 0.0],
    ];
    let mut out = String::new();
    let mut t: i64 = 1_000;
    let mut subject = 0;
    for r in 0..runs_per_class {
        for (c, name) in ACTIVITIES.iter().enumerate() {
            subject = subject % 5 + 1;
            for k in 0..run_len {
                let wobble = 0.05 * (((k * 7 + r * 3 + c) % 11) as f64 - 5.0);
                let [x, y, z] = levels[c];
                let _ = writeln!(
                    out,
                    "{subject},{name},{t},{},{},{};",
                    x + wobble,
                    y - wobble,
                    z + 0.5 * wobble
                );
                t += 50;
            }
        }
    }
    out
}
