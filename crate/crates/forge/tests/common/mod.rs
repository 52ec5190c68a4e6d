#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

/// A few scenes, one epoch, a handful of attack iterations.
pub const TINY: &str = r#"
seed = 11

[dataset]
detector_scenes = 10
attack_scenes = 8

[detector]
archs = ["A", "B", "C"]
epochs = 1

[attack]
iterations = 3
val_every = 0

[eval]
scenarios = ["WB", "BB"]
shift_offsets = 2
"#;

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl From<Output> for Run {
    fn from(o: Output) -> Self {
        Self {
            code: o.status.code().unwrap_or(-1),
            stdout: String::from_utf8_lossy(&o.stdout).into_owned(),
            stderr: String::from_utf8_lossy(&o.stderr).into_owned(),
        }
    }
}

pub fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("experiment.toml");
    std::fs::write(&path, text).unwrap();
    path
}

pub fn forge(config: &Path, out: &Path, args: &[&str]) -> Run {
    Command::new(env!("CARGO_BIN_EXE_cuap-forge"))
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("CUAP_FORGE_OUT")
        .output()
        .expect("binary runs")
        .into()
}

pub fn ok(run: Run) -> Run {
    assert_eq!(run.code, 0, "stdout:\n{}\nstderr:\n{}", run.stdout, run.stderr);
    run
}

pub fn files_with_suffix(dir: &Path, suffix: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .map(|rd| rd.map(|e| e.unwrap().path()).collect())
        .unwrap_or_default();
    v.retain(|p| p.to_string_lossy().ends_with(suffix));
    v.sort();
    v
}
