#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mvps::RunConfig;

/// A configuration small enough for a full synth/train/eval cycle in tests.
pub const TINY: &str = r#"
seed = 5
train_records = 300
test_records = 200
d_model = 16
n_heads = 2
n_encoder = 1
n_decoder = 1
d_ff = 32
max_support = 64
max_query = 16
lr = 1e-3
batch_size = 4
epochs = 2
tasks_per_epoch = 8
n_support = 12
n_query = 4
validation_tasks = 2
methods = ["mvps", "mvps_tta", "topk", "random", "oracle"]
k_list = [1, 2]
reps = 4
eval_tasks = 2
eval_pool = 12
eval_queries = 4
tta_rounds = 3
tta_samples = 2
oracle_pool = 10
oracle_k = 2
oracle_tasks = 1
"#;

pub fn tiny() -> RunConfig {
    RunConfig::from_toml(TINY).unwrap()
}

/// Writes the tiny configuration into `dir` and returns its path.
pub fn tiny_file(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.toml");
    std::fs::write(&path, TINY).unwrap();
    path
}

pub fn mvps(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mvps")).args(args).output().unwrap()
}

pub fn scorer_bin() -> &'static str {
    env!("CARGO_BIN_EXE_mvps-scorer")
}
