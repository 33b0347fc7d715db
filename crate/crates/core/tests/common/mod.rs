#![allow(dead_code)]

use std::path::PathBuf;

use reframing::harness::ExperimentConfig;
use reframing::schema::parse_task_file;
use reframing::TaskInstruction;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn fixture_task(id: &str) -> TaskInstruction {
    let path = fixtures().join("tasks").join(format!("{id}.json"));
    parse_task_file(&std::fs::read_to_string(&path).unwrap()).unwrap().task
}

/// The shipped two-task experiment, writing into `out` and recording into `store`.
pub fn experiment(out: PathBuf, store: PathBuf) -> ExperimentConfig {
    let mut config = ExperimentConfig::load(&fixtures().join("experiment.json")).unwrap();
    config.output_dir = out;
    config.replay_store = Some(store);
    config
}

pub const ARTIFACTS: [&str; 4] = ["records.csv", "report.txt", "gains_by_technique.csv", "length_vs_gain.csv"];
