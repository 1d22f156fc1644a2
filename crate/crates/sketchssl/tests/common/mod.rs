#![allow(dead_code)]

use std::path::PathBuf;

use sketchssl::config::ExperimentConfig;

pub fn tiny_conf() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/tiny.conf")
}

pub fn tiny_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.apply_file(&tiny_conf()).unwrap();
    c
}
