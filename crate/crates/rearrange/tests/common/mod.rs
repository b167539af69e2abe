#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use rearrange_core::lang::Vocabulary;
use rearrange_core::model::ModelConfig;

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        d_model: 32,
        d_obj: 16,
        d_pos: 8,
        d_type: 8,
        heads: 2,
        enc_layers: 1,
        dec_layers: 1,
        pc_width: 8,
        pc_layers: 1,
        ..ModelConfig::new(Vocabulary::standard().len())
    }
}

pub const TINY_JSON: &str =
    r#"{"d_model":32,"d_obj":16,"d_pos":8,"d_type":8,"heads":2,"enc_layers":1,"dec_layers":1,"pc_width":8,"pc_layers":1}"#;

/// Runs the CLI binary in `dir`.
pub fn cli(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rearrange"))
        .args(args)
        .current_dir(dir)
        .env("REARRANGE_LOG", "warn")
        .output()
        .expect("run rearrange")
}

pub fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = cli(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}
