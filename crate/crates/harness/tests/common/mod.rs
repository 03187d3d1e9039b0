#![allow(dead_code)]

use std::path::Path;

use mstf_harness::ExperimentConfig;

/// A small configuration that trains in well under a second.
pub fn tiny_toml(epochs: usize) -> String {
    format!(
        r#"seed = 11
epochs = {epochs}
batch_size = 8
learning_rate = 0.003

[model]
d_model = 12
n_heads = 3
n_layers = 2
d_ff = 24
decoder_hidden = 10

[dataset]
kind = "synthetic"
count = 40
horizons = {{ t_h = 10, t_f = 6, rate = 2.0 }}
"#
    )
}

pub fn tiny(epochs: usize, out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_toml(&tiny_toml(epochs)).unwrap();
    cfg.out_dir = out.to_path_buf();
    cfg
}
