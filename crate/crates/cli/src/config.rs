//! Training settings from TOML files and flags.

use std::path::Path;

use handkd_core::data::Dataset;
use handkd_core::losses::GtWeights;
use handkd_core::nets::NetConfig;
use handkd_core::train::{AdamConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::cli::TrainArgs;
use crate::error::{CliError, Result};
use crate::io;

/// Every key is optional; missing keys keep their defaults.
#[derive(Debug, Clone, Default, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFile {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub eps: Option<f64>,
    pub seed: Option<u64>,
    pub eval_every: Option<usize>,
    pub w2d: Option<f64>,
    pub w3d: Option<f64>,
    pub wmano: Option<f64>,
    /// Teacher stage widths.
    pub widths: Option<Vec<usize>>,
    pub head_dim: Option<usize>,
}

impl TrainFile {
    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        toml::from_str(text).map_err(|e| e.message().to_string())
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => Self::parse(&io::read_text(p)?).map_err(|e| CliError::Data(format!("{}: {e}", p.display()))),
        }
    }
}

/// Flags over file over defaults.
pub fn train_config(file: &TrainFile, args: &TrainArgs, seed: u64) -> TrainConfig {
    let d = TrainConfig::default();
    let a = AdamConfig::default();
    let w = GtWeights::default();
    TrainConfig {
        epochs: args.epochs.or(file.epochs).unwrap_or(d.epochs),
        batch_size: args.batch_size.or(file.batch_size).unwrap_or(d.batch_size),
        adam: AdamConfig {
            lr: args.lr.or(file.lr).unwrap_or(a.lr),
            beta1: file.beta1.unwrap_or(a.beta1),
            beta2: file.beta2.unwrap_or(a.beta2),
            eps: file.eps.unwrap_or(a.eps),
        },
        seed,
        kd: d.kd,
        weights: GtWeights {
            w2d: file.w2d.unwrap_or(w.w2d),
            w3d: file.w3d.unwrap_or(w.w3d),
            wmano: file.wmano.unwrap_or(w.wmano),
        },
        eval_every: args.eval_every.or(file.eval_every).unwrap_or(d.eval_every),
    }
}

/// Adapts a network's input to the dataset's image size.
pub fn fit_input(mut net: NetConfig, data: &Dataset) -> NetConfig {
    let intr = data.config.intrinsics;
    net.input_size = (intr.image_h, intr.image_w);
    net
}

pub fn teacher_net(file: &TrainFile, seed: u64) -> NetConfig {
    let d = NetConfig::teacher(seed);
    NetConfig::new(file.widths.clone().unwrap_or(d.widths), file.head_dim.unwrap_or(d.head_dim), seed)
}

/// JSON view of a resolved training configuration, for manifests.
pub fn describe(cfg: &TrainConfig) -> serde_json::Value {
    serde_json::json!({
        "epochs": cfg.epochs,
        "batch_size": cfg.batch_size,
        "lr": cfg.adam.lr,
        "beta1": cfg.adam.beta1,
        "beta2": cfg.adam.beta2,
        "eps": cfg.adam.eps,
        "seed": cfg.seed,
        "mode": cfg.kd.mode.name(),
        "lambda_kd": cfg.kd.lambda_kd,
        "gamma_fd": cfg.kd.gamma_fd,
        "w2d": cfg.weights.w2d,
        "w3d": cfg.weights.w3d,
        "wmano": cfg.weights.wmano,
        "eval_every": cfg.eval_every,
    })
}

pub fn describe_net(net: &NetConfig) -> serde_json::Value {
    serde_json::json!({
        "widths": net.widths,
        "head_dim": net.head_dim,
        "input_channels": net.input_channels,
        "input_size": [net.input_size.0, net.input_size.1],
        "seed": net.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_flags() -> TrainArgs {
        TrainArgs {
            config: None,
            epochs: None,
            batch_size: None,
            lr: None,
            eval_every: None,
        }
    }

    #[test]
    fn flags_override_file_override_defaults() {
        let file = TrainFile::parse("epochs = 7\nlr = 0.01\nwidths = [4, 8]\n").unwrap();
        let cfg = train_config(&file, &TrainArgs { lr: Some(0.5), ..no_flags() }, 3);
        assert_eq!(cfg.epochs, 7);
        assert_eq!(cfg.adam.lr, 0.5);
        assert_eq!(cfg.batch_size, TrainConfig::default().batch_size);
        assert_eq!(cfg.seed, 3);
        assert_eq!(teacher_net(&file, 1).widths, vec![4, 8]);
        assert_eq!(teacher_net(&TrainFile::default(), 1), NetConfig::teacher(1));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = TrainFile::parse("epoch = 3\n").unwrap_err();
        assert!(err.contains("epoch"), "{err}");
    }
}
