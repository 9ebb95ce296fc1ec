//! Run configuration: a flat `key=value` file, CLI overrides on top,
//! then range validation. Unknown keys are errors so typos never pass
//! silently. `resolved_text` reproduces the full effective config in a
//! canonical key order for the run directory and for fingerprinting.

use std::fmt;
use std::path::Path;

use mlcld_core::model::DistHeadInput;
use mlcld_core::objectives::{LossMode, PositiveMode};
use mlcld_core::train::ScoreActivation;

#[derive(Debug)]
pub struct ConfigError {
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.message)
    }
}

impl std::error::Error for ConfigError {}

fn err(message: impl Into<String>) -> ConfigError {
    ConfigError { message: message.into() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train_arff: String,
    pub test_arff: String,
    pub labels_xml: String,
    pub standardize: bool,

    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub dropout: f64,
    pub dist_head_input: DistHeadInput,

    pub pretrain_epochs: u32,
    pub pretrain_batch_size: usize,
    pub pretrain_lr: f64,
    pub pretrain_weight_decay: f64,
    pub momentum: f64,
    pub tau: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub beta: f64,
    pub queue_size: usize,
    pub pretrain_mask_rate: f64,
    pub pretrain_t0: u32,
    pub pretrain_t_mult: u32,
    pub pretrain_eta_min: f64,
    pub loss_mode: LossMode,
    pub positive_mode: PositiveMode,
    pub cld_raw_log_weight: bool,
    pub batch_mean: bool,
    pub w_penalty_per_anchor: bool,

    pub finetune_epochs: u32,
    pub finetune_lr: f64,
    pub finetune_weight_decay: f64,
    pub finetune_mask_rate: f64,
    pub finetune_t0: u32,
    pub finetune_t_mult: u32,
    pub finetune_eta_min: f64,
    pub head_activation: ScoreActivation,

    pub threshold: f64,
    pub seed: u64,
    pub run_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train_arff: String::new(),
            test_arff: String::new(),
            labels_xml: String::new(),
            standardize: true,
            hidden_dim: 512,
            embed_dim: 128,
            dropout: 0.2,
            dist_head_input: DistHeadInput::Backbone,
            pretrain_epochs: 400,
            pretrain_batch_size: 128,
            pretrain_lr: 4e-5,
            pretrain_weight_decay: 1e-4,
            momentum: 0.999,
            tau: 0.1,
            sigma: 0.01,
            alpha: 0.1,
            beta: 0.01,
            queue_size: 256,
            pretrain_mask_rate: 0.5,
            pretrain_t0: 50,
            pretrain_t_mult: 2,
            pretrain_eta_min: 1e-5,
            loss_mode: LossMode::Cld,
            positive_mode: PositiveMode::Any,
            cld_raw_log_weight: false,
            batch_mean: false,
            w_penalty_per_anchor: false,
            finetune_epochs: 100,
            finetune_lr: 4e-4,
            finetune_weight_decay: 1e-5,
            finetune_mask_rate: 0.4,
            finetune_t0: 50,
            finetune_t_mult: 2,
            finetune_eta_min: 1e-4,
            head_activation: ScoreActivation::Sigmoid,
            threshold: 0.5,
            seed: 0,
            run_dir: "runs/default".to_string(),
        }
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(err(format!("key '{key}': expected true or false, got '{v}'"))),
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64, ConfigError> {
    let parsed: f64 =
        v.parse().map_err(|_| err(format!("key '{key}': expected a number, got '{v}'")))?;
    if !parsed.is_finite() {
        return Err(err(format!("key '{key}': value must be finite, got '{v}'")));
    }
    Ok(parsed)
}

fn parse_usize(key: &str, v: &str) -> Result<usize, ConfigError> {
    v.parse().map_err(|_| err(format!("key '{key}': expected an unsigned integer, got '{v}'")))
}

fn parse_u32(key: &str, v: &str) -> Result<u32, ConfigError> {
    v.parse().map_err(|_| err(format!("key '{key}': expected an unsigned integer, got '{v}'")))
}

fn parse_u64(key: &str, v: &str) -> Result<u64, ConfigError> {
    v.parse().map_err(|_| err(format!("key '{key}': expected an unsigned integer, got '{v}'")))
}

impl RunConfig {
    /// Apply one `key=value` assignment. Unknown keys are errors.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "data.train_arff" => self.train_arff = value.to_string(),
            "data.test_arff" => self.test_arff = value.to_string(),
            "data.labels_xml" => self.labels_xml = value.to_string(),
            "data.standardize" => self.standardize = parse_bool(key, value)?,
            "model.hidden_dim" => self.hidden_dim = parse_usize(key, value)?,
            "model.embed_dim" => self.embed_dim = parse_usize(key, value)?,
            "model.dropout" => self.dropout = parse_f64(key, value)?,
            "model.dist_head_input" => {
                self.dist_head_input = match value {
                    "backbone" => DistHeadInput::Backbone,
                    "normalized" => DistHeadInput::Normalized,
                    _ => {
                        return Err(err(format!(
                            "key '{key}': expected backbone or normalized, got '{value}'"
                        )))
                    }
                }
            }
            "pretrain.epochs" => self.pretrain_epochs = parse_u32(key, value)?,
            "pretrain.batch_size" => self.pretrain_batch_size = parse_usize(key, value)?,
            "pretrain.lr" => self.pretrain_lr = parse_f64(key, value)?,
            "pretrain.weight_decay" => self.pretrain_weight_decay = parse_f64(key, value)?,
            "pretrain.momentum" => self.momentum = parse_f64(key, value)?,
            "pretrain.tau" => self.tau = parse_f64(key, value)?,
            "pretrain.sigma" => self.sigma = parse_f64(key, value)?,
            "pretrain.alpha" => self.alpha = parse_f64(key, value)?,
            "pretrain.beta" => self.beta = parse_f64(key, value)?,
            "pretrain.queue_size" => self.queue_size = parse_usize(key, value)?,
            "pretrain.mask_rate" => self.pretrain_mask_rate = parse_f64(key, value)?,
            "pretrain.t0" => self.pretrain_t0 = parse_u32(key, value)?,
            "pretrain.t_mult" => self.pretrain_t_mult = parse_u32(key, value)?,
            "pretrain.eta_min" => self.pretrain_eta_min = parse_f64(key, value)?,
            "pretrain.loss_mode" => {
                self.loss_mode = match value {
                    "mulsupcon" => LossMode::MulSupCon,
                    "rld" => LossMode::Rld,
                    "cld" => LossMode::Cld,
                    _ => {
                        return Err(err(format!(
                            "key '{key}': expected mulsupcon, rld, or cld, got '{value}'"
                        )))
                    }
                }
            }
            "pretrain.positive_mode" => {
                self.positive_mode = match value {
                    "any" => PositiveMode::Any,
                    "all" => PositiveMode::All,
                    _ => {
                        return Err(err(format!(
                            "key '{key}': expected any or all, got '{value}'"
                        )))
                    }
                }
            }
            "pretrain.cld_raw_log_weight" => self.cld_raw_log_weight = parse_bool(key, value)?,
            "pretrain.batch_mean" => self.batch_mean = parse_bool(key, value)?,
            "pretrain.w_penalty_per_anchor" => {
                self.w_penalty_per_anchor = parse_bool(key, value)?
            }
            "finetune.epochs" => self.finetune_epochs = parse_u32(key, value)?,
            "finetune.lr" => self.finetune_lr = parse_f64(key, value)?,
            "finetune.weight_decay" => self.finetune_weight_decay = parse_f64(key, value)?,
            "finetune.mask_rate" => self.finetune_mask_rate = parse_f64(key, value)?,
            "finetune.t0" => self.finetune_t0 = parse_u32(key, value)?,
            "finetune.t_mult" => self.finetune_t_mult = parse_u32(key, value)?,
            "finetune.eta_min" => self.finetune_eta_min = parse_f64(key, value)?,
            "finetune.head_activation" => {
                self.head_activation = match value {
                    "sigmoid" => ScoreActivation::Sigmoid,
                    "softmax" => ScoreActivation::Softmax,
                    _ => {
                        return Err(err(format!(
                            "key '{key}': expected sigmoid or softmax, got '{value}'"
                        )))
                    }
                }
            }
            "eval.threshold" => self.threshold = parse_f64(key, value)?,
            "seed" => self.seed = parse_u64(key, value)?,
            "run.dir" => self.run_dir = value.to_string(),
            _ => return Err(err(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Range and consistency checks, run after every assignment is in.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut problems = Vec::new();
        if self.hidden_dim == 0 {
            problems.push("model.hidden_dim must be positive".to_string());
        }
        if self.embed_dim == 0 {
            problems.push("model.embed_dim must be positive".to_string());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            problems.push(format!("model.dropout {} outside [0, 1)", self.dropout));
        }
        if self.pretrain_batch_size == 0 {
            problems.push("pretrain.batch_size must be positive".to_string());
        }
        if self.pretrain_lr <= 0.0 {
            problems.push(format!("pretrain.lr {} must be positive", self.pretrain_lr));
        }
        if self.pretrain_weight_decay < 0.0 {
            problems.push(format!(
                "pretrain.weight_decay {} must be non-negative",
                self.pretrain_weight_decay
            ));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            problems.push(format!("pretrain.momentum {} outside [0, 1]", self.momentum));
        }
        if self.tau <= 0.0 {
            problems.push(format!("pretrain.tau {} must be positive", self.tau));
        }
        if self.sigma <= 0.0 {
            problems.push(format!("pretrain.sigma {} must be positive", self.sigma));
        }
        if self.alpha < 0.0 {
            problems.push(format!("pretrain.alpha {} must be non-negative", self.alpha));
        }
        if self.beta < 0.0 {
            problems.push(format!("pretrain.beta {} must be non-negative", self.beta));
        }
        if self.queue_size == 0 {
            problems.push("pretrain.queue_size must be positive".to_string());
        }
        if self.queue_size < self.pretrain_batch_size {
            problems.push(format!(
                "pretrain.queue_size {} smaller than pretrain.batch_size {}",
                self.queue_size, self.pretrain_batch_size
            ));
        }
        if !(0.0..1.0).contains(&self.pretrain_mask_rate) {
            problems
                .push(format!("pretrain.mask_rate {} outside [0, 1)", self.pretrain_mask_rate));
        }
        if self.pretrain_t0 == 0 {
            problems.push("pretrain.t0 must be positive".to_string());
        }
        if self.pretrain_t_mult == 0 {
            problems.push("pretrain.t_mult must be positive".to_string());
        }
        if self.pretrain_eta_min < 0.0 || self.pretrain_eta_min > self.pretrain_lr {
            problems.push(format!(
                "pretrain.eta_min {} outside [0, pretrain.lr]",
                self.pretrain_eta_min
            ));
        }
        if self.finetune_lr <= 0.0 {
            problems.push(format!("finetune.lr {} must be positive", self.finetune_lr));
        }
        if self.finetune_weight_decay < 0.0 {
            problems.push(format!(
                "finetune.weight_decay {} must be non-negative",
                self.finetune_weight_decay
            ));
        }
        if !(0.0..1.0).contains(&self.finetune_mask_rate) {
            problems
                .push(format!("finetune.mask_rate {} outside [0, 1)", self.finetune_mask_rate));
        }
        if self.finetune_t0 == 0 {
            problems.push("finetune.t0 must be positive".to_string());
        }
        if self.finetune_t_mult == 0 {
            problems.push("finetune.t_mult must be positive".to_string());
        }
        if self.finetune_eta_min < 0.0 || self.finetune_eta_min > self.finetune_lr {
            problems.push(format!(
                "finetune.eta_min {} outside [0, finetune.lr]",
                self.finetune_eta_min
            ));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            problems.push(format!("eval.threshold {} outside (0, 1)", self.threshold));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(err(problems.join("; ")))
        }
    }

    /// The datasets must be named before training can run.
    pub fn require_datasets(&self) -> Result<(), ConfigError> {
        for (key, value) in [
            ("data.train_arff", &self.train_arff),
            ("data.test_arff", &self.test_arff),
            ("data.labels_xml", &self.labels_xml),
        ] {
            if value.is_empty() {
                return Err(err(format!("key '{key}' must be set")));
            }
        }
        Ok(())
    }

    /// Every key with its effective value, in canonical order.
    pub fn resolved_entries(&self) -> Vec<(&'static str, String)> {
        let mode = match self.loss_mode {
            LossMode::MulSupCon => "mulsupcon",
            LossMode::Rld => "rld",
            LossMode::Cld => "cld",
        };
        let positive = match self.positive_mode {
            PositiveMode::Any => "any",
            PositiveMode::All => "all",
        };
        let head_input = match self.dist_head_input {
            DistHeadInput::Backbone => "backbone",
            DistHeadInput::Normalized => "normalized",
        };
        let activation = match self.head_activation {
            ScoreActivation::Sigmoid => "sigmoid",
            ScoreActivation::Softmax => "softmax",
        };
        vec![
            ("data.train_arff", self.train_arff.clone()),
            ("data.test_arff", self.test_arff.clone()),
            ("data.labels_xml", self.labels_xml.clone()),
            ("data.standardize", self.standardize.to_string()),
            ("model.hidden_dim", self.hidden_dim.to_string()),
            ("model.embed_dim", self.embed_dim.to_string()),
            ("model.dropout", self.dropout.to_string()),
            ("model.dist_head_input", head_input.to_string()),
            ("pretrain.epochs", self.pretrain_epochs.to_string()),
            ("pretrain.batch_size", self.pretrain_batch_size.to_string()),
            ("pretrain.lr", self.pretrain_lr.to_string()),
            ("pretrain.weight_decay", self.pretrain_weight_decay.to_string()),
            ("pretrain.momentum", self.momentum.to_string()),
            ("pretrain.tau", self.tau.to_string()),
            ("pretrain.sigma", self.sigma.to_string()),
            ("pretrain.alpha", self.alpha.to_string()),
            ("pretrain.beta", self.beta.to_string()),
            ("pretrain.queue_size", self.queue_size.to_string()),
            ("pretrain.mask_rate", self.pretrain_mask_rate.to_string()),
            ("pretrain.t0", self.pretrain_t0.to_string()),
            ("pretrain.t_mult", self.pretrain_t_mult.to_string()),
            ("pretrain.eta_min", self.pretrain_eta_min.to_string()),
            ("pretrain.loss_mode", mode.to_string()),
            ("pretrain.positive_mode", positive.to_string()),
            ("pretrain.cld_raw_log_weight", self.cld_raw_log_weight.to_string()),
            ("pretrain.batch_mean", self.batch_mean.to_string()),
            ("pretrain.w_penalty_per_anchor", self.w_penalty_per_anchor.to_string()),
            ("finetune.epochs", self.finetune_epochs.to_string()),
            ("finetune.lr", self.finetune_lr.to_string()),
            ("finetune.weight_decay", self.finetune_weight_decay.to_string()),
            ("finetune.mask_rate", self.finetune_mask_rate.to_string()),
            ("finetune.t0", self.finetune_t0.to_string()),
            ("finetune.t_mult", self.finetune_t_mult.to_string()),
            ("finetune.eta_min", self.finetune_eta_min.to_string()),
            ("finetune.head_activation", activation.to_string()),
            ("eval.threshold", self.threshold.to_string()),
            ("seed", self.seed.to_string()),
            ("run.dir", self.run_dir.clone()),
        ]
    }

    /// Canonical text of the effective config, one key per line.
    pub fn resolved_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.resolved_entries() {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    /// Like `resolved_text` minus `run.dir`: two runs of the same
    /// experiment fingerprint identically wherever their output lands.
    pub fn fingerprint_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.resolved_entries() {
            if k == "run.dir" {
                continue;
            }
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        }
        out
    }
}

/// Parse config text. Lines are `key=value`; blank lines and lines
/// whose first non-space character is '#' are skipped.
pub fn parse_config_text(text: &str, origin: &str) -> Result<RunConfig, ConfigError> {
    let mut config = RunConfig::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            err(format!("{origin} line {}: expected key=value, got '{line}'", idx + 1))
        })?;
        config
            .apply(key.trim(), value.trim())
            .map_err(|e| err(format!("{origin} line {}: {}", idx + 1, e.message)))?;
    }
    Ok(config)
}

/// Load a config file, apply `key=value` overrides, validate.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| err(format!("cannot read config {}: {e}", path.display())))?;
    let mut config = parse_config_text(&text, &path.display().to_string())?;
    apply_overrides(&mut config, overrides)?;
    config.validate()?;
    Ok(config)
}

pub fn apply_overrides(config: &mut RunConfig, overrides: &[String]) -> Result<(), ConfigError> {
    for item in overrides {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| err(format!("override '{item}': expected key=value")))?;
        config
            .apply(key.trim(), value.trim())
            .map_err(|e| err(format!("override '{item}': {}", e.message)))?;
    }
    Ok(())
}
