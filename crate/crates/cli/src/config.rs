//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use bsarec::evaluation::Protocol;
use bsarec::model::Precision;
use bsarec::trainer::TrainConfig;
use bsarec::{Error, ModelConfig, Result};

pub const OUTPUT_ROOT_ENV: &str = "BSAREC_OUTPUT_ROOT";

/// Everything a training run needs. `num_items` is not a key: it comes from
/// the dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub core_k: usize,
    pub augment_prefixes: bool,
    pub append_validation: bool,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub protocol: Protocol,
    pub mask_history: bool,
    pub eval_seed: u64,
    pub output_dir: PathBuf,
    pub precision: Precision,
    /// Record wall-clock seconds in the training log; with `false` the
    /// column is written as 0 so repeated runs are byte-identical.
    pub log_seconds: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            core_k: 1,
            augment_prefixes: false,
            append_validation: false,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            protocol: Protocol::Full,
            mask_history: true,
            eval_seed: 42,
            output_dir: PathBuf::from("runs/bsarec"),
            precision: Precision::Double,
            log_seconds: true,
        }
    }
}

const RUN_KEYS: [&str; 20] = [
    "data",
    "core_k",
    "augment_prefixes",
    "append_validation",
    "lr",
    "batch_size",
    "max_epochs",
    "patience",
    "grad_clip",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "weight_decay",
    "seed",
    "protocol",
    "mask_history",
    "eval_seed",
    "output_dir",
    "precision",
    "log_seconds",
];

/// Every accepted key, model keys first.
pub fn known_keys() -> Vec<&'static str> {
    ModelConfig::KEYS
        .iter()
        .copied()
        .filter(|k| *k != "num_items")
        .chain(RUN_KEYS)
        .collect()
}

fn parse<T: std::str::FromStr>(key: &str, value: &str, what: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("{key}: expected {what}, got `{value}`")))
}

fn parse_precision(key: &str, value: &str) -> Result<Precision> {
    match value {
        "f64" => Ok(Precision::Double),
        "f32" => Ok(Precision::Single),
        _ => Err(Error::InvalidConfig(format!("{key}: expected `f64` or `f32`, got `{value}`"))),
    }
}

impl RunConfig {
    /// Applies one setting. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if key == "num_items" {
            return Err(Error::InvalidConfig(
                "num_items: set by the dataset, not by the config".into(),
            ));
        }
        if self.model.set(key, value)? {
            return Ok(());
        }
        let t = &mut self.train;
        match key {
            "data" => self.data = (!value.is_empty()).then(|| PathBuf::from(value)),
            "core_k" => self.core_k = parse(key, value, "an integer")?,
            "augment_prefixes" => self.augment_prefixes = parse(key, value, "true/false")?,
            "append_validation" => self.append_validation = parse(key, value, "true/false")?,
            "lr" => t.adam.lr = parse(key, value, "a number")?,
            "batch_size" => t.batch_size = parse(key, value, "an integer")?,
            "max_epochs" => t.max_epochs = parse(key, value, "an integer")?,
            "patience" => t.patience = parse(key, value, "an integer")?,
            "grad_clip" => t.grad_clip = parse(key, value, "a number")?,
            "adam_beta1" => t.adam.beta1 = parse(key, value, "a number")?,
            "adam_beta2" => t.adam.beta2 = parse(key, value, "a number")?,
            "adam_eps" => t.adam.eps = parse(key, value, "a number")?,
            "weight_decay" => t.adam.weight_decay = parse(key, value, "a number")?,
            "seed" => t.seed = parse(key, value, "an unsigned integer")?,
            "protocol" => {
                self.protocol = value
                    .parse()
                    .map_err(|_| Error::InvalidConfig(format!("protocol: expected `full` or `sampled-99`, got `{value}`")))?
            }
            "mask_history" => self.mask_history = parse(key, value, "true/false")?,
            "eval_seed" => self.eval_seed = parse(key, value, "an unsigned integer")?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            "precision" => self.precision = parse_precision(key, value)?,
            "log_seconds" => self.log_seconds = parse(key, value, "true/false")?,
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "unknown key `{key}` (known: {})",
                    known_keys().join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Parses config text on top of the defaults, collecting every problem.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut errors = Vec::new();
        let mut seen = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                errors.push(format!("line {}: expected `key = value`", i + 1));
                continue;
            };
            let (key, value) = (key.trim(), value.trim());
            if let Some(prev) = seen.insert(key.to_string(), i + 1) {
                errors.push(format!("line {}: `{key}` already set on line {prev}", i + 1));
                continue;
            }
            if let Err(e) = cfg.set(key, value) {
                errors.push(format!("line {}: {}", i + 1, strip_prefix(&e)));
            }
        }
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::InvalidConfig(errors.join("\n  ")))
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_text(&text).map_err(|e| Error::InvalidConfig(format!("{}:\n  {}", path.display(), strip_prefix(&e))))
    }

    /// Every constraint violation, with the model checked against a
    /// placeholder catalog size.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.data.is_none() {
            v.push("data: no dataset path given".to_string());
        }
        if self.core_k == 0 {
            v.push("core_k must be >= 1".to_string());
        }
        let mut model = self.model.clone();
        model.num_items = model.num_items.max(1);
        v.extend(model.violations());
        v.extend(self.train.violations());
        v
    }

    /// Output directory after applying the output-root override.
    pub fn resolved_output_dir(&self) -> PathBuf {
        resolve_output(&self.output_dir)
    }

    /// Canonical text form with every key present.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let mut pairs: Vec<(&str, String)> = self
            .model
            .to_pairs()
            .into_iter()
            .filter(|(k, _)| *k != "num_items")
            .collect();
        pairs.extend([
            ("data", self.data.as_ref().map(|p| p.display().to_string()).unwrap_or_default()),
            ("core_k", self.core_k.to_string()),
            ("augment_prefixes", self.augment_prefixes.to_string()),
            ("append_validation", self.append_validation.to_string()),
            ("lr", format!("{:?}", t.adam.lr)),
            ("batch_size", t.batch_size.to_string()),
            ("max_epochs", t.max_epochs.to_string()),
            ("patience", t.patience.to_string()),
            ("grad_clip", format!("{:?}", t.grad_clip)),
            ("adam_beta1", format!("{:?}", t.adam.beta1)),
            ("adam_beta2", format!("{:?}", t.adam.beta2)),
            ("adam_eps", format!("{:?}", t.adam.eps)),
            ("weight_decay", format!("{:?}", t.adam.weight_decay)),
            ("seed", t.seed.to_string()),
            ("protocol", self.protocol.as_str().to_string()),
            ("mask_history", self.mask_history.to_string()),
            ("eval_seed", self.eval_seed.to_string()),
            ("output_dir", self.output_dir.display().to_string()),
            (
                "precision",
                match self.precision {
                    Precision::Double => "f64",
                    Precision::Single => "f32",
                }
                .to_string(),
            ),
            ("log_seconds", self.log_seconds.to_string()),
        ]);
        let mut out = String::new();
        for (k, v) in pairs {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

/// Joins relative paths onto the output-root override when it is set.
pub fn resolve_output(path: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if path.is_relative() && !root.is_empty() => PathBuf::from(root).join(path),
        _ => path.to_path_buf(),
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::InvalidConfig(m) => m.clone(),
        other => other.to_string(),
    }
}
