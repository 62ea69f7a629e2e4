//! The recommender network: embedding layer, stacked blocks that blend
//! trainable self-attention with the frequency-domain inductive bias, and a
//! dot-product scoring head tied to the item embedding table.

mod checkpoint;
mod forward;
mod params;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Precision, CHECKPOINT_VERSION};
pub use forward::{
    attention_probs, ce_loss, ce_loss_grad, gelu, gelu_grad, layer_norm, AttentionMask, BsaRec, EmbedTrace,
    ForwardTrace, LayerNormCache, LayerTrace,
};
pub use params::{BsaRecParams, LayerParams};

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::spectral::{BetaMode, FrequencySplit};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Catalog size |V|; item ids run `1..=num_items`, 0 is padding.
    pub num_items: usize,
    pub max_len: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    /// Weight of the inductive-bias branch; `1 - alpha` goes to attention.
    pub alpha: f64,
    /// Number of lowest real-DFT bins kept in the low band.
    pub cutoff: usize,
    pub beta_mode: BetaMode,
    pub dropout: f64,
    /// Dropout on attention probabilities at the same rate.
    pub attn_dropout: bool,
    pub layer_norm_eps: f64,
    pub causal_attention: bool,
    /// Restrict the frequency filter to its lower-triangular part.
    pub causal_filter: bool,
    /// Standard deviation of the truncated-normal weight initializer.
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_items: 1,
            max_len: 50,
            hidden: 64,
            layers: 2,
            heads: 1,
            alpha: 0.7,
            cutoff: 3,
            beta_mode: BetaMode::Vector,
            dropout: 0.5,
            attn_dropout: true,
            layer_norm_eps: 1e-12,
            causal_attention: true,
            causal_filter: false,
            init_std: 0.02,
        }
    }
}

impl ModelConfig {
    /// Collects every violated constraint rather than stopping at the first.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.num_items == 0 {
            v.push("num_items must be >= 1".to_string());
        }
        if self.max_len < 2 {
            v.push(format!("max_len must be >= 2, got {}", self.max_len));
        }
        if self.hidden == 0 {
            v.push("hidden must be >= 1".to_string());
        }
        if self.heads == 0 || (self.hidden > 0 && self.hidden % self.heads != 0) {
            v.push(format!(
                "hidden ({}) must be divisible by heads ({})",
                self.hidden, self.heads
            ));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            v.push(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if self.max_len >= 2 && FrequencySplit::new(self.max_len, self.cutoff).is_err() {
            v.push(format!(
                "cutoff must lie in [1, {}] for max_len {}, got {}",
                self.max_len / 2,
                self.max_len,
                self.cutoff
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            v.push(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(self.layer_norm_eps > 0.0) {
            v.push(format!("layer_norm_eps must be > 0, got {}", self.layer_norm_eps));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            v.push(format!("init_std must be > 0, got {}", self.init_std));
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(v.join("; ")))
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn split(&self) -> Result<FrequencySplit> {
        FrequencySplit::new(self.max_len, self.cutoff)
    }

    /// Flat `key=value` form used by checkpoints and config files.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("num_items", self.num_items.to_string()),
            ("max_len", self.max_len.to_string()),
            ("hidden", self.hidden.to_string()),
            ("layers", self.layers.to_string()),
            ("heads", self.heads.to_string()),
            ("alpha", fmt_f64(self.alpha)),
            ("cutoff", self.cutoff.to_string()),
            ("beta_mode", self.beta_mode.as_str().to_string()),
            ("dropout", fmt_f64(self.dropout)),
            ("attn_dropout", self.attn_dropout.to_string()),
            ("layer_norm_eps", fmt_f64(self.layer_norm_eps)),
            ("causal_attention", self.causal_attention.to_string()),
            ("causal_filter", self.causal_filter.to_string()),
            ("init_std", fmt_f64(self.init_std)),
        ]
    }

    pub const KEYS: [&'static str; 14] = [
        "num_items",
        "max_len",
        "hidden",
        "layers",
        "heads",
        "alpha",
        "cutoff",
        "beta_mode",
        "dropout",
        "attn_dropout",
        "layer_norm_eps",
        "causal_attention",
        "causal_filter",
        "init_std",
    ];

    /// Applies one `key=value` setting; returns `Ok(false)` for keys that do
    /// not belong to the model.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let bad = |what: &str| Error::InvalidConfig(format!("{key}: expected {what}, got `{value}`"));
        match key {
            "num_items" => self.num_items = value.parse().map_err(|_| bad("an integer"))?,
            "max_len" => self.max_len = value.parse().map_err(|_| bad("an integer"))?,
            "hidden" => self.hidden = value.parse().map_err(|_| bad("an integer"))?,
            "layers" => self.layers = value.parse().map_err(|_| bad("an integer"))?,
            "heads" => self.heads = value.parse().map_err(|_| bad("an integer"))?,
            "alpha" => self.alpha = value.parse().map_err(|_| bad("a number"))?,
            "cutoff" => self.cutoff = value.parse().map_err(|_| bad("an integer"))?,
            "beta_mode" => self.beta_mode = value.parse().map_err(|_| bad("`scalar` or `vector`"))?,
            "dropout" => self.dropout = value.parse().map_err(|_| bad("a number"))?,
            "attn_dropout" => self.attn_dropout = value.parse().map_err(|_| bad("true/false"))?,
            "layer_norm_eps" => self.layer_norm_eps = value.parse().map_err(|_| bad("a number"))?,
            "causal_attention" => self.causal_attention = value.parse().map_err(|_| bad("true/false"))?,
            "causal_filter" => self.causal_filter = value.parse().map_err(|_| bad("true/false"))?,
            "init_std" => self.init_std = value.parse().map_err(|_| bad("a number"))?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        let mut errors = Vec::new();
        for key in Self::KEYS {
            match pairs.get(key) {
                Some(value) => {
                    if let Err(e) = cfg.set(key, value) {
                        errors.push(e.to_string());
                    }
                }
                None => errors.push(format!("missing key `{key}`")),
            }
        }
        if !errors.is_empty() {
            return Err(Error::InvalidConfig(errors.join("; ")));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        let d = self.hidden;
        let beta = match self.beta_mode {
            BetaMode::Scalar => 1,
            BetaMode::Vector => d,
        };
        let per_layer = 3 * d * d + 2 * d * d + 2 * d + 2 * d + beta;
        (self.num_items + 1) * d + self.max_len * d + 2 * d + self.layers * per_layer
    }
}

/// Shortest decimal that parses back to the same `f64`.
pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}
