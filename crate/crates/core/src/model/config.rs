//! Model hyperparameters and ablation switches.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Activation;

/// Component switches, each disabling one architectural piece.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationFlags {
    /// Skip conditional probabilities: the snapshot adjacency is all-ones.
    pub prob: bool,
    /// Freeze the attention weight matrices at their initial value instead
    /// of evolving them across visits.
    pub lstm: bool,
    /// Replace the molecular drug memory with the raw medication table.
    pub internal: bool,
    /// Replace the fused co-occurrence/interaction memory with the
    /// molecular memory.
    pub interactive: bool,
    /// Bypass snapshot graphs: pooled raw code embeddings feed the
    /// recurrent encoders directly.
    pub dynn: bool,
}

impl AblationFlags {
    pub fn variant_name(&self) -> &'static str {
        match (self.prob, self.lstm, self.internal, self.interactive, self.dynn) {
            (true, false, false, false, false) => "prob",
            (false, true, false, false, false) => "lstm",
            (false, false, true, false, false) => "internal",
            (false, false, false, true, false) => "interactive",
            (false, false, false, false, true) => "dynn",
            (false, false, false, false, false) => "full",
            _ => "custom",
        }
    }

    pub fn from_name(name: &str) -> Result<AblationFlags> {
        let mut flags = AblationFlags::default();
        match name {
            "full" => {}
            "prob" => flags.prob = true,
            "lstm" => flags.lstm = true,
            "internal" => flags.internal = true,
            "interactive" => flags.interactive = true,
            "dynn" => flags.dynn = true,
            other => {
                return Err(Error::Config(format!(
                    "unknown ablation variant {other:?}; expected one of full, prob, lstm, internal, interactive, dynn"
                )))
            }
        }
        Ok(flags)
    }

    /// The six rows of the comparison harness, full model last.
    pub fn all_variants() -> [(&'static str, AblationFlags); 6] {
        [
            ("prob", AblationFlags { prob: true, ..Default::default() }),
            ("lstm", AblationFlags { lstm: true, ..Default::default() }),
            ("internal", AblationFlags { internal: true, ..Default::default() }),
            ("interactive", AblationFlags { interactive: true, ..Default::default() }),
            ("dynn", AblationFlags { dynn: true, ..Default::default() }),
            ("full", AblationFlags::default()),
        ]
    }
}

/// How the history memory scores its rows against the current query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KvScoreMode {
    /// Score against stored query keys only.
    Keys,
    /// Score against keys plus the value rows matched with the previous
    /// prescription vector.
    KeyValue,
}

impl Default for KvScoreMode {
    fn default() -> Self {
        KvScoreMode::Keys
    }
}

fn default_dim() -> usize { 64 }
fn default_gat_layers() -> usize { 2 }
fn default_mpnn_rounds() -> usize { 2 }
fn default_heads() -> usize { 1 }
fn default_leaky_slope() -> f64 { 0.2 }
fn default_dropout() -> f64 { 0.4 }
fn default_threshold() -> f64 { 0.5 }

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Patient-side attention depth.
    #[serde(default = "default_gat_layers")]
    pub gat_layers: usize,
    /// Message-passing rounds over molecule graphs.
    #[serde(default = "default_mpnn_rounds")]
    pub mpnn_rounds: usize,
    /// Attention heads per layer (averaged when > 1).
    #[serde(default = "default_heads")]
    pub heads: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default = "default_leaky_slope")]
    pub leaky_slope: f64,
    /// Dropout rate on the input embedding rows, training only.
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    /// Decision threshold on predicted probabilities.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub kv_score: KvScoreMode,
    /// Apply dropout between attention layers as well (off by default).
    #[serde(default)]
    pub dropout_between_gat: bool,
    /// Sensitivity flag: flip the conditional-probability denominator.
    #[serde(default)]
    pub flip_denominator: bool,
    #[serde(default)]
    pub ablation: AblationFlags,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: default_dim(),
            gat_layers: default_gat_layers(),
            mpnn_rounds: default_mpnn_rounds(),
            heads: default_heads(),
            activation: Activation::default(),
            leaky_slope: default_leaky_slope(),
            dropout: default_dropout(),
            threshold: default_threshold(),
            kv_score: KvScoreMode::default(),
            dropout_between_gat: false,
            flip_denominator: false,
            ablation: AblationFlags::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("dim must be positive".into()));
        }
        if self.gat_layers == 0 {
            return Err(Error::Config("need at least one attention layer".into()));
        }
        if self.mpnn_rounds == 0 {
            return Err(Error::Config("need at least one message-passing round".into()));
        }
        if self.heads == 0 {
            return Err(Error::Config("need at least one attention head".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }
}
