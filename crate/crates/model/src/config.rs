use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// 6+6 layers, d_model 512, d_ff 1024, 8 heads.
    Small,
    /// 6+6 layers, d_model 768, d_ff 3072, 8 heads.
    Large,
    /// 2+2 layers, d_model 64, d_ff 256, 4 heads, no dropout.
    Tiny,
}

impl std::str::FromStr for Preset {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "small" => Ok(Preset::Small),
            "large" => Ok(Preset::Large),
            "tiny" => Ok(Preset::Tiny),
            other => Err(ModelError::InvalidConfig(format!("unknown model preset `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_src_len: usize,
    pub max_tgt_len: usize,
    pub dropout: f64,
    #[serde(default)]
    pub label_smoothing: f64,
    /// Share the target embedding with the output projection.
    #[serde(default)]
    pub tie_embeddings: bool,
}

impl ModelConfig {
    pub fn preset(preset: Preset, vocab_size: usize) -> Self {
        let (layers, heads, d_model, d_ff, dropout) = match preset {
            Preset::Small => (6, 8, 512, 1024, 0.1),
            Preset::Large => (6, 8, 768, 3072, 0.1),
            Preset::Tiny => (2, 4, 64, 256, 0.0),
        };
        ModelConfig {
            enc_layers: layers,
            dec_layers: layers,
            heads,
            d_model,
            d_ff,
            vocab_size,
            max_src_len: 512,
            max_tgt_len: 128,
            dropout,
            label_smoothing: 0.0,
            tie_embeddings: false,
        }
    }

    pub fn small(vocab_size: usize) -> Self {
        Self::preset(Preset::Small, vocab_size)
    }

    pub fn large(vocab_size: usize) -> Self {
        Self::preset(Preset::Large, vocab_size)
    }

    pub fn tiny(vocab_size: usize) -> Self {
        Self::preset(Preset::Tiny, vocab_size)
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("enc_layers", self.enc_layers),
            ("dec_layers", self.dec_layers),
            ("heads", self.heads),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
            ("max_src_len", self.max_src_len),
            ("max_tgt_len", self.max_tgt_len),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::InvalidConfig(format!("{name} must be at least 1")));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(ModelError::InvalidConfig(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::InvalidConfig(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(ModelError::InvalidConfig(format!(
                "label smoothing {} outside [0, 1)",
                self.label_smoothing
            )));
        }
        if self.vocab_size < ketod_core::tokens::RESERVED.len() {
            return Err(ModelError::InvalidConfig(format!(
                "vocabulary of {} cannot hold the reserved tokens",
                self.vocab_size
            )));
        }
        Ok(())
    }
}
