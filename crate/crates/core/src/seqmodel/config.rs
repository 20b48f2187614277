use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// Context-fusion mode of a sequence model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Text only.
    Nv,
    /// Coarse per-image vectors added to the words of their turn.
    Cv,
    /// Object vectors of every image as an encoder prefix.
    Fv,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Nv => "nv",
            Mode::Cv => "cv",
            Mode::Fv => "fv",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "nv" => Ok(Mode::Nv),
            "cv" => Ok(Mode::Cv),
            "fv" => Ok(Mode::Fv),
            other => Err(format!("unknown mode {other:?} (expected nv, cv or fv)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub mode: Mode,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub max_src_len: usize,
    pub max_turns: usize,
    /// Longest target, in content tokens; `[EOS]` comes on top.
    pub max_tgt_len: usize,
    pub vocab_size: usize,
    /// Width of the visual features; 0 in NV mode.
    pub d_visual: usize,
}

impl ModelConfig {
    /// Three encoder and three decoder layers, eight heads, width 512.
    pub fn base(mode: Mode, vocab_size: usize, d_visual: usize) -> Self {
        Self {
            mode,
            enc_layers: 3,
            dec_layers: 3,
            heads: 8,
            d_model: 512,
            ffn_dim: 2048,
            dropout: 0.1,
            max_src_len: 512,
            max_turns: 32,
            max_tgt_len: 64,
            vocab_size,
            d_visual: if mode == Mode::Nv { 0 } else { d_visual },
        }
    }

    /// Two layers each side, two heads, width 32.
    pub fn tiny(mode: Mode, vocab_size: usize, d_visual: usize) -> Self {
        Self {
            enc_layers: 2,
            dec_layers: 2,
            heads: 2,
            d_model: 32,
            ffn_dim: 64,
            dropout: 0.0,
            max_src_len: 128,
            max_turns: 16,
            max_tgt_len: 16,
            ..Self::base(mode, vocab_size, d_visual)
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: String| Err(ModelError::InvalidConfig(m));
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return fail(format!("d_model {} not divisible by heads {}", self.d_model, self.heads));
        }
        if self.max_src_len < 8 {
            return fail("max_src_len must be at least 8".into());
        }
        if self.max_turns == 0 || self.max_tgt_len == 0 {
            return fail("max_turns and max_tgt_len must be positive".into());
        }
        if self.vocab_size <= crate::corpus::vocab::NUM_SPECIAL {
            return fail("vocab_size must exceed the special block".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must lie in [0, 1)".into());
        }
        match (self.mode, self.d_visual) {
            (Mode::Nv, 0) => {}
            (Mode::Nv, _) => return fail("NV mode takes no visual features (d_visual must be 0)".into()),
            (_, 0) => return fail(format!("{} mode needs d_visual > 0", self.mode)),
            _ => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        ModelConfig::base(Mode::Fv, 1000, 2048).validate().unwrap();
        ModelConfig::tiny(Mode::Cv, 20, 8).validate().unwrap();
        ModelConfig::tiny(Mode::Nv, 20, 8).validate().unwrap();
        let bad = ModelConfig { heads: 3, ..ModelConfig::tiny(Mode::Nv, 20, 0) };
        assert!(bad.validate().is_err());
        let bad = ModelConfig { d_visual: 0, ..ModelConfig::tiny(Mode::Cv, 20, 0) };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("FV".parse::<Mode>().unwrap(), Mode::Fv);
        assert!("xv".parse::<Mode>().is_err());
        assert_eq!(Mode::Cv.to_string(), "cv");
    }
}
