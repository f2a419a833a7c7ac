//! Named configurations. `paper` carries the published constants; `fixture`
//! shrinks them for desk-scale runs against the mock generator.

use serde::{Deserialize, Serialize};

use crate::genclient::pool::{DEFAULT_TEMPERATURE, LATENT_MAX_TOKENS, REPHRASE_MAX_TOKENS};
use crate::megadoc::SeparatorPolicy;
use crate::packer::DEFAULT_CONTEXT_LEN;
use crate::search::Grid;
use crate::tokenizer::{TokenizerConfig, WrapperMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: String,
    pub tokenizer: TokenizerConfig,
    pub context_len: usize,
    pub batch_size: usize,
    pub mixing_fraction: f64,
    pub real_epochs: u32,
    pub temperature: f64,
    pub rephrase_max_tokens: u32,
    pub latent_max_tokens: u32,
    pub separator: SeparatorPolicy,
    pub mask_cross_doc: bool,
    pub grid: Grid,
}

impl Preset {
    pub fn paper() -> Self {
        Self {
            name: "paper".into(),
            tokenizer: TokenizerConfig::Byte {
                wrapper: WrapperMode::PlainText,
            },
            context_len: DEFAULT_CONTEXT_LEN,
            batch_size: 64,
            mixing_fraction: 0.75,
            real_epochs: 16,
            temperature: DEFAULT_TEMPERATURE,
            rephrase_max_tokens: REPHRASE_MAX_TOKENS,
            latent_max_tokens: LATENT_MAX_TOKENS,
            separator: SeparatorPolicy::BetweenAndAfter,
            mask_cross_doc: false,
            grid: Grid::paper(),
        }
    }

    pub fn fixture() -> Self {
        Self {
            name: "fixture".into(),
            context_len: 64,
            batch_size: 4,
            mixing_fraction: 0.5,
            real_epochs: 2,
            ..Self::paper()
        }
    }

    pub fn named(name: &str) -> Option<Self> {
        match name.strip_prefix("preset:").unwrap_or(name) {
            "paper" => Some(Self::paper()),
            "fixture" => Some(Self::fixture()),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup() {
        assert_eq!(Preset::named("preset:paper").unwrap().context_len, 4096);
        assert_eq!(Preset::named("fixture").unwrap().temperature, 1.0);
        assert!(Preset::named("other").is_none());
    }
}
