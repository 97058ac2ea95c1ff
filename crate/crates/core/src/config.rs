//! Model, training and decoding settings. Every struct deserializes from a
//! TOML table with missing keys falling back to the desk-scale defaults.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How per-location word distributions are obtained for attention refinement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PerLocationMode {
    /// Re-run only the current LSTM step with the context replaced by `v_ij`.
    #[default]
    Substitution,
    /// Re-run the whole prefix with the context fixed to `v_ij` at every step.
    FullRerun,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SkelConfig {
    /// LSTM hidden width n_s.
    pub hidden: usize,
    /// Word embedding width m_s.
    pub embed: usize,
    /// Width of the attention MLP's hidden layer.
    pub attention_hidden: usize,
    /// With attention off the context is the mean feature vector.
    pub attention: bool,
    pub per_location: PerLocationMode,
}

impl Default for SkelConfig {
    fn default() -> Self {
        SkelConfig {
            hidden: 128,
            embed: 64,
            attention_hidden: 128,
            attention: true,
            per_location: PerLocationMode::Substitution,
        }
    }
}

impl SkelConfig {
    /// Sizes used by the published large-scale model.
    pub fn paper_scale() -> Self {
        SkelConfig {
            hidden: 1800,
            embed: 512,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.embed == 0 || self.attention_hidden == 0 {
            return Err(Error::config("skeleton model dimensions must be positive"));
        }
        Ok(())
    }
}

/// Which Skel-LSTM hidden state conditions the attribute decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HiddenSource {
    /// State before the skeletal word was predicted.
    Previous,
    /// State that predicted the skeletal word.
    #[default]
    Current,
    /// State at the end of the skeleton sentence.
    Final,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttrConfig {
    /// LSTM hidden width n_a; also the width of the fused sum.
    pub hidden: usize,
    /// Attribute word embedding width (LSTM input width).
    pub embed: usize,
    /// Condition on refined post-word attention instead of pre-word attention.
    pub use_post_word_alpha: bool,
    /// Decode attributes for every skeleton token, not only noun-like ones.
    pub invoke_on_all_tokens: bool,
    pub hidden_source: HiddenSource,
}

impl Default for AttrConfig {
    fn default() -> Self {
        AttrConfig {
            hidden: 128,
            embed: 64,
            use_post_word_alpha: false,
            invoke_on_all_tokens: true,
            hidden_source: HiddenSource::Current,
        }
    }
}

impl AttrConfig {
    pub fn paper_scale() -> Self {
        AttrConfig {
            hidden: 1024,
            embed: 512,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.embed == 0 {
            return Err(Error::config("attribute model dimensions must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub seed: u64,
    /// Halve the learning rate once, the first epoch validation loss fails to improve.
    pub halve_lr_on_plateau: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            learning_rate: 0.01,
            batch_size: 16,
            clip_norm: crate::numerics::DEFAULT_CLIP_NORM,
            seed: 1,
            halve_lr_on_plateau: true,
        }
    }
}

impl TrainConfig {
    pub fn attr_default() -> Self {
        TrainConfig {
            learning_rate: 0.003,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning rate must be positive"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::config("clip norm must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub beam_skel: usize,
    pub beam_attr: usize,
    pub gamma_skel: f64,
    pub gamma_attr: f64,
    pub max_len_skel: usize,
    pub max_len_attr: usize,
    /// Overrides the attribute model's `use_post_word_alpha` when set.
    pub post_word_alpha: Option<bool>,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam_skel: 3,
            beam_attr: 2,
            gamma_skel: 0.0,
            gamma_attr: 0.0,
            max_len_skel: 16,
            max_len_attr: 6,
            post_word_alpha: None,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_skel == 0 || self.beam_attr == 0 {
            return Err(Error::config("beam sizes must be at least 1"));
        }
        if self.max_len_skel == 0 {
            return Err(Error::config("skeleton max length must be at least 1"));
        }
        if !self.gamma_skel.is_finite() || !self.gamma_attr.is_finite() {
            return Err(Error::config("length factors must be finite"));
        }
        Ok(())
    }
}
