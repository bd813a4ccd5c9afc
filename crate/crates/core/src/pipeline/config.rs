use std::fs;
use std::path::{Path, PathBuf};

use ndcore::AdamConfig;
use serde::{Deserialize, Serialize};

use crate::data::{BatchConfig, SynthConfig};
use crate::error::{Error, Result};

/// Which dev score selects the retained checkpoint.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DevMetric {
    /// `exact_span` when every dev example's gold span text is itself one of
    /// its references (token data), else `rouge_l`.
    #[default]
    Auto,
    ExactSpan,
    RougeL,
}

/// Every hyperparameter of a run. Defaults are the full-scale settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: usize,
    pub word_dim: usize,
    pub char_dim: usize,
    /// Half-width of the uniform initializer of embedding rows.
    pub embedding_scale: f64,
    pub pretrained_embeddings: Option<PathBuf>,

    pub beta_content: f64,
    pub beta_verification: f64,
    pub l2_weight: f64,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub ema_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Dev evaluations without improvement before stopping.
    pub patience: usize,
    /// Stop as soon as the dev metric reaches this value.
    pub stop_at_metric: Option<f64>,
    pub dev_metric: DevMetric,
    pub seed: u64,

    pub max_question_len: usize,
    pub max_passage_len: usize,
    pub max_passages: usize,
    pub max_span_len: usize,

    pub mask_self_attention: bool,
    /// Multiply the content score into the final ranking.
    pub score_content: bool,
    /// Multiply the verification score into the final ranking.
    pub score_verification: bool,
    /// Lowercase before ROUGE-L, BLEU-1 and exact-span comparison.
    pub case_fold: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            hidden: 150,
            word_dim: 300,
            char_dim: 30,
            embedding_scale: 0.1,
            pretrained_embeddings: None,
            beta_content: 0.5,
            beta_verification: 0.5,
            l2_weight: 3e-4,
            learning_rate: adam.lr,
            adam_beta1: adam.beta1,
            adam_beta2: adam.beta2,
            adam_eps: adam.eps,
            ema_decay: 0.9999,
            batch_size: 32,
            max_epochs: 50,
            patience: 10,
            stop_at_metric: None,
            dev_metric: DevMetric::Auto,
            seed: 0,
            max_question_len: 32,
            max_passage_len: 64,
            max_passages: 10,
            max_span_len: 30,
            mask_self_attention: false,
            score_content: true,
            score_verification: true,
            case_fold: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hidden", self.hidden),
            ("word_dim", self.word_dim),
            ("char_dim", self.char_dim),
            ("batch_size", self.batch_size),
            ("max_question_len", self.max_question_len),
            ("max_passage_len", self.max_passage_len),
            ("max_passages", self.max_passages),
            ("max_span_len", self.max_span_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        let nonneg = [
            ("beta_content", self.beta_content),
            ("beta_verification", self.beta_verification),
            ("l2_weight", self.l2_weight),
            ("embedding_scale", self.embedding_scale),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a finite value >= 0")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::Config("ema_decay must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn batch(&self, require_gold: bool) -> BatchConfig {
        BatchConfig {
            max_question_len: self.max_question_len,
            max_passage_len: self.max_passage_len,
            max_passages: self.max_passages,
            require_gold,
        }
    }
}

/// A config file: model keys as-is, generator keys prefixed `synth_`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigFile {
    pub model: ModelConfig,
    pub synth: SynthConfig,
}

const SYNTH_PREFIX: &str = "synth_";

impl ConfigFile {
    /// Parses flat `key = value` TOML. Unknown keys are an error.
    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let mut model = toml::Table::new();
        let mut synth = toml::Table::new();
        for (k, v) in table {
            if v.is_table() {
                return Err(Error::Config(format!("`{k}`: config is flat, tables are not allowed")));
            }
            match k.strip_prefix(SYNTH_PREFIX) {
                Some(rest) => synth.insert(rest.to_string(), v),
                None => model.insert(k, v),
            };
        }
        let model: ModelConfig = model
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        let synth: SynthConfig = synth
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("synthetic: {}", e.message())))?;
        model.validate()?;
        Ok(Self { model, synth })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}
