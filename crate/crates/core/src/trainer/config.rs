use std::fmt::Write as _;
use std::path::Path;

use crate::attention::{AttentionConfig, AttentionMode, AttentionNorm, TokenAlignment};
use crate::encoder::Pooling;
use crate::error::{Error, Result};
use crate::numkit::Activation;

/// Architecture and optimization settings. Defaults follow the usual
/// published settings: lr 1e-3, λ 1e-6, dropout 0.4, 100 merge neurons,
/// global max pooling.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub d_e: usize,
    pub h: usize,
    pub k: usize,
    pub features: usize,
    pub attention: AttentionMode,
    pub attention_norm: AttentionNorm,
    pub token_alignment: TokenAlignment,
    pub pooling: Pooling,
    pub n_h: usize,
    pub tensor_activation: Activation,
    pub feature_activation: Activation,
    pub hidden_activation: Activation,
    pub tie_encoders: bool,
    pub train_embeddings: bool,
    pub standardize_features: bool,
    pub dropout: f64,
    pub lr: f64,
    pub lambda: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_e: 300,
            h: 50,
            k: 1,
            features: 51,
            attention: AttentionMode::Phrase,
            attention_norm: AttentionNorm::Softmax,
            token_alignment: TokenAlignment::Positional,
            pooling: Pooling::Max,
            n_h: 100,
            tensor_activation: Activation::Tanh,
            feature_activation: Activation::Tanh,
            hidden_activation: Activation::Tanh,
            tie_encoders: true,
            train_embeddings: false,
            standardize_features: true,
            dropout: 0.4,
            lr: 1e-3,
            lambda: 1e-6,
            batch_size: 64,
            max_epochs: 30,
            patience: 5,
            seed: 1,
        }
    }
}

/// Keys that change the parameter layout or the forward computation.
pub const ARCHITECTURE_KEYS: [&str; 15] = [
    "d_e",
    "h",
    "k",
    "features",
    "attention",
    "attention_norm",
    "token_alignment",
    "pooling",
    "n_h",
    "tensor_activation",
    "feature_activation",
    "hidden_activation",
    "tie_encoders",
    "train_embeddings",
    "standardize_features",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("bad value `{value}` for `{key}`: {e}")))
}

impl ModelConfig {
    /// Context dimension `2h`.
    pub fn d(&self) -> usize {
        2 * self.h
    }

    pub fn merge_width(&self) -> usize {
        2 * self.d() + 3 * self.k
    }

    pub fn attention_config(&self) -> AttentionConfig {
        AttentionConfig {
            mode: self.attention,
            norm: self.attention_norm,
            alignment: self.token_alignment,
            pooling: self.pooling,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.d_e == 0 || self.h == 0 || self.n_h == 0 || self.features == 0 {
            return fail("d_e, h, n_h and features must be positive");
        }
        if self.k == 0 {
            return fail("k must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must lie in [0, 1)");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail("lr must be positive and lambda non-negative");
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return fail("batch_size and max_epochs must be positive");
        }
        Ok(())
    }

    /// All keys in canonical order with their current values.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("d_e", self.d_e.to_string()),
            ("h", self.h.to_string()),
            ("k", self.k.to_string()),
            ("features", self.features.to_string()),
            ("attention", self.attention.to_string()),
            ("attention_norm", self.attention_norm.to_string()),
            ("token_alignment", self.token_alignment.to_string()),
            ("pooling", self.pooling.to_string()),
            ("n_h", self.n_h.to_string()),
            ("tensor_activation", self.tensor_activation.to_string()),
            ("feature_activation", self.feature_activation.to_string()),
            ("hidden_activation", self.hidden_activation.to_string()),
            ("tie_encoders", self.tie_encoders.to_string()),
            ("train_embeddings", self.train_embeddings.to_string()),
            ("standardize_features", self.standardize_features.to_string()),
            ("dropout", format!("{:?}", self.dropout)),
            ("lr", format!("{:?}", self.lr)),
            ("lambda", format!("{:?}", self.lambda)),
            ("batch_size", self.batch_size.to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("patience", self.patience.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }

    /// Sets one field; hyphens and underscores in `key` are interchangeable.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let value = value.trim();
        let k = key.as_str();
        match k {
            "d_e" => self.d_e = parse(k, value)?,
            "h" => self.h = parse(k, value)?,
            "k" => self.k = parse(k, value)?,
            "features" => self.features = parse(k, value)?,
            "attention" => self.attention = value.parse()?,
            "attention_norm" => self.attention_norm = value.parse()?,
            "token_alignment" => self.token_alignment = value.parse()?,
            "pooling" => self.pooling = value.parse()?,
            "n_h" => self.n_h = parse(k, value)?,
            "tensor_activation" => self.tensor_activation = value.parse()?,
            "feature_activation" => self.feature_activation = value.parse()?,
            "hidden_activation" => self.hidden_activation = value.parse()?,
            "tie_encoders" => self.tie_encoders = parse(k, value)?,
            "train_embeddings" => self.train_embeddings = parse(k, value)?,
            "standardize_features" => self.standardize_features = parse(k, value)?,
            "dropout" => self.dropout = parse(k, value)?,
            "lr" => self.lr = parse(k, value)?,
            "lambda" => self.lambda = parse(k, value)?,
            "batch_size" => self.batch_size = parse(k, value)?,
            "max_epochs" => self.max_epochs = parse(k, value)?,
            "patience" => self.patience = parse(k, value)?,
            "seed" => self.seed = parse(k, value)?,
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    /// Applies `key=value` lines on top of `self`. Blank lines and `#`
    /// comments are skipped; keys this type does not know are returned
    /// so callers can handle their own settings.
    pub fn apply_kv(&mut self, text: &str) -> Result<Vec<(String, String)>> {
        let mut unknown = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {}: expected key=value", n + 1)));
            };
            match self.set(k, v) {
                Err(Error::Config(msg)) if msg.starts_with("unknown config key") => {
                    unknown.push((k.trim().to_string(), v.trim().to_string()))
                }
                other => other?,
            }
        }
        Ok(unknown)
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut c = ModelConfig::default();
        let unknown = c.apply_kv(text)?;
        if let Some((k, _)) = unknown.first() {
            return Err(Error::Config(format!("unknown config key `{k}`")));
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_kv(&text)
    }

    /// Names the architecture keys where `self` and `other` differ.
    pub fn check_compatible(&self, other: &ModelConfig) -> Result<()> {
        let a = self.entries();
        let b = other.entries();
        let diffs: Vec<String> = a
            .iter()
            .zip(&b)
            .filter(|((k, x), (_, y))| ARCHITECTURE_KEYS.contains(k) && x != y)
            .map(|((k, x), (_, y))| format!("{k}: model has {x}, requested {y}"))
            .collect();
        if diffs.is_empty() {
            Ok(())
        } else {
            Err(Error::ConfigMismatch(diffs.join("; ")))
        }
    }
}
