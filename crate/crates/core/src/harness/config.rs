//! Flat `key = value` configuration, one entry per line, `#` starts a comment.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::agent::ModelConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    /// Synthetic glyphs; the test split uses `data_seed + 1`.
    Glyphs,
    /// IDX files, binarized, optionally 2× downsampled.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        downsample: bool,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub dataset: DatasetSpec,
    pub height: usize,
    pub width: usize,
    pub data_seed: u64,
    pub train_count: usize,
    pub test_count: usize,
    pub timesteps: usize,
    pub glimpse: usize,
    pub latent_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub flow_multiplier: usize,
    pub flow_layers: usize,
    pub eval_samples: usize,
    pub eval_repeats: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub clip_norm: f64,
    pub probe_hidden: usize,
    pub probe_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dataset: DatasetSpec::Glyphs,
            height: 16,
            width: 16,
            data_seed: 0,
            train_count: 3000,
            test_count: 200,
            timesteps: 5,
            glimpse: 6,
            latent_dim: 16,
            encoder_hidden: vec![256, 128],
            decoder_hidden: vec![128, 256],
            feature_dim: 128,
            embed_dim: 128,
            flow_multiplier: 8,
            flow_layers: 3,
            eval_samples: 100,
            eval_repeats: 10,
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 30,
            seed: 0,
            clip_norm: 10.0,
            probe_hidden: 64,
            probe_epochs: 20,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse `{key}` value {value:?}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl TrainConfig {
    /// Reduced-MNIST protocol: 14×14, w = 4, T = 7.
    pub fn mnist(train_images: PathBuf, train_labels: PathBuf, test_images: PathBuf, test_labels: PathBuf) -> Self {
        TrainConfig {
            dataset: DatasetSpec::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                downsample: true,
            },
            height: 14,
            width: 14,
            timesteps: 7,
            glimpse: 4,
            ..Default::default()
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            height: self.height,
            width: self.width,
            glimpse: self.glimpse,
            latent_dim: self.latent_dim,
            encoder_hidden: self.encoder_hidden.clone(),
            decoder_hidden: self.decoder_hidden.clone(),
            feature_dim: self.feature_dim,
            embed_dim: self.embed_dim,
            flow_multiplier: self.flow_multiplier,
            flow_layers: self.flow_layers,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("height", self.height),
            ("width", self.width),
            ("train_count", self.train_count),
            ("test_count", self.test_count),
            ("timesteps", self.timesteps),
            ("glimpse", self.glimpse),
            ("latent_dim", self.latent_dim),
            ("feature_dim", self.feature_dim),
            ("embed_dim", self.embed_dim),
            ("flow_multiplier", self.flow_multiplier),
            ("flow_layers", self.flow_layers),
            ("eval_samples", self.eval_samples),
            ("eval_repeats", self.eval_repeats),
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("probe_hidden", self.probe_hidden),
            ("probe_epochs", self.probe_epochs),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("`{k}` must be positive")));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("`learning_rate` must be positive".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config("`clip_norm` must be positive".into()));
        }
        if self.timesteps * self.glimpse * self.glimpse > 4 * self.height * self.width {
            return Err(Error::Config(format!(
                "T·w² = {} exceeds 4·H·W = {}",
                self.timesteps * self.glimpse * self.glimpse,
                4 * self.height * self.width
            )));
        }
        self.model_config().validate()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        let mut seen = std::collections::HashSet::new();
        let (mut ti, mut tl, mut vi, mut vl, mut ds) = (None, None, None, None, true);
        let mut dataset = "glyphs".to_string();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key `{key}`", n + 1)));
            }
            match key {
                "dataset" => dataset = value.to_string(),
                "train_images" => ti = Some(PathBuf::from(value)),
                "train_labels" => tl = Some(PathBuf::from(value)),
                "test_images" => vi = Some(PathBuf::from(value)),
                "test_labels" => vl = Some(PathBuf::from(value)),
                "downsample" => ds = parse(key, value)?,
                "height" => cfg.height = parse(key, value)?,
                "width" => cfg.width = parse(key, value)?,
                "data_seed" => cfg.data_seed = parse(key, value)?,
                "train_count" => cfg.train_count = parse(key, value)?,
                "test_count" => cfg.test_count = parse(key, value)?,
                "timesteps" => cfg.timesteps = parse(key, value)?,
                "glimpse" => cfg.glimpse = parse(key, value)?,
                "latent_dim" => cfg.latent_dim = parse(key, value)?,
                "encoder_hidden" => cfg.encoder_hidden = parse_list(key, value)?,
                "decoder_hidden" => cfg.decoder_hidden = parse_list(key, value)?,
                "feature_dim" => cfg.feature_dim = parse(key, value)?,
                "embed_dim" => cfg.embed_dim = parse(key, value)?,
                "flow_multiplier" => cfg.flow_multiplier = parse(key, value)?,
                "flow_layers" => cfg.flow_layers = parse(key, value)?,
                "eval_samples" => cfg.eval_samples = parse(key, value)?,
                "eval_repeats" => cfg.eval_repeats = parse(key, value)?,
                "learning_rate" => cfg.learning_rate = parse(key, value)?,
                "batch_size" => cfg.batch_size = parse(key, value)?,
                "epochs" => cfg.epochs = parse(key, value)?,
                "seed" => cfg.seed = parse(key, value)?,
                "clip_norm" => cfg.clip_norm = parse(key, value)?,
                "probe_hidden" => cfg.probe_hidden = parse(key, value)?,
                "probe_epochs" => cfg.probe_epochs = parse(key, value)?,
                _ => return Err(Error::Config(format!("line {}: unknown key `{key}`", n + 1))),
            }
        }
        cfg.dataset = match dataset.as_str() {
            "glyphs" => DatasetSpec::Glyphs,
            "idx" => {
                let need = |p: Option<PathBuf>, k: &str| p.ok_or_else(|| Error::Config(format!("dataset = idx needs `{k}`")));
                DatasetSpec::Idx {
                    train_images: need(ti, "train_images")?,
                    train_labels: need(tl, "train_labels")?,
                    test_images: need(vi, "test_images")?,
                    test_labels: need(vl, "test_labels")?,
                    downsample: ds,
                }
            }
            other => return Err(Error::Config(format!("unknown dataset {other:?}"))),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Canonical text; `parse(to_text())` reproduces the config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        match &self.dataset {
            DatasetSpec::Glyphs => s.push_str("dataset = glyphs\n"),
            DatasetSpec::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                downsample,
            } => {
                s.push_str("dataset = idx\n");
                let _ = writeln!(s, "train_images = {}", train_images.display());
                let _ = writeln!(s, "train_labels = {}", train_labels.display());
                let _ = writeln!(s, "test_images = {}", test_images.display());
                let _ = writeln!(s, "test_labels = {}", test_labels.display());
                let _ = writeln!(s, "downsample = {downsample}");
            }
        }
        let entries: [(&str, String); 23] = [
            ("height", self.height.to_string()),
            ("width", self.width.to_string()),
            ("data_seed", self.data_seed.to_string()),
            ("train_count", self.train_count.to_string()),
            ("test_count", self.test_count.to_string()),
            ("timesteps", self.timesteps.to_string()),
            ("glimpse", self.glimpse.to_string()),
            ("latent_dim", self.latent_dim.to_string()),
            ("encoder_hidden", join(&self.encoder_hidden)),
            ("decoder_hidden", join(&self.decoder_hidden)),
            ("feature_dim", self.feature_dim.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("flow_multiplier", self.flow_multiplier.to_string()),
            ("flow_layers", self.flow_layers.to_string()),
            ("eval_samples", self.eval_samples.to_string()),
            ("eval_repeats", self.eval_repeats.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("seed", self.seed.to_string()),
            ("clip_norm", self.clip_norm.to_string()),
            ("probe_hidden", self.probe_hidden.to_string()),
            ("probe_epochs", self.probe_epochs.to_string()),
        ];
        for (k, v) in entries {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = TrainConfig::default();
        cfg.validate().unwrap();
        assert_eq!(TrainConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert_eq!(TrainConfig::parse("# nothing\n\n").unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(TrainConfig::parse("epochs = 0").is_err());
        assert!(TrainConfig::parse("colour = red").is_err());
        assert!(TrainConfig::parse("seed = 1\nseed = 2").is_err());
        assert!(TrainConfig::parse("just words").is_err());
        // 5 · 16² > 4 · 16 · 16
        assert!(TrainConfig::parse("glimpse = 16").is_err());
    }

    #[test]
    fn comments_and_lists() {
        let cfg = TrainConfig::parse("encoder_hidden = 32, 16  # two layers\nlearning_rate=0.01").unwrap();
        assert_eq!(cfg.encoder_hidden, vec![32, 16]);
        assert_eq!(cfg.learning_rate, 0.01);
    }
}
