//! Flat `module.key=value` configuration.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fuzzyclust::ClusterConfig;
use crate::unet::{TrainConfig, UNetConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ThresholdMode {
    /// Optimize on a slice held out from the training data.
    Holdout,
    /// Optimize on the evaluation images themselves.
    TestSet,
}

impl ThresholdMode {
    pub fn tag(self) -> &'static str {
        match self {
            ThresholdMode::Holdout => "holdout",
            ThresholdMode::TestSet => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub seed: u64,
    pub cluster: ClusterConfig,
    pub unet: UNetConfig,
    /// Side of the square content canvas images are scaled into.
    pub content: usize,
    pub fwhm: f64,
    pub train: TrainConfig,
    pub threshold_mode: ThresholdMode,
    pub threshold_holdout: f64,
    pub folds: usize,
    pub train_frac: f64,
    pub synth_size: usize,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            cluster: ClusterConfig::default(),
            unet: UNetConfig::default(),
            content: 250,
            fwhm: 125.0,
            train: TrainConfig::default(),
            threshold_mode: ThresholdMode::Holdout,
            threshold_holdout: 0.1,
            folds: 5,
            train_frac: 0.9,
            synth_size: 250,
        }
    }
}

/// Every accepted key, in manifest order.
pub const KEYS: &[&str] = &[
    "run.seed",
    "fcm.c",
    "fcm.m",
    "fcm.tol",
    "fcm.max_iter",
    "kmeans.k",
    "kmeans.restarts",
    "hair.enabled",
    "hair.radius",
    "hair.thresh",
    "border.lum_thresh",
    "cluster.content",
    "unet.depth",
    "unet.base_features",
    "unet.dropout",
    "unet.content",
    "unet.fwhm",
    "train.iterations",
    "train.lr",
    "train.augment",
    "train.checkpoint_every",
    "eval.folds",
    "eval.train_frac",
    "eval.threshold_mode",
    "eval.threshold_holdout",
    "synth.size",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::invalid(format!("bad value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::invalid(format!("bad boolean {value:?} for {key}"))),
    }
}

impl Config {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "run.seed" => self.seed = parse(key, value)?,
            "fcm.c" => self.cluster.fcm.c = parse(key, value)?,
            "fcm.m" => self.cluster.fcm.fuzzifier = parse(key, value)?,
            "fcm.tol" => self.cluster.fcm.tol = parse(key, value)?,
            "fcm.max_iter" => self.cluster.fcm.max_iter = parse(key, value)?,
            "kmeans.k" => self.cluster.k = parse(key, value)?,
            "kmeans.restarts" => self.cluster.restarts = parse(key, value)?,
            "hair.enabled" => self.cluster.hair_removal = parse_bool(key, value)?,
            "hair.radius" => self.cluster.hair.se_radius = parse(key, value)?,
            "hair.thresh" => self.cluster.hair.thresh = parse(key, value)?,
            "border.lum_thresh" => self.cluster.border_lum = parse(key, value)?,
            "cluster.content" => self.cluster.content = parse(key, value)?,
            "unet.depth" => self.unet.depth = parse(key, value)?,
            "unet.base_features" => self.unet.base_features = parse(key, value)?,
            "unet.dropout" => self.unet.dropout_p = parse(key, value)?,
            "unet.content" => self.content = parse(key, value)?,
            "unet.fwhm" => self.fwhm = parse(key, value)?,
            "train.iterations" => self.train.iterations = parse(key, value)?,
            "train.lr" => self.train.lr = parse(key, value)?,
            "train.augment" => self.train.augment = parse_bool(key, value)?,
            "train.checkpoint_every" => self.train.checkpoint_every = parse(key, value)?,
            "eval.folds" => self.folds = parse(key, value)?,
            "eval.train_frac" => self.train_frac = parse(key, value)?,
            "eval.threshold_mode" => {
                self.threshold_mode = match value.trim() {
                    "holdout" => ThresholdMode::Holdout,
                    "test" => ThresholdMode::TestSet,
                    other => return Err(Error::invalid(format!("threshold mode {other:?} is not holdout|test"))),
                }
            }
            "eval.threshold_holdout" => self.threshold_holdout = parse(key, value)?,
            "synth.size" => self.synth_size = parse(key, value)?,
            _ => return Err(Error::invalid(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "run.seed" => self.seed.to_string(),
            "fcm.c" => self.cluster.fcm.c.to_string(),
            "fcm.m" => self.cluster.fcm.fuzzifier.to_string(),
            "fcm.tol" => self.cluster.fcm.tol.to_string(),
            "fcm.max_iter" => self.cluster.fcm.max_iter.to_string(),
            "kmeans.k" => self.cluster.k.to_string(),
            "kmeans.restarts" => self.cluster.restarts.to_string(),
            "hair.enabled" => self.cluster.hair_removal.to_string(),
            "hair.radius" => self.cluster.hair.se_radius.to_string(),
            "hair.thresh" => self.cluster.hair.thresh.to_string(),
            "border.lum_thresh" => self.cluster.border_lum.to_string(),
            "cluster.content" => self.cluster.content.to_string(),
            "unet.depth" => self.unet.depth.to_string(),
            "unet.base_features" => self.unet.base_features.to_string(),
            "unet.dropout" => self.unet.dropout_p.to_string(),
            "unet.content" => self.content.to_string(),
            "unet.fwhm" => self.fwhm.to_string(),
            "train.iterations" => self.train.iterations.to_string(),
            "train.lr" => self.train.lr.to_string(),
            "train.augment" => self.train.augment.to_string(),
            "train.checkpoint_every" => self.train.checkpoint_every.to_string(),
            "eval.folds" => self.folds.to_string(),
            "eval.train_frac" => self.train_frac.to_string(),
            "eval.threshold_mode" => self.threshold_mode.tag().to_string(),
            "eval.threshold_holdout" => self.threshold_holdout.to_string(),
            "synth.size" => self.synth_size.to_string(),
            _ => return None,
        })
    }

    /// Applies `key=value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Format {
                what: "config",
                message: format!("line {}: expected key=value", n + 1),
            })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Config> {
        let mut c = Config::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Config> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Config::from_text(&text)
    }

    /// All keys with their current values.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        KEYS.iter().map(|&k| (k, self.get(k).expect("every listed key is readable"))).collect()
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_roundtrip_covers_every_key() {
        let mut c = Config::default();
        c.set("fcm.c", "4").unwrap();
        c.set("train.lr", "0.001").unwrap();
        c.set("eval.threshold_mode", "test").unwrap();
        c.set("hair.enabled", "off").unwrap();
        let back = Config::from_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(c.entries().len(), KEYS.len());
    }

    #[test]
    fn defaults() {
        let c = Config::default();
        assert_eq!(c.train.iterations, 10_000);
        assert_eq!(c.train.lr, 0.0002);
        assert_eq!(c.cluster.fcm.c, 5);
        assert_eq!(c.folds, 5);
        assert_eq!(c.fwhm, 125.0);
        assert_eq!(c.content, 250);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(Config::from_text("fcm.k=3").is_err());
        assert!(Config::from_text("fcm.c").is_err());
        assert!(Config::from_text("fcm.c=five").is_err());
        assert!(Config::from_text("eval.threshold_mode=sometimes").is_err());
        let c = Config::from_text("# comment\n\n fcm.c = 3 # trailing\n").unwrap();
        assert_eq!(c.cluster.fcm.c, 3);
    }
}
