//! `key = value` configuration text shared by model and training configs.
//!
//! One pair per line, `#` starts a comment, keys may appear once.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{ChannelScale, ModelConfig};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pair {
    pub line: usize,
    pub key: String,
    pub value: String,
}

pub fn parse_pairs(text: &str) -> Result<Vec<Pair>> {
    let mut out: Vec<Pair> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got `{line}`", n + 1)))?;
        let key = k.trim().to_string();
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", n + 1)));
        }
        if let Some(prev) = out.iter().find(|p| p.key == key) {
            return Err(Error::Config(format!("line {}: duplicate key `{key}` (first on line {})", n + 1, prev.line)));
        }
        out.push(Pair { line: n + 1, key, value: v.trim().to_string() });
    }
    Ok(out)
}

/// Looks up `key` and parses its value.
pub fn get<T: FromStr>(pairs: &[Pair], key: &str) -> Result<Option<T>> {
    match pairs.iter().find(|p| p.key == key) {
        Some(p) => p
            .value
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("line {}: invalid value `{}` for `{key}`", p.line, p.value))),
        None => Ok(None),
    }
}

pub fn parse_bool(v: &str) -> Option<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Some(true),
        "false" | "no" | "0" | "off" => Some(false),
        _ => None,
    }
}

pub fn get_bool(pairs: &[Pair], key: &str) -> Result<Option<bool>> {
    match pairs.iter().find(|p| p.key == key) {
        Some(p) => parse_bool(&p.value)
            .map(Some)
            .ok_or_else(|| Error::Config(format!("line {}: invalid value `{}` for `{key}`", p.line, p.value))),
        None => Ok(None),
    }
}

/// Fails on the first key not in `known`.
pub fn reject_unknown(pairs: &[Pair], known: &[&str]) -> Result<()> {
    match pairs.iter().find(|p| !known.contains(&p.key.as_str())) {
        Some(p) => Err(Error::Config(format!("line {}: unknown key `{}`", p.line, p.key))),
        None => Ok(()),
    }
}

pub const MODEL_KEYS: [&str; 4] = ["num_classes", "input_size", "fusion_enabled", "channel_scale"];

impl ModelConfig {
    /// Applies the model keys present in `pairs` on top of `base`; other
    /// keys are ignored.
    pub fn with_pairs(base: ModelConfig, pairs: &[Pair]) -> Result<Self> {
        let cfg = ModelConfig {
            num_classes: get(pairs, "num_classes")?.unwrap_or(base.num_classes),
            input_size: get(pairs, "input_size")?.unwrap_or(base.input_size),
            fusion_enabled: get_bool(pairs, "fusion_enabled")?.unwrap_or(base.fusion_enabled),
            channel_scale: get::<ChannelScale>(pairs, "channel_scale")?.unwrap_or(base.channel_scale),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let pairs = parse_pairs(text)?;
        reject_unknown(&pairs, &MODEL_KEYS)?;
        Self::with_pairs(ModelConfig::default(), &pairs)
    }

    pub fn to_text(&self) -> String {
        format!(
            "num_classes = {}\ninput_size = {}\nfusion_enabled = {}\nchannel_scale = {}\n",
            self.num_classes, self.input_size, self.fusion_enabled, self.channel_scale
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs() {
        let p = parse_pairs("# c\n a = 1 \n\nb=x # y\n").unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!((p[1].line, p[1].key.as_str(), p[1].value.as_str()), (4, "b", "x"));
        assert!(parse_pairs("a\n").is_err());
        assert!(parse_pairs("= 3\n").is_err());
        assert!(parse_pairs("a=1\na=2\n").is_err());
        assert_eq!(get::<usize>(&p, "a").unwrap(), Some(1));
        assert!(get::<usize>(&p, "b").is_err());
        assert_eq!(get::<usize>(&p, "c").unwrap(), None);
    }

    #[test]
    fn model_config_text() {
        let c = ModelConfig::parse("num_classes = 10\nchannel_scale = 1/8\ninput_size = 64\n").unwrap();
        assert_eq!(c, ModelConfig { num_classes: 10, ..ModelConfig::reduced() });
        assert_eq!(ModelConfig::parse(&c.to_text()).unwrap(), c);
        assert_eq!(ModelConfig::parse("").unwrap(), ModelConfig::default());
        assert!(ModelConfig::parse("input_size = 100\n").is_err());
        assert!(ModelConfig::parse("depth = 34\n").is_err());
        assert!(ModelConfig::parse("fusion_enabled = maybe\n").is_err());
    }
}
