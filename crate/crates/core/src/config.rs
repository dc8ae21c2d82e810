//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys map one-to-one
//! onto command-line flags (`--warmup 200` is `warmup = 200`). Ranges are
//! written `lo,hi`.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::data::{Range, SceneConfig};
use crate::error::{Error, Result};

/// Ordered key/value pairs as read from a file.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KeyValues {
    pub entries: Vec<(String, String)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {line:?}", n + 1)))?;
            let key = k.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", n + 1)));
            }
            entries.push((key.to_string(), v.trim().to_string()));
        }
        Ok(KeyValues { entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn push(&mut self, key: &str, value: impl Display) {
        self.entries.push((key.to_string(), value.to_string()));
    }
}

/// Renders pairs as `key = value` lines.
pub fn render<K: AsRef<str>>(entries: &[(K, String)]) -> String {
    entries
        .iter()
        .map(|(k, v)| format!("{} = {v}\n", k.as_ref()))
        .collect()
}

/// A configuration struct addressable by flat keys.
pub trait Settings {
    /// Sets `key`; returns `Ok(false)` when the key is not one of ours.
    fn set(&mut self, key: &str, value: &str) -> Result<bool>;

    /// Every key with its current value, in a stable order.
    fn entries(&self) -> Vec<(&'static str, String)>;

    fn validate(&self) -> Result<()>;

    /// Applies every pair, rejecting unknown keys, then validates.
    fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        for (k, v) in &kv.entries {
            if !self.set(k, v)? {
                return Err(Error::Config(format!("unknown key {k:?}")));
            }
        }
        self.validate()
    }

    fn to_text(&self) -> String {
        render(&self.entries())
    }
}

/// Parses `value` for `key`, naming the key in the error.
pub fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

pub fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(Error::Config(format!("{key}: expected true/false, got {other:?}"))),
    }
}

pub fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_value(key, s))
        .collect()
}

pub fn parse_range<T: FromStr + Copy + PartialOrd + std::fmt::Debug>(key: &str, value: &str) -> Result<Range<T>>
where
    T::Err: Display,
{
    match parse_list::<T>(key, value)?.as_slice() {
        [lo, hi] => Ok(Range::new(*lo, *hi)),
        [v] => Ok(Range::new(*v, *v)),
        _ => Err(Error::Config(format!("{key}: expected lo,hi, got {value:?}"))),
    }
}

fn show_range<T: Display>(r: &Range<T>) -> String {
    format!("{},{}", r.lo, r.hi)
}

pub fn show_list<T: Display>(items: &[T]) -> String {
    items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

impl Settings for SceneConfig {
    fn set(&mut self, key: &str, v: &str) -> Result<bool> {
        match key {
            "image_size" => self.image_size = parse_value(key, v)?,
            "change_rate" => self.change_rate = parse_value(key, v)?,
            "changes_per_scene" => self.changes_per_scene = parse_range(key, v)?,
            "building_size" => self.building_size = parse_range(key, v)?,
            "static_buildings" => self.static_buildings = parse_range(key, v)?,
            "distractor_count" => self.distractor_count = parse_range(key, v)?,
            "unchanged_distractor_rate" => self.unchanged_distractor_rate = parse_value(key, v)?,
            "distractor_size" => self.distractor_size = parse_range(key, v)?,
            "brightness_shift" => self.brightness_shift = parse_range(key, v)?,
            "hue_shift" => self.hue_shift = parse_range(key, v)?,
            "pixel_noise" => self.pixel_noise = parse_value(key, v)?,
            "texture_octaves" => self.texture_octaves = parse_value(key, v)?,
            "texture_cell" => self.texture_cell = parse_value(key, v)?,
            "train_size" => self.train_size = parse_value(key, v)?,
            "val_size" => self.val_size = parse_value(key, v)?,
            "test_size" => self.test_size = parse_value(key, v)?,
            "seed" => self.seed = parse_value(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("image_size", self.image_size.to_string()),
            ("change_rate", self.change_rate.to_string()),
            ("changes_per_scene", show_range(&self.changes_per_scene)),
            ("building_size", show_range(&self.building_size)),
            ("static_buildings", show_range(&self.static_buildings)),
            ("distractor_count", show_range(&self.distractor_count)),
            ("unchanged_distractor_rate", self.unchanged_distractor_rate.to_string()),
            ("distractor_size", show_range(&self.distractor_size)),
            ("brightness_shift", show_range(&self.brightness_shift)),
            ("hue_shift", show_range(&self.hue_shift)),
            ("pixel_noise", self.pixel_noise.to_string()),
            ("texture_octaves", self.texture_octaves.to_string()),
            ("texture_cell", self.texture_cell.to_string()),
            ("train_size", self.train_size.to_string()),
            ("val_size", self.val_size.to_string()),
            ("test_size", self.test_size.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }

    fn validate(&self) -> Result<()> {
        SceneConfig::validate(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_whitespace() {
        let kv = KeyValues::parse("# header\n\n alpha = 1.0 \nseed=3\n").unwrap();
        assert_eq!(
            kv.entries,
            vec![("alpha".into(), "1.0".into()), ("seed".into(), "3".into())]
        );
        assert!(KeyValues::parse("alpha 1.0").is_err());
    }

    #[test]
    fn scene_round_trip() {
        let mut cfg = SceneConfig::default();
        cfg.distractor_count = Range::new(1, 7);
        cfg.brightness_shift = Range::new(0.0, 0.125);
        let text = cfg.to_text();
        let mut back = SceneConfig::default();
        back.apply(&KeyValues::parse(&text).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_key_and_bad_range_are_config_errors() {
        let mut cfg = SceneConfig::default();
        let err = cfg.apply(&KeyValues::parse("colour = red").unwrap()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let err = cfg
            .apply(&KeyValues::parse("distractor_count = 4,1").unwrap())
            .unwrap_err();
        assert!(err.to_string().contains("distractor_count"), "{err}");
    }
}
