//! Plain-text `key = value` configuration files.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use nalgebra::Vector3;
use thiserror::Error;
use toolnav_core::depth::AnchorExtrema;
use toolnav_core::mask::CropConfig;
use toolnav_core::overlay::OverlayConfig;
use toolnav_core::pose::{InitConfig, TrackerConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{0}")]
    Io(String),
    #[error("line {line}: expected `key = value`, found `{text}`")]
    Syntax { line: usize, text: String },
    #[error("key `{key}`: cannot parse `{value}`: {msg}")]
    Invalid { key: String, value: String, msg: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
}

/// Ordered key/value pairs; `#` starts a comment, blank lines are ignored.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax { line: i + 1, text: raw.trim().to_string() })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(ConfigError::Syntax { line: i + 1, text: raw.trim().to_string() });
            }
            entries.insert(k.to_string(), v.trim().to_string());
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn insert(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Parsed value for `key`, or `default` when absent.
    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|e: T::Err| self.invalid(key, e.to_string())),
        }
    }

    pub fn get_vec3_or(&self, key: &str, default: Vector3<f64>) -> Result<Vector3<f64>, ConfigError> {
        let Some(v) = self.entries.get(key) else {
            return Ok(default);
        };
        let parts: Result<Vec<f64>, _> = v.split(',').map(|p| p.trim().parse::<f64>()).collect();
        match parts {
            Ok(p) if p.len() == 3 => Ok(Vector3::new(p[0], p[1], p[2])),
            Ok(p) => Err(self.invalid(key, format!("expected 3 components, found {}", p.len()))),
            Err(e) => Err(self.invalid(key, e.to_string())),
        }
    }

    /// Fails on any key outside `known`.
    pub fn check_known(&self, known: &[&str]) -> Result<(), ConfigError> {
        match self.keys().find(|k| !known.contains(k)) {
            Some(k) => Err(ConfigError::UnknownKey(k.to_string())),
            None => Ok(()),
        }
    }

    pub(crate) fn invalid(&self, key: &str, msg: String) -> ConfigError {
        ConfigError::Invalid { key: key.to_string(), value: self.entries.get(key).cloned().unwrap_or_default(), msg }
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

pub const TRACKER_KEYS: &[&str] =
    &["stride", "crop_strip_fraction", "crop_max_iterations", "init_passes", "anchor_extrema", "sign_flip_frames"];

/// `minmax` or `percentile:<low>:<high>`.
pub fn parse_extrema(s: &str) -> Result<AnchorExtrema, String> {
    if s == "minmax" {
        return Ok(AnchorExtrema::MinMax);
    }
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        ["percentile", lo, hi] => {
            let low: f64 = lo.trim().parse().map_err(|e| format!("{e}"))?;
            let high: f64 = hi.trim().parse().map_err(|e| format!("{e}"))?;
            if !(0.0..high).contains(&low) || high > 100.0 {
                return Err(format!("percentiles must satisfy 0 <= low < high <= 100, got {low}, {high}"));
            }
            Ok(AnchorExtrema::Percentile { low, high })
        }
        _ => Err("expected `minmax` or `percentile:<low>:<high>`".into()),
    }
}

pub fn tracker_config(kv: &KeyValues) -> Result<TrackerConfig, ConfigError> {
    let d = TrackerConfig::default();
    let extrema = match kv.get_str("anchor_extrema") {
        None => d.anchor_extrema,
        Some(v) => parse_extrema(v).map_err(|m| kv.invalid("anchor_extrema", m))?,
    };
    let cfg = TrackerConfig {
        stride: kv.get_or("stride", d.stride)?,
        crop: CropConfig {
            strip_fraction: kv.get_or("crop_strip_fraction", d.crop.strip_fraction)?,
            max_iterations: kv.get_or("crop_max_iterations", d.crop.max_iterations)?,
        },
        init: InitConfig { passes: kv.get_or("init_passes", d.init.passes)? },
        anchor_extrema: extrema,
        sign_flip_frames: kv.get_or("sign_flip_frames", d.sign_flip_frames)?,
    };
    if cfg.stride == 0 {
        return Err(kv.invalid("stride", "must be at least 1".into()));
    }
    if !(cfg.crop.strip_fraction > 0.0 && cfg.crop.strip_fraction < 1.0) {
        return Err(kv.invalid("crop_strip_fraction", "must lie in (0, 1)".into()));
    }
    Ok(cfg)
}

pub const OVERLAY_KEYS: &[&str] = &["alpha0", "tau", "decay"];

pub fn overlay_config(kv: &KeyValues) -> Result<OverlayConfig, ConfigError> {
    let d = OverlayConfig::default();
    let cfg = OverlayConfig {
        alpha0: kv.get_or("alpha0", d.alpha0)?,
        tau: kv.get_or("tau", d.tau)?,
        decay: kv.get_or("decay", d.decay)?,
    };
    cfg.validate().map_err(|e| kv.invalid(if cfg.tau > 0.0 { "alpha0" } else { "tau" }, e.to_string()))?;
    Ok(cfg)
}

pub(crate) fn fmt_vec3(v: &Vector3<f64>) -> String {
    format!("{},{},{}", v.x, v.y, v.z)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_types() {
        let kv = KeyValues::parse("# scene\nfx = 1000\n\nname=plate # trailing\noffset = 1, 2,3\n").unwrap();
        assert_eq!(kv.get_or("fx", 0.0).unwrap(), 1000.0);
        assert_eq!(kv.get_or("missing", 7usize).unwrap(), 7);
        assert_eq!(kv.get_str("name"), Some("plate"));
        assert_eq!(kv.get_vec3_or("offset", Vector3::zeros()).unwrap(), Vector3::new(1.0, 2.0, 3.0));
        assert!(kv.get_or::<usize>("name", 0).is_err());
        assert!(kv.check_known(&["fx", "name"]).is_err());
        assert!(kv.check_known(&["fx", "name", "offset"]).is_ok());
        assert_eq!(KeyValues::parse(&kv.to_text()).unwrap(), kv);
    }

    #[test]
    fn tracker_and_overlay_keys() {
        let kv = KeyValues::parse("stride = 3\nanchor_extrema = percentile:5:95\ninit_passes = 2").unwrap();
        let t = tracker_config(&kv).unwrap();
        assert_eq!((t.stride, t.init.passes), (3, 2));
        assert_eq!(t.anchor_extrema, AnchorExtrema::Percentile { low: 5.0, high: 95.0 });
        assert!(tracker_config(&KeyValues::parse("anchor_extrema = median").unwrap()).is_err());
        assert!(tracker_config(&KeyValues::parse("stride = 0").unwrap()).is_err());
        use toolnav_core::overlay::Decay;
        let o = overlay_config(&KeyValues::parse("decay = rational\ntau = 4").unwrap()).unwrap();
        assert_eq!((o.decay, o.tau), (Decay::Rational, 4.0));
        assert!(overlay_config(&KeyValues::parse("tau = -1").unwrap()).is_err());
    }

    #[test]
    fn rejects_lines_without_equals() {
        assert!(matches!(KeyValues::parse("fx 1000"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(KeyValues::parse("a=1\n= 3"), Err(ConfigError::Syntax { line: 2, .. })));
    }
}
