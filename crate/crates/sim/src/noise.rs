//! Parametric perturbations standing in for segmentation, depth-model,
//! clicking and optical-tracker errors.

use crate::config::{ConfigError, KeyValues};

/// Inclusive frame range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameRange {
    pub start: usize,
    pub end: usize,
}

impl FrameRange {
    pub fn contains(&self, i: usize) -> bool {
        i >= self.start && i <= self.end
    }
}

/// Part of the view hidden over a frame range: the image side the tool base
/// points toward is cut so that `crop` of the tool's projected length is lost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Truncation {
    pub frames: FrameRange,
    pub crop: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    /// Fixed morphological offset of every mask: positive dilates, negative erodes.
    pub mask_offset: i32,
    /// Per-frame random offset drawn uniformly from `[-mask_jitter, mask_jitter]`.
    pub mask_jitter: u32,
    /// Relative depth `R = a·Z + b + warp + N(0, σ)`.
    pub depth_a: f64,
    pub depth_b: f64,
    /// Amplitude of the smooth per-frame warp, relative units.
    pub warp_amplitude: f64,
    /// Spatial frequency of the warp, cycles per image width.
    pub warp_cycles: f64,
    pub depth_sigma: f64,
    /// Landmark click noise, pixels.
    pub click_sigma: f64,
    pub truncations: Vec<Truncation>,
    /// Frames where the reference tracker has no valid measurement.
    pub dropouts: Vec<FrameRange>,
    /// Reference tracker jitter, millimeters.
    pub tracker_jitter: f64,
    /// Constant lag of the reference stream, frames.
    pub tracker_lag: usize,
}

impl NoiseModel {
    /// Exact masks and a purely affine depth distortion.
    pub fn none() -> Self {
        Self {
            mask_offset: 0,
            mask_jitter: 0,
            depth_a: 0.01,
            depth_b: 0.3,
            warp_amplitude: 0.0,
            warp_cycles: 1.0,
            depth_sigma: 0.0,
            click_sigma: 0.0,
            truncations: Vec::new(),
            dropouts: Vec::new(),
            tracker_jitter: 0.0,
            tracker_lag: 0,
        }
    }

    /// Default calibration targets.
    pub fn calibrated() -> Self {
        Self { mask_jitter: 2, warp_amplitude: 0.05, depth_sigma: 0.02, click_sigma: 3.0, ..Self::none() }
    }

    pub fn truncation_at(&self, frame: usize) -> Option<f64> {
        self.truncations.iter().find(|t| t.frames.contains(frame)).map(|t| t.crop)
    }

    pub fn is_dropout(&self, frame: usize) -> bool {
        self.dropouts.iter().any(|r| r.contains(frame))
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self, ConfigError> {
        kv.check_known(NOISE_KEYS)?;
        let base = match kv.get_str("profile").unwrap_or("none") {
            "none" => Self::none(),
            "calibrated" => Self::calibrated(),
            _ => return Err(kv.invalid("profile", "expected `none` or `calibrated`".into())),
        };
        let n = Self {
            mask_offset: kv.get_or("mask_offset", base.mask_offset)?,
            mask_jitter: kv.get_or("mask_jitter", base.mask_jitter)?,
            depth_a: kv.get_or("depth_a", base.depth_a)?,
            depth_b: kv.get_or("depth_b", base.depth_b)?,
            warp_amplitude: kv.get_or("warp_amplitude", base.warp_amplitude)?,
            warp_cycles: kv.get_or("warp_cycles", base.warp_cycles)?,
            depth_sigma: kv.get_or("depth_sigma", base.depth_sigma)?,
            click_sigma: kv.get_or("click_sigma", base.click_sigma)?,
            truncations: match kv.get_str("truncations") {
                Some(v) => parse_truncations(v).map_err(|m| kv.invalid("truncations", m))?,
                None => base.truncations,
            },
            dropouts: match kv.get_str("dropouts") {
                Some(v) => parse_ranges(v).map_err(|m| kv.invalid("dropouts", m))?,
                None => base.dropouts,
            },
            tracker_jitter: kv.get_or("tracker_jitter", base.tracker_jitter)?,
            tracker_lag: kv.get_or("tracker_lag", base.tracker_lag)?,
        };
        for (key, v) in [
            ("depth_a", n.depth_a),
            ("warp_amplitude", n.warp_amplitude),
            ("warp_cycles", n.warp_cycles),
            ("depth_sigma", n.depth_sigma),
            ("click_sigma", n.click_sigma),
            ("tracker_jitter", n.tracker_jitter),
        ] {
            if !(v >= 0.0) {
                return Err(kv.invalid(key, "must be non-negative".into()));
            }
        }
        if n.depth_a == 0.0 {
            return Err(kv.invalid("depth_a", "must be positive".into()));
        }
        Ok(n)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.insert("mask_offset", self.mask_offset);
        kv.insert("mask_jitter", self.mask_jitter);
        kv.insert("depth_a", self.depth_a);
        kv.insert("depth_b", self.depth_b);
        kv.insert("warp_amplitude", self.warp_amplitude);
        kv.insert("warp_cycles", self.warp_cycles);
        kv.insert("depth_sigma", self.depth_sigma);
        kv.insert("click_sigma", self.click_sigma);
        let t: Vec<String> =
            self.truncations.iter().map(|t| format!("{}-{}:{}", t.frames.start, t.frames.end, t.crop)).collect();
        kv.insert("truncations", t.join(";"));
        let d: Vec<String> = self.dropouts.iter().map(|r| format!("{}-{}", r.start, r.end)).collect();
        kv.insert("dropouts", d.join(";"));
        kv.insert("tracker_jitter", self.tracker_jitter);
        kv.insert("tracker_lag", self.tracker_lag);
        kv
    }
}

pub const NOISE_KEYS: &[&str] = &[
    "profile",
    "mask_offset",
    "mask_jitter",
    "depth_a",
    "depth_b",
    "warp_amplitude",
    "warp_cycles",
    "depth_sigma",
    "click_sigma",
    "truncations",
    "dropouts",
    "tracker_jitter",
    "tracker_lag",
];

fn parse_range(s: &str) -> Result<FrameRange, String> {
    let s = s.trim();
    let (a, b) = s.split_once('-').unwrap_or((s, s));
    let start: usize = a.trim().parse().map_err(|e| format!("`{s}`: {e}"))?;
    let end: usize = b.trim().parse().map_err(|e| format!("`{s}`: {e}"))?;
    if end < start {
        return Err(format!("`{s}`: range end before start"));
    }
    Ok(FrameRange { start, end })
}

/// `"10-20; 40-41"`; a single number is a one-frame range.
pub fn parse_ranges(s: &str) -> Result<Vec<FrameRange>, String> {
    s.split(';').filter(|p| !p.trim().is_empty()).map(parse_range).collect()
}

/// `"150-190:0.3; ..."`
pub fn parse_truncations(s: &str) -> Result<Vec<Truncation>, String> {
    s.split(';')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let (r, c) = p.split_once(':').ok_or_else(|| format!("`{}`: expected range:crop", p.trim()))?;
            let crop: f64 = c.trim().parse().map_err(|e| format!("`{}`: {e}", p.trim()))?;
            if !(0.0..1.0).contains(&crop) {
                return Err(format!("`{}`: crop must lie in [0, 1)", p.trim()));
            }
            Ok(Truncation { frames: parse_range(r)?, crop })
        })
        .collect()
}
