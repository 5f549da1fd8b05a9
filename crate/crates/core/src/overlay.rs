//! Depth-aware overlay of hidden anatomical structures.
//!
//! A structure's opacity fades with how far it lies behind the visible bone
//! surface along the viewing ray.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::depth::DepthMap;
use crate::mask::parse_pnm_header;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OverlayError {
    #[error("image dimensions {0}x{1} do not match {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("invalid overlay config: {0}")]
    InvalidConfig(String),
    #[error("PPM: {0}")]
    Ppm(String),
    #[error("io error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Decay {
    /// `exp(-Δz/τ)`
    #[default]
    Exponential,
    /// `1 / (1 + Δz/τ)`
    Rational,
}

impl std::str::FromStr for Decay {
    type Err = OverlayError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exponential" => Ok(Decay::Exponential),
            "rational" => Ok(Decay::Rational),
            _ => Err(OverlayError::InvalidConfig(format!("unknown decay '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlayConfig {
    pub alpha0: f64,
    /// Decay length, millimeters.
    pub tau: f64,
    pub decay: Decay,
}

impl Default for OverlayConfig {
    fn default() -> Self {
        Self { alpha0: 0.8, tau: 2.0, decay: Decay::Exponential }
    }
}

impl OverlayConfig {
    pub fn validate(&self) -> Result<(), OverlayError> {
        if !(0.0..=1.0).contains(&self.alpha0) {
            return Err(OverlayError::InvalidConfig(format!("alpha0 {} outside [0, 1]", self.alpha0)));
        }
        if !(self.tau > 0.0) {
            return Err(OverlayError::InvalidConfig(format!("tau {} must be positive", self.tau)));
        }
        Ok(())
    }

    /// Fade factor `f(Δz)` with `f(0) = 1`, decreasing to 0.
    pub fn falloff(&self, gap: f64) -> f64 {
        let x = gap.max(0.0) / self.tau;
        match self.decay {
            Decay::Exponential => (-x).exp(),
            Decay::Rational => 1.0 / (1.0 + x),
        }
    }

    pub fn opacity(&self, gap: f64) -> f64 {
        self.alpha0 * self.falloff(gap)
    }
}

/// Per-pixel depth gap, `None` where either depth is missing.
#[derive(Debug, Clone, PartialEq)]
pub struct GapMap {
    pub width: u32,
    pub height: u32,
    pub values: Vec<Option<f64>>,
}

/// `max(0, z_seg - z_bone)` where both maps are valid.
pub fn depth_gap(z_seg: &DepthMap, z_bone: &DepthMap) -> Result<GapMap, OverlayError> {
    if z_seg.width() != z_bone.width() || z_seg.height() != z_bone.height() {
        return Err(OverlayError::DimensionMismatch(z_seg.width(), z_seg.height(), z_bone.width(), z_bone.height()));
    }
    let values = z_seg
        .values()
        .iter()
        .zip(z_bone.values())
        .map(|(s, b)| (*s > 0.0 && *b > 0.0).then(|| (s - b).max(0.0)))
        .collect();
    Ok(GapMap { width: z_seg.width(), height: z_seg.height(), values })
}

/// Opacity per pixel; 0 where the gap is undefined.
pub fn modulate_opacity(gap: &GapMap, cfg: &OverlayConfig) -> Vec<f64> {
    gap.values.iter().map(|g| g.map_or(0.0, |g| cfg.opacity(g))).collect()
}

/// 8-bit RGB image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: u32, height: u32, fill: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for _ in 0..width as usize * height as usize {
            data.extend_from_slice(&fill);
        }
        Self { width, height, data }
    }

    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let i = 3 * (y as usize * self.width as usize + x as usize);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: u32, y: u32, c: [u8; 3]) {
        let i = 3 * (y as usize * self.width as usize + x as usize);
        self.data[i..i + 3].copy_from_slice(&c);
    }

    pub fn write_ppm<W: Write>(&self, mut w: W) -> Result<(), OverlayError> {
        let io = |e: std::io::Error| OverlayError::Io(e.to_string());
        write!(w, "P6\n{} {}\n255\n", self.width, self.height).map_err(io)?;
        w.write_all(&self.data).map_err(io)
    }

    pub fn read_ppm<R: Read>(mut r: R) -> Result<Self, OverlayError> {
        let mut data = Vec::new();
        r.read_to_end(&mut data).map_err(|e| OverlayError::Io(e.to_string()))?;
        let ([w, h, maxval], off) = parse_pnm_header(&data, b"P6").map_err(|e| OverlayError::Ppm(e.to_string()))?;
        if maxval != 255 {
            return Err(OverlayError::Ppm(format!("unsupported maxval {maxval}")));
        }
        let n = 3 * w as usize * h as usize;
        let body = data.get(off..off + n).ok_or_else(|| OverlayError::Ppm("truncated pixel data".into()))?;
        Ok(Self { width: w, height: h, data: body.to_vec() })
    }

    pub fn save_ppm(&self, path: &Path) -> Result<(), OverlayError> {
        let f = std::fs::File::create(path).map_err(|e| OverlayError::Io(format!("{}: {e}", path.display())))?;
        self.write_ppm(std::io::BufWriter::new(f))
    }

    pub fn load_ppm(path: &Path) -> Result<Self, OverlayError> {
        let f = std::fs::File::open(path).map_err(|e| OverlayError::Io(format!("{}: {e}", path.display())))?;
        Self::read_ppm(std::io::BufReader::new(f))
    }
}

/// A rendered hidden structure: its depth from the camera and display color.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureLayer {
    pub name: String,
    pub depth: DepthMap,
    pub color: [u8; 3],
}

/// Blends the selected structures over `base`.
///
/// At each pixel the covering structures are visited nearest first and
/// accumulated front to back, so a nearer structure sits on top of a farther one.
/// Structures whose names are not in `selected` are skipped.
pub fn compose_overlay(
    base: &RgbImage,
    structures: &[StructureLayer],
    selected: &[&str],
    z_bone: &DepthMap,
    cfg: &OverlayConfig,
) -> Result<RgbImage, OverlayError> {
    cfg.validate()?;
    let (w, h) = (base.width, base.height);
    if z_bone.width() != w || z_bone.height() != h {
        return Err(OverlayError::DimensionMismatch(w, h, z_bone.width(), z_bone.height()));
    }
    let active: Vec<&StructureLayer> = structures.iter().filter(|s| selected.contains(&s.name.as_str())).collect();
    for s in &active {
        if s.depth.width() != w || s.depth.height() != h {
            return Err(OverlayError::DimensionMismatch(w, h, s.depth.width(), s.depth.height()));
        }
    }
    let mut out = base.clone();
    if active.is_empty() {
        return Ok(out);
    }
    let mut layers: Vec<(f64, f64, [u8; 3])> = Vec::with_capacity(active.len());
    for i in 0..(w as usize * h as usize) {
        let zb = z_bone.values()[i];
        if zb <= 0.0 {
            continue;
        }
        layers.clear();
        for s in &active {
            let zs = s.depth.values()[i];
            if zs > 0.0 {
                layers.push((zs, cfg.opacity(zs - zb), s.color));
            }
        }
        if layers.is_empty() {
            continue;
        }
        layers.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut transmit = 1.0;
        let mut acc = [0.0f64; 3];
        for (_, alpha, color) in &layers {
            for c in 0..3 {
                acc[c] += transmit * alpha * color[c] as f64;
            }
            transmit *= 1.0 - alpha;
        }
        for c in 0..3 {
            let v = acc[c] + transmit * base.data[3 * i + c] as f64;
            out.data[3 * i + c] = v.round().clamp(0.0, 255.0) as u8;
        }
    }
    Ok(out)
}
