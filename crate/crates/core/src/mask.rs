//! Binary masks and their 2D geometry: principal-axis skeleton, tip tracking,
//! boundary cropping and trajectory-derived prompts.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::camera::Pixel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaskError {
    #[error("mask has no foreground pixels")]
    EmptyMask,
    #[error("mask covariance is degenerate")]
    DegenerateMask,
    #[error("mask dimensions {0}x{1} do not match {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("trajectory needs at least two points")]
    TooFewPoints,
    #[error("PGM: {0}")]
    Pgm(String),
    #[error("io error: {0}")]
    Io(String),
}

/// Row-major boolean image.
#[derive(Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl std::fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "BinaryMask({}x{}, {} set)", self.width, self.height, self.count())
    }
}

impl BinaryMask {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height, bits: vec![false; width as usize * height as usize] }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self { width, height, bits }
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Result<Self, MaskError> {
        if bits.len() != width as usize * height as usize {
            return Err(MaskError::DimensionMismatch(width, height, bits.len() as u32, 1));
        }
        Ok(Self { width, height, bits })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let w = self.width as usize;
        self.bits[y as usize * w + x as usize] = value;
    }

    /// Foreground lookup that returns `false` outside the image.
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as u32) < self.width && (y as u32) < self.height && self.get(x as u32, y as u32)
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    pub fn same_size(&self, other: &BinaryMask) -> Result<(), MaskError> {
        if self.width != other.width || self.height != other.height {
            return Err(MaskError::DimensionMismatch(self.width, self.height, other.width, other.height));
        }
        Ok(())
    }

    /// Foreground pixel coordinates in raster order.
    pub fn foreground(&self) -> impl Iterator<Item = (u32, u32)> + Clone + '_ {
        let w = self.width as usize;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(move |(i, _)| ((i % w) as u32, (i / w) as u32))
    }

    pub fn intersection_count(&self, other: &BinaryMask) -> Result<usize, MaskError> {
        self.same_size(other)?;
        Ok(self.bits.iter().zip(&other.bits).filter(|(a, b)| **a && **b).count())
    }

    pub fn union_with(&mut self, other: &BinaryMask) -> Result<(), MaskError> {
        self.same_size(other)?;
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= *b;
        }
        Ok(())
    }

    pub fn intersect_with(&mut self, other: &BinaryMask) -> Result<(), MaskError> {
        self.same_size(other)?;
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a &= *b;
        }
        Ok(())
    }

    pub fn subtract(&mut self, other: &BinaryMask) -> Result<(), MaskError> {
        self.same_size(other)?;
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a &= !*b;
        }
        Ok(())
    }

    /// Intersection over union; two empty masks score 1.
    pub fn iou(&self, other: &BinaryMask) -> Result<f64, MaskError> {
        self.same_size(other)?;
        let (mut inter, mut uni) = (0usize, 0usize);
        for (a, b) in self.bits.iter().zip(&other.bits) {
            inter += (*a && *b) as usize;
            uni += (*a || *b) as usize;
        }
        Ok(if uni == 0 { 1.0 } else { inter as f64 / uni as f64 })
    }

    /// Inclusive bounding box `(x_min, y_min, x_max, y_max)` of the foreground.
    pub fn bbox(&self) -> Option<(u32, u32, u32, u32)> {
        let mut bb: Option<(u32, u32, u32, u32)> = None;
        for (x, y) in self.foreground() {
            bb = Some(match bb {
                None => (x, y, x, y),
                Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
            });
        }
        bb
    }

    /// Morphological dilation with a Euclidean disk of radius `r`.
    pub fn dilate(&self, r: u32) -> BinaryMask {
        self.morph(r, true)
    }

    /// Morphological erosion with a Euclidean disk of radius `r`.
    pub fn erode(&self, r: u32) -> BinaryMask {
        self.morph(r, false)
    }

    fn morph(&self, r: u32, dilate: bool) -> BinaryMask {
        if r == 0 {
            return self.clone();
        }
        let ri = r as i64;
        let offsets: Vec<(i64, i64)> = (-ri..=ri)
            .flat_map(|dy| (-ri..=ri).map(move |dx| (dx, dy)))
            .filter(|(dx, dy)| dx * dx + dy * dy <= ri * ri)
            .collect();
        BinaryMask::from_fn(self.width, self.height, |x, y| {
            let (x, y) = (x as i64, y as i64);
            if dilate {
                offsets.iter().any(|(dx, dy)| self.get_signed(x + dx, y + dy))
            } else {
                // pixels outside the image count as background
                offsets.iter().all(|(dx, dy)| self.get_signed(x + dx, y + dy))
            }
        })
    }

    /// Binary PGM (P5): 0 background, 255 foreground.
    pub fn write_pgm<W: Write>(&self, mut w: W) -> Result<(), MaskError> {
        let io = |e: std::io::Error| MaskError::Io(e.to_string());
        write!(w, "P5\n{} {}\n255\n", self.width, self.height).map_err(io)?;
        let bytes: Vec<u8> = self.bits.iter().map(|b| if *b { 255 } else { 0 }).collect();
        w.write_all(&bytes).map_err(io)
    }

    /// Reads a binary PGM; any nonzero sample is foreground.
    pub fn read_pgm<R: Read>(mut r: R) -> Result<Self, MaskError> {
        let mut data = Vec::new();
        r.read_to_end(&mut data).map_err(|e| MaskError::Io(e.to_string()))?;
        let (header, offset) = parse_pnm_header(&data, b"P5")?;
        let [w, h, maxval] = header;
        if maxval == 0 || maxval > 255 {
            return Err(MaskError::Pgm(format!("unsupported maxval {maxval}")));
        }
        let n = w as usize * h as usize;
        let body = data.get(offset..offset + n).ok_or_else(|| MaskError::Pgm("truncated pixel data".into()))?;
        Ok(Self { width: w, height: h, bits: body.iter().map(|v| *v != 0).collect() })
    }

    pub fn save_pgm(&self, path: &Path) -> Result<(), MaskError> {
        let f = std::fs::File::create(path).map_err(|e| MaskError::Io(format!("{}: {e}", path.display())))?;
        self.write_pgm(std::io::BufWriter::new(f))
    }

    pub fn load_pgm(path: &Path) -> Result<Self, MaskError> {
        let f = std::fs::File::open(path).map_err(|e| MaskError::Io(format!("{}: {e}", path.display())))?;
        Self::read_pgm(std::io::BufReader::new(f))
    }
}

/// Parses a binary PNM header with three integer fields after the magic,
/// skipping `#` comments. Returns the fields and the offset of the raster.
pub(crate) fn parse_pnm_header(data: &[u8], magic: &[u8; 2]) -> Result<([u32; 3], usize), MaskError> {
    if data.len() < 2 || &data[..2] != magic {
        return Err(MaskError::Pgm(format!("expected magic {}", String::from_utf8_lossy(magic))));
    }
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for field in fields.iter_mut() {
        loop {
            match data.get(pos) {
                Some(b'#') => {
                    while data.get(pos).is_some_and(|c| *c != b'\n') {
                        pos += 1;
                    }
                }
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(MaskError::Pgm("truncated header".into())),
            }
        }
        let start = pos;
        while data.get(pos).is_some_and(|c| c.is_ascii_digit()) {
            pos += 1;
        }
        *field = std::str::from_utf8(&data[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| MaskError::Pgm("bad header number".into()))?;
    }
    // exactly one whitespace byte separates the header from the raster
    if !data.get(pos).is_some_and(|c| c.is_ascii_whitespace()) {
        return Err(MaskError::Pgm("missing raster separator".into()));
    }
    Ok((fields, pos + 1))
}

/// Principal-axis description of a mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskSkeleton {
    /// Unit principal direction in the image plane.
    pub direction: Vector2<f64>,
    /// Foreground pixels with the smallest and largest projection onto `direction`.
    pub e1: Pixel<f64>,
    pub e2: Pixel<f64>,
    /// Spread of the projections onto `direction`, pixels.
    pub length_px: f64,
    pub centroid: Pixel<f64>,
    /// Eigenvalue ratio below [`NEAR_ISOTROPIC_RATIO`]: direction is unreliable.
    pub near_isotropic: bool,
    /// Boundary cropping ran out of iterations.
    pub truncated: bool,
    /// Boundary cropping removed pixels.
    pub cropped: bool,
}

pub const NEAR_ISOTROPIC_RATIO: f64 = 1.5;

impl MaskSkeleton {
    /// Same skeleton with the direction reversed and the endpoints swapped.
    pub fn flipped(&self) -> Self {
        Self { direction: -self.direction, e1: self.e2, e2: self.e1, ..*self }
    }

    /// Orients `direction` to point from `tip` toward the opposite endpoint.
    pub fn oriented_from(&self, tip: &Pixel<f64>) -> Self {
        let d1 = (self.e1 - tip).norm_squared();
        let d2 = (self.e2 - tip).norm_squared();
        // e1 is at the low end of the direction; tip at e1 already points the right way
        if d1 <= d2 {
            *self
        } else {
            self.flipped()
        }
    }
}

/// PCA of the foreground pixel coordinates (uniform weights).
///
/// The direction sign follows `previous` when given (non-negative dot
/// product), otherwise the first non-negligible component is positive.
pub fn mask_pca(mask: &BinaryMask, previous: Option<&Vector2<f64>>) -> Result<MaskSkeleton, MaskError> {
    skeleton_of_points(mask.foreground().map(|(x, y)| (x as f64, y as f64)), previous)
}

fn skeleton_of_points(
    pts: impl Iterator<Item = (f64, f64)> + Clone,
    previous: Option<&Vector2<f64>>,
) -> Result<MaskSkeleton, MaskError> {
    let (mut n, mut sx, mut sy) = (0usize, 0.0, 0.0);
    for (x, y) in pts.clone() {
        n += 1;
        sx += x;
        sy += y;
    }
    if n == 0 {
        return Err(MaskError::EmptyMask);
    }
    let (mx, my) = (sx / n as f64, sy / n as f64);
    let (mut cxx, mut cxy, mut cyy) = (0.0, 0.0, 0.0);
    for (x, y) in pts.clone() {
        let (dx, dy) = (x - mx, y - my);
        cxx += dx * dx;
        cxy += dx * dy;
        cyy += dy * dy;
    }
    let nf = n as f64;
    let (cxx, cxy, cyy) = (cxx / nf, cxy / nf, cyy / nf);
    let half_tr = 0.5 * (cxx + cyy);
    let disc = (0.25 * (cxx - cyy) * (cxx - cyy) + cxy * cxy).sqrt();
    let (l1, l2) = (half_tr + disc, half_tr - disc);
    if !(l1 > 1e-12) {
        return Err(MaskError::DegenerateMask);
    }
    let mut d = if cxy.abs() > 1e-12 * l1 {
        Vector2::new(l1 - cyy, cxy).normalize()
    } else if cxx >= cyy {
        Vector2::new(1.0, 0.0)
    } else {
        Vector2::new(0.0, 1.0)
    };
    match previous {
        Some(p) => {
            if d.dot(p) < 0.0 {
                d = -d;
            }
        }
        None => {
            let first = if d.x.abs() > 1e-12 { d.x } else { d.y };
            if first < 0.0 {
                d = -d;
            }
        }
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut e1, mut e2) = ((0.0, 0.0), (0.0, 0.0));
    for (x, y) in pts {
        let s = (x - mx) * d.x + (y - my) * d.y;
        if s < lo {
            lo = s;
            e1 = (x, y);
        }
        if s > hi {
            hi = s;
            e2 = (x, y);
        }
    }
    let near_isotropic = l2 > 0.0 && l1 / l2 < NEAR_ISOTROPIC_RATIO;
    Ok(MaskSkeleton {
        direction: d,
        e1: Pixel::new(e1.0, e1.1),
        e2: Pixel::new(e2.0, e2.1),
        length_px: hi - lo,
        centroid: Pixel::new(mx, my),
        near_isotropic,
        truncated: false,
        cropped: false,
    })
}

/// Distance from a pixel center to the nearest image edge pixel.
pub fn distance_to_boundary(p: &Pixel<f64>, width: u32, height: u32) -> f64 {
    let right = width as f64 - 1.0 - p.x;
    let bottom = height as f64 - 1.0 - p.y;
    p.x.min(p.y).min(right).min(bottom)
}

/// Tip point state carried across frames.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TipTrack {
    pub current: Pixel<f64>,
    pub previous: Pixel<f64>,
    pub initialized: bool,
}

/// Picks the tip among the two skeleton endpoints and updates the track.
///
/// On the first call the endpoint farther from the image boundary is the tip
/// (the other one is the shaft). Afterwards the endpoint nearest the previous
/// tip wins. Ties go to `e1`.
pub fn select_tip(skeleton: &MaskSkeleton, track: &mut TipTrack, width: u32, height: u32) -> Pixel<f64> {
    let (e1, e2) = (skeleton.e1, skeleton.e2);
    let tip = if track.initialized {
        let d1 = (e1 - track.current).norm();
        let d2 = (e2 - track.current).norm();
        if d2 < d1 {
            e2
        } else {
            e1
        }
    } else {
        let b1 = distance_to_boundary(&e1, width, height);
        let b2 = distance_to_boundary(&e2, width, height);
        if b2 > b1 {
            e2
        } else {
            e1
        }
    };
    track.previous = if track.initialized { track.current } else { tip };
    track.current = tip;
    track.initialized = true;
    tip
}

/// Boundary cropping parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropConfig {
    /// Strip thickness per iteration as a fraction of the current skeleton length.
    pub strip_fraction: f64,
    pub max_iterations: usize,
}

impl Default for CropConfig {
    fn default() -> Self {
        Self { strip_fraction: 0.05, max_iterations: 10 }
    }
}

fn on_boundary(p: &Pixel<f64>, width: u32, height: u32) -> bool {
    distance_to_boundary(p, width, height) < 1.0
}

/// Mask PCA with the base side iteratively trimmed while the base endpoint
/// touches the image border.
///
/// The base is the endpoint farther from `tip_side`. Each iteration removes the
/// pixels whose projection lies within one strip of the current base extreme.
/// If the budget runs out the last skeleton is returned with `truncated` set;
/// if cropping empties the mask the uncropped skeleton is returned with
/// `truncated` set.
pub fn boundary_crop_pca(
    mask: &BinaryMask,
    tip_side: &Pixel<f64>,
    previous: Option<&Vector2<f64>>,
    cfg: &CropConfig,
) -> Result<MaskSkeleton, MaskError> {
    let (w, h) = (mask.width(), mask.height());
    let initial = mask_pca(mask, previous)?.oriented_from(tip_side);
    if !on_boundary(&initial.e2, w, h) {
        return Ok(initial);
    }
    let mut pts: Vec<(f64, f64)> = mask.foreground().map(|(x, y)| (x as f64, y as f64)).collect();
    let mut sk = initial;
    for _ in 0..cfg.max_iterations {
        let strip = (cfg.strip_fraction * sk.length_px).max(1.0);
        let d = sk.direction;
        let c = sk.centroid;
        let cut = (sk.e2 - c).dot(&d) - strip;
        pts.retain(|(x, y)| (x - c.x) * d.x + (y - c.y) * d.y <= cut);
        let next = match skeleton_of_points(pts.iter().copied(), Some(&d)) {
            Ok(s) => s.oriented_from(tip_side),
            Err(_) => return Ok(MaskSkeleton { truncated: true, ..initial }),
        };
        sk = MaskSkeleton { cropped: true, ..next };
        if !on_boundary(&sk.e2, w, h) {
            return Ok(sk);
        }
    }
    Ok(MaskSkeleton { truncated: true, ..sk })
}

/// Region-constrained prompt built from a hovered tip trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPrompt {
    /// `(x_min, x_max, y_min, y_max)`, pixels.
    pub bbox: (f64, f64, f64, f64),
    pub mu: Pixel<f64>,
    pub sigma: Vector2<f64>,
    pub positive_points: Vec<Pixel<f64>>,
    pub negative_points: Vec<Pixel<f64>>,
    /// A zero-extent box side was inflated by one pixel.
    pub inflated: bool,
}

impl TrajectoryPrompt {
    pub fn contains(&self, p: &Pixel<f64>) -> bool {
        let (x0, x1, y0, y1) = self.bbox;
        p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1
    }
}

/// Bounding box of the trajectory plus `count` Gaussian point prompts
/// `N(mu, diag(sigma²))`, `sigma = sigma_factor · (box width, box height)`,
/// clipped to the box.
pub fn build_trajectory_prompt(
    traj: &[Pixel<f64>],
    count: usize,
    sigma_factor: f64,
    seed: u64,
) -> Result<TrajectoryPrompt, MaskError> {
    if traj.len() < 2 {
        return Err(MaskError::TooFewPoints);
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in traj {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    let mut inflated = false;
    if x1 - x0 <= 0.0 {
        x0 -= 1.0;
        x1 += 1.0;
        inflated = true;
    }
    if y1 - y0 <= 0.0 {
        y0 -= 1.0;
        y1 += 1.0;
        inflated = true;
    }
    let mu = Pixel::new(0.5 * (x0 + x1), 0.5 * (y0 + y1));
    let sigma = Vector2::new(sigma_factor * (x1 - x0), sigma_factor * (y1 - y0));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nx = Normal::new(mu.x, sigma.x.max(0.0)).map_err(|_| MaskError::TooFewPoints)?;
    let ny = Normal::new(mu.y, sigma.y.max(0.0)).map_err(|_| MaskError::TooFewPoints)?;
    let positive_points = (0..count)
        .map(|_| Pixel::new(nx.sample(&mut rng).clamp(x0, x1), ny.sample(&mut rng).clamp(y0, y1)))
        .collect();
    Ok(TrajectoryPrompt {
        bbox: (x0, x1, y0, y1),
        mu,
        sigma,
        positive_points,
        negative_points: Vec::new(),
        inflated,
    })
}

/// Appends a negative (exclusion) prompt.
pub fn add_negative_prompt(mut prompt: TrajectoryPrompt, point: Pixel<f64>) -> TrajectoryPrompt {
    prompt.negative_points.push(point);
    prompt
}
