//! Relative and metric depth maps, affine anchoring and back-projection.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Matrix3, Point3, SymmetricEigen, Unit, Vector2, Vector3};
use thiserror::Error;

use crate::camera::{CameraIntrinsics, Pixel};
use crate::mask::{BinaryMask, MaskError};

/// Marks an invalid depth sample.
pub const DEPTH_SENTINEL: f64 = 0.0;

/// Guard on the relative-depth span in the affine fit.
pub const AFFINE_EPS: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DepthError {
    #[error("map dimensions {0}x{1} do not match {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("affine anchor needs at least two valid pixels, found {0}")]
    InsufficientAnchor(usize),
    #[error("no valid masked pixels to back-project")]
    EmptyCloud,
    #[error("point cloud covariance is degenerate")]
    DegenerateCloud,
    #[error("expected a {0} depth map")]
    WrongScale(&'static str),
    #[error("PFM: {0}")]
    Pfm(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<MaskError> for DepthError {
    fn from(e: MaskError) -> Self {
        match e {
            MaskError::DimensionMismatch(a, b, c, d) => DepthError::DimensionMismatch(a, b, c, d),
            MaskError::Io(s) => DepthError::Io(s),
            other => DepthError::Pfm(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DepthScale {
    Relative,
    MetricMm,
}

impl DepthScale {
    /// File name suffix used for this kind of map.
    pub fn suffix(self) -> &'static str {
        match self {
            DepthScale::Relative => ".rel.pfm",
            DepthScale::MetricMm => ".mm.pfm",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    values: Vec<f64>,
    pub scale: DepthScale,
}

impl DepthMap {
    /// All-sentinel map.
    pub fn empty(width: u32, height: u32, scale: DepthScale) -> Self {
        Self { width, height, values: vec![DEPTH_SENTINEL; width as usize * height as usize], scale }
    }

    pub fn filled(width: u32, height: u32, value: f64, scale: DepthScale) -> Self {
        Self { width, height, values: vec![value; width as usize * height as usize], scale }
    }

    pub fn from_values(width: u32, height: u32, values: Vec<f64>, scale: DepthScale) -> Result<Self, DepthError> {
        if values.len() != width as usize * height as usize {
            return Err(DepthError::DimensionMismatch(width, height, values.len() as u32, 1));
        }
        Ok(Self { width, height, values, scale })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.values[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: f64) {
        let w = self.width as usize;
        self.values[y as usize * w + x as usize] = v;
    }

    #[inline]
    pub fn is_valid(&self, x: u32, y: u32) -> bool {
        self.get(x, y) != DEPTH_SENTINEL
    }

    /// Depth at the nearest pixel to a sub-pixel location, `None` if outside or invalid.
    pub fn sample_nearest(&self, p: &Pixel<f64>) -> Option<f64> {
        let (x, y) = (p.x.round(), p.y.round());
        if x < 0.0 || y < 0.0 || x >= self.width as f64 || y >= self.height as f64 {
            return None;
        }
        let z = self.get(x as u32, y as u32);
        (z != DEPTH_SENTINEL).then_some(z)
    }

    pub fn valid_mask(&self) -> BinaryMask {
        BinaryMask::from_fn(self.width, self.height, |x, y| self.is_valid(x, y))
    }

    fn check_size(&self, w: u32, h: u32) -> Result<(), DepthError> {
        if self.width != w || self.height != h {
            return Err(DepthError::DimensionMismatch(self.width, self.height, w, h));
        }
        Ok(())
    }

    /// Writes a little-endian PFM (`Pf`, scale −1.0), bottom row first.
    pub fn write_pfm<W: Write>(&self, mut w: W) -> Result<(), DepthError> {
        let io = |e: std::io::Error| DepthError::Io(e.to_string());
        write!(w, "Pf\n{} {}\n-1.0\n", self.width, self.height).map_err(io)?;
        let mut buf = Vec::with_capacity(self.values.len() * 4);
        for y in (0..self.height).rev() {
            for x in 0..self.width {
                buf.extend_from_slice(&(self.get(x, y) as f32).to_le_bytes());
            }
        }
        w.write_all(&buf).map_err(io)
    }

    pub fn read_pfm<R: Read>(mut r: R, scale: DepthScale) -> Result<Self, DepthError> {
        let mut data = Vec::new();
        r.read_to_end(&mut data).map_err(|e| DepthError::Io(e.to_string()))?;
        // header: magic, dimensions and scale each on their own line; negative scale means little-endian
        let mut lines = data.splitn(4, |c| *c == b'\n');
        let magic = lines.next().unwrap_or_default();
        if magic.trim_ascii() != b"Pf" {
            return Err(DepthError::Pfm("only single-channel 'Pf' maps are supported".into()));
        }
        let dims = std::str::from_utf8(lines.next().unwrap_or_default()).map_err(|_| DepthError::Pfm("bad header".into()))?;
        let mut it = dims.split_whitespace().map(|s| s.parse::<u32>());
        let (Some(Ok(w)), Some(Ok(h)), None) = (it.next(), it.next(), it.next()) else {
            return Err(DepthError::Pfm(format!("bad dimensions line '{dims}'")));
        };
        let scale_line =
            std::str::from_utf8(lines.next().unwrap_or_default()).map_err(|_| DepthError::Pfm("bad header".into()))?;
        let file_scale: f64 =
            scale_line.trim().parse().map_err(|_| DepthError::Pfm(format!("bad scale '{}'", scale_line.trim())))?;
        let body = lines.next().unwrap_or_default();
        let n = w as usize * h as usize;
        if body.len() < 4 * n {
            return Err(DepthError::Pfm("truncated raster".into()));
        }
        let little = file_scale < 0.0;
        let mut values = vec![0.0; n];
        for (i, chunk) in body[..4 * n].chunks_exact(4).enumerate() {
            let bytes = [chunk[0], chunk[1], chunk[2], chunk[3]];
            let v = if little { f32::from_le_bytes(bytes) } else { f32::from_be_bytes(bytes) };
            let (row, col) = (i / w as usize, i % w as usize);
            let y = h as usize - 1 - row;
            values[y * w as usize + col] = v as f64;
        }
        Ok(Self { width: w, height: h, values, scale })
    }

    pub fn save_pfm(&self, path: &Path) -> Result<(), DepthError> {
        let f = std::fs::File::create(path).map_err(|e| DepthError::Io(format!("{}: {e}", path.display())))?;
        self.write_pfm(std::io::BufWriter::new(f))
    }

    /// Loads a PFM; the scale is inferred from a `.mm.pfm` suffix, otherwise relative.
    pub fn load_pfm(path: &Path) -> Result<Self, DepthError> {
        let scale = if path.to_string_lossy().ends_with(".mm.pfm") { DepthScale::MetricMm } else { DepthScale::Relative };
        let f = std::fs::File::open(path).map_err(|e| DepthError::Io(format!("{}: {e}", path.display())))?;
        Self::read_pfm(std::io::BufReader::new(f), scale)
    }
}

/// Pixelwise OR of equally sized masks.
pub fn foreground_union(masks: &[&BinaryMask]) -> Result<BinaryMask, DepthError> {
    let first = masks.first().ok_or(DepthError::InsufficientAnchor(0))?;
    let mut out = (*first).clone();
    for m in &masks[1..] {
        out.union_with(m)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineDepthParams {
    pub alpha: f64,
    pub beta: f64,
    /// The relative span hit the ε guard.
    pub low_confidence: bool,
}

/// How the anchor extrema are taken.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum AnchorExtrema {
    /// Plain minimum and maximum.
    #[default]
    MinMax,
    /// Lower and upper percentiles (0–100) of each map independently.
    Percentile { low: f64, high: f64 },
}

/// Fits `Z = alpha·R + beta` by matching the extrema of the relative and metric
/// maps over the anchor pixels (mask pixels valid in both maps).
pub fn fit_affine_scale(
    relative: &DepthMap,
    anatomy_metric: &DepthMap,
    anchor: &BinaryMask,
    extrema: AnchorExtrema,
) -> Result<AffineDepthParams, DepthError> {
    let (w, h) = (relative.width, relative.height);
    anatomy_metric.check_size(w, h)?;
    if anchor.width() != w || anchor.height() != h {
        return Err(DepthError::DimensionMismatch(w, h, anchor.width(), anchor.height()));
    }
    let mut r = Vec::new();
    let mut s = Vec::new();
    for (x, y) in anchor.foreground() {
        if relative.is_valid(x, y) && anatomy_metric.is_valid(x, y) {
            r.push(relative.get(x, y));
            s.push(anatomy_metric.get(x, y));
        }
    }
    if r.len() < 2 {
        return Err(DepthError::InsufficientAnchor(r.len()));
    }
    let ((rmin, rmax), (smin, smax)) = match extrema {
        AnchorExtrema::MinMax => (min_max(&r), min_max(&s)),
        AnchorExtrema::Percentile { low, high } => (percentiles(&mut r, low, high), percentiles(&mut s, low, high)),
    };
    let span = rmax - rmin;
    let alpha = (smax - smin) / span.max(AFFINE_EPS);
    Ok(AffineDepthParams { alpha, beta: smin - alpha * rmin, low_confidence: span < AFFINE_EPS })
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(*x), hi.max(*x)))
}

fn percentiles(v: &mut [f64], low: f64, high: f64) -> (f64, f64) {
    v.sort_by(f64::total_cmp);
    let at = |p: f64| {
        let idx = (p / 100.0 * (v.len() - 1) as f64).round() as usize;
        v[idx.min(v.len() - 1)]
    };
    (at(low), at(high))
}

/// Applies the affine map to every valid pixel. Non-positive results become
/// sentinels; their count is returned alongside the map.
pub fn apply_affine(relative: &DepthMap, params: &AffineDepthParams) -> (DepthMap, usize) {
    let mut invalidated = 0;
    let values = relative
        .values
        .iter()
        .map(|r| {
            if *r == DEPTH_SENTINEL {
                return DEPTH_SENTINEL;
            }
            let z = params.alpha * r + params.beta;
            if z > 0.0 {
                z
            } else {
                invalidated += 1;
                DEPTH_SENTINEL
            }
        })
        .collect();
    (DepthMap { width: relative.width, height: relative.height, values, scale: DepthScale::MetricMm }, invalidated)
}

/// Back-projects masked valid pixels on a `stride` grid (`x % stride == 0`,
/// `y % stride == 0`) to camera-frame points.
pub fn backproject_mask(
    depth: &DepthMap,
    mask: &BinaryMask,
    k: &CameraIntrinsics<f64>,
    stride: u32,
) -> Result<Vec<Point3<f64>>, DepthError> {
    if depth.scale != DepthScale::MetricMm {
        return Err(DepthError::WrongScale("metric"));
    }
    if mask.width() != depth.width || mask.height() != depth.height {
        return Err(DepthError::DimensionMismatch(depth.width, depth.height, mask.width(), mask.height()));
    }
    let stride = stride.max(1);
    let mut pts = Vec::new();
    for y in (0..depth.height).step_by(stride as usize) {
        for x in (0..depth.width).step_by(stride as usize) {
            if !mask.get(x, y) {
                continue;
            }
            let z = depth.get(x, y);
            if z > 0.0 {
                pts.push(Point3::new((x as f64 - k.cx) * z / k.fx, (y as f64 - k.cy) * z / k.fy, z));
            }
        }
    }
    if pts.is_empty() {
        return Err(DepthError::EmptyCloud);
    }
    Ok(pts)
}

/// Principal axis of a camera-frame point cloud.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisPrior {
    pub axis: Unit<Vector3<f64>>,
    pub centroid: Point3<f64>,
    /// Largest over second-largest covariance eigenvalue.
    pub eigen_ratio: f64,
    pub near_isotropic: bool,
}

/// 3D PCA of the cloud. When `orient` is given the sign is chosen so the
/// image-plane motion of the axis at the centroid agrees with `d_2d`.
pub fn axis_prior_3d(
    cloud: &[Point3<f64>],
    orient: Option<(&Vector2<f64>, &CameraIntrinsics<f64>)>,
) -> Result<AxisPrior, DepthError> {
    if cloud.len() < 3 {
        return Err(DepthError::DegenerateCloud);
    }
    let n = cloud.len() as f64;
    let centroid = Point3::from(cloud.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n);
    let mut cov = Matrix3::zeros();
    for p in cloud {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]));
    let (l1, l2) = (eig.eigenvalues[order[0]], eig.eigenvalues[order[1]]);
    if !(l1 > 1e-12) {
        return Err(DepthError::DegenerateCloud);
    }
    let mut axis: Vector3<f64> = eig.eigenvectors.column(order[0]).into_owned();
    match orient {
        Some((d2, k)) => {
            if image_direction(&axis, &centroid, k).dot(d2) < 0.0 {
                axis = -axis;
            }
        }
        None => {
            let first = axis.iter().copied().find(|c| c.abs() > 1e-12).unwrap_or(1.0);
            if first < 0.0 {
                axis = -axis;
            }
        }
    }
    let eigen_ratio = if l2 > 0.0 { l1 / l2 } else { f64::INFINITY };
    Ok(AxisPrior {
        axis: Unit::new_normalize(axis),
        centroid,
        eigen_ratio,
        near_isotropic: eigen_ratio < crate::mask::NEAR_ISOTROPIC_RATIO,
    })
}

/// Instantaneous image-plane direction `J(p)·d` of a 3D direction at `p`.
pub fn image_direction(d: &Vector3<f64>, p: &Point3<f64>, k: &CameraIntrinsics<f64>) -> Vector2<f64> {
    let (x, y) = (p.x / p.z, p.y / p.z);
    Vector2::new(k.fx * (d.x - x * d.z), k.fy * (d.y - y * d.z)) / p.z
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k() -> CameraIntrinsics<f64> {
        CameraIntrinsics::new(1000.0, 1000.0, 320.0, 240.0, 640, 480).unwrap()
    }

    fn rect(w: u32, h: u32, x0: u32, y0: u32, x1: u32, y1: u32) -> BinaryMask {
        BinaryMask::from_fn(w, h, |x, y| x >= x0 && x <= x1 && y >= y0 && y <= y1)
    }

    #[test]
    fn union_counts() {
        let a = rect(20, 20, 0, 0, 4, 4);
        let b = rect(20, 20, 10, 10, 14, 14);
        let c = rect(20, 20, 3, 3, 7, 7);
        assert_eq!(foreground_union(&[&a]).unwrap(), a);
        assert_eq!(foreground_union(&[&a, &b]).unwrap().count(), 50);
        let inter = a.intersection_count(&c).unwrap();
        assert_eq!(foreground_union(&[&a, &c]).unwrap().count(), 25 + 25 - inter);
        assert!(foreground_union(&[&a, &BinaryMask::new(3, 3)]).is_err());
    }

    #[test]
    fn extrema_fit_examples() {
        let rel = DepthMap::from_values(2, 1, vec![0.2, 0.8], DepthScale::Relative).unwrap();
        let met = DepthMap::from_values(2, 1, vec![10.0, 40.0], DepthScale::MetricMm).unwrap();
        let all = BinaryMask::from_fn(2, 1, |_, _| true);
        let p = fit_affine_scale(&rel, &met, &all, AnchorExtrema::MinMax).unwrap();
        assert!((p.alpha - 50.0).abs() < 1e-9 && p.beta.abs() < 1e-9);
        let p = fit_affine_scale(&met, &met, &all, AnchorExtrema::MinMax).unwrap();
        assert_eq!((p.alpha, p.beta), (1.0, 0.0));
    }

    #[test]
    fn affine_round_trip_is_exact() {
        let (w, h) = (40, 30);
        let truth: Vec<f64> = (0..w * h).map(|i| 80.0 + (i % w) as f64 * 0.37 + (i / w) as f64 * 0.11).collect();
        let truth = DepthMap::from_values(w, h, truth, DepthScale::MetricMm).unwrap();
        let (a, b) = (2.5, -10.0);
        let rel: Vec<f64> = truth.values().iter().map(|z| a * z + b).collect();
        let rel = DepthMap::from_values(w, h, rel, DepthScale::Relative).unwrap();
        let anchor = rect(w, h, 5, 5, 30, 20);
        let p = fit_affine_scale(&rel, &truth, &anchor, AnchorExtrema::MinMax).unwrap();
        let (out, bad) = apply_affine(&rel, &p);
        assert_eq!(bad, 0);
        for (x, y) in anchor.foreground() {
            assert!((out.get(x, y) - truth.get(x, y)).abs() < 1e-9);
        }
    }

    #[test]
    fn flat_relative_is_guarded() {
        let rel = DepthMap::filled(4, 4, 0.5, DepthScale::Relative);
        let met = DepthMap::filled(4, 4, 30.0, DepthScale::MetricMm);
        let all = BinaryMask::from_fn(4, 4, |_, _| true);
        let p = fit_affine_scale(&rel, &met, &all, AnchorExtrema::MinMax).unwrap();
        assert!(p.low_confidence && p.alpha.is_finite());
        let one = rect(4, 4, 0, 0, 0, 0);
        assert_eq!(fit_affine_scale(&rel, &met, &one, AnchorExtrema::MinMax), Err(DepthError::InsufficientAnchor(1)));
    }

    #[test]
    fn percentile_extrema_ignore_outliers() {
        let mut r: Vec<f64> = (0..101).map(|i| 0.1 + i as f64 * 0.01).collect();
        let s: Vec<f64> = r.iter().map(|v| 100.0 * v).collect();
        r[50] = 50.0;
        let rel = DepthMap::from_values(101, 1, r, DepthScale::Relative).unwrap();
        let met = DepthMap::from_values(101, 1, s, DepthScale::MetricMm).unwrap();
        let all = BinaryMask::from_fn(101, 1, |_, _| true);
        let plain = fit_affine_scale(&rel, &met, &all, AnchorExtrema::MinMax).unwrap();
        let robust = fit_affine_scale(&rel, &met, &all, AnchorExtrema::Percentile { low: 5.0, high: 95.0 }).unwrap();
        assert!((plain.alpha - 100.0).abs() > 50.0);
        assert!((robust.alpha - 100.0).abs() < 5.0);
    }

    #[test]
    fn apply_examples_and_sentinels() {
        let rel = DepthMap::from_values(3, 1, vec![0.5, 0.0, 0.1], DepthScale::Relative).unwrap();
        let (out, bad) = apply_affine(&rel, &AffineDepthParams { alpha: 50.0, beta: 0.0, low_confidence: false });
        assert_eq!(out.values(), &[25.0, 0.0, 5.0]);
        assert_eq!(bad, 0);
        let (out, bad) = apply_affine(&rel, &AffineDepthParams { alpha: 50.0, beta: -10.0, low_confidence: false });
        assert_eq!(out.values(), &[15.0, 0.0, 0.0]);
        assert_eq!(bad, 1);
        let (same, _) = apply_affine(&rel, &AffineDepthParams { alpha: 1.0, beta: 0.0, low_confidence: false });
        assert_eq!(same.values(), rel.values());
    }

    #[test]
    fn backprojection_grid() {
        let depth = DepthMap::filled(640, 480, 100.0, DepthScale::MetricMm);
        let m = rect(640, 480, 315, 235, 324, 244);
        for stride in [1u32, 2] {
            let pts = backproject_mask(&depth, &m, &k(), stride).unwrap();
            assert_eq!(pts.len(), (100 / (stride * stride)) as usize);
            for p in &pts {
                assert_eq!(p.z, 100.0);
                assert!(p.x.abs() <= 0.5 && p.y.abs() <= 0.5);
                let px = k().project(p).unwrap();
                assert!(m.get(px.x.round() as u32, px.y.round() as u32));
            }
        }
        let single = rect(640, 480, 320, 240, 320, 240);
        let d50 = DepthMap::filled(640, 480, 50.0, DepthScale::MetricMm);
        assert_eq!(backproject_mask(&d50, &single, &k(), 1).unwrap(), vec![Point3::new(0.0, 0.0, 50.0)]);
        let sentinel = DepthMap::empty(640, 480, DepthScale::MetricMm);
        assert_eq!(backproject_mask(&sentinel, &m, &k(), 1), Err(DepthError::EmptyCloud));
    }

    #[test]
    fn line_axis_sign_follows_image_direction() {
        let cloud: Vec<_> = (0..=30).map(|s| Point3::new(s as f64, 0.0, 100.0)).collect();
        let left = Vector2::new(-1.0, 0.0);
        let p = axis_prior_3d(&cloud, Some((&left, &k()))).unwrap();
        assert!((p.axis.into_inner() - Vector3::new(-1.0, 0.0, 0.0)).norm() < 1e-12);
        let right = Vector2::new(1.0, 0.0);
        let p = axis_prior_3d(&cloud, Some((&right, &k()))).unwrap();
        assert!((p.axis.into_inner() - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn noisy_line_axis_within_one_degree() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let n = Normal::new(0.0, 0.1).unwrap();
        let dir = Vector3::new(0.6, 0.0, 0.8);
        let cloud: Vec<_> = (0..2000)
            .map(|i| {
                let s = i as f64 * 0.02;
                Point3::new(n.sample(&mut rng), n.sample(&mut rng), 100.0 + n.sample(&mut rng)) + dir * s
            })
            .collect();
        let p = axis_prior_3d(&cloud, None).unwrap();
        assert!(p.axis.dot(&dir).abs().acos().to_degrees() < 1.0);
        assert!(!p.near_isotropic);
    }

    #[test]
    fn isotropic_blob_is_flagged() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let n = Normal::new(0.0, 1.0).unwrap();
        let cloud: Vec<_> = (0..5000)
            .map(|_| Point3::new(n.sample(&mut rng), n.sample(&mut rng), 100.0 + n.sample(&mut rng)))
            .collect();
        assert!(axis_prior_3d(&cloud, None).unwrap().near_isotropic);
        let same = vec![Point3::new(1.0, 1.0, 1.0); 4];
        assert_eq!(axis_prior_3d(&same, None), Err(DepthError::DegenerateCloud));
    }

    #[test]
    fn pfm_round_trip() {
        let vals: Vec<f64> = (0..12).map(|i| i as f64 * 0.25).collect();
        let m = DepthMap::from_values(4, 3, vals, DepthScale::Relative).unwrap();
        let mut buf = Vec::new();
        m.write_pfm(&mut buf).unwrap();
        assert!(buf.starts_with(b"Pf\n4 3\n-1.0\n"));
        // bottom row is stored first
        assert_eq!(f32::from_le_bytes(buf[12..16].try_into().unwrap()), 2.0);
        assert_eq!(DepthMap::read_pfm(&buf[..], DepthScale::Relative).unwrap(), m);
        assert!(DepthMap::read_pfm(&b"PF\n1 1\n-1.0\n"[..], DepthScale::Relative).is_err());
        assert!(DepthMap::read_pfm(&buf[..buf.len() - 1], DepthScale::Relative).is_err());
    }
}
