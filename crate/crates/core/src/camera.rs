//! Pinhole camera model.
//!
//! Metric quantities are in millimeters, image quantities in pixels. Pixel
//! `(u, v)` refers to the center of column `u`, row `v`.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix2x3, Point2, Point3};
use thiserror::Error;

use crate::scalar::Real;

/// Image-plane location in pixels.
pub type Pixel<T> = Point2<T>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CameraError {
    #[error("point has non-positive depth z = {0}")]
    NonPositiveDepth(f64),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("intrinsics file: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(String),
}

/// Four-parameter pinhole intrinsics plus the image size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics<T: Real> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: u32,
    pub height: u32,
}

impl<T: Real> CameraIntrinsics<T> {
    pub fn new(fx: T, fy: T, cx: T, cy: T, width: u32, height: u32) -> Result<Self, CameraError> {
        let k = Self { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        if !(self.fx > T::zero() && self.fy > T::zero()) {
            return Err(CameraError::InvalidIntrinsics("focal lengths must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(CameraError::InvalidIntrinsics("image size must be positive".into()));
        }
        let w = T::lit(self.width as f64);
        let h = T::lit(self.height as f64);
        if !(self.cx >= T::zero() && self.cx < w && self.cy >= T::zero() && self.cy < h) {
            return Err(CameraError::InvalidIntrinsics(
                "principal point must lie inside the image".into(),
            ));
        }
        Ok(())
    }

    /// Mean focal length `(fx + fy) / 2`.
    pub fn mean_focal(&self) -> T {
        (self.fx + self.fy) * T::lit(0.5)
    }

    /// Pinhole projection `(fx X/Z + cx, fy Y/Z + cy)`.
    pub fn project(&self, p: &Point3<T>) -> Result<Pixel<T>, CameraError> {
        if !(p.z > T::zero()) {
            return Err(CameraError::NonPositiveDepth(p.z.as_f64()));
        }
        let inv_z = T::one() / p.z;
        Ok(Pixel::new(self.fx * p.x * inv_z + self.cx, self.fy * p.y * inv_z + self.cy))
    }

    /// Inverse of [`project`](Self::project) at a known depth `z`.
    pub fn back_project(&self, px: &Pixel<T>, z: T) -> Result<Point3<T>, CameraError> {
        if !(z > T::zero()) {
            return Err(CameraError::NonPositiveDepth(z.as_f64()));
        }
        Ok(Point3::new((px.x - self.cx) * z / self.fx, (px.y - self.cy) * z / self.fy, z))
    }

    /// Jacobian of the projection with respect to the camera-frame point.
    ///
    /// ```text
    /// J = 1/Z [ fx  0  -fx x ]
    ///         [ 0   fy -fy y ]    with (x, y) = (X/Z, Y/Z)
    /// ```
    pub fn projection_jacobian(&self, p: &Point3<T>) -> Result<Matrix2x3<T>, CameraError> {
        if !(p.z > T::zero()) {
            return Err(CameraError::NonPositiveDepth(p.z.as_f64()));
        }
        let inv_z = T::one() / p.z;
        let x = p.x * inv_z;
        let y = p.y * inv_z;
        let zero = T::zero();
        Ok(Matrix2x3::new(
            self.fx,
            zero,
            -self.fx * x,
            zero,
            self.fy,
            -self.fy * y,
        ) * inv_z)
    }

    /// Whether a pixel center lies inside the image.
    pub fn contains(&self, px: &Pixel<T>) -> bool {
        let half = T::lit(0.5);
        px.x >= -half
            && px.y >= -half
            && px.x < T::lit(self.width as f64) - half
            && px.y < T::lit(self.height as f64) - half
    }

    /// Parses `key=value` lines (`fx`, `fy`, `cx`, `cy`, `width`, `height`).
    /// Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self, CameraError> {
        let mut vals: [Option<f64>; 6] = [None; 6];
        const KEYS: [&str; 6] = ["fx", "fy", "cx", "cy", "width", "height"];
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CameraError::Parse(format!("line {}: expected key=value", lineno + 1)))?;
            let key = key.trim();
            let slot = KEYS
                .iter()
                .position(|k| *k == key)
                .ok_or_else(|| CameraError::Parse(format!("line {}: unknown key '{key}'", lineno + 1)))?;
            let v: f64 = value
                .trim()
                .parse()
                .map_err(|_| CameraError::Parse(format!("line {}: bad number '{}'", lineno + 1, value.trim())))?;
            vals[slot] = Some(v);
        }
        let get = |i: usize| vals[i].ok_or_else(|| CameraError::Parse(format!("missing key '{}'", KEYS[i])));
        let (w, h) = (get(4)?, get(5)?);
        if w.fract() != 0.0 || h.fract() != 0.0 || w < 1.0 || h < 1.0 {
            return Err(CameraError::Parse("width and height must be positive integers".into()));
        }
        Self::new(T::lit(get(0)?), T::lit(get(1)?), T::lit(get(2)?), T::lit(get(3)?), w as u32, h as u32)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "fx={}", self.fx.as_f64());
        let _ = writeln!(s, "fy={}", self.fy.as_f64());
        let _ = writeln!(s, "cx={}", self.cx.as_f64());
        let _ = writeln!(s, "cy={}", self.cy.as_f64());
        let _ = writeln!(s, "width={}", self.width);
        let _ = writeln!(s, "height={}", self.height);
        s
    }

    pub fn load(path: &Path) -> Result<Self, CameraError> {
        let text = std::fs::read_to_string(path).map_err(|e| CameraError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), CameraError> {
        std::fs::write(path, self.to_text()).map_err(|e| CameraError::Io(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k1000() -> CameraIntrinsics<f64> {
        CameraIntrinsics::new(1000.0, 1000.0, 320.0, 240.0, 640, 480).unwrap()
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let px = k1000().project(&Point3::new(0.0, 0.0, 100.0)).unwrap();
        assert_eq!(px, Pixel::new(320.0, 240.0));
        let px = k1000().project(&Point3::new(10.0, 0.0, 100.0)).unwrap();
        assert_eq!(px, Pixel::new(420.0, 240.0));
    }

    #[test]
    fn anisotropic_focal_projection() {
        let k = CameraIntrinsics::<f64>::new(800.0, 820.0, 319.5, 239.5, 640, 480).unwrap();
        let px = k.project(&Point3::new(5.0, -5.0, 50.0)).unwrap();
        assert!((px.x - 399.5).abs() < 1e-12 && (px.y - 157.5).abs() < 1e-12);
        let back = k.back_project(&px, 50.0).unwrap();
        assert!((back - Point3::new(5.0, -5.0, 50.0)).norm() < 1e-12);
    }

    #[test]
    fn back_project_examples() {
        let k = k1000();
        assert_eq!(k.back_project(&Pixel::new(320.0, 240.0), 100.0).unwrap(), Point3::new(0.0, 0.0, 100.0));
        assert_eq!(k.back_project(&Pixel::new(420.0, 240.0), 100.0).unwrap(), Point3::new(10.0, 0.0, 100.0));
    }

    #[test]
    fn rejects_points_behind_camera() {
        let k = k1000();
        assert!(matches!(k.project(&Point3::new(0.0, 0.0, 0.0)), Err(CameraError::NonPositiveDepth(_))));
        assert!(matches!(k.back_project(&Pixel::new(1.0, 1.0), -2.0), Err(CameraError::NonPositiveDepth(_))));
        assert!(k.projection_jacobian(&Point3::new(1.0, 1.0, -1.0)).is_err());
    }

    #[test]
    fn jacobian_closed_form() {
        let k = k1000();
        let j = k.projection_jacobian(&Point3::new(0.0, 0.0, 200.0)).unwrap();
        let expect = Matrix2x3::new(1000.0, 0.0, 0.0, 0.0, 1000.0, 0.0) / 200.0;
        assert!((j - expect).norm() < 1e-12);
        let j = k.projection_jacobian(&Point3::new(20.0, -10.0, 100.0)).unwrap();
        let expect = Matrix2x3::new(1000.0, 0.0, -200.0, 0.0, 1000.0, 100.0) / 100.0;
        assert!((j - expect).norm() < 1e-12);
    }

    #[test]
    fn invalid_intrinsics() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 4.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 1.0, 1.0, 0, 4).is_err());
    }

    #[test]
    fn text_round_trip() {
        let k = CameraIntrinsics::new(812.5, 799.25, 319.5, 241.0, 640, 480).unwrap();
        let back = CameraIntrinsics::<f64>::parse(&k.to_text()).unwrap();
        assert_eq!(k, back);
        assert!(CameraIntrinsics::<f64>::parse("fx=1\nfy=1\ncx=0\ncy=0\nwidth=2\n").is_err());
        assert!(CameraIntrinsics::<f64>::parse("fx=1\nfy=1\ncx=0\ncy=0\nwidth=2\nheight=2.5\n").is_err());
        assert!(CameraIntrinsics::<f64>::parse("focal=1\n").is_err());
    }

    #[test]
    fn works_in_single_precision() {
        let k = CameraIntrinsics::<f32>::new(1000.0, 1000.0, 320.0, 240.0, 640, 480).unwrap();
        let px = k.project(&Point3::new(10.0, 0.0, 100.0)).unwrap();
        assert!((px.x - 420.0).abs() < 1e-4);
    }
}
