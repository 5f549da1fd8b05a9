//! Software z-buffer rasterization of triangle meshes.
//!
//! Pixels are sampled at integer centers with an inclusive edge test, depth is
//! interpolated perspective-correctly and triangles are clipped against a near
//! plane before projection. No culling and no anti-aliasing.

use nalgebra::Point3;

use crate::camera::CameraIntrinsics;
use crate::depth::{DepthMap, DepthScale, DEPTH_SENTINEL};
use crate::mask::BinaryMask;
use crate::mesh::{RigidTransform, TriMesh};

/// Near clipping plane, millimeters.
pub const NEAR_PLANE: f64 = 1e-3;

/// Per-pixel object id buffer; 0 means no surface.
pub type LabelBuffer = Vec<u16>;

/// Renders one posed mesh into a fresh metric depth map.
pub fn rasterize_depth(mesh: &TriMesh<f64>, pose: &RigidTransform<f64>, k: &CameraIntrinsics<f64>) -> DepthMap {
    let mut depth = DepthMap::empty(k.width, k.height, DepthScale::MetricMm);
    rasterize_into(&mut depth, None, mesh, pose, k);
    depth
}

/// Z-buffers a posed mesh into `depth`. When `labels` is given, pixels won by
/// this mesh receive `label`.
pub fn rasterize_into(
    depth: &mut DepthMap,
    mut labels: Option<(&mut [u16], u16)>,
    mesh: &TriMesh<f64>,
    pose: &RigidTransform<f64>,
    k: &CameraIntrinsics<f64>,
) {
    let cam: Vec<Point3<f64>> = mesh.vertices.iter().map(|v| pose.apply(v)).collect();
    let mut poly = Vec::with_capacity(4);
    for f in &mesh.faces {
        clip_near([cam[f[0]], cam[f[1]], cam[f[2]]], &mut poly);
        for i in 1..poly.len().saturating_sub(1) {
            let tri = [poly[0], poly[i], poly[i + 1]];
            draw_triangle(depth, labels.as_mut().map(|(l, id)| (&mut **l, *id)), &tri, k);
        }
    }
}

/// Sutherland–Hodgman against `z >= NEAR_PLANE`.
fn clip_near(tri: [Point3<f64>; 3], out: &mut Vec<Point3<f64>>) {
    out.clear();
    for i in 0..3 {
        let a = tri[i];
        let b = tri[(i + 1) % 3];
        let (ina, inb) = (a.z >= NEAR_PLANE, b.z >= NEAR_PLANE);
        if ina {
            out.push(a);
        }
        if ina != inb {
            let t = (NEAR_PLANE - a.z) / (b.z - a.z);
            out.push(a + (b - a) * t);
        }
    }
}

fn draw_triangle(
    depth: &mut DepthMap,
    mut labels: Option<(&mut [u16], u16)>,
    tri: &[Point3<f64>; 3],
    k: &CameraIntrinsics<f64>,
) {
    let proj = |p: &Point3<f64>| (k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy, 1.0 / p.z);
    let (x0, y0, w0) = proj(&tri[0]);
    let (x1, y1, w1) = proj(&tri[1]);
    let (x2, y2, w2) = proj(&tri[2]);
    let area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0);
    if !(area.abs() > 1e-12) {
        return;
    }
    let (w, h) = (depth.width() as i64, depth.height() as i64);
    let xmin = x0.min(x1).min(x2).ceil().max(0.0) as i64;
    let xmax = (x0.max(x1).max(x2).floor() as i64).min(w - 1);
    let ymin = y0.min(y1).min(y2).ceil().max(0.0) as i64;
    let ymax = (y0.max(y1).max(y2).floor() as i64).min(h - 1);
    if xmin > xmax || ymin > ymax {
        return;
    }
    let inv = 1.0 / area;
    let width = depth.width() as usize;
    for py in ymin..=ymax {
        let fy = py as f64;
        for px in xmin..=xmax {
            let fx = px as f64;
            // barycentric weights, normalized so they are non-negative inside for either winding
            let b0 = ((x1 - fx) * (y2 - fy) - (x2 - fx) * (y1 - fy)) * inv;
            let b1 = ((x2 - fx) * (y0 - fy) - (x0 - fx) * (y2 - fy)) * inv;
            let b2 = 1.0 - b0 - b1;
            const TOL: f64 = -1e-12;
            if b0 < TOL || b1 < TOL || b2 < TOL {
                continue;
            }
            let z = 1.0 / (b0 * w0 + b1 * w1 + b2 * w2);
            let idx = py as usize * width + px as usize;
            let cur = depth.values()[idx];
            if cur == DEPTH_SENTINEL || z < cur {
                depth.values_mut()[idx] = z;
                if let Some((l, id)) = labels.as_mut() {
                    l[idx] = *id;
                }
            }
        }
    }
}

/// Pixels with a valid depth sample.
pub fn silhouette(depth: &DepthMap) -> BinaryMask {
    depth.valid_mask()
}

/// Renders the silhouette of a posed mesh, optionally restricted to a field-of-view mask.
pub fn render_silhouette(
    mesh: &TriMesh<f64>,
    pose: &RigidTransform<f64>,
    k: &CameraIntrinsics<f64>,
    fov: Option<&BinaryMask>,
) -> BinaryMask {
    let mut s = silhouette(&rasterize_depth(mesh, pose, k));
    if let Some(f) = fov {
        // sizes come from the same intrinsics
        let _ = s.intersect_with(f);
    }
    s
}

/// Dice / F1 overlap `2|A∩B| / (|A|+|B|)`; 0 when both are empty.
pub fn f1_score(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let inter = a.intersection_count(b).unwrap_or(0);
    let total = a.count() + b.count();
    if total == 0 {
        0.0
    } else {
        2.0 * inter as f64 / total as f64
    }
}
