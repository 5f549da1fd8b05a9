//! Triangle meshes, tool geometry primitives and rigid alignment.
//!
//! Axis convention shared by the simulator and the solver: `axis_local` points
//! from the tool tip toward the base, and the tip direction is `-axis_local`.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Point3, Rotation3, Unit, Vector3};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("mesh needs at least {0} vertices")]
    EmptyMesh(usize),
    #[error("face {face} references vertex {index} but the mesh has {count} vertices")]
    BadFace { face: usize, index: usize, count: usize },
    #[error("axis must be a unit vector")]
    NotUnit,
    #[error("OBJ line {line}: {msg}")]
    Obj { line: usize, msg: String },
    #[error("io error: {0}")]
    Io(String),
}

/// Rigid transform `x -> R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform<T: Real> {
    pub rotation: Rotation3<T>,
    pub translation: Vector3<T>,
}

impl<T: Real> RigidTransform<T> {
    pub fn identity() -> Self {
        Self { rotation: Rotation3::identity(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: Rotation3<T>, translation: Vector3<T>) -> Self {
        Self { rotation, translation }
    }

    pub fn apply(&self, p: &Point3<T>) -> Point3<T> {
        self.rotation * p + self.translation
    }

    pub fn apply_vector(&self, v: &Vector3<T>) -> Vector3<T> {
        self.rotation * v
    }

    /// `self ∘ other`: first `other`, then `self`.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Self {
        let r_inv = self.rotation.inverse();
        Self { rotation: r_inv, translation: -(r_inv * self.translation) }
    }

    /// Twelve numbers: rotation row-major, then translation.
    pub fn to_row_major12(&self) -> [T; 12] {
        let m = self.rotation.matrix();
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
            self.translation.x,
            self.translation.y,
            self.translation.z,
        ]
    }

    /// Inverse of [`to_row_major12`](Self::to_row_major12); the rotation block is
    /// re-orthonormalized.
    pub fn from_row_major12(v: &[T; 12]) -> Self {
        let m = Matrix3::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]);
        Self {
            rotation: Rotation3::from_matrix_eps(&m, T::default_epsilon(), 50, Rotation3::identity()),
            translation: Vector3::new(v[9], v[10], v[11]),
        }
    }

    /// Max deviation of `RᵀR` from identity and of `det R` from one.
    pub fn orthonormality_error(&self) -> T {
        let m = self.rotation.matrix();
        let e = (m.transpose() * m - Matrix3::identity()).abs().max();
        let d = (m.determinant() - T::one()).abs();
        if e > d {
            e
        } else {
            d
        }
    }
}

/// Indexed triangle mesh, vertices in millimeters.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh<T: Real> {
    pub vertices: Vec<Point3<T>>,
    pub faces: Vec<[usize; 3]>,
}

impl<T: Real> TriMesh<T> {
    pub fn new(vertices: Vec<Point3<T>>, faces: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        let count = vertices.len();
        for (face, f) in faces.iter().enumerate() {
            if let Some(&index) = f.iter().find(|&&i| i >= count) {
                return Err(MeshError::BadFace { face, index, count });
            }
        }
        Ok(Self { vertices, faces })
    }

    pub fn transformed(&self, t: &RigidTransform<T>) -> Self {
        Self { vertices: self.vertices.iter().map(|v| t.apply(v)).collect(), faces: self.faces.clone() }
    }

    /// Appends another mesh, offsetting its face indices.
    pub fn append(&mut self, other: &TriMesh<T>) {
        let off = self.vertices.len();
        self.vertices.extend_from_slice(&other.vertices);
        self.faces.extend(other.faces.iter().map(|f| [f[0] + off, f[1] + off, f[2] + off]));
    }

    /// Parses the `v x y z` / `f i j k` subset of Wavefront OBJ (1-based indices).
    /// Other record types are ignored. Face tokens of the form `i/j/k` keep `i`;
    /// polygons with more than three vertices are fan-triangulated.
    pub fn parse_obj(text: &str) -> Result<Self, MeshError> {
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let mut tok = raw.split_whitespace();
            match tok.next() {
                Some("v") => {
                    let mut c = [T::zero(); 3];
                    for slot in c.iter_mut() {
                        let s = tok.next().ok_or_else(|| MeshError::Obj { line, msg: "vertex needs 3 coordinates".into() })?;
                        let x: f64 = s.parse().map_err(|_| MeshError::Obj { line, msg: format!("bad number '{s}'") })?;
                        *slot = T::lit(x);
                    }
                    vertices.push(Point3::new(c[0], c[1], c[2]));
                }
                Some("f") => {
                    let idx: Vec<usize> = tok
                        .map(|s| {
                            let head = s.split('/').next().unwrap_or("");
                            let v: i64 = head.parse().map_err(|_| MeshError::Obj { line, msg: format!("bad index '{s}'") })?;
                            if v < 1 {
                                return Err(MeshError::Obj { line, msg: "indices are 1-based and positive".into() });
                            }
                            Ok(v as usize - 1)
                        })
                        .collect::<Result<_, _>>()?;
                    if idx.len() < 3 {
                        return Err(MeshError::Obj { line, msg: "face needs 3 indices".into() });
                    }
                    for k in 1..idx.len() - 1 {
                        faces.push([idx[0], idx[k], idx[k + 1]]);
                    }
                }
                _ => {}
            }
        }
        Self::new(vertices, faces)
    }

    pub fn to_obj(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            let _ = writeln!(s, "v {} {} {}", v.x.as_f64(), v.y.as_f64(), v.z.as_f64());
        }
        for f in &self.faces {
            let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
        }
        s
    }

    pub fn load_obj(path: &Path) -> Result<Self, MeshError> {
        let text = std::fs::read_to_string(path).map_err(|e| MeshError::Io(format!("{}: {e}", path.display())))?;
        Self::parse_obj(&text)
    }

    pub fn save_obj(&self, path: &Path) -> Result<(), MeshError> {
        std::fs::write(path, self.to_obj()).map_err(|e| MeshError::Io(format!("{}: {e}", path.display())))
    }
}

/// Tool mesh with its canonical primitives: tip point, length and tip→base axis.
#[derive(Debug, Clone, PartialEq)]
pub struct ToolMesh<T: Real> {
    pub mesh: TriMesh<T>,
    /// Unit axis from tip toward base, mesh-local frame.
    pub axis_local: Unit<Vector3<T>>,
    pub tip: Point3<T>,
    /// Extent along the axis, millimeters.
    pub length: T,
}

impl<T: Real> ToolMesh<T> {
    /// Builds the tool from a mesh and the tip direction (`-axis_local`).
    pub fn new(mesh: TriMesh<T>, tip_direction: &Vector3<T>) -> Result<Self, MeshError> {
        let a_tip = unit_checked(tip_direction)?;
        let (tip, length) = extract_primitives(&mesh.vertices, &a_tip)?;
        Ok(Self { mesh, axis_local: Unit::new_unchecked(-a_tip.into_inner()), tip, length })
    }
}

fn unit_checked<T: Real>(v: &Vector3<T>) -> Result<Unit<Vector3<T>>, MeshError> {
    if (v.norm() - T::one()).abs() > T::tol(1e-9) {
        return Err(MeshError::NotUnit);
    }
    Ok(Unit::new_normalize(*v))
}

/// Tip vertex (argmax of `v·a_tip`, lowest index on ties within 1e-9) and
/// the tool length measured along `a_base = -a_tip`.
pub fn extract_primitives<T: Real>(
    vertices: &[Point3<T>],
    a_tip: &Unit<Vector3<T>>,
) -> Result<(Point3<T>, T), MeshError> {
    if vertices.len() < 2 {
        return Err(MeshError::EmptyMesh(2));
    }
    let tie = T::tol(1e-9);
    let mut best = 0;
    let mut best_val = vertices[0].coords.dot(a_tip);
    let mut lo = best_val;
    let mut hi = best_val;
    for (i, v) in vertices.iter().enumerate().skip(1) {
        let s = v.coords.dot(a_tip);
        if s > best_val + tie {
            best = i;
            best_val = s;
        }
        lo = lo.min(s);
        hi = hi.max(s);
    }
    // max(v·a_base) - min(v·a_base) == max(v·a_tip) - min(v·a_tip)
    Ok((vertices[best], hi - lo))
}

/// Threshold on `1 + a·d` below which the two axes are treated as anti-parallel.
fn antiparallel_tol<T: Real>() -> T {
    T::tol(1e-9)
}

pub fn is_antiparallel<T: Real>(a: &Unit<Vector3<T>>, d: &Unit<Vector3<T>>) -> bool {
    T::one() + a.dot(d) < antiparallel_tol()
}

/// Unit vector orthogonal to `a`, built from the coordinate axis with the
/// smallest `|a_i|` (lowest index on ties).
pub fn any_orthogonal<T: Real>(a: &Unit<Vector3<T>>) -> Unit<Vector3<T>> {
    let mut k = 0;
    for i in 1..3 {
        if a[i].abs() < a[k].abs() {
            k = i;
        }
    }
    let mut e = Vector3::zeros();
    e[k] = T::one();
    Unit::new_normalize(a.cross(&e))
}

/// Minimal rotation taking `a` onto `d` (Rodrigues).
///
/// `R = I + [v]x + [v]x² (1 - c)/s²` with `v = a × d`, `c = a·d`, `s = |v|`,
/// evaluated as `[v]x² / (1 + c)`. When the axes are anti-parallel the result
/// is the half-turn about [`any_orthogonal`]`(a)`.
pub fn rotation_from_axes<T: Real>(a: &Unit<Vector3<T>>, d: &Unit<Vector3<T>>) -> Rotation3<T> {
    if is_antiparallel(a, d) {
        let n = any_orthogonal(a);
        let m = n.into_inner() * n.transpose() * T::lit(2.0) - Matrix3::identity();
        return Rotation3::from_matrix_unchecked(m);
    }
    let v = a.cross(d);
    let c = a.dot(d);
    let vx = v.cross_matrix();
    let m = Matrix3::identity() + vx + vx * vx * (T::one() / (T::one() + c));
    Rotation3::from_matrix_unchecked(m)
}

/// Pose that maps the tool axis onto `d_c` and the mesh tip onto `tip_c`.
pub fn align_mesh<T: Real>(
    tool: &ToolMesh<T>,
    d_c: &Unit<Vector3<T>>,
    tip_c: &Point3<T>,
) -> RigidTransform<T> {
    let rotation = rotation_from_axes(&tool.axis_local, d_c);
    let translation = tip_c.coords - rotation * tool.tip.coords;
    RigidTransform { rotation, translation }
}

/// Geodesic angle of a rotation, radians in `[0, π]`. Uses `atan2` so it stays
/// finite when rounding pushes the trace past 3.
pub fn rotation_angle<T: Real>(r: &Rotation3<T>) -> T {
    let m = r.matrix();
    let s = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]).norm() * T::lit(0.5);
    let c = (m.trace() - T::one()) * T::lit(0.5);
    s.atan2(c)
}

/// Geodesic distance between two rotations, radians.
pub fn rotation_distance<T: Real>(a: &Rotation3<T>, b: &Rotation3<T>) -> T {
    rotation_angle(&(a.inverse() * b))
}

/// Closed cylinder along +z from `z0` to `z1`, `segments` facets around.
pub fn cylinder_mesh<T: Real>(radius: T, z0: T, z1: T, segments: usize) -> TriMesh<T> {
    let mut vertices = Vec::with_capacity(2 * segments + 2);
    for z in [z0, z1] {
        for i in 0..segments {
            let (s, c) = (T::two_pi() * T::lit(i as f64) / T::lit(segments as f64)).sin_cos();
            vertices.push(Point3::new(radius * c, radius * s, z));
        }
    }
    vertices.push(Point3::new(T::zero(), T::zero(), z0));
    vertices.push(Point3::new(T::zero(), T::zero(), z1));
    let (c0, c1) = (2 * segments, 2 * segments + 1);
    let mut faces = Vec::with_capacity(4 * segments);
    for i in 0..segments {
        let j = (i + 1) % segments;
        faces.push([i, j, segments + j]);
        faces.push([i, segments + j, segments + i]);
        faces.push([c0, j, i]);
        faces.push([c1, segments + i, segments + j]);
    }
    TriMesh { vertices, faces }
}

/// Cylindrical shaft with a conical point: apex at the origin, cone up to
/// `z = cone_length`, shaft up to `z = cone_length + shaft_length`, capped base.
pub fn pointed_shaft_mesh<T: Real>(radius: T, cone_length: T, shaft_length: T, segments: usize) -> TriMesh<T> {
    let mut mesh = TriMesh { vertices: vec![Point3::origin()], faces: Vec::new() };
    let z1 = cone_length + shaft_length;
    for z in [cone_length, z1] {
        for i in 0..segments {
            let (s, c) = (T::two_pi() * T::lit(i as f64) / T::lit(segments as f64)).sin_cos();
            mesh.vertices.push(Point3::new(radius * c, radius * s, z));
        }
    }
    mesh.vertices.push(Point3::new(T::zero(), T::zero(), z1));
    let cap = 2 * segments + 1;
    for i in 0..segments {
        let j = (i + 1) % segments;
        let (a, b) = (1 + i, 1 + j);
        let (c, d) = (1 + segments + i, 1 + segments + j);
        mesh.faces.push([0, b, a]);
        mesh.faces.push([a, b, d]);
        mesh.faces.push([a, d, c]);
        mesh.faces.push([cap, c, d]);
    }
    mesh
}

/// Latitude/longitude sphere.
pub fn sphere_mesh<T: Real>(center: Point3<T>, radius: T, stacks: usize, slices: usize) -> TriMesh<T> {
    let mut vertices = vec![center + Vector3::new(T::zero(), T::zero(), -radius)];
    for i in 1..stacks {
        let theta = T::pi() * T::lit(i as f64) / T::lit(stacks as f64);
        let (st, ct) = theta.sin_cos();
        for j in 0..slices {
            let (sp, cp) = (T::two_pi() * T::lit(j as f64) / T::lit(slices as f64)).sin_cos();
            vertices.push(center + Vector3::new(radius * st * cp, radius * st * sp, -radius * ct));
        }
    }
    vertices.push(center + Vector3::new(T::zero(), T::zero(), radius));
    let top = vertices.len() - 1;
    let ring = |i: usize, j: usize| 1 + (i - 1) * slices + j % slices;
    let mut faces = Vec::new();
    for j in 0..slices {
        faces.push([0, ring(1, j + 1), ring(1, j)]);
        faces.push([top, ring(stacks - 1, j), ring(stacks - 1, j + 1)]);
    }
    for i in 1..stacks - 1 {
        for j in 0..slices {
            faces.push([ring(i, j), ring(i, j + 1), ring(i + 1, j + 1)]);
            faces.push([ring(i, j), ring(i + 1, j + 1), ring(i + 1, j)]);
        }
    }
    TriMesh { vertices, faces }
}
