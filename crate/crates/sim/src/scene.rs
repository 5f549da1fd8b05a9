//! Synthetic anatomy, tool and camera.
//!
//! The anatomy frame has the bone plate in its `z = 0` plane with the visible
//! side facing `-z`; raised bumps carry the registration landmarks and the
//! critical structures sit behind the plate (`z > 0`).

use nalgebra::{Point3, Rotation3, Unit, Vector3};
use toolnav_core::camera::CameraIntrinsics;
use toolnav_core::depth::DepthMap;
use toolnav_core::mesh::{cylinder_mesh, pointed_shaft_mesh, sphere_mesh, RigidTransform, ToolMesh, TriMesh};
use toolnav_core::render::rasterize_into;
use toolnav_core::depth::DepthScale;

use crate::config::{ConfigError, KeyValues};
use crate::SimError;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// Plate extent along the anatomy x and y axes, millimeters.
    pub plate_width: f64,
    pub plate_height: f64,
    pub plate_depth: f64,
    pub plate_tilt_x_deg: f64,
    pub plate_tilt_y_deg: f64,
    pub bump_height: f64,
    pub tool_radius: f64,
    pub tool_cone: f64,
    pub tool_shaft: f64,
    pub tool_segments: usize,
    /// Angle between the tool axis and the image plane, base toward the camera.
    pub tool_elevation_deg: f64,
    /// Image direction of the axis (tip toward base), degrees from +u toward +v.
    pub tool_image_angle_deg: f64,
    pub contact_u: f64,
    pub contact_v: f64,
    pub nerve_depth: f64,
    pub nerve_radius: f64,
    pub sphere_depth: f64,
    pub sphere_radius: f64,
    /// Landmarks used for registration (taken in order from the landmark set).
    pub landmark_count: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            fx: 1000.0,
            fy: 1000.0,
            cx: 320.0,
            cy: 240.0,
            width: 640,
            height: 480,
            plate_width: 60.0,
            plate_height: 45.0,
            plate_depth: 112.0,
            plate_tilt_x_deg: 12.0,
            plate_tilt_y_deg: 5.0,
            bump_height: 4.0,
            tool_radius: 1.5,
            tool_cone: 6.0,
            tool_shaft: 38.0,
            tool_segments: 24,
            tool_elevation_deg: 38.0,
            tool_image_angle_deg: -35.0,
            contact_u: 250.0,
            contact_v: 290.0,
            nerve_depth: 2.0,
            nerve_radius: 1.2,
            sphere_depth: 6.0,
            sphere_radius: 3.0,
            landmark_count: 4,
        }
    }
}

const SCENE_KEYS: [&str; 25] = [
    "fx",
    "fy",
    "cx",
    "cy",
    "width",
    "height",
    "plate_width",
    "plate_height",
    "plate_depth",
    "plate_tilt_x_deg",
    "plate_tilt_y_deg",
    "bump_height",
    "tool_radius",
    "tool_cone",
    "tool_shaft",
    "tool_segments",
    "tool_elevation_deg",
    "tool_image_angle_deg",
    "contact_u",
    "contact_v",
    "nerve_depth",
    "nerve_radius",
    "sphere_depth",
    "sphere_radius",
    "landmark_count",
];

impl SceneSpec {
    pub const KEYS: &'static [&'static str] = &SCENE_KEYS;

    /// Reads known keys from `kv`, defaults for the rest. Unknown keys are left
    /// to the caller since scene and trajectory share one file.
    pub fn from_kv(kv: &KeyValues) -> Result<Self, ConfigError> {
        let d = Self::default();
        let s = Self {
            fx: kv.get_or("fx", d.fx)?,
            fy: kv.get_or("fy", d.fy)?,
            cx: kv.get_or("cx", d.cx)?,
            cy: kv.get_or("cy", d.cy)?,
            width: kv.get_or("width", d.width)?,
            height: kv.get_or("height", d.height)?,
            plate_width: kv.get_or("plate_width", d.plate_width)?,
            plate_height: kv.get_or("plate_height", d.plate_height)?,
            plate_depth: kv.get_or("plate_depth", d.plate_depth)?,
            plate_tilt_x_deg: kv.get_or("plate_tilt_x_deg", d.plate_tilt_x_deg)?,
            plate_tilt_y_deg: kv.get_or("plate_tilt_y_deg", d.plate_tilt_y_deg)?,
            bump_height: kv.get_or("bump_height", d.bump_height)?,
            tool_radius: kv.get_or("tool_radius", d.tool_radius)?,
            tool_cone: kv.get_or("tool_cone", d.tool_cone)?,
            tool_shaft: kv.get_or("tool_shaft", d.tool_shaft)?,
            tool_segments: kv.get_or("tool_segments", d.tool_segments)?,
            tool_elevation_deg: kv.get_or("tool_elevation_deg", d.tool_elevation_deg)?,
            tool_image_angle_deg: kv.get_or("tool_image_angle_deg", d.tool_image_angle_deg)?,
            contact_u: kv.get_or("contact_u", d.contact_u)?,
            contact_v: kv.get_or("contact_v", d.contact_v)?,
            nerve_depth: kv.get_or("nerve_depth", d.nerve_depth)?,
            nerve_radius: kv.get_or("nerve_radius", d.nerve_radius)?,
            sphere_depth: kv.get_or("sphere_depth", d.sphere_depth)?,
            sphere_radius: kv.get_or("sphere_radius", d.sphere_radius)?,
            landmark_count: kv.get_or("landmark_count", d.landmark_count)?,
        };
        for (key, v) in [
            ("plate_width", s.plate_width),
            ("plate_height", s.plate_height),
            ("plate_depth", s.plate_depth),
            ("tool_radius", s.tool_radius),
            ("tool_cone", s.tool_cone),
            ("tool_shaft", s.tool_shaft),
            ("nerve_radius", s.nerve_radius),
            ("sphere_radius", s.sphere_radius),
        ] {
            if !(v > 0.0) {
                return Err(kv.invalid(key, "must be positive".into()));
            }
        }
        if s.tool_segments < 3 {
            return Err(kv.invalid("tool_segments", "need at least 3".into()));
        }
        if s.landmark_count < 4 || s.landmark_count > 6 {
            return Err(kv.invalid("landmark_count", "must be between 4 and 6".into()));
        }
        Ok(s)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.insert("fx", self.fx);
        kv.insert("fy", self.fy);
        kv.insert("cx", self.cx);
        kv.insert("cy", self.cy);
        kv.insert("width", self.width);
        kv.insert("height", self.height);
        kv.insert("plate_width", self.plate_width);
        kv.insert("plate_height", self.plate_height);
        kv.insert("plate_depth", self.plate_depth);
        kv.insert("plate_tilt_x_deg", self.plate_tilt_x_deg);
        kv.insert("plate_tilt_y_deg", self.plate_tilt_y_deg);
        kv.insert("bump_height", self.bump_height);
        kv.insert("tool_radius", self.tool_radius);
        kv.insert("tool_cone", self.tool_cone);
        kv.insert("tool_shaft", self.tool_shaft);
        kv.insert("tool_segments", self.tool_segments);
        kv.insert("tool_elevation_deg", self.tool_elevation_deg);
        kv.insert("tool_image_angle_deg", self.tool_image_angle_deg);
        kv.insert("contact_u", self.contact_u);
        kv.insert("contact_v", self.contact_v);
        kv.insert("nerve_depth", self.nerve_depth);
        kv.insert("nerve_radius", self.nerve_radius);
        kv.insert("sphere_depth", self.sphere_depth);
        kv.insert("sphere_radius", self.sphere_radius);
        kv.insert("landmark_count", self.landmark_count);
        kv
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Structure {
    pub name: String,
    /// Anatomy frame.
    pub mesh: TriMesh<f64>,
    pub color: [u8; 3],
}

pub const LABEL_ANATOMY: u16 = 1;
pub const LABEL_TOOL: u16 = 2;

#[derive(Debug, Clone)]
pub struct Scene {
    pub spec: SceneSpec,
    pub k: CameraIntrinsics<f64>,
    /// Visible bone surface, anatomy frame.
    pub anatomy: TriMesh<f64>,
    pub t_c_a: RigidTransform<f64>,
    /// Named anatomy-frame points, registration order.
    pub landmarks: Vec<(String, Point3<f64>)>,
    pub structures: Vec<Structure>,
    pub tool: ToolMesh<f64>,
    /// Tip resting point on the plate, camera frame.
    pub contact_tip: Point3<f64>,
    pub initial_axis: Unit<Vector3<f64>>,
    /// True anatomy depth and labels with the tool absent.
    pub anatomy_depth: DepthMap,
    pub anatomy_labels: Vec<u16>,
}

/// Closed axis-aligned box.
pub fn box_mesh(min: Point3<f64>, max: Point3<f64>) -> TriMesh<f64> {
    let v = |i: usize| {
        Point3::new(
            if i & 1 == 0 { min.x } else { max.x },
            if i & 2 == 0 { min.y } else { max.y },
            if i & 4 == 0 { min.z } else { max.z },
        )
    };
    let vertices = (0..8).map(v).collect();
    let faces = vec![
        [0, 2, 1],
        [1, 2, 3],
        [4, 5, 6],
        [5, 7, 6],
        [0, 1, 4],
        [1, 5, 4],
        [2, 6, 3],
        [3, 6, 7],
        [0, 4, 2],
        [2, 4, 6],
        [1, 3, 5],
        [3, 7, 5],
    ];
    TriMesh { vertices, faces }
}

impl Scene {
    pub fn build(spec: &SceneSpec) -> Result<Self, SimError> {
        let k = CameraIntrinsics::new(spec.fx, spec.fy, spec.cx, spec.cy, spec.width, spec.height)
            .map_err(|e| SimError::Config(e.to_string()))?;
        let (hw, hh) = (spec.plate_width / 2.0, spec.plate_height / 2.0);

        // plate split into a grid so large tilted faces stay well conditioned
        let mut anatomy = TriMesh { vertices: Vec::new(), faces: Vec::new() };
        let n = 8;
        for j in 0..=n {
            for i in 0..=n {
                let x = -hw + spec.plate_width * i as f64 / n as f64;
                let y = -hh + spec.plate_height * j as f64 / n as f64;
                anatomy.vertices.push(Point3::new(x, y, 0.0));
            }
        }
        for j in 0..n {
            for i in 0..n {
                let a = j * (n + 1) + i;
                anatomy.faces.push([a, a + 1, a + n + 2]);
                anatomy.faces.push([a, a + n + 2, a + n + 1]);
            }
        }
        let bump = 3.0;
        let bump_centers = [(-0.72 * hw, -0.65 * hh), (0.75 * hw, -0.7 * hh), (0.7 * hw, 0.68 * hh)];
        let mut landmarks = Vec::new();
        for (i, (x, y)) in bump_centers.iter().enumerate() {
            anatomy.append(&box_mesh(
                Point3::new(x - bump, y - bump, -spec.bump_height),
                Point3::new(x + bump, y + bump, 0.0),
            ));
            landmarks.push((format!("bump_{}", i + 1), Point3::new(*x, *y, -spec.bump_height)));
        }
        landmarks.push(("plate_sw".to_string(), Point3::new(-0.85 * hw, 0.85 * hh, 0.0)));
        landmarks.push(("plate_c".to_string(), Point3::new(0.1 * hw, -0.2 * hh, 0.0)));
        landmarks.push(("plate_s".to_string(), Point3::new(0.15 * hw, 0.8 * hh, 0.0)));

        let nerve_axis = RigidTransform::new(
            Rotation3::from_axis_angle(&Vector3::y_axis(), std::f64::consts::FRAC_PI_2),
            Vector3::new(0.0, 0.3 * hh, spec.nerve_depth + spec.nerve_radius),
        );
        let nerve = cylinder_mesh(spec.nerve_radius, -0.8 * hw, 0.8 * hw, 24).transformed(&nerve_axis);
        let sphere = sphere_mesh(Point3::new(0.1 * hw, -0.1 * hh, spec.sphere_depth + spec.sphere_radius), spec.sphere_radius, 12, 24);
        let structures = vec![
            Structure { name: "nerve".into(), mesh: nerve, color: [255, 220, 0] },
            Structure { name: "vessel".into(), mesh: sphere, color: [220, 30, 30] },
        ];

        let t_c_a = RigidTransform::new(
            Rotation3::from_axis_angle(&Vector3::x_axis(), spec.plate_tilt_x_deg.to_radians())
                * Rotation3::from_axis_angle(&Vector3::y_axis(), spec.plate_tilt_y_deg.to_radians()),
            Vector3::new(0.0, 0.0, spec.plate_depth),
        );

        let tool_mesh = pointed_shaft_mesh(spec.tool_radius, spec.tool_cone, spec.tool_shaft, spec.tool_segments);
        let tool = ToolMesh::new(tool_mesh, &-Vector3::z()).map_err(|e| SimError::Config(e.to_string()))?;

        let mut scene = Self {
            spec: spec.clone(),
            k,
            anatomy,
            t_c_a,
            landmarks,
            structures,
            tool,
            contact_tip: Point3::origin(),
            initial_axis: Vector3::z_axis(),
            anatomy_depth: DepthMap::empty(spec.width, spec.height, DepthScale::MetricMm),
            anatomy_labels: Vec::new(),
        };
        scene.contact_tip = scene
            .surface_point(spec.contact_u, spec.contact_v)
            .ok_or_else(|| SimError::Config("contact pixel does not hit the plate".into()))?;
        let (e, a) = (spec.tool_elevation_deg.to_radians(), spec.tool_image_angle_deg.to_radians());
        scene.initial_axis = Unit::new_normalize(Vector3::new(e.cos() * a.cos(), e.cos() * a.sin(), -e.sin()));
        let mut labels = vec![0u16; spec.width as usize * spec.height as usize];
        let mut depth = DepthMap::empty(spec.width, spec.height, DepthScale::MetricMm);
        rasterize_into(&mut depth, Some((&mut labels, LABEL_ANATOMY)), &scene.anatomy, &scene.t_c_a, &k);
        scene.anatomy_depth = depth;
        scene.anatomy_labels = labels;
        Ok(scene)
    }

    /// Camera-frame intersection of the pixel ray with the plate plane.
    pub fn surface_point(&self, u: f64, v: f64) -> Option<Point3<f64>> {
        let ray = Vector3::new((u - self.k.cx) / self.k.fx, (v - self.k.cy) / self.k.fy, 1.0);
        let normal = self.t_c_a.rotation * Vector3::z();
        let origin = self.t_c_a.translation;
        let denom = normal.dot(&ray);
        if denom.abs() < 1e-12 {
            return None;
        }
        let s = normal.dot(&origin) / denom;
        (s > 0.0).then(|| Point3::from(ray * s))
    }

    /// Unit plate normal in the camera frame, pointing toward the camera.
    pub fn surface_normal(&self) -> Vector3<f64> {
        -(self.t_c_a.rotation * Vector3::z())
    }

    /// Landmarks used for registration.
    pub fn registration_landmarks(&self) -> &[(String, Point3<f64>)] {
        &self.landmarks[..self.spec.landmark_count.min(self.landmarks.len())]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_scene_layout() {
        let s = Scene::build(&SceneSpec::default()).unwrap();
        let vals: Vec<f64> = s.anatomy_depth.values().iter().copied().filter(|z| *z > 0.0).collect();
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(0.0, f64::max);
        assert!(hi - lo > 10.0 && hi - lo < 20.0, "depth range {lo}..{hi}");
        // tip lies on the plate at the requested pixel
        let px = s.k.project(&s.contact_tip).unwrap();
        assert!((px.x - 250.0).abs() < 1e-9 && (px.y - 290.0).abs() < 1e-9);
        let z = s.anatomy_depth.get(250, 290);
        assert!((z - s.contact_tip.z).abs() < 1e-6);
        // every landmark is visible
        for (_, p) in &s.landmarks {
            let c = s.t_c_a.apply(p);
            assert!(s.k.contains(&s.k.project(&c).unwrap()));
        }
        // structures sit behind the plate surface
        for st in &s.structures {
            assert!(st.mesh.vertices.iter().all(|v| v.z > 0.0));
        }
        // the tool base stays inside the image and is closer to the border than the tip
        let base = s.contact_tip + s.initial_axis.into_inner() * s.tool.length;
        let bp = s.k.project(&base).unwrap();
        assert!(s.k.contains(&bp));
    }

    #[test]
    fn box_mesh_is_closed() {
        let b = box_mesh(Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 2.0, 3.0));
        let mut edges = std::collections::HashMap::new();
        for f in &b.faces {
            for i in 0..3 {
                let (a, c) = (f[i], f[(i + 1) % 3]);
                *edges.entry((a.min(c), a.max(c))).or_insert(0) += 1;
            }
        }
        assert!(edges.values().all(|n| *n == 2));
    }
}
