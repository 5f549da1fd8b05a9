//! Monocular surgical tool pose tracking and depth-aware anatomy overlay.
//!
//! Geometry that is independent of images (camera model, rigid transforms,
//! meshes, PnP, the axis solver) is generic over [`scalar::Real`]; image-level
//! processing works in `f64`. The aliases below fix the scalar to `f64`.

pub mod camera;
pub mod depth;
pub mod mask;
pub mod mesh;
pub mod overlay;
pub mod pose;
pub mod registration;
pub mod render;
pub mod scalar;
pub mod stream;

pub use camera::CameraError;
pub use depth::{DepthMap, DepthScale};
pub use mask::BinaryMask;
pub use pose::{FrameInputs, PoseEstimate, Tracker, TrackerConfig};
pub use scalar::Real;

pub type Intrinsics = camera::CameraIntrinsics<f64>;
pub type Pixel = camera::Pixel<f64>;
pub type Transform = mesh::RigidTransform<f64>;
pub type Mesh = mesh::TriMesh<f64>;
pub type Tool = mesh::ToolMesh<f64>;
pub type Correspondence = registration::Correspondence<f64>;
pub type AxisConstraints = pose::AxisConstraints<f64>;

pub type Intrinsics32 = camera::CameraIntrinsics<f32>;
pub type Transform32 = mesh::RigidTransform<f32>;
pub type Mesh32 = mesh::TriMesh<f32>;
