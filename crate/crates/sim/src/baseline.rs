//! Depth-only tracker: tip from the scaled monocular depth, axis from the
//! 3D PCA of the tool point cloud, no 2D constraints and no gating.

use nalgebra::Vector2;
use toolnav_core::camera::CameraIntrinsics;
use toolnav_core::mask::TipTrack;
use toolnav_core::mesh::ToolMesh;
use toolnav_core::pose::{
    depth_only_pose, prepare_frame, FrameInputs, Gate, PoseEstimate, PoseFlags, Stage, TrackError, TrackerConfig,
};

#[derive(Debug, Clone)]
pub struct DepthOnlyTracker {
    pub tool: ToolMesh<f64>,
    pub k: CameraIntrinsics<f64>,
    pub cfg: TrackerConfig,
    tip_track: TipTrack,
    prev_dir: Option<Vector2<f64>>,
    last: Option<PoseEstimate>,
}

impl DepthOnlyTracker {
    pub fn new(tool: ToolMesh<f64>, k: CameraIntrinsics<f64>, cfg: TrackerConfig) -> Self {
        Self { tool, k, cfg, tip_track: TipTrack::default(), prev_dir: None, last: None }
    }

    /// Same failure handling as the hybrid tracker: hold the last pose, error only before the first.
    pub fn track_frame(&mut self, inputs: &FrameInputs) -> Result<PoseEstimate, TrackError> {
        let result = prepare_frame(inputs, &self.k, &self.cfg, &mut self.tip_track, self.prev_dir.as_ref()).and_then(|prep| {
            let mut pose = depth_only_pose(&self.tool, &prep, inputs.index).ok_or_else(|| TrackError {
                frame: inputs.index,
                stage: Stage::TipDepth,
                message: "no scaled depth at the tip pixel".into(),
            })?;
            pose.flags.insert(prep.flags);
            self.prev_dir = Some(prep.obs.skeleton.direction);
            Ok(pose)
        });
        match (result, self.last) {
            (Ok(p), _) => {
                self.last = Some(p);
                Ok(p)
            }
            (Err(_), Some(prev)) => Ok(PoseEstimate { frame_index: inputs.index, gate: Gate::Held, flags: PoseFlags::HELD, ..prev }),
            (Err(e), None) => Err(e),
        }
    }
}

/// One-shot depth-only estimate for a single frame.
pub fn depth_only_baseline(
    inputs: &FrameInputs,
    tool: &ToolMesh<f64>,
    k: &CameraIntrinsics<f64>,
    cfg: &TrackerConfig,
) -> Result<PoseEstimate, TrackError> {
    DepthOnlyTracker::new(tool.clone(), *k, *cfg).track_frame(inputs)
}
