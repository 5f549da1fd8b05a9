//! Tool axis solver, pose initialization and the hybrid frame-to-frame tracker.
//!
//! The tool axis `d` (unit, tip toward base, camera frame) is constrained by
//! two observations: its instantaneous image direction at the tip must be
//! parallel to the mask direction, and its in-plane magnitude `|d_xy|` must
//! equal a target `ρ`. Writing `d = (x d_z + αA, y d_z + αB, d_z)` with
//! `(x, y)` the normalized tip coordinates and `(A, B) = (d2x/fx, d2y/fy)`
//! satisfies the first constraint for every `α`; the second becomes the
//! quadratic `aα² + bα + c = 0`.

use nalgebra::{Point3, Unit, Vector2, Vector3};
use thiserror::Error;

use crate::camera::{CameraIntrinsics, Pixel};
use crate::depth::{
    apply_affine, axis_prior_3d, backproject_mask, fit_affine_scale, AnchorExtrema, AxisPrior, DepthMap,
};
use crate::mask::{boundary_crop_pca, mask_pca, select_tip, BinaryMask, CropConfig, MaskSkeleton, TipTrack};
use crate::mesh::{align_mesh, RigidTransform, ToolMesh};
use crate::render::{f1_score, render_silhouette};
use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoseError {
    #[error("mask direction is degenerate")]
    DegenerateYaw,
    #[error("tip has non-positive depth")]
    NonPositiveDepth,
    #[error("previous mask length is zero")]
    ZeroPrevLength,
}

/// Inputs to [`solve_axis`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisConstraints<T: Real> {
    /// Mask direction in the image, tip toward base.
    pub d_2d: Vector2<T>,
    /// Coarse 3D axis used to pick between the two roots.
    pub d_prior: Vector3<T>,
    /// Target in-plane magnitude, `[0, 1]`.
    pub rho: T,
    pub tip: Point3<T>,
    /// Out-of-plane component; `±sqrt(1 - ρ²)` when built with [`AxisConstraints::new`].
    pub d_z: T,
}

impl<T: Real> AxisConstraints<T> {
    /// Clips `rho` to `[0, 1]` and sets `d_z = sign · sqrt(1 - ρ²)` (sign of `dz_sign`, `+` for zero).
    pub fn new(d_2d: Vector2<T>, d_prior: Vector3<T>, rho: T, tip: Point3<T>, dz_sign: T) -> Self {
        let rho = rho.clamp(T::zero(), T::one());
        let mag = (T::one() - rho * rho).max(T::zero()).sqrt();
        let d_z = if dz_sign < T::zero() { -mag } else { mag };
        Self { d_2d, d_prior, rho, tip, d_z }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisSolution<T: Real> {
    pub d: Unit<Vector3<T>>,
    /// Quadratic coefficients `(a, b, c)`.
    pub coeffs: (T, T, T),
    pub roots: [T; 2],
    pub chosen: usize,
    /// The discriminant was negative and clamped to zero.
    pub infeasible: bool,
}

/// Closed-form axis from the yaw and in-plane magnitude constraints.
///
/// Of the two roots, the one maximizing `ĝ(d)·d_2D + d·d_prior` is returned,
/// where `ĝ(d)` is the normalized image-plane direction of `d` at the tip.
pub fn solve_axis<T: Real>(c: &AxisConstraints<T>, k: &CameraIntrinsics<T>) -> Result<AxisSolution<T>, PoseError> {
    let n2 = c.d_2d.norm();
    if !(n2 >= T::lit(1e-9)) {
        return Err(PoseError::DegenerateYaw);
    }
    if !(c.tip.z > T::zero()) {
        return Err(PoseError::NonPositiveDepth);
    }
    let d2 = c.d_2d / n2;
    let (x, y) = (c.tip.x / c.tip.z, c.tip.y / c.tip.z);
    let a_ = d2.x / k.fx;
    let b_ = d2.y / k.fy;
    let cx = x * c.d_z;
    let cy = y * c.d_z;
    let two = T::lit(2.0);
    let a = a_ * a_ + b_ * b_;
    let b = two * (cx * a_ + cy * b_);
    let cc = cx * cx + cy * cy - c.rho * c.rho;
    let disc = b * b - T::lit(4.0) * a * cc;
    let infeasible = disc < T::zero();
    let roots = if infeasible {
        let r = -b / (two * a);
        [r, r]
    } else {
        // cancellation-free pair
        let sq = disc.sqrt();
        let q = if b >= T::zero() { -(b + sq) / two } else { (sq - b) / two };
        if q == T::zero() {
            [T::zero(), T::zero()]
        } else {
            [q / a, cc / q]
        }
    };
    let candidate = |alpha: T| Vector3::new(cx + alpha * a_, cy + alpha * b_, c.d_z);
    let score = |d: &Vector3<T>| {
        let g = Vector2::new(k.fx * (d.x - x * d.z), k.fy * (d.y - y * d.z));
        let gn = g.norm();
        let yaw = if gn > T::zero() { g.dot(&d2) / gn } else { T::zero() };
        let dn = d.norm();
        yaw + if dn > T::zero() { d.dot(&c.d_prior) / dn } else { T::zero() }
    };
    let d0 = candidate(roots[0]);
    let d1 = candidate(roots[1]);
    let chosen = if score(&d1) > score(&d0) { 1 } else { 0 };
    let d = if chosen == 0 { d0 } else { d1 };
    if !(d.norm() > T::zero()) {
        return Err(PoseError::DegenerateYaw);
    }
    Ok(AxisSolution { d: Unit::new_normalize(d), coeffs: (a, b, cc), roots, chosen, infeasible })
}

/// Per-frame status bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct PoseFlags(pub u32);

impl PoseFlags {
    pub const INFEASIBLE: PoseFlags = PoseFlags(1);
    pub const PRIOR_FALLBACK: PoseFlags = PoseFlags(1 << 1);
    pub const HELD: PoseFlags = PoseFlags(1 << 2);
    pub const TIP_DEPTH_FALLBACK: PoseFlags = PoseFlags(1 << 3);
    pub const TRUNCATED: PoseFlags = PoseFlags(1 << 4);
    pub const NEAR_ISOTROPIC: PoseFlags = PoseFlags(1 << 5);
    pub const LOW_CONFIDENCE_DEPTH: PoseFlags = PoseFlags(1 << 6);
    pub const SIGN_FLIP: PoseFlags = PoseFlags(1 << 7);

    const NAMES: [(&'static str, PoseFlags); 8] = [
        ("infeasible", Self::INFEASIBLE),
        ("prior_fallback", Self::PRIOR_FALLBACK),
        ("held", Self::HELD),
        ("tip_depth_fallback", Self::TIP_DEPTH_FALLBACK),
        ("truncated", Self::TRUNCATED),
        ("near_isotropic", Self::NEAR_ISOTROPIC),
        ("low_confidence_depth", Self::LOW_CONFIDENCE_DEPTH),
        ("sign_flip", Self::SIGN_FLIP),
    ];

    pub fn contains(self, other: PoseFlags) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn insert(&mut self, other: PoseFlags) {
        self.0 |= other.0;
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }
}

impl std::fmt::Display for PoseFlags {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_empty() {
            return f.write_str("none");
        }
        let names: Vec<&str> = Self::NAMES.iter().filter(|(_, b)| self.contains(*b)).map(|(n, _)| *n).collect();
        f.write_str(&names.join("|"))
    }
}

impl std::str::FromStr for PoseFlags {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = PoseFlags::default();
        if s == "none" || s.is_empty() {
            return Ok(out);
        }
        for part in s.split('|') {
            let (_, bit) = Self::NAMES.iter().find(|(n, _)| *n == part).ok_or_else(|| format!("unknown flag '{part}'"))?;
            out.insert(*bit);
        }
        Ok(out)
    }
}

/// Which path produced a pose.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Init,
    Tilt,
    NoTilt,
    Held,
    DepthOnly,
}

impl Gate {
    pub fn as_str(self) -> &'static str {
        match self {
            Gate::Init => "init",
            Gate::Tilt => "tilt",
            Gate::NoTilt => "no_tilt",
            Gate::Held => "held",
            Gate::DepthOnly => "depth_only",
        }
    }
}

impl std::str::FromStr for Gate {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "init" => Gate::Init,
            "tilt" => Gate::Tilt,
            "no_tilt" => Gate::NoTilt,
            "held" => Gate::Held,
            "depth_only" => Gate::DepthOnly,
            _ => return Err(format!("unknown gate '{s}'")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseEstimate {
    pub t_c_mesh: RigidTransform<f64>,
    pub d_c: Unit<Vector3<f64>>,
    pub tip: Point3<f64>,
    /// Mask length in pixels for this frame.
    pub length_px: f64,
    pub frame_index: usize,
    pub gate: Gate,
    pub flags: PoseFlags,
}

impl PoseEstimate {
    fn new(tool: &ToolMesh<f64>, d: Unit<Vector3<f64>>, tip: Point3<f64>, length_px: f64, frame: usize, gate: Gate) -> Self {
        Self {
            t_c_mesh: align_mesh(tool, &d, &tip),
            d_c: d,
            tip,
            length_px,
            frame_index: frame,
            gate,
            flags: PoseFlags::default(),
        }
    }
}

/// Observed 2D geometry of the tool for one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskObservation {
    /// Skeleton oriented tip toward base (direction from boundary-cropped PCA).
    pub skeleton: MaskSkeleton,
    /// Full (uncropped) mask length, pixels.
    pub length_px: f64,
    pub tip_px: Pixel<f64>,
}

/// Initialization settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitConfig {
    /// Number of render–ratio–solve passes; the first renders under the prior.
    pub passes: usize,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self { passes: 1 }
    }
}

/// Pixel length of the mesh silhouette under a provisional axis.
pub fn rendered_length(
    tool: &ToolMesh<f64>,
    d: &Unit<Vector3<f64>>,
    tip: &Point3<f64>,
    k: &CameraIntrinsics<f64>,
    fov: Option<&BinaryMask>,
) -> Option<f64> {
    let sil = render_silhouette(&tool.mesh, &align_mesh(tool, d, tip), k, fov);
    mask_pca(&sil, None).ok().map(|s| s.length_px)
}

fn sign_of(v: f64) -> f64 {
    if v < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// First-frame pose from the depth prior and the mask geometry.
///
/// `ρ = clip(|prior_xy| · ℓ_mask / ℓ_mesh, 0, 1)` with `ℓ_mesh` measured on the
/// mesh rendered under the prior. Falls back to the prior axis when the mask
/// direction is unreliable or the constraints are infeasible.
pub fn init_pose(
    tool: &ToolMesh<f64>,
    prior: &Unit<Vector3<f64>>,
    obs: &MaskObservation,
    tip: &Point3<f64>,
    k: &CameraIntrinsics<f64>,
    fov: Option<&BinaryMask>,
    cfg: &InitConfig,
    dz_sign: f64,
    frame: usize,
) -> Result<PoseEstimate, PoseError> {
    if !(tip.z > 0.0) {
        return Err(PoseError::NonPositiveDepth);
    }
    let fallback = |flag: PoseFlags| {
        let mut p = PoseEstimate::new(tool, *prior, *tip, obs.length_px, frame, Gate::Init);
        p.flags.insert(PoseFlags::PRIOR_FALLBACK);
        p.flags.insert(flag);
        p
    };
    if obs.skeleton.near_isotropic {
        return Ok(fallback(PoseFlags::NEAR_ISOTROPIC));
    }
    let mut current = *prior;
    let mut result = None;
    for _ in 0..cfg.passes.max(1) {
        let Some(l_mesh) = rendered_length(tool, &current, tip, k, fov).filter(|l| *l > 0.0) else {
            break;
        };
        let r = obs.length_px / l_mesh;
        let rho = current.xy().norm() * r;
        let c = AxisConstraints::<f64>::new(obs.skeleton.direction, prior.into_inner(), rho, *tip, dz_sign);
        let sol = solve_axis(&c, k)?;
        if sol.infeasible {
            return Ok(fallback(PoseFlags::INFEASIBLE));
        }
        current = sol.d;
        result = Some(sol);
    }
    match result {
        Some(sol) => Ok(PoseEstimate::new(tool, sol.d, *tip, obs.length_px, frame, Gate::Init)),
        None => Ok(fallback(PoseFlags::default())),
    }
}

fn proposal(
    tool: &ToolMesh<f64>,
    prev: &PoseEstimate,
    obs: &MaskObservation,
    tip: &Point3<f64>,
    k: &CameraIntrinsics<f64>,
    rho: f64,
    frame: usize,
    gate: Gate,
) -> Result<PoseEstimate, PoseError> {
    let c = AxisConstraints::<f64>::new(obs.skeleton.direction, prev.d_c.into_inner(), rho, *tip, sign_of(prev.d_c.z));
    let sol = solve_axis(&c, k)?;
    let mut p = PoseEstimate::new(tool, sol.d, *tip, obs.length_px, frame, gate);
    if sol.infeasible {
        p.flags.insert(PoseFlags::INFEASIBLE);
    }
    Ok(p)
}

/// Tilt-adjusted proposal: `ρ_t = clip(|d_prev,xy| · ℓ_t / ℓ_{t-1}, 0, 1)`,
/// out-of-plane sign kept from the previous axis.
pub fn tilt_update(
    tool: &ToolMesh<f64>,
    prev: &PoseEstimate,
    obs: &MaskObservation,
    tip: &Point3<f64>,
    k: &CameraIntrinsics<f64>,
    frame: usize,
) -> Result<PoseEstimate, PoseError> {
    if !(prev.length_px > 0.0) {
        return Err(PoseError::ZeroPrevLength);
    }
    let r = obs.length_px / prev.length_px;
    proposal(tool, prev, obs, tip, k, prev.d_c.xy().norm() * r, frame, Gate::Tilt)
}

/// No-tilt proposal: keeps the previous `|d_xy|` and `d_z`, re-solves the in-plane direction.
pub fn no_tilt_update(
    tool: &ToolMesh<f64>,
    prev: &PoseEstimate,
    obs: &MaskObservation,
    tip: &Point3<f64>,
    k: &CameraIntrinsics<f64>,
    frame: usize,
) -> Result<PoseEstimate, PoseError> {
    proposal(tool, prev, obs, tip, k, prev.d_c.xy().norm(), frame, Gate::NoTilt)
}

/// Outcome of the silhouette gate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateDecision {
    pub chosen: PoseEstimate,
    pub tilt: PoseEstimate,
    pub no_tilt: PoseEstimate,
    pub f1_tilt: f64,
    pub f1_no_tilt: f64,
}

/// F1 differences below this are ties and go to the no-tilt proposal.
pub const GATE_TIE: f64 = 1e-6;

/// Renders both proposals and keeps the one whose silhouette best matches `observed`.
pub fn select_proposal(
    tilt: &PoseEstimate,
    no_tilt: &PoseEstimate,
    observed: &BinaryMask,
    tool: &ToolMesh<f64>,
    k: &CameraIntrinsics<f64>,
    fov: Option<&BinaryMask>,
) -> GateDecision {
    let f1_tilt = f1_score(&render_silhouette(&tool.mesh, &tilt.t_c_mesh, k, fov), observed);
    let f1_no_tilt = f1_score(&render_silhouette(&tool.mesh, &no_tilt.t_c_mesh, k, fov), observed);
    let chosen = if f1_tilt > f1_no_tilt + GATE_TIE { *tilt } else { *no_tilt };
    GateDecision { chosen, tilt: *tilt, no_tilt: *no_tilt, f1_tilt, f1_no_tilt }
}

/// Everything the tracker consumes for one frame.
#[derive(Debug, Clone)]
pub struct FrameInputs {
    pub index: usize,
    pub tool_mask: BinaryMask,
    pub anatomy_mask: BinaryMask,
    /// Relative depth from the monocular depth model.
    pub relative_depth: DepthMap,
    /// Registered anatomy depth, millimeters.
    pub anatomy_depth: DepthMap,
    /// Pixels that are actually observed; `None` means the whole image.
    pub fov: Option<BinaryMask>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Union,
    AffineFit,
    Backproject,
    AxisPrior,
    MaskGeometry,
    TipDepth,
    Solve,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Stage::Union => "foreground-union",
            Stage::AffineFit => "affine-fit",
            Stage::Backproject => "backproject",
            Stage::AxisPrior => "axis-prior",
            Stage::MaskGeometry => "mask-geometry",
            Stage::TipDepth => "tip-depth",
            Stage::Solve => "solve",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("frame {frame}, stage {stage}: {message}")]
pub struct TrackError {
    pub frame: usize,
    pub stage: Stage,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerConfig {
    /// Point-cloud decimation stride.
    pub stride: u32,
    pub crop: CropConfig,
    pub init: InitConfig,
    pub anchor_extrema: AnchorExtrema,
    /// Consecutive disagreeing priors needed before the out-of-plane sign flips.
    pub sign_flip_frames: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            stride: 2,
            crop: CropConfig::default(),
            init: InitConfig::default(),
            anchor_extrema: AnchorExtrema::MinMax,
            sign_flip_frames: 5,
        }
    }
}

/// Per-frame quantities shared by the hybrid tracker and the depth-only baseline.
#[derive(Debug, Clone)]
pub struct PreparedFrame {
    pub metric_depth: DepthMap,
    pub prior: AxisPrior,
    pub obs: MaskObservation,
    /// Tip back-projected with the registered anatomy depth (metric depth if unavailable).
    pub tip_registered: Point3<f64>,
    /// Tip back-projected with the scaled monocular depth, if valid there.
    pub tip_metric: Option<Point3<f64>>,
    pub flags: PoseFlags,
}

/// Runs the shared front half of the pipeline: foreground union, affine depth
/// scaling anchored on the anatomy, tool point cloud and 3D prior, mask
/// skeleton and tip, tip back-projection.
pub fn prepare_frame(
    inputs: &FrameInputs,
    k: &CameraIntrinsics<f64>,
    cfg: &TrackerConfig,
    tip_track: &mut TipTrack,
    prev_dir: Option<&Vector2<f64>>,
) -> Result<PreparedFrame, TrackError> {
    let err = |stage: Stage, e: &dyn std::fmt::Display| TrackError { frame: inputs.index, stage, message: e.to_string() };
    let mut flags = PoseFlags::default();

    // anchor: anatomy pixels not covered by the tool
    let mut anchor = inputs.anatomy_mask.clone();
    anchor.subtract(&inputs.tool_mask).map_err(|e| err(Stage::Union, &e))?;
    let params = fit_affine_scale(&inputs.relative_depth, &inputs.anatomy_depth, &anchor, cfg.anchor_extrema)
        .map_err(|e| err(Stage::AffineFit, &e))?;
    if params.low_confidence {
        flags.insert(PoseFlags::LOW_CONFIDENCE_DEPTH);
    }
    let (metric_depth, _) = apply_affine(&inputs.relative_depth, &params);

    let plain = mask_pca(&inputs.tool_mask, prev_dir).map_err(|e| err(Stage::MaskGeometry, &e))?;
    let tip_px = select_tip(&plain, tip_track, k.width, k.height);
    let skeleton =
        boundary_crop_pca(&inputs.tool_mask, &tip_px, prev_dir, &cfg.crop).map_err(|e| err(Stage::MaskGeometry, &e))?;
    if skeleton.truncated {
        flags.insert(PoseFlags::TRUNCATED);
    }
    if skeleton.near_isotropic {
        flags.insert(PoseFlags::NEAR_ISOTROPIC);
    }
    let obs = MaskObservation { skeleton, length_px: plain.length_px, tip_px };

    let cloud = backproject_mask(&metric_depth, &inputs.tool_mask, k, cfg.stride).map_err(|e| err(Stage::Backproject, &e))?;
    let prior =
        axis_prior_3d(&cloud, Some((&skeleton.direction, k))).map_err(|e| err(Stage::AxisPrior, &e))?;

    let tip_metric = metric_depth.sample_nearest(&tip_px).and_then(|z| k.back_project(&tip_px, z).ok());
    let tip_registered = match inputs.anatomy_depth.sample_nearest(&tip_px) {
        Some(z) => k.back_project(&tip_px, z).map_err(|e| err(Stage::TipDepth, &e))?,
        None => {
            flags.insert(PoseFlags::TIP_DEPTH_FALLBACK);
            tip_metric.ok_or_else(|| err(Stage::TipDepth, &"no valid depth at the tip pixel"))?
        }
    };
    Ok(PreparedFrame { metric_depth, prior, obs, tip_registered, tip_metric, flags })
}

/// Hybrid tracker state for one video stream.
#[derive(Debug, Clone)]
pub struct Tracker {
    pub tool: ToolMesh<f64>,
    pub k: CameraIntrinsics<f64>,
    pub cfg: TrackerConfig,
    prev: Option<PoseEstimate>,
    tip_track: TipTrack,
    prev_dir: Option<Vector2<f64>>,
    dz_sign: f64,
    disagree: usize,
    last_gate: Option<GateDecision>,
}

impl Tracker {
    pub fn new(tool: ToolMesh<f64>, k: CameraIntrinsics<f64>, cfg: TrackerConfig) -> Self {
        Self {
            tool,
            k,
            cfg,
            prev: None,
            tip_track: TipTrack::default(),
            prev_dir: None,
            dz_sign: 1.0,
            disagree: 0,
            last_gate: None,
        }
    }

    pub fn previous(&self) -> Option<&PoseEstimate> {
        self.prev.as_ref()
    }

    /// F1 scores of the most recent gated frame.
    pub fn last_gate(&self) -> Option<&GateDecision> {
        self.last_gate.as_ref()
    }

    /// Processes one frame. On a failing frame the previous pose is returned
    /// with the `HELD` flag; the error is only surfaced before any pose exists.
    pub fn track_frame(&mut self, inputs: &FrameInputs) -> Result<PoseEstimate, TrackError> {
        self.last_gate = None;
        match self.step(inputs) {
            Ok(p) => {
                self.prev_dir = Some(p.1);
                self.prev = Some(p.0);
                Ok(p.0)
            }
            Err(e) => match self.prev {
                Some(prev) => {
                    let mut held = prev;
                    held.frame_index = inputs.index;
                    held.gate = Gate::Held;
                    held.flags = PoseFlags::HELD;
                    Ok(held)
                }
                None => Err(e),
            },
        }
    }

    fn step(&mut self, inputs: &FrameInputs) -> Result<(PoseEstimate, Vector2<f64>), TrackError> {
        let fr = inputs.index;
        let solve_err = |e: PoseError| TrackError { frame: fr, stage: Stage::Solve, message: e.to_string() };
        let prep = prepare_frame(inputs, &self.k, &self.cfg, &mut self.tip_track, self.prev_dir.as_ref())?;
        let fov = inputs.fov.as_ref();
        let prior_sign = sign_of(prep.prior.axis.z);
        let mut pose = match self.prev {
            None => {
                self.dz_sign = prior_sign;
                self.disagree = 0;
                init_pose(&self.tool, &prep.prior.axis, &prep.obs, &prep.tip_registered, &self.k, fov, &self.cfg.init, self.dz_sign, fr)
                    .map_err(solve_err)?
            }
            Some(prev) => {
                let mut prev = prev;
                let mut flipped = false;
                if prior_sign != sign_of(prev.d_c.z) {
                    self.disagree += 1;
                    if self.disagree >= self.cfg.sign_flip_frames {
                        // mirror the previous axis through the image plane so proposals start on the other side
                        let d = prev.d_c.into_inner();
                        prev.d_c = Unit::new_normalize(Vector3::new(d.x, d.y, -d.z));
                        self.disagree = 0;
                        flipped = true;
                    }
                } else {
                    self.disagree = 0;
                }
                let tilt = tilt_update(&self.tool, &prev, &prep.obs, &prep.tip_registered, &self.k, fr).map_err(solve_err)?;
                let no_tilt =
                    no_tilt_update(&self.tool, &prev, &prep.obs, &prep.tip_registered, &self.k, fr).map_err(solve_err)?;
                let decision = select_proposal(&tilt, &no_tilt, &inputs.tool_mask, &self.tool, &self.k, fov);
                self.last_gate = Some(decision);
                let mut chosen = decision.chosen;
                if flipped {
                    chosen.flags.insert(PoseFlags::SIGN_FLIP);
                }
                chosen
            }
        };
        pose.flags.insert(prep.flags);
        Ok((pose, prep.obs.skeleton.direction))
    }
}

/// Depth-only pose: tip from the scaled monocular depth, axis from the 3D PCA prior.
pub fn depth_only_pose(tool: &ToolMesh<f64>, prep: &PreparedFrame, frame: usize) -> Option<PoseEstimate> {
    let tip = prep.tip_metric?;
    Some(PoseEstimate::new(tool, prep.prior.axis, tip, prep.obs.length_px, frame, Gate::DepthOnly))
}

#[derive(Debug, Error)]
pub enum PoseCsvError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("io: {0}")]
    Io(String),
}

/// One row of a pose trajectory file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseRecord {
    pub frame: usize,
    pub t_c_mesh: RigidTransform<f64>,
    pub d_c: Vector3<f64>,
    pub length_px: f64,
    pub gate: Gate,
    pub flags: PoseFlags,
}

impl From<&PoseEstimate> for PoseRecord {
    fn from(p: &PoseEstimate) -> Self {
        Self {
            frame: p.frame_index,
            t_c_mesh: p.t_c_mesh,
            d_c: p.d_c.into_inner(),
            length_px: p.length_px,
            gate: p.gate,
            flags: p.flags,
        }
    }
}

pub const POSE_CSV_HEADER: [&str; 19] = [
    "frame", "tx", "ty", "tz", "r00", "r01", "r02", "r10", "r11", "r12", "r20", "r21", "r22", "dx", "dy", "dz",
    "length_px", "gate", "flags",
];

/// Serializes poses as `frame,tx,ty,tz,r00..r22,dx,dy,dz,length_px,gate,flags`.
pub fn poses_to_csv(records: &[PoseRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let _ = w.write_record(POSE_CSV_HEADER);
    for r in records {
        let m = r.t_c_mesh.to_row_major12();
        let mut row = vec![r.frame.to_string()];
        row.extend(m[9..].iter().chain(&m[..9]).map(|v| v.to_string()));
        row.extend([r.d_c.x, r.d_c.y, r.d_c.z, r.length_px].iter().map(|v| v.to_string()));
        row.push(r.gate.as_str().to_string());
        row.push(r.flags.to_string());
        let _ = w.write_record(&row);
    }
    String::from_utf8(w.into_inner().unwrap_or_default()).unwrap_or_default()
}

pub fn parse_poses(text: &str) -> Result<Vec<PoseRecord>, PoseCsvError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let err = |msg: String| PoseCsvError::Parse { line, msg };
        let rec = rec.map_err(|e| err(e.to_string()))?;
        if rec.len() != 19 {
            return Err(err(format!("expected 19 fields, found {}", rec.len())));
        }
        let num = |j: usize| rec[j].parse::<f64>().map_err(|e| err(format!("field {}: {e}", POSE_CSV_HEADER[j])));
        let frame = rec[0].parse::<usize>().map_err(|e| err(format!("frame: {e}")))?;
        let (tx, ty, tz) = (num(1)?, num(2)?, num(3)?);
        let mut r = [0.0; 9];
        for (j, v) in r.iter_mut().enumerate() {
            *v = num(4 + j)?;
        }
        let m = [r[0], r[1], r[2], r[3], r[4], r[5], r[6], r[7], r[8], tx, ty, tz];
        out.push(PoseRecord {
            frame,
            t_c_mesh: RigidTransform::from_row_major12(&m),
            d_c: Vector3::new(num(13)?, num(14)?, num(15)?),
            length_px: num(16)?,
            gate: rec[17].parse().map_err(err)?,
            flags: rec[18].parse().map_err(err)?,
        });
    }
    Ok(out)
}

pub fn save_poses(path: &std::path::Path, records: &[PoseRecord]) -> Result<(), PoseCsvError> {
    std::fs::write(path, poses_to_csv(records)).map_err(|e| PoseCsvError::Io(format!("{}: {e}", path.display())))
}

pub fn load_poses(path: &std::path::Path) -> Result<Vec<PoseRecord>, PoseCsvError> {
    let text = std::fs::read_to_string(path).map_err(|e| PoseCsvError::Io(format!("{}: {e}", path.display())))?;
    parse_poses(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k() -> CameraIntrinsics<f64> {
        CameraIntrinsics::new(1000.0, 1000.0, 320.0, 240.0, 640, 480).unwrap()
    }

    #[test]
    fn centered_tip_forces_axis_along_mask_direction() {
        let c = AxisConstraints::<f64>::new(Vector2::new(1.0, 0.0), Vector3::new(0.6, 0.0, 0.8), 0.6, Point3::new(0.0, 0.0, 100.0), 1.0);
        assert!((c.d_z - 0.8).abs() < 1e-12);
        let s = solve_axis(&c, &k()).unwrap();
        assert!((s.d.into_inner() - Vector3::new(0.6, 0.0, 0.8)).norm() < 1e-12);
        assert!(!s.infeasible);
        // b = 0 at the principal point so the roots are ±ρ/√a
        assert!(s.coeffs.1.abs() < 1e-18);
        assert!((s.roots[0] + s.roots[1]).abs() < 1e-9 * s.roots[0].abs());
    }

    #[test]
    fn fully_in_plane_axis() {
        let c = AxisConstraints::<f64>::new(Vector2::new(0.0, 1.0), Vector3::new(0.0, 1.0, 0.0), 1.0, Point3::new(0.0, 0.0, 100.0), 1.0);
        let s = solve_axis(&c, &k()).unwrap();
        assert!((s.d.into_inner() - Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn root_choice_follows_mask_direction() {
        let c = AxisConstraints::<f64>::new(Vector2::new(-1.0, 0.0), Vector3::new(0.6, 0.0, 0.8), 0.6, Point3::new(0.0, 0.0, 100.0), 1.0);
        let s = solve_axis(&c, &k()).unwrap();
        assert!(s.d.x < 0.0);
    }

    #[test]
    fn off_center_constraints_hold() {
        let tip = Point3::new(12.0, -7.0, 95.0);
        let c = AxisConstraints::<f64>::new(Vector2::new(0.3, 0.8), Vector3::new(0.2, 0.5, -0.8), 0.55, tip, -1.0);
        let s = solve_axis(&c, &k()).unwrap();
        let d = s.d.into_inner();
        assert!((d.xy().norm() - 0.55).abs() < 1e-12);
        let g = k().projection_jacobian(&tip).unwrap() * d;
        let d2 = Vector2::new(0.3, 0.8).normalize();
        assert!((g.normalize().perp(&d2)).abs() < 1e-12);
        assert!(g.dot(&d2) > 0.0);
    }

    #[test]
    fn negative_discriminant_is_clamped_and_flagged() {
        // ρ = 0 with an off-axis tip cannot be met exactly
        let c = AxisConstraints::<f64>::new(Vector2::new(1.0, 0.0), Vector3::new(0.0, 0.0, 1.0), 0.0, Point3::new(0.0, 30.0, 100.0), 1.0);
        let s = solve_axis(&c, &k()).unwrap();
        assert!(s.infeasible);
        assert_eq!(s.roots[0], s.roots[1]);
        assert!((s.d.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        let c = AxisConstraints::<f64>::new(Vector2::zeros(), Vector3::z(), 0.5, Point3::new(0.0, 0.0, 100.0), 1.0);
        assert_eq!(solve_axis(&c, &k()), Err(PoseError::DegenerateYaw));
        let c = AxisConstraints::<f64>::new(Vector2::x(), Vector3::z(), 0.5, Point3::new(0.0, 0.0, -1.0), 1.0);
        assert_eq!(solve_axis(&c, &k()), Err(PoseError::NonPositiveDepth));
    }

    #[test]
    fn flags_text_round_trip() {
        let mut f = PoseFlags::default();
        assert_eq!(f.to_string(), "none");
        f.insert(PoseFlags::HELD);
        f.insert(PoseFlags::TRUNCATED);
        assert_eq!(f.to_string(), "held|truncated");
        assert_eq!(f.to_string().parse::<PoseFlags>().unwrap(), f);
        assert!("bogus".parse::<PoseFlags>().is_err());
        assert_eq!("no_tilt".parse::<Gate>().unwrap(), Gate::NoTilt);
    }

    #[test]
    fn pose_csv_round_trip() {
        let tool = ToolMesh::new(crate::mesh::pointed_shaft_mesh(1.5, 4.0, 40.0, 12), &-Vector3::z()).unwrap();
        let mut p = PoseEstimate::new(
            &tool,
            Unit::new_normalize(Vector3::new(0.3, -0.5, 0.7)),
            Point3::new(4.0, -2.0, 110.0),
            321.5,
            7,
            Gate::NoTilt,
        );
        p.flags.insert(PoseFlags::TRUNCATED);
        let text = poses_to_csv(&[PoseRecord::from(&p)]);
        assert!(text.starts_with("frame,tx,ty,tz,r00"));
        let back = parse_poses(&text).unwrap();
        assert_eq!(back.len(), 1);
        let r = back[0];
        assert_eq!((r.frame, r.gate, r.flags), (7, Gate::NoTilt, p.flags));
        assert!((r.t_c_mesh.translation - p.t_c_mesh.translation).norm() < 1e-12);
        assert!((r.t_c_mesh.rotation.matrix() - p.t_c_mesh.rotation.matrix()).norm() < 1e-12);
        assert!(parse_poses("frame\n1,2\n").is_err());
    }

    #[test]
    fn works_in_single_precision() {
        let k32 = CameraIntrinsics::<f32>::new(1000.0, 1000.0, 320.0, 240.0, 640, 480).unwrap();
        let c = AxisConstraints::<f32>::new(Vector2::new(1.0, 0.0), Vector3::new(0.6, 0.0, 0.8), 0.6, Point3::new(0.0, 0.0, 100.0), 1.0);
        let s = solve_axis(&c, &k32).unwrap();
        assert!((s.d.into_inner() - Vector3::new(0.6, 0.0, 0.8)).norm() < 1e-5);
    }
}
