//! End-to-end synthetic trial: registration from noisy clicks, frame
//! rendering, hybrid and depth-only tracking, and evaluation.

use std::time::Instant;

use nalgebra::{Point2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use toolnav_core::depth::DepthMap;
use toolnav_core::pose::{Gate, PoseEstimate, Tracker, TrackerConfig};
use toolnav_core::registration::{render_anatomy_depth, solve_pnp, Correspondence, RegistrationResult};

use crate::baseline::DepthOnlyTracker;
use crate::frame::{frame_seed, render_frame, SimFrame};
use crate::metrics::{compute_metrics, EvalMetrics, PoseSample};
use crate::noise::NoiseModel;
use crate::scene::{Scene, SceneSpec};
use crate::trajectory::{generate_trajectory, Phase, TrajectorySpec, TruePose};
use crate::SimError;

#[derive(Debug, Clone, PartialEq)]
pub struct TrialSpec {
    pub scene: SceneSpec,
    pub trajectory: TrajectorySpec,
    pub noise: NoiseModel,
    pub seed: u64,
    pub tracker: TrackerConfig,
    pub run_baseline: bool,
}

impl Default for TrialSpec {
    fn default() -> Self {
        Self {
            scene: SceneSpec::default(),
            trajectory: TrajectorySpec::default(),
            noise: NoiseModel::none(),
            seed: 0,
            tracker: TrackerConfig::default(),
            run_baseline: true,
        }
    }
}

/// A gated frame with both proposals scored against the true axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateRecord {
    pub frame: usize,
    pub phase: Phase,
    pub truncated: bool,
    pub chosen: Gate,
    pub tilt_error_deg: f64,
    pub no_tilt_error_deg: f64,
    pub f1_tilt: f64,
    pub f1_no_tilt: f64,
}

/// Proposals whose axis errors differ by less than this are equally good.
pub const GATE_EQUIVALENCE_DEG: f64 = 0.01;

impl GateRecord {
    /// The chosen proposal is at least as close to the true axis as the rejected one.
    pub fn correct(&self) -> bool {
        let (chosen, other) = match self.chosen {
            Gate::Tilt => (self.tilt_error_deg, self.no_tilt_error_deg),
            _ => (self.no_tilt_error_deg, self.tilt_error_deg),
        };
        chosen <= other + GATE_EQUIVALENCE_DEG
    }
}

#[derive(Debug, Clone)]
pub struct TrialResult {
    pub scene: Scene,
    pub truth: Vec<TruePose>,
    /// Reference stream (ground truth seen through the optical-tracker model).
    pub reference: Vec<PoseSample>,
    pub excluded: Vec<bool>,
    pub registration: RegistrationResult<f64>,
    pub hybrid: Vec<PoseEstimate>,
    pub baseline: Option<Vec<PoseEstimate>>,
    pub gates: Vec<GateRecord>,
    pub hybrid_metrics: EvalMetrics,
    pub baseline_metrics: Option<EvalMetrics>,
}

/// Landmark clicks: true projections plus Gaussian noise.
pub fn simulate_clicks(scene: &Scene, sigma: f64, seed: u64) -> Result<Vec<Correspondence<f64>>, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(frame_seed(seed, 0, 3));
    let normal = Normal::new(0.0, sigma.max(0.0)).map_err(|e| SimError::Config(e.to_string()))?;
    scene
        .registration_landmarks()
        .iter()
        .map(|(name, x)| {
            let u = scene
                .k
                .project(&scene.t_c_a.apply(x))
                .map_err(|e| SimError::Stage { stage: "registration", message: e.to_string() })?;
            let noisy = if sigma > 0.0 {
                Point2::new(u.x + normal.sample(&mut rng), u.y + normal.sample(&mut rng))
            } else {
                u
            };
            Ok(Correspondence::new(name.clone(), noisy, *x))
        })
        .collect()
}

/// Registers the anatomy from simulated clicks and renders the registered depth.
pub fn register_scene(scene: &Scene, noise: &NoiseModel, seed: u64) -> Result<(RegistrationResult<f64>, DepthMap), SimError> {
    let corrs = simulate_clicks(scene, noise.click_sigma, seed)?;
    let reg = solve_pnp(&corrs, &scene.k).map_err(|e| SimError::Stage { stage: "registration", message: e.to_string() })?;
    let depth = render_anatomy_depth(&scene.anatomy, &reg.t_c_a, &scene.k);
    Ok((reg, depth))
}

/// Ground truth seen by the reference tracker: lagged and jittered.
pub fn reference_stream(scene: &Scene, truth: &[TruePose], noise: &NoiseModel, seed: u64) -> Vec<PoseSample> {
    let normal = Normal::new(0.0, noise.tracker_jitter.max(0.0)).expect("finite sigma");
    (0..truth.len())
        .map(|i| {
            let src = &truth[i.saturating_sub(noise.tracker_lag)];
            let mut s = PoseSample::from_transform(&src.t_c_mesh, &scene.tool);
            if noise.tracker_jitter > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(frame_seed(seed, i, 4));
                s.tip += Vector3::from_fn(|_, _| normal.sample(&mut rng));
            }
            s
        })
        .collect()
}

pub fn samples(poses: &[PoseEstimate], scene: &Scene) -> Vec<PoseSample> {
    poses.iter().map(|p| PoseSample::from_transform(&p.t_c_mesh, &scene.tool)).collect()
}

/// Runs a full trial. `on_frame` sees every rendered frame (for writing to disk).
pub fn run_trial_with(spec: &TrialSpec, mut on_frame: impl FnMut(&SimFrame)) -> Result<TrialResult, SimError> {
    let scene = Scene::build(&spec.scene)?;
    let truth = generate_trajectory(&spec.trajectory, &scene.tool, &scene.contact_tip, &scene.initial_axis);
    if truth.len() < 2 {
        return Err(SimError::Config("trajectory needs at least two frames".into()));
    }
    let (registration, s_reg) = register_scene(&scene, &spec.noise, spec.seed)?;
    let mut hybrid = Tracker::new(scene.tool.clone(), scene.k, spec.tracker);
    let mut depth_only = spec.run_baseline.then(|| DepthOnlyTracker::new(scene.tool.clone(), scene.k, spec.tracker));
    let mut hybrid_poses = Vec::with_capacity(truth.len());
    let mut baseline_poses = Vec::with_capacity(truth.len());
    let mut gates = Vec::new();
    let (mut t_hybrid, mut t_base) = (0.0, 0.0);
    for (i, tp) in truth.iter().enumerate() {
        let frame = render_frame(&scene, tp, i, &spec.noise, spec.seed);
        on_frame(&frame);
        let inputs = frame.inputs(&s_reg);
        let t0 = Instant::now();
        let pose = hybrid.track_frame(&inputs).map_err(|e| SimError::Stage { stage: "track", message: e.to_string() })?;
        t_hybrid += t0.elapsed().as_secs_f64();
        if let Some(g) = hybrid.last_gate() {
            gates.push(GateRecord {
                frame: i,
                phase: tp.phase,
                truncated: frame.fov.is_some(),
                chosen: g.chosen.gate,
                tilt_error_deg: g.tilt.d_c.angle(&tp.axis).to_degrees(),
                no_tilt_error_deg: g.no_tilt.d_c.angle(&tp.axis).to_degrees(),
                f1_tilt: g.f1_tilt,
                f1_no_tilt: g.f1_no_tilt,
            });
        }
        hybrid_poses.push(pose);
        if let Some(b) = depth_only.as_mut() {
            let t0 = Instant::now();
            let pose = b.track_frame(&inputs).map_err(|e| SimError::Stage { stage: "depth-only", message: e.to_string() })?;
            t_base += t0.elapsed().as_secs_f64();
            baseline_poses.push(pose);
        }
    }
    let reference = reference_stream(&scene, &truth, &spec.noise, spec.seed);
    let excluded: Vec<bool> = (0..truth.len()).map(|i| spec.noise.is_dropout(i)).collect();
    let metrics_err = |e: crate::metrics::MetricsError| SimError::Stage { stage: "metrics", message: e.to_string() };
    let mut hybrid_metrics = compute_metrics(&samples(&hybrid_poses, &scene), &reference, &excluded).map_err(metrics_err)?;
    hybrid_metrics.fps = fps(truth.len(), t_hybrid);
    let baseline_metrics = if spec.run_baseline {
        let mut m = compute_metrics(&samples(&baseline_poses, &scene), &reference, &excluded).map_err(metrics_err)?;
        m.fps = fps(truth.len(), t_base);
        Some(m)
    } else {
        None
    };
    Ok(TrialResult {
        scene,
        truth,
        reference,
        excluded,
        registration,
        hybrid: hybrid_poses,
        baseline: spec.run_baseline.then_some(baseline_poses),
        gates,
        hybrid_metrics,
        baseline_metrics,
    })
}

pub fn run_trial(spec: &TrialSpec) -> Result<TrialResult, SimError> {
    run_trial_with(spec, |_| {})
}

fn fps(frames: usize, seconds: f64) -> f64 {
    if seconds > 0.0 {
        frames as f64 / seconds
    } else {
        0.0
    }
}
