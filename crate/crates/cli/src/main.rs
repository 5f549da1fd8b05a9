use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;
use toolnav_core::camera::CameraIntrinsics;
use toolnav_core::depth::DepthMap;
use toolnav_core::mesh::{RigidTransform, TriMesh};
use toolnav_core::overlay::{compose_overlay, RgbImage, StructureLayer};
use toolnav_core::pose::{load_poses, poses_to_csv, PoseEstimate, PoseRecord, Tracker, TrackerConfig};
use toolnav_core::registration::{load_landmarks, render_anatomy_depth, solve_pnp, RegistrationResult};
use toolnav_core::render::rasterize_depth;
use toolnav_sim::baseline::DepthOnlyTracker;
use toolnav_sim::config::{overlay_config, tracker_config, KeyValues, OVERLAY_KEYS, TRACKER_KEYS};
use toolnav_sim::io::{load_excluded, load_tool, load_trial, read_frame_inputs, read_mask_pair, save_text, trajectory_csv, write_trial, SimulationSpec, TrialLayout};
use toolnav_sim::metrics::{compute_metrics, metrics_to_csv, EvalMetrics, PoseSample};
use toolnav_sim::noise::NoiseModel;
use toolnav_sim::scene::SceneSpec;
use toolnav_sim::trajectory::{TrajectorySpec, TRAJECTORY_KEYS};
use toolnav_sim::SimError;

#[derive(Parser)]
#[command(name = "toolnav", version, about = "Hybrid 2D/3D surgical tool pose tracking on synthetic and recorded trials")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic trial (frames, masks, depth, ground truth) into a directory.
    Simulate(SimulateArgs),
    /// Track the tool through a trial directory and write pose and metrics CSVs.
    Track(TrackArgs),
    /// Register the anatomy from landmark clicks.
    Register(RegisterArgs),
    /// Composite hidden structures over the frames of a trial.
    Overlay(OverlayArgs),
    /// Compare an estimated pose CSV against a reference pose CSV.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Scene and trajectory keys (`key = value`), optionally `seed`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Noise profile (`none`, `calibrated`) or a noise config file.
    #[arg(long, default_value = "none")]
    noise: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Tool mesh (OBJ, tip toward -z) replacing the generated one.
    #[arg(long)]
    mesh: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Baseline {
    None,
    Depth,
}

#[derive(Args)]
struct TrackArgs {
    /// Trial directory written by `simulate` (or recorded in the same layout).
    #[arg(long)]
    input: PathBuf,
    /// Tracker keys: stride, crop_strip_fraction, crop_max_iterations, init_passes, anchor_extrema, sign_flip_frames.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Also run the depth-only baseline.
    #[arg(long, value_enum, default_value = "none")]
    baseline: Baseline,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RegisterArgs {
    /// CSV rows `name,u,v,X,Y,Z`.
    #[arg(long)]
    landmarks: PathBuf,
    #[arg(long)]
    intrinsics: PathBuf,
    /// Anatomy mesh; with `--out`, the registered depth map is written too.
    #[arg(long)]
    mesh: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OverlayArgs {
    #[arg(long)]
    input: PathBuf,
    /// `all`, `none`, or a comma-separated list of structure names.
    #[arg(long, default_value = "all")]
    show: String,
    /// Overlay keys: alpha0, tau, decay.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    estimate: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    /// Tool mesh; tip errors use its tip point instead of the mesh origin.
    #[arg(long)]
    mesh: Option<PathBuf>,
    /// Frame indices to leave out, one per line.
    #[arg(long)]
    excluded: Option<PathBuf>,
    /// Write the summary CSV here as well.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Compute(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Compute(_) => 1,
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(m) => CliError::Config(m),
            other => CliError::Compute(other.to_string()),
        }
    }
}

fn compute(stage: &str) -> impl Fn(String) -> CliError + '_ {
    move |m| CliError::Compute(format!("{stage}: {m}"))
}

fn require(path: &Path, what: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{what} not found: {}", path.display())))
    }
}

fn load_kv(path: &Path, known: &[&str]) -> Result<KeyValues, CliError> {
    require(path, "config file")?;
    let kv = KeyValues::load(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    kv.check_known(known).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(kv)
}

fn simulate(a: SimulateArgs) -> Result<(), CliError> {
    let known: Vec<&str> = SceneSpec::KEYS.iter().chain(TRAJECTORY_KEYS).chain(&["seed"]).copied().collect();
    let kv = match &a.config {
        Some(p) => load_kv(p, &known)?,
        None => KeyValues::default(),
    };
    let cfg_err = |e: toolnav_sim::config::ConfigError| CliError::Config(e.to_string());
    let scene = SceneSpec::from_kv(&kv).map_err(cfg_err)?;
    let trajectory = TrajectorySpec::from_kv(&kv).map_err(cfg_err)?;
    let noise = match a.noise.as_str() {
        "none" => NoiseModel::none(),
        "calibrated" => NoiseModel::calibrated(),
        path => NoiseModel::from_kv(&load_kv(Path::new(path), toolnav_sim::noise::NOISE_KEYS)?).map_err(cfg_err)?,
    };
    let seed = match a.seed {
        Some(s) => s,
        None => kv.get_or("seed", 0u64).map_err(cfg_err)?,
    };
    let tool = match &a.mesh {
        Some(p) => {
            require(p, "mesh")?;
            Some(load_tool(p).map_err(|e| CliError::Config(e.to_string()))?)
        }
        None => None,
    };
    let spec = SimulationSpec { scene, trajectory, noise, seed, tool };
    let summary = write_trial(&TrialLayout::new(&a.out), &spec)?;
    println!(
        "wrote {} frames to {} ({} truncated, {} excluded)",
        summary.frames,
        a.out.display(),
        summary.truncated_frames,
        summary.excluded_frames
    );
    Ok(())
}

fn register_from(landmarks: &Path, k: &CameraIntrinsics<f64>) -> Result<RegistrationResult<f64>, CliError> {
    require(landmarks, "landmarks")?;
    let corrs = load_landmarks(landmarks).map_err(|e| CliError::Config(e.to_string()))?;
    solve_pnp(&corrs, k).map_err(|e| CliError::Compute(format!("registration: {e}")))
}

fn run_tracker(
    layout: &TrialLayout,
    frames: usize,
    s_reg: &DepthMap,
    mut step: impl FnMut(&toolnav_core::pose::FrameInputs) -> Result<PoseEstimate, toolnav_core::pose::TrackError>,
) -> Result<(Vec<PoseEstimate>, f64), CliError> {
    let mut poses = Vec::with_capacity(frames);
    let mut seconds = 0.0;
    for i in 0..frames {
        let inputs = read_frame_inputs(layout, i, s_reg)?;
        let t0 = Instant::now();
        let pose = step(&inputs).map_err(|e| CliError::Compute(format!("track: {e}")))?;
        seconds += t0.elapsed().as_secs_f64();
        poses.push(pose);
    }
    let fps = if seconds > 0.0 { frames as f64 / seconds } else { 0.0 };
    Ok((poses, fps))
}

fn track(a: TrackArgs) -> Result<(), CliError> {
    let layout = TrialLayout::new(&a.input);
    for p in [layout.intrinsics(), layout.anatomy_obj(), layout.tool_obj(), layout.landmarks()] {
        require(&p, "trial file")?;
    }
    let cfg = match &a.config {
        Some(p) => tracker_config(&load_kv(p, TRACKER_KEYS)?).map_err(|e| CliError::Config(e.to_string()))?,
        None => TrackerConfig::default(),
    };
    let data = load_trial(&layout)?;
    if data.frames == 0 {
        return Err(CliError::Config(format!("no frames in {}", layout.frames_dir().display())));
    }
    let reg = register_from(&layout.landmarks(), &data.k)?;
    let s_reg = render_anatomy_depth(&data.anatomy, &reg.t_c_a, &data.k);

    let mut tracker = Tracker::new(data.tool.clone(), data.k, cfg);
    let (hybrid, fps) = run_tracker(&layout, data.frames, &s_reg, |f| tracker.track_frame(f))?;
    let out = TrialLayout::new(&a.out);
    let records = |p: &[PoseEstimate]| p.iter().map(PoseRecord::from).collect::<Vec<_>>();
    save_text(&out.root.join("poses_hybrid.csv"), &poses_to_csv(&records(&hybrid)))?;
    let mut runs: Vec<(&str, Vec<PoseEstimate>, f64)> = vec![("hybrid", hybrid, fps)];
    if a.baseline == Baseline::Depth {
        let mut base = DepthOnlyTracker::new(data.tool.clone(), data.k, cfg);
        let (poses, fps) = run_tracker(&layout, data.frames, &s_reg, |f| base.track_frame(f))?;
        save_text(&out.root.join("poses_depth_only.csv"), &poses_to_csv(&records(&poses)))?;
        runs.push(("depth_only", poses, fps));
    }
    for (name, _, fps) in &runs {
        println!("{name}: {} frames, {fps:.1} FPS (tracking only)", data.frames);
    }

    let reference_path = layout.reference();
    if !reference_path.exists() {
        println!("no reference.csv in the input; metrics skipped");
        return Ok(());
    }
    let reference = load_poses(&reference_path).map_err(|e| CliError::Config(format!("{}: {e}", reference_path.display())))?;
    let ref_samples: Vec<PoseSample> = reference.iter().map(|r| PoseSample::from_transform(&r.t_c_mesh, &data.tool)).collect();
    let excluded = exclusion_flags(&load_excluded(&layout.excluded())?, ref_samples.len());
    let mut rows: Vec<(&str, EvalMetrics, Vec<PoseSample>)> = Vec::new();
    for (name, poses, fps) in &runs {
        let samples: Vec<PoseSample> = poses.iter().map(|p| PoseSample::from_transform(&p.t_c_mesh, &data.tool)).collect();
        let mut m = compute_metrics(&samples, &ref_samples, &excluded).map_err(|e| compute("metrics")(e.to_string()))?;
        m.fps = *fps;
        print_metrics(name, &m);
        rows.push((name, m, samples));
    }
    let table: Vec<(&str, &str, &EvalMetrics)> = rows.iter().map(|(n, m, _)| (*n, "1", m)).collect();
    save_text(&out.root.join("metrics.csv"), &metrics_to_csv(&table))?;
    let methods: Vec<(&str, &[PoseSample])> = rows.iter().map(|(n, _, s)| (*n, s.as_slice())).collect();
    save_text(&out.root.join("trajectory.csv"), &trajectory_csv(&ref_samples, &methods))?;
    Ok(())
}

fn exclusion_flags(list: &[usize], n: usize) -> Vec<bool> {
    let mut flags = vec![false; n];
    for i in list.iter().filter(|i| **i < n) {
        flags[*i] = true;
    }
    flags
}

fn print_metrics(name: &str, m: &EvalMetrics) {
    println!(
        "{name}: |dx| {} |dy| {} |dz| {} dp {} mm; yaw {} pitch {} dphi {} deg",
        m.abs_dx, m.abs_dy, m.abs_dz, m.dp, m.yaw_prop, m.pitch_prop, m.dphi
    );
}

fn register(a: RegisterArgs) -> Result<(), CliError> {
    require(&a.intrinsics, "intrinsics")?;
    let k = CameraIntrinsics::load(&a.intrinsics).map_err(|e| CliError::Config(format!("{}: {e}", a.intrinsics.display())))?;
    let mesh = match &a.mesh {
        Some(p) => {
            require(p, "mesh")?;
            Some(TriMesh::load_obj(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?)
        }
        None => None,
    };
    let reg = register_from(&a.landmarks, &k)?;
    let m = reg.t_c_a.to_row_major12();
    let numbers: Vec<String> = m.iter().map(|v| format!("{v:.9}")).collect();
    let summary = format!("t_c_a = {}\nrmse_px = {:.6}\nrmse_mm = {:.6}\n", numbers.join(" "), reg.rmse_px, reg.rmse_mm);
    print!("{summary}");
    if let Some(out) = &a.out {
        save_text(&out.join("registration.txt"), &summary)?;
        if let Some(mesh) = &mesh {
            let depth = render_anatomy_depth(mesh, &reg.t_c_a, &k);
            depth.save_pfm(&out.join("anatomy_registered.mm.pfm")).map_err(|e| compute("registration")(e.to_string()))?;
        }
    }
    Ok(())
}

fn overlay(a: OverlayArgs) -> Result<(), CliError> {
    let layout = TrialLayout::new(&a.input);
    for p in [layout.intrinsics(), layout.anatomy_obj(), layout.tool_obj(), layout.landmarks()] {
        require(&p, "trial file")?;
    }
    let cfg = match &a.config {
        Some(p) => overlay_config(&load_kv(p, OVERLAY_KEYS)?).map_err(|e| CliError::Config(e.to_string()))?,
        None => Default::default(),
    };
    let data = load_trial(&layout)?;
    let names: Vec<&str> = data.structures.iter().map(|s| s.name.as_str()).collect();
    let selected: Vec<&str> = match a.show.as_str() {
        "all" => names.clone(),
        "none" => Vec::new(),
        list => {
            let picked: Vec<&str> = list.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
            if let Some(bad) = picked.iter().find(|p| !names.contains(p)) {
                return Err(CliError::Config(format!("unknown structure `{bad}` (available: {})", names.join(", "))));
            }
            picked
        }
    };
    let reg = register_from(&layout.landmarks(), &data.k)?;
    let z_bone = render_anatomy_depth(&data.anatomy, &reg.t_c_a, &data.k);
    let layers = structure_layers(&data.structures, &reg.t_c_a, &data.k);
    let out = TrialLayout::new(&a.out);
    std::fs::create_dir_all(&out.root).map_err(|e| CliError::Compute(format!("{}: {e}", out.root.display())))?;
    let mut written = 0;
    for i in 0..data.frames {
        let path = layout.image(i);
        let base = RgbImage::load_ppm(&path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut img = compose_overlay(&base, &layers, &selected, &z_bone, &cfg).map_err(|e| compute("overlay")(e.to_string()))?;
        // the instrument sits above the anatomy
        if layout.mask(i).exists() {
            let (_, tool) = read_mask_pair(&layout.mask(i))?;
            for (x, y) in tool.foreground() {
                img.set(x, y, base.get(x, y));
            }
        }
        img.save_ppm(&out.root.join(format!("overlay_{i:04}.ppm"))).map_err(|e| compute("overlay")(e.to_string()))?;
        written += 1;
    }
    println!("wrote {written} overlay frames ({}) to {}", if selected.is_empty() { "none".into() } else { selected.join(",") }, out.root.display());
    Ok(())
}

fn structure_layers(
    structures: &[toolnav_sim::scene::Structure],
    t_c_a: &RigidTransform<f64>,
    k: &CameraIntrinsics<f64>,
) -> Vec<StructureLayer> {
    structures
        .iter()
        .map(|s| StructureLayer { name: s.name.clone(), depth: rasterize_depth(&s.mesh, t_c_a, k), color: s.color })
        .collect()
}

fn evaluate(a: EvaluateArgs) -> Result<(), CliError> {
    require(&a.estimate, "estimate")?;
    require(&a.reference, "reference")?;
    let load = |p: &Path| load_poses(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())));
    let (est, reference) = (load(&a.estimate)?, load(&a.reference)?);
    let tool = match &a.mesh {
        Some(p) => {
            require(p, "mesh")?;
            Some(load_tool(p).map_err(|e| CliError::Config(e.to_string()))?)
        }
        None => None,
    };
    let samples = |recs: &[PoseRecord]| -> Vec<PoseSample> {
        recs.iter()
            .map(|r| match &tool {
                Some(t) => PoseSample::from_transform(&r.t_c_mesh, t),
                None => PoseSample { tip: r.t_c_mesh.translation.into(), rotation: r.t_c_mesh.rotation },
            })
            .collect()
    };
    let excluded = match &a.excluded {
        Some(p) => {
            require(p, "excluded list")?;
            load_excluded(p)?
        }
        None => Vec::new(),
    };
    let flags = exclusion_flags(&excluded, est.len());
    let m = compute_metrics(&samples(&est), &samples(&reference), &flags).map_err(|e| compute("metrics")(e.to_string()))?;
    print_metrics("estimate", &m);
    if let Some(out) = &a.out {
        save_text(out, &metrics_to_csv(&[("estimate", "1", &m)]))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Track(a) => track(a),
        Command::Register(a) => register(a),
        Command::Overlay(a) => overlay(a),
        Command::Evaluate(a) => evaluate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("toolnav: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
