//! On-disk trial layout shared by the simulator and the command line tools.
//!
//! ```text
//! intrinsics.txt  scene.cfg  trajectory.cfg  noise.cfg  trial.cfg
//! anatomy.obj  tool.obj  structures.csv  structures/<name>.obj
//! landmarks.csv  ground_truth.csv  reference.csv  excluded.txt
//! frames/mask_0000.pgm  frames/depth_0000.rel.pfm  frames/image_0000.ppm  [frames/fov_0000.pgm]
//! ```
//!
//! Mask PGMs carry both observed masks: value `85·(anatomy + 2·tool)`.
//! The tool mesh is stored in its local frame with the tip toward `-z`.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use toolnav_core::camera::CameraIntrinsics;
use toolnav_core::depth::{DepthMap, DepthScale};
use toolnav_core::mask::BinaryMask;
use toolnav_core::mesh::{RigidTransform, ToolMesh, TriMesh};
use toolnav_core::pose::{poses_to_csv, FrameInputs, Gate, PoseFlags, PoseRecord};
use toolnav_core::registration::landmarks_to_csv;

use crate::config::KeyValues;
use crate::frame::{render_frame, SimFrame};
use crate::metrics::PoseSample;
use crate::noise::NoiseModel;
use crate::scene::{Scene, SceneSpec, Structure};
use crate::trajectory::{generate_trajectory, TrajectorySpec, TruePose};
use crate::trial::{reference_stream, simulate_clicks};
use crate::SimError;

const MASK_STEP: u8 = 85;

#[derive(Debug, Clone)]
pub struct TrialLayout {
    pub root: PathBuf,
}

impl TrialLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn intrinsics(&self) -> PathBuf {
        self.root.join("intrinsics.txt")
    }
    pub fn scene_cfg(&self) -> PathBuf {
        self.root.join("scene.cfg")
    }
    pub fn trajectory_cfg(&self) -> PathBuf {
        self.root.join("trajectory.cfg")
    }
    pub fn noise_cfg(&self) -> PathBuf {
        self.root.join("noise.cfg")
    }
    pub fn trial_cfg(&self) -> PathBuf {
        self.root.join("trial.cfg")
    }
    pub fn anatomy_obj(&self) -> PathBuf {
        self.root.join("anatomy.obj")
    }
    pub fn tool_obj(&self) -> PathBuf {
        self.root.join("tool.obj")
    }
    pub fn structures_csv(&self) -> PathBuf {
        self.root.join("structures.csv")
    }
    pub fn structure_obj(&self, name: &str) -> PathBuf {
        self.root.join("structures").join(format!("{name}.obj"))
    }
    pub fn landmarks(&self) -> PathBuf {
        self.root.join("landmarks.csv")
    }
    pub fn ground_truth(&self) -> PathBuf {
        self.root.join("ground_truth.csv")
    }
    pub fn reference(&self) -> PathBuf {
        self.root.join("reference.csv")
    }
    pub fn excluded(&self) -> PathBuf {
        self.root.join("excluded.txt")
    }
    pub fn frames_dir(&self) -> PathBuf {
        self.root.join("frames")
    }
    pub fn mask(&self, i: usize) -> PathBuf {
        self.frames_dir().join(format!("mask_{i:04}.pgm"))
    }
    pub fn depth(&self, i: usize) -> PathBuf {
        self.frames_dir().join(format!("depth_{i:04}{}", DepthScale::Relative.suffix()))
    }
    pub fn fov(&self, i: usize) -> PathBuf {
        self.frames_dir().join(format!("fov_{i:04}.pgm"))
    }
    pub fn image(&self, i: usize) -> PathBuf {
        self.frames_dir().join(format!("image_{i:04}.ppm"))
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> SimError {
    SimError::Io(format!("{}: {e}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<(), SimError> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Writes both observed masks into one 8-bit PGM.
pub fn write_mask_pair(path: &Path, anatomy: &BinaryMask, tool: &BinaryMask) -> Result<(), SimError> {
    let (w, h) = (tool.width(), tool.height());
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(anatomy.bits().iter().zip(tool.bits()).map(|(a, t)| MASK_STEP * (u8::from(*a) + 2 * u8::from(*t))));
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Reads a mask pair written by [`write_mask_pair`]; returns `(anatomy, tool)`.
pub fn read_mask_pair(path: &Path) -> Result<(BinaryMask, BinaryMask), SimError> {
    let f = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = BufReader::new(f);
    let mut header = Vec::new();
    while header.len() < 4 {
        let mut line = String::new();
        if r.read_line(&mut line).map_err(|e| io_err(path, e))? == 0 {
            return Err(io_err(path, "truncated PGM header"));
        }
        let line = line.split('#').next().unwrap_or("");
        header.extend(line.split_whitespace().map(str::to_string));
    }
    let bad = |m: &str| io_err(path, m);
    if header[0] != "P5" {
        return Err(bad("not a binary PGM"));
    }
    let w: u32 = header[1].parse().map_err(|_| bad("bad width"))?;
    let h: u32 = header[2].parse().map_err(|_| bad("bad height"))?;
    let mut data = vec![0u8; w as usize * h as usize];
    r.read_exact(&mut data).map_err(|e| io_err(path, e))?;
    let level = |v: u8| ((u16::from(v) + u16::from(MASK_STEP / 2)) / u16::from(MASK_STEP)) as u8;
    let anatomy = BinaryMask::from_bits(w, h, data.iter().map(|v| level(*v) & 1 == 1).collect()).map_err(|e| io_err(path, e))?;
    let tool = BinaryMask::from_bits(w, h, data.iter().map(|v| level(*v) & 2 == 2).collect()).map_err(|e| io_err(path, e))?;
    Ok((anatomy, tool))
}

pub fn write_frame(layout: &TrialLayout, frame: &SimFrame) -> Result<(), SimError> {
    let i = frame.index;
    write_mask_pair(&layout.mask(i), &frame.anatomy_mask, &frame.tool_mask)?;
    frame.relative_depth.save_pfm(&layout.depth(i)).map_err(|e| SimError::Io(e.to_string()))?;
    frame.image.save_ppm(&layout.image(i)).map_err(|e| SimError::Io(e.to_string()))?;
    if let Some(fov) = &frame.fov {
        fov.save_pgm(&layout.fov(i)).map_err(|e| SimError::Io(e.to_string()))?;
    }
    Ok(())
}

/// Tracker inputs of frame `i`, with `anatomy_depth` as the registered anatomy depth.
pub fn read_frame_inputs(layout: &TrialLayout, i: usize, anatomy_depth: &DepthMap) -> Result<FrameInputs, SimError> {
    let (anatomy_mask, tool_mask) = read_mask_pair(&layout.mask(i))?;
    let relative_depth = DepthMap::load_pfm(&layout.depth(i)).map_err(|e| SimError::Io(e.to_string()))?;
    let fov_path = layout.fov(i);
    let fov = if fov_path.exists() {
        Some(BinaryMask::load_pgm(&fov_path).map_err(|e| SimError::Io(e.to_string()))?)
    } else {
        None
    };
    Ok(FrameInputs { index: i, tool_mask, anatomy_mask, relative_depth, anatomy_depth: anatomy_depth.clone(), fov })
}

/// Pose record of a reference sample; the mesh origin is placed so the tip lands on `sample.tip`.
pub fn sample_record(frame: usize, sample: &PoseSample, tool: &ToolMesh<f64>, length_px: f64) -> PoseRecord {
    let translation = sample.tip.coords - sample.rotation * tool.tip.coords;
    PoseRecord {
        frame,
        t_c_mesh: RigidTransform::new(sample.rotation, translation),
        d_c: sample.rotation * tool.axis_local.into_inner(),
        length_px,
        gate: Gate::Init,
        flags: PoseFlags::default(),
    }
}

fn projected_length(k: &CameraIntrinsics<f64>, tool: &ToolMesh<f64>, pose: &TruePose) -> f64 {
    let base = pose.tip + pose.axis.into_inner() * tool.length;
    match (k.project(&pose.tip), k.project(&base)) {
        (Ok(a), Ok(b)) => (b - a).norm(),
        _ => 0.0,
    }
}

/// Ground truth as pose records (gate column unused).
pub fn truth_records(scene: &Scene, truth: &[TruePose]) -> Vec<PoseRecord> {
    truth
        .iter()
        .enumerate()
        .map(|(i, p)| PoseRecord {
            frame: i,
            t_c_mesh: p.t_c_mesh,
            d_c: p.axis.into_inner(),
            length_px: projected_length(&scene.k, &scene.tool, p),
            gate: Gate::Init,
            flags: PoseFlags::default(),
        })
        .collect()
}

/// Everything needed to regenerate a trial.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSpec {
    pub scene: SceneSpec,
    pub trajectory: TrajectorySpec,
    pub noise: NoiseModel,
    pub seed: u64,
    /// Replaces the generated tool.
    pub tool: Option<ToolMesh<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSummary {
    pub frames: usize,
    pub truncated_frames: usize,
    pub excluded_frames: usize,
}

/// Renders a full trial into `layout`. Output bytes depend only on `spec`.
pub fn write_trial(layout: &TrialLayout, spec: &SimulationSpec) -> Result<SimulationSummary, SimError> {
    fs::create_dir_all(layout.frames_dir()).map_err(|e| io_err(&layout.frames_dir(), e))?;
    fs::create_dir_all(layout.root.join("structures")).map_err(|e| io_err(&layout.root, e))?;
    let mut scene = Scene::build(&spec.scene)?;
    if let Some(tool) = &spec.tool {
        scene.tool = tool.clone();
    }
    let truth = generate_trajectory(&spec.trajectory, &scene.tool, &scene.contact_tip, &scene.initial_axis);

    write_text(&layout.intrinsics(), &scene.k.to_text())?;
    write_text(&layout.scene_cfg(), &spec.scene.to_kv().to_text())?;
    write_text(&layout.trajectory_cfg(), &spec.trajectory.to_kv().to_text())?;
    write_text(&layout.noise_cfg(), &spec.noise.to_kv().to_text())?;
    let mut trial = KeyValues::default();
    trial.insert("seed", spec.seed);
    trial.insert("frames", truth.len());
    write_text(&layout.trial_cfg(), &trial.to_text())?;
    write_text(&layout.anatomy_obj(), &scene.anatomy.to_obj())?;
    write_text(&layout.tool_obj(), &scene.tool.mesh.to_obj())?;
    let mut colors = String::from("name,r,g,b\n");
    for s in &scene.structures {
        write_text(&layout.structure_obj(&s.name), &s.mesh.to_obj())?;
        colors.push_str(&format!("{},{},{},{}\n", s.name, s.color[0], s.color[1], s.color[2]));
    }
    write_text(&layout.structures_csv(), &colors)?;
    write_text(&layout.landmarks(), &landmarks_to_csv(&simulate_clicks(&scene, spec.noise.click_sigma, spec.seed)?))?;
    write_text(&layout.ground_truth(), &poses_to_csv(&truth_records(&scene, &truth)))?;
    let reference = reference_stream(&scene, &truth, &spec.noise, spec.seed);
    let ref_records: Vec<PoseRecord> = reference
        .iter()
        .zip(&truth)
        .enumerate()
        .map(|(i, (s, p))| sample_record(i, s, &scene.tool, projected_length(&scene.k, &scene.tool, p)))
        .collect();
    write_text(&layout.reference(), &poses_to_csv(&ref_records))?;
    let excluded: Vec<usize> = (0..truth.len()).filter(|i| spec.noise.is_dropout(*i)).collect();
    write_text(&layout.excluded(), &excluded.iter().map(|i| format!("{i}\n")).collect::<String>())?;

    let mut truncated = 0;
    for (i, pose) in truth.iter().enumerate() {
        let frame = render_frame(&scene, pose, i, &spec.noise, spec.seed);
        truncated += usize::from(frame.fov.is_some());
        write_frame(layout, &frame)?;
    }
    Ok(SimulationSummary { frames: truth.len(), truncated_frames: truncated, excluded_frames: excluded.len() })
}

/// Static parts of a trial directory.
#[derive(Debug, Clone)]
pub struct TrialData {
    pub k: CameraIntrinsics<f64>,
    pub anatomy: TriMesh<f64>,
    pub tool: ToolMesh<f64>,
    pub structures: Vec<Structure>,
    pub frames: usize,
}

pub fn load_tool(path: &Path) -> Result<ToolMesh<f64>, SimError> {
    let mesh = TriMesh::load_obj(path).map_err(|e| io_err(path, e))?;
    ToolMesh::new(mesh, &-Vector3::z()).map_err(|e| io_err(path, e))
}

pub fn load_structures(layout: &TrialLayout) -> Result<Vec<Structure>, SimError> {
    let path = layout.structures_csv();
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(&path).map_err(|e| io_err(&path, e))?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| io_err(&path, e))?;
        if rec.len() != 4 {
            return Err(io_err(&path, format!("expected 4 fields, got {}", rec.len())));
        }
        let c = |j: usize| rec[j].parse::<u8>().map_err(|e| io_err(&path, e));
        let name = rec[0].to_string();
        let obj = layout.structure_obj(&name);
        let mesh = TriMesh::load_obj(&obj).map_err(|e| io_err(&obj, e))?;
        out.push(Structure { color: [c(1)?, c(2)?, c(3)?], name, mesh });
    }
    Ok(out)
}

/// Counts consecutive mask files from frame 0.
pub fn count_frames(layout: &TrialLayout) -> usize {
    (0..).take_while(|i| layout.mask(*i).exists()).count()
}

pub fn load_trial(layout: &TrialLayout) -> Result<TrialData, SimError> {
    let path = layout.intrinsics();
    let k = CameraIntrinsics::load(&path).map_err(|e| io_err(&path, e))?;
    let path = layout.anatomy_obj();
    let anatomy = TriMesh::load_obj(&path).map_err(|e| io_err(&path, e))?;
    let tool = load_tool(&layout.tool_obj())?;
    let structures = load_structures(layout)?;
    Ok(TrialData { k, anatomy, tool, structures, frames: count_frames(layout) })
}

/// Frame indices listed one per line; a missing file means none.
pub fn load_excluded(path: &Path) -> Result<Vec<usize>, SimError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.parse::<usize>().map_err(|e| io_err(path, format!("`{l}`: {e}"))))
        .collect()
}

/// Tip trajectories of the reference and each method, one row per frame.
pub fn trajectory_csv(reference: &[PoseSample], methods: &[(&str, &[PoseSample])]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["frame".to_string(), "ref_x".into(), "ref_y".into(), "ref_z".into()];
    for (name, _) in methods {
        header.extend(["x", "y", "z"].iter().map(|c| format!("{name}_{c}")));
    }
    let _ = w.write_record(&header);
    for (i, r) in reference.iter().enumerate() {
        let mut row = vec![i.to_string(), r.tip.x.to_string(), r.tip.y.to_string(), r.tip.z.to_string()];
        for (_, s) in methods {
            match s.get(i) {
                Some(p) => row.extend([p.tip.x, p.tip.y, p.tip.z].iter().map(|v| v.to_string())),
                None => row.extend(std::iter::repeat_n(String::new(), 3)),
            }
        }
        let _ = w.write_record(&row);
    }
    String::from_utf8(w.into_inner().unwrap_or_default()).unwrap_or_default()
}

/// Writes `text` to `path`, creating parent directories.
pub fn save_text(path: &Path, text: &str) -> Result<(), SimError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| io_err(path, e))
}
