//! Ground-truth tool motion built from approach, contact, tilt, hold and
//! withdraw phases. Every phase starts and ends at rest, so the sequence is
//! C¹ across phase boundaries.

use std::f64::consts::PI;

use nalgebra::{Point3, Rotation3, Unit, Vector3};
use toolnav_core::mesh::{align_mesh, RigidTransform, ToolMesh};

use crate::config::{fmt_vec3, ConfigError, KeyValues};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Approach,
    Contact,
    Tilt,
    Hold,
    Withdraw,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Approach => "approach",
            Phase::Contact => "contact",
            Phase::Tilt => "tilt",
            Phase::Hold => "hold",
            Phase::Withdraw => "withdraw",
        }
    }
}

/// Angle profile of the tilt phase. `Linear` tilts at a constant rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Ramp {
    #[default]
    Smooth,
    Linear,
}

impl Ramp {
    pub fn as_str(self) -> &'static str {
        match self {
            Ramp::Smooth => "smooth",
            Ramp::Linear => "linear",
        }
    }
}

impl std::str::FromStr for Ramp {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "smooth" => Ok(Ramp::Smooth),
            "linear" => Ok(Ramp::Linear),
            other => Err(format!("unknown ramp '{other}' (smooth or linear)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySpec {
    /// Start of the approach relative to the contact point, camera frame, mm.
    pub approach_offset: Vector3<f64>,
    pub approach_frames: usize,
    /// Peak sliding displacement during contact, camera frame, mm.
    pub contact_stroke: Vector3<f64>,
    pub contact_cycles: f64,
    pub contact_frames: usize,
    /// Elevation change about the tip; positive raises the base toward the camera.
    pub tilt_deg: f64,
    pub tilt_frames: usize,
    pub tilt_ramp: Ramp,
    pub hold_frames: usize,
    pub withdraw_offset: Vector3<f64>,
    pub withdraw_frames: usize,
    /// Tip speed limit, mm per frame. Zero freezes the tool.
    pub speed: f64,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            approach_offset: Vector3::new(-6.0, 3.0, 0.0),
            approach_frames: 40,
            contact_stroke: Vector3::new(3.0, 1.5, 0.0),
            contact_cycles: 2.0,
            contact_frames: 80,
            tilt_deg: 15.0,
            tilt_frames: 60,
            tilt_ramp: Ramp::Smooth,
            hold_frames: 60,
            withdraw_offset: Vector3::new(6.0, -3.0, 0.0),
            withdraw_frames: 60,
            speed: 1.0,
        }
    }
}

pub const TRAJECTORY_KEYS: &[&str] = &[
    "approach_offset",
    "approach_frames",
    "contact_stroke",
    "contact_cycles",
    "contact_frames",
    "tilt_deg",
    "tilt_frames",
    "tilt_ramp",
    "hold_frames",
    "withdraw_offset",
    "withdraw_frames",
    "speed",
];

impl TrajectorySpec {
    pub fn from_kv(kv: &KeyValues) -> Result<Self, ConfigError> {
        let d = Self::default();
        let s = Self {
            approach_offset: kv.get_vec3_or("approach_offset", d.approach_offset)?,
            approach_frames: kv.get_or("approach_frames", d.approach_frames)?,
            contact_stroke: kv.get_vec3_or("contact_stroke", d.contact_stroke)?,
            contact_cycles: kv.get_or("contact_cycles", d.contact_cycles)?,
            contact_frames: kv.get_or("contact_frames", d.contact_frames)?,
            tilt_deg: kv.get_or("tilt_deg", d.tilt_deg)?,
            tilt_frames: kv.get_or("tilt_frames", d.tilt_frames)?,
            tilt_ramp: kv.get_or("tilt_ramp", d.tilt_ramp)?,
            hold_frames: kv.get_or("hold_frames", d.hold_frames)?,
            withdraw_offset: kv.get_vec3_or("withdraw_offset", d.withdraw_offset)?,
            withdraw_frames: kv.get_or("withdraw_frames", d.withdraw_frames)?,
            speed: kv.get_or("speed", d.speed)?,
        };
        if !(s.speed >= 0.0) {
            return Err(kv.invalid("speed", "must be non-negative".into()));
        }
        if !(s.contact_cycles >= 0.0) {
            return Err(kv.invalid("contact_cycles", "must be non-negative".into()));
        }
        Ok(s)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.insert("approach_offset", fmt_vec3(&self.approach_offset));
        kv.insert("approach_frames", self.approach_frames);
        kv.insert("contact_stroke", fmt_vec3(&self.contact_stroke));
        kv.insert("contact_cycles", self.contact_cycles);
        kv.insert("contact_frames", self.contact_frames);
        kv.insert("tilt_deg", self.tilt_deg);
        kv.insert("tilt_frames", self.tilt_frames);
        kv.insert("tilt_ramp", self.tilt_ramp.as_str());
        kv.insert("hold_frames", self.hold_frames);
        kv.insert("withdraw_offset", fmt_vec3(&self.withdraw_offset));
        kv.insert("withdraw_frames", self.withdraw_frames);
        kv.insert("speed", self.speed);
        kv
    }

    /// Tool at rest for `frames` frames.
    pub fn stationary(frames: usize) -> Self {
        Self {
            approach_offset: Vector3::zeros(),
            approach_frames: 0,
            contact_stroke: Vector3::zeros(),
            contact_cycles: 0.0,
            contact_frames: 0,
            tilt_deg: 0.0,
            tilt_frames: 0,
            tilt_ramp: Ramp::Smooth,
            hold_frames: frames,
            withdraw_offset: Vector3::zeros(),
            withdraw_frames: 0,
            speed: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruePose {
    pub tip: Point3<f64>,
    pub axis: Unit<Vector3<f64>>,
    pub t_c_mesh: RigidTransform<f64>,
    pub phase: Phase,
}

fn smoothstep(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

/// Frames needed so the smoothstep peak speed `1.5·dist/T` stays within `speed`.
fn frames_for(requested: usize, dist: f64, peak_factor: f64, speed: f64) -> usize {
    if requested == 0 || speed <= 0.0 {
        return requested;
    }
    requested.max((peak_factor * dist / speed).ceil() as usize)
}

/// Axis after raising the base by `angle` radians about the tip.
pub fn tilted_axis(axis: &Unit<Vector3<f64>>, angle: f64) -> Unit<Vector3<f64>> {
    let w = Vector3::z().cross(axis);
    match Unit::try_new(w, 1e-12) {
        Some(w) => Unit::new_normalize(Rotation3::from_axis_angle(&w, angle) * axis.into_inner()),
        None => *axis,
    }
}

/// Per-frame ground truth. `contact_tip` and `axis` give the pose at the end
/// of the approach; phases with zero frames are skipped. A phase whose speed
/// would exceed the limit is stretched.
pub fn generate_trajectory(
    spec: &TrajectorySpec,
    tool: &ToolMesh<f64>,
    contact_tip: &Point3<f64>,
    axis: &Unit<Vector3<f64>>,
) -> Vec<TruePose> {
    let mut out = Vec::new();
    let frozen = spec.speed <= 0.0;
    let mut push = |tip: Point3<f64>, d: Unit<Vector3<f64>>, phase: Phase| {
        out.push(TruePose { tip, axis: d, t_c_mesh: align_mesh(tool, &d, &tip), phase });
    };
    let start = if frozen { *contact_tip } else { contact_tip + spec.approach_offset };
    let mut tip = start;
    let mut d = *axis;

    // later phases sample s = (i + 1) / n so consecutive phases never repeat a pose;
    // the approach starts exactly at its start point, which costs one interval
    let n = match spec.approach_frames {
        0 => 0,
        req => frames_for(req - 1, spec.approach_offset.norm(), 1.5, spec.speed) + 1,
    };
    for i in 0..n {
        let s = if n == 1 { 1.0 } else { i as f64 / (n - 1) as f64 };
        let p = if frozen { start } else { start + (contact_tip - start) * smoothstep(s) };
        push(p, d, Phase::Approach);
    }
    if n > 0 && !frozen {
        tip = *contact_tip;
    }

    let stroke = if frozen { Vector3::zeros() } else { spec.contact_stroke };
    let n = frames_for(spec.contact_frames, stroke.norm(), PI * spec.contact_cycles, spec.speed);
    let base = tip;
    for i in 0..n {
        let s = (i + 1) as f64 / n as f64;
        let p = base + stroke * (PI * spec.contact_cycles * s).sin().powi(2);
        push(p, d, Phase::Contact);
        tip = p;
    }

    let n = spec.tilt_frames;
    let d0 = d;
    let tilt = if frozen { 0.0 } else { spec.tilt_deg.to_radians() };
    for i in 0..n {
        let s = (i + 1) as f64 / n as f64;
        if tilt != 0.0 {
            let f = match spec.tilt_ramp {
                Ramp::Smooth => smoothstep(s),
                Ramp::Linear => s,
            };
            d = tilted_axis(&d0, tilt * f);
        }
        push(tip, d, Phase::Tilt);
    }

    for _ in 0..spec.hold_frames {
        push(tip, d, Phase::Hold);
    }

    let off = if frozen { Vector3::zeros() } else { spec.withdraw_offset };
    let n = frames_for(spec.withdraw_frames, off.norm(), 1.5, spec.speed);
    let from = tip;
    for i in 0..n {
        let s = (i + 1) as f64 / n as f64;
        push(from + off * smoothstep(s), d, Phase::Withdraw);
    }
    out
}
