//! Tip translation error and inter-frame rotation propagation discrepancy
//! between an estimated and a reference pose stream.

use nalgebra::{Point3, Rotation3, Vector3};
use thiserror::Error;
use toolnav_core::mesh::{rotation_angle, RigidTransform, ToolMesh};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("streams have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

/// Tip position and tool rotation in the camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSample {
    pub tip: Point3<f64>,
    pub rotation: Rotation3<f64>,
}

impl PoseSample {
    pub fn from_transform(t: &RigidTransform<f64>, tool: &ToolMesh<f64>) -> Self {
        Self { tip: t.apply(&tool.tip), rotation: t.rotation }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Population statistics; zero for an empty slice.
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.3} ± {:.3}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalMetrics {
    pub abs_dx: MeanStd,
    pub abs_dy: MeanStd,
    pub abs_dz: MeanStd,
    pub dp: MeanStd,
    pub yaw_prop: MeanStd,
    pub pitch_prop: MeanStd,
    pub dphi: MeanStd,
    /// Tracking throughput, frames per second; zero when not measured.
    pub fps: f64,
    pub frames: usize,
    pub excluded: usize,
    pub steps: usize,
}

/// Yaw (about y) and pitch (about x) of a rotation decomposed as
/// `Rz(roll)·Ry(yaw)·Rx(pitch)`, roll discarded. Radians.
pub fn yaw_pitch(r: &Rotation3<f64>) -> (f64, f64) {
    let m = r.matrix();
    let yaw = (-m[(2, 0)]).clamp(-1.0, 1.0).asin();
    let pitch = m[(2, 1)].atan2(m[(2, 2)]);
    (yaw, pitch)
}

/// Geodesic angle of the yaw–pitch part `Ry(yaw)·Rx(pitch)`, radians.
pub fn yaw_pitch_geodesic(yaw: f64, pitch: f64) -> f64 {
    let r = Rotation3::from_axis_angle(&Vector3::y_axis(), yaw) * Rotation3::from_axis_angle(&Vector3::x_axis(), pitch);
    rotation_angle(&r)
}

/// Per-axis absolute tip errors over frames not excluded, and yaw/pitch
/// propagation discrepancies over steps whose both ends are not excluded.
/// Increments are `ΔR_i = R_{i-1}ᵀ R_i`, discrepancy `(ΔR^ref)ᵀ ΔR^est`.
pub fn compute_metrics(
    estimated: &[PoseSample],
    reference: &[PoseSample],
    excluded: &[bool],
) -> Result<EvalMetrics, MetricsError> {
    if estimated.len() != reference.len() {
        return Err(MetricsError::LengthMismatch(estimated.len(), reference.len()));
    }
    if excluded.len() != estimated.len() {
        return Err(MetricsError::LengthMismatch(estimated.len(), excluded.len()));
    }
    let n = estimated.len();
    let (mut ax, mut ay, mut az, mut ap) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for i in (0..n).filter(|i| !excluded[*i]) {
        let d = estimated[i].tip - reference[i].tip;
        ax.push(d.x.abs());
        ay.push(d.y.abs());
        az.push(d.z.abs());
        ap.push(d.norm());
    }
    let (mut yaw, mut pitch, mut phi) = (Vec::new(), Vec::new(), Vec::new());
    for i in 1..n {
        if excluded[i] || excluded[i - 1] {
            continue;
        }
        let inc_e = estimated[i - 1].rotation.inverse() * estimated[i].rotation;
        let inc_r = reference[i - 1].rotation.inverse() * reference[i].rotation;
        let diff = inc_r.inverse() * inc_e;
        let (y, p) = yaw_pitch(&diff);
        yaw.push(y.abs().to_degrees());
        pitch.push(p.abs().to_degrees());
        phi.push(yaw_pitch_geodesic(y, p).to_degrees());
    }
    Ok(EvalMetrics {
        abs_dx: MeanStd::of(&ax),
        abs_dy: MeanStd::of(&ay),
        abs_dz: MeanStd::of(&az),
        dp: MeanStd::of(&ap),
        yaw_prop: MeanStd::of(&yaw),
        pitch_prop: MeanStd::of(&pitch),
        dphi: MeanStd::of(&phi),
        fps: 0.0,
        frames: n,
        excluded: excluded.iter().filter(|e| **e).count(),
        steps: yaw.len(),
    })
}

pub const METRICS_CSV_HEADER: [&str; 20] = [
    "method", "trial", "fps", "dx_mean", "dx_std", "dy_mean", "dy_std", "dz_mean", "dz_std", "dp_mean", "dp_std",
    "yaw_prop_mean", "yaw_prop_std", "pitch_prop_mean", "pitch_prop_std", "dphi_mean", "dphi_std", "frames",
    "excluded", "steps",
];

/// Summary rows, one per method and trial.
pub fn metrics_to_csv(rows: &[(&str, &str, &EvalMetrics)]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let _ = w.write_record(METRICS_CSV_HEADER);
    for (method, trial, m) in rows {
        let mut rec = vec![method.to_string(), trial.to_string(), format!("{:.3}", m.fps)];
        for s in [m.abs_dx, m.abs_dy, m.abs_dz, m.dp, m.yaw_prop, m.pitch_prop, m.dphi] {
            rec.push(format!("{:.6}", s.mean));
            rec.push(format!("{:.6}", s.std));
        }
        rec.extend([m.frames.to_string(), m.excluded.to_string(), m.steps.to_string()]);
        let _ = w.write_record(&rec);
    }
    String::from_utf8(w.into_inner().unwrap_or_default()).unwrap_or_default()
}
