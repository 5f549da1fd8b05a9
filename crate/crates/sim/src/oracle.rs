//! Stand-ins for the promptable segmenter and the video mask propagator,
//! driven by ground-truth labels.

use std::sync::Arc;

use toolnav_core::mask::{BinaryMask, TrajectoryPrompt};
use toolnav_core::stream::{MaskPropagator, PropagatorError};

/// Returns the whole ground-truth object under each positive prompt point,
/// minus objects under negative points, limited to the prompt box.
#[derive(Debug, Clone)]
pub struct OracleSegmenter {
    labels: Vec<u16>,
    width: u32,
    height: u32,
}

impl OracleSegmenter {
    pub fn new(labels: Vec<u16>, width: u32, height: u32) -> Self {
        assert_eq!(labels.len(), width as usize * height as usize);
        Self { labels, width, height }
    }

    fn label_at(&self, x: f64, y: f64) -> Option<u16> {
        let (xi, yi) = (x.round(), y.round());
        if xi < 0.0 || yi < 0.0 || xi >= self.width as f64 || yi >= self.height as f64 {
            return None;
        }
        let l = self.labels[yi as usize * self.width as usize + xi as usize];
        (l != 0).then_some(l)
    }

    pub fn segment(&self, prompt: &TrajectoryPrompt) -> BinaryMask {
        let mut keep: Vec<u16> = prompt.positive_points.iter().filter_map(|p| self.label_at(p.x, p.y)).collect();
        let drop: Vec<u16> = prompt.negative_points.iter().filter_map(|p| self.label_at(p.x, p.y)).collect();
        keep.retain(|l| !drop.contains(l));
        let (x0, x1, y0, y1) = prompt.bbox;
        BinaryMask::from_fn(self.width, self.height, |x, y| {
            let (fx, fy) = (x as f64, y as f64);
            fx >= x0.floor()
                && fx <= x1.ceil()
                && fy >= y0.floor()
                && fy <= y1.ceil()
                && keep.contains(&self.labels[(y * self.width + x) as usize])
        })
    }
}

/// Per-frame ground-truth masks shared by the propagators.
pub type TruthMasks = Arc<Vec<BinaryMask>>;

/// Exact propagator: returns the ground-truth mask of every requested frame.
#[derive(Debug, Clone)]
pub struct OraclePropagator {
    truth: TruthMasks,
    seeded: bool,
}

impl OraclePropagator {
    pub fn new(truth: TruthMasks) -> Self {
        Self { truth, seeded: false }
    }
}

impl<F> MaskPropagator<F> for OraclePropagator {
    fn seed(&mut self, _index: usize, _frame: &F, _mask: &BinaryMask) -> Result<(), PropagatorError> {
        self.seeded = true;
        Ok(())
    }

    fn propagate(&mut self, index: usize, _frame: &F) -> Result<BinaryMask, PropagatorError> {
        if !self.seeded {
            return Err(PropagatorError::NotSeeded);
        }
        self.truth.get(index).cloned().ok_or_else(|| PropagatorError::Failed(format!("no frame {index}")))
    }
}

/// Scripted imperfect propagator. Each hop moves the remembered mask by the
/// true object motion, but by at most `reach` pixels, then drops `decay` of
/// its pixels. Large gaps therefore leave the mask behind the object.
#[derive(Debug, Clone)]
pub struct DecayPropagator {
    truth: TruthMasks,
    pub reach: f64,
    pub decay: f64,
    state: Option<(usize, BinaryMask)>,
    hops: usize,
}

impl DecayPropagator {
    pub fn new(truth: TruthMasks, reach: f64, decay: f64) -> Self {
        Self { truth, reach, decay, state: None, hops: 0 }
    }
}

fn centroid(m: &BinaryMask) -> Option<(f64, f64)> {
    let n = m.count();
    if n == 0 {
        return None;
    }
    let (sx, sy) = m.foreground().fold((0.0, 0.0), |(a, b), (x, y)| (a + x as f64, b + y as f64));
    Some((sx / n as f64, sy / n as f64))
}

/// Integer translation; pixels leaving the image are lost.
pub fn shift_mask(m: &BinaryMask, dx: i64, dy: i64) -> BinaryMask {
    BinaryMask::from_fn(m.width(), m.height(), |x, y| m.get_signed(x as i64 - dx, y as i64 - dy))
}

impl<F> MaskPropagator<F> for DecayPropagator {
    fn seed(&mut self, index: usize, _frame: &F, mask: &BinaryMask) -> Result<(), PropagatorError> {
        self.state = Some((index, mask.clone()));
        self.hops = 0;
        Ok(())
    }

    fn propagate(&mut self, index: usize, _frame: &F) -> Result<BinaryMask, PropagatorError> {
        let (from, mask) = self.state.take().ok_or(PropagatorError::NotSeeded)?;
        let missing = || PropagatorError::Failed(format!("no truth for frame {index}"));
        let a = self.truth.get(from).and_then(centroid).ok_or_else(missing)?;
        let b = self.truth.get(index).and_then(centroid).ok_or_else(missing)?;
        let (mut dx, mut dy) = (b.0 - a.0, b.1 - a.1);
        let len = dx.hypot(dy);
        if len > self.reach {
            dx *= self.reach / len;
            dy *= self.reach / len;
        }
        let mut next = shift_mask(&mask, dx.round() as i64, dy.round() as i64);
        // thin uniformly along the scan order so the loss is spread over the mask
        let stride = if self.decay > 0.0 { (1.0 / self.decay).round().max(1.0) as usize } else { 0 };
        if stride > 0 {
            let pts: Vec<(u32, u32)> = next.foreground().collect();
            for (i, (x, y)) in pts.into_iter().enumerate() {
                if (i + self.hops) % stride == 0 {
                    next.set(x, y, false);
                }
            }
        }
        self.hops += 1;
        self.state = Some((index, next.clone()));
        Ok(next)
    }
}
