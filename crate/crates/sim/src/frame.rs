//! Per-frame rendering of ground truth and the perturbed observations fed to the trackers.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use toolnav_core::depth::{DepthMap, DepthScale, DEPTH_SENTINEL};
use toolnav_core::mask::BinaryMask;
use toolnav_core::overlay::RgbImage;
use toolnav_core::pose::FrameInputs;
use toolnav_core::render::rasterize_into;

use crate::noise::NoiseModel;
use crate::scene::{Scene, LABEL_TOOL};
use crate::trajectory::TruePose;

/// Deterministic per-frame stream seed.
pub fn frame_seed(seed: u64, frame: usize, stream: u64) -> u64 {
    // splitmix64 finalizer over the combined inputs
    let mut z = seed ^ (frame as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct SimFrame {
    pub index: usize,
    /// Metric depth of the visible surfaces, millimeters.
    pub true_depth: DepthMap,
    /// Visible object ids (0 background, then anatomy and tool labels).
    pub labels: Vec<u16>,
    pub true_tool: BinaryMask,
    pub true_anatomy: BinaryMask,
    pub tool_mask: BinaryMask,
    pub anatomy_mask: BinaryMask,
    pub relative_depth: DepthMap,
    pub fov: Option<BinaryMask>,
    pub image: RgbImage,
}

impl SimFrame {
    /// Tracker inputs with `anatomy_depth` as the registered anatomy depth.
    pub fn inputs(&self, anatomy_depth: &DepthMap) -> FrameInputs {
        FrameInputs {
            index: self.index,
            tool_mask: self.tool_mask.clone(),
            anatomy_mask: self.anatomy_mask.clone(),
            relative_depth: self.relative_depth.clone(),
            anatomy_depth: anatomy_depth.clone(),
            fov: self.fov.clone(),
        }
    }
}

fn morph(mask: &BinaryMask, offset: i32) -> BinaryMask {
    match offset {
        0 => mask.clone(),
        r if r > 0 => mask.dilate(r as u32),
        r => mask.erode(r.unsigned_abs()),
    }
}

/// Visible field for a truncation hiding `crop` of the projected tool length
/// on the side its base points toward.
pub fn truncation_fov(scene: &Scene, pose: &TruePose, crop: f64) -> BinaryMask {
    let k = &scene.k;
    let base = pose.tip + pose.axis.into_inner() * scene.tool.length;
    let (Ok(t), Ok(b)) = (k.project(&pose.tip), k.project(&base)) else {
        return BinaryMask::from_fn(k.width, k.height, |_, _| true);
    };
    let d = b - t;
    let along_x = d.x.abs() >= d.y.abs();
    let cut = if along_x { t.x + (1.0 - crop) * d.x } else { t.y + (1.0 - crop) * d.y };
    let positive = if along_x { d.x > 0.0 } else { d.y > 0.0 };
    BinaryMask::from_fn(k.width, k.height, |x, y| {
        let c = if along_x { x as f64 } else { y as f64 };
        if positive {
            c < cut
        } else {
            c > cut
        }
    })
}

/// Renders frame `index` of the trial. Deterministic in `(scene, pose, noise, seed, index)`.
pub fn render_frame(scene: &Scene, pose: &TruePose, index: usize, noise: &NoiseModel, seed: u64) -> SimFrame {
    let k = &scene.k;
    let (w, h) = (k.width, k.height);
    let mut depth = scene.anatomy_depth.clone();
    let mut labels = scene.anatomy_labels.clone();
    rasterize_into(&mut depth, Some((&mut labels, LABEL_TOOL)), &scene.tool.mesh, &pose.t_c_mesh, k);

    let fov = noise.truncation_at(index).map(|c| truncation_fov(scene, pose, c));
    let in_fov = |i: usize| fov.as_ref().is_none_or(|f| f.bits()[i]);
    let true_tool = BinaryMask::from_bits(w, h, labels.iter().map(|l| *l == LABEL_TOOL).collect()).expect("sized");
    let true_anatomy =
        BinaryMask::from_bits(w, h, labels.iter().map(|l| *l == crate::scene::LABEL_ANATOMY).collect()).expect("sized");

    let mut rng = ChaCha8Rng::seed_from_u64(frame_seed(seed, index, 1));
    let j = noise.mask_jitter as i32;
    let mut jitter = || if j > 0 { rng.random_range(-j..=j) } else { 0 };
    let (jt, ja) = (jitter(), jitter());
    let mut tool_mask = morph(&true_tool, noise.mask_offset + jt);
    let mut anatomy_mask = morph(&true_anatomy, noise.mask_offset + ja);
    if let Some(f) = &fov {
        let _ = tool_mask.intersect_with(f);
        let _ = anatomy_mask.intersect_with(f);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(frame_seed(seed, index, 2));
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let theta = rng.random_range(0.0..std::f64::consts::TAU);
    let freq = std::f64::consts::TAU * noise.warp_cycles / w as f64;
    let (cs, sn) = (theta.cos() * freq, theta.sin() * freq);
    let normal = Normal::new(0.0, noise.depth_sigma.max(0.0)).expect("finite sigma");
    let mut rel = vec![DEPTH_SENTINEL; depth.values().len()];
    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) as usize;
            let z = depth.values()[i];
            if z == DEPTH_SENTINEL || !in_fov(i) {
                continue;
            }
            let mut r = noise.depth_a * z + noise.depth_b;
            if noise.warp_amplitude > 0.0 {
                r += noise.warp_amplitude * (cs * x as f64 + sn * y as f64 + phase).sin();
            }
            if noise.depth_sigma > 0.0 {
                r += normal.sample(&mut rng);
            }
            // a zero would read back as the invalid sentinel
            rel[i] = if r == DEPTH_SENTINEL { f64::MIN_POSITIVE } else { r };
        }
    }
    let relative_depth = DepthMap::from_values(w, h, rel, DepthScale::Relative).expect("sized");
    let image = shade(&depth, &labels, fov.as_ref());
    SimFrame { index, true_depth: depth, labels, true_tool, true_anatomy, tool_mask, anatomy_mask, relative_depth, fov, image }
}

/// Flat depth-cued shading; enough for overlay previews.
fn shade(depth: &DepthMap, labels: &[u16], fov: Option<&BinaryMask>) -> RgbImage {
    let mut img = RgbImage::new(depth.width(), depth.height(), [18, 14, 12]);
    for (i, (z, l)) in depth.values().iter().zip(labels).enumerate() {
        if fov.is_some_and(|f| !f.bits()[i]) {
            img.data[3 * i..3 * i + 3].copy_from_slice(&[0, 0, 0]);
            continue;
        }
        if *z == DEPTH_SENTINEL {
            continue;
        }
        let light = (1.6 - z / 150.0).clamp(0.3, 1.0);
        let base = if *l == LABEL_TOOL { Vector3::new(170.0, 175.0, 185.0) } else { Vector3::new(235.0, 215.0, 185.0) };
        let c = base * light;
        img.data[3 * i..3 * i + 3].copy_from_slice(&[c.x as u8, c.y as u8, c.z as u8]);
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::SceneSpec;
    use crate::trajectory::{generate_trajectory, TrajectorySpec};
    use toolnav_core::depth::{apply_affine, fit_affine_scale, AnchorExtrema};

    fn setup() -> (Scene, Vec<TruePose>) {
        let scene = Scene::build(&SceneSpec::default()).unwrap();
        let tr = generate_trajectory(&TrajectorySpec::stationary(3), &scene.tool, &scene.contact_tip, &scene.initial_axis);
        (scene, tr)
    }

    #[test]
    fn noise_free_masks_are_exact() {
        let (scene, tr) = setup();
        let f = render_frame(&scene, &tr[0], 0, &NoiseModel::none(), 7);
        assert_eq!(f.tool_mask, f.true_tool);
        assert_eq!(f.anatomy_mask, f.true_anatomy);
        assert!(f.true_tool.count() > 3000);
        assert!(f.fov.is_none());
    }

    #[test]
    fn dilation_matches_brute_force_disk() {
        let (scene, tr) = setup();
        let noise = NoiseModel { mask_offset: 2, ..NoiseModel::none() };
        let f = render_frame(&scene, &tr[0], 0, &noise, 7);
        let t = &f.true_tool;
        let expect = (0..t.height())
            .flat_map(|y| (0..t.width()).map(move |x| (x as i64, y as i64)))
            .filter(|(x, y)| {
                (-2i64..=2).any(|dy| (-2i64..=2).any(|dx| dx * dx + dy * dy <= 4 && t.get_signed(x + dx, y + dy)))
            })
            .count();
        assert_eq!(f.tool_mask.count(), expect);
        assert!(f.tool_mask.count() > t.count());
    }

    #[test]
    fn affine_distortion_is_inverted_exactly() {
        let (scene, tr) = setup();
        let f = render_frame(&scene, &tr[0], 0, &NoiseModel::none(), 7);
        let mut anchor = f.anatomy_mask.clone();
        anchor.subtract(&f.tool_mask).unwrap();
        let p = fit_affine_scale(&f.relative_depth, &f.true_depth, &anchor, AnchorExtrema::MinMax).unwrap();
        assert!((p.alpha - 100.0).abs() < 1e-6);
        let (z, _) = apply_affine(&f.relative_depth, &p);
        for (x, y) in f.true_anatomy.foreground() {
            assert!((z.get(x, y) - f.true_depth.get(x, y)).abs() < 1e-9);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let (scene, tr) = setup();
        let n = NoiseModel::calibrated();
        let a = render_frame(&scene, &tr[1], 1, &n, 3);
        let b = render_frame(&scene, &tr[1], 1, &n, 3);
        let c = render_frame(&scene, &tr[1], 1, &n, 4);
        assert!(a.relative_depth.values().iter().zip(b.relative_depth.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(a.tool_mask, b.tool_mask);
        assert!(a.relative_depth.values() != c.relative_depth.values());
    }

    #[test]
    fn truncation_hides_the_base_side() {
        let (scene, tr) = setup();
        let noise = NoiseModel { truncations: vec![crate::noise::Truncation { frames: crate::noise::FrameRange { start: 0, end: 0 }, crop: 0.3 }], ..NoiseModel::none() };
        let f = render_frame(&scene, &tr[0], 0, &noise, 1);
        let fov = f.fov.as_ref().unwrap();
        let tip = scene.k.project(&tr[0].tip).unwrap();
        assert!(fov.get(tip.x.round() as u32, tip.y.round() as u32));
        let ratio = f.tool_mask.count() as f64 / f.true_tool.count() as f64;
        assert!(ratio > 0.6 && ratio < 0.85, "{ratio}");
        let g = render_frame(&scene, &tr[1], 1, &noise, 1);
        assert!(g.fov.is_none());
    }
}
