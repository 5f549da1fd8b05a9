//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::{Point2, Point3, Rotation3, Unit, UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use toolnav_core::camera::CameraIntrinsics;
use toolnav_core::depth::{apply_affine, fit_affine_scale, AffineDepthParams, AnchorExtrema, DepthMap};
use toolnav_core::mask::{select_tip, BinaryMask, MaskSkeleton, TipTrack};
use toolnav_core::mesh::{align_mesh, pointed_shaft_mesh, rotation_distance, rotation_from_axes, RigidTransform, ToolMesh, TriMesh};
use toolnav_core::overlay::{Decay, OverlayConfig};
use toolnav_core::pose::{solve_axis, AxisConstraints, Gate};
use toolnav_core::registration::solve_pnp;
use toolnav_core::render::rasterize_depth;
use toolnav_core::stream::FrameBuffer;
use toolnav_sim::frame::render_frame;
use toolnav_sim::metrics::{compute_metrics, PoseSample};
use toolnav_sim::noise::{FrameRange, NoiseModel, Truncation};
use toolnav_sim::oracle::{DecayPropagator, OraclePropagator};
use toolnav_sim::scene::{Scene, SceneSpec};
use toolnav_sim::trajectory::{generate_trajectory, Phase, Ramp, TrajectorySpec};
use toolnav_sim::trial::{run_trial, simulate_clicks, TrialResult, TrialSpec};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn k() -> CameraIntrinsics<f64> {
    CameraIntrinsics::new(1000.0, 1000.0, 320.0, 240.0, 640, 480).unwrap()
}

fn random_unit(rng: &mut ChaCha8Rng) -> Unit<Vector3<f64>> {
    loop {
        let v = Vector3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
        if v.norm() > 1e-3 {
            return Unit::new_normalize(v);
        }
    }
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Rotation3<f64> {
    let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
    UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3])).to_rotation_matrix()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn solver_exactness() -> Outcome {
    let k = k();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut worst_mag, mut worst_par, mut worst_quad, mut worst_truth) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut cases = 0;
    let start = Instant::now();
    while cases < 10_000 {
        let px = Point2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
        let tip = k.back_project(&px, rng.random_range(60.0..200.0)).unwrap();
        let truth = random_unit(&mut rng);
        let (x, y) = (tip.x / tip.z, tip.y / tip.z);
        let g = Vector2::new(k.fx * (truth.x - x * truth.z), k.fy * (truth.y - y * truth.z));
        if g.norm() < 1e-6 || truth.z.abs() < 1e-6 {
            continue;
        }
        let rho = truth.xy().norm();
        let prior = Unit::new_normalize(truth.into_inner() + random_unit(&mut rng).into_inner() * 0.3);
        let c = AxisConstraints::<f64>::new(g, prior.into_inner(), rho, tip, truth.z.signum());
        let Ok(sol) = solve_axis(&c, &k) else { continue };
        if sol.infeasible {
            continue;
        }
        cases += 1;
        let (a, b, cc) = sol.coeffs;
        let d2 = g.normalize();
        for alpha in sol.roots {
            let d = Vector3::new(x * c.d_z + alpha * d2.x / k.fx, y * c.d_z + alpha * d2.y / k.fy, c.d_z);
            worst_mag = worst_mag.max((d.xy().norm() - rho).abs());
            let gd = Vector2::new(k.fx * (d.x - x * d.z), k.fy * (d.y - y * d.z));
            if gd.norm() > 0.0 {
                worst_par = worst_par.max(gd.normalize().perp(&d2).abs());
            }
            let scale = (a * alpha * alpha).abs() + (b * alpha).abs() + cc.abs();
            worst_quad = worst_quad.max((a * alpha * alpha + b * alpha + cc).abs() / scale.max(f64::MIN_POSITIVE));
        }
        let d = sol.d;
        worst_mag = worst_mag.max((d.xy().norm() - rho).abs());
        worst_truth = worst_truth.max(
            sol.roots
                .iter()
                .map(|alpha| {
                    let d = Vector3::new(x * c.d_z + alpha * d2.x / k.fx, y * c.d_z + alpha * d2.y / k.fy, c.d_z);
                    (d - truth.into_inner()).norm()
                })
                .fold(f64::INFINITY, f64::min),
        );
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst_mag <= 1e-9 && worst_par <= 1e-9 && worst_quad <= 1e-9 && secs < 1.0;
    outcome(
        pass,
        format!(
            "{cases} cases, |d_xy|-rho {worst_mag:.1e}, yaw parallelism {worst_par:.1e}, quadratic residual {worst_quad:.1e} rel, \
             generating axis recovered to {worst_truth:.1e}, {secs:.3} s"
        ),
    )
}

fn stress_spec(noise: NoiseModel) -> TrialSpec {
    TrialSpec {
        trajectory: TrajectorySpec { tilt_ramp: Ramp::Linear, ..TrajectorySpec::default() },
        noise,
        seed: 1,
        ..TrialSpec::default()
    }
}

fn noise_free_tracking() -> (Outcome, TrialResult) {
    // static 30% border truncation during the hold phase
    let noise = NoiseModel {
        truncations: vec![Truncation { frames: FrameRange { start: 190, end: 229 }, crop: 0.3 }],
        ..NoiseModel::none()
    };
    let start = Instant::now();
    let r = run_trial(&stress_spec(noise)).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let m = &r.hybrid_metrics;
    let share = |sel: &dyn Fn(&&toolnav_sim::trial::GateRecord) -> bool, want: Gate| {
        let seg: Vec<_> = r.gates.iter().filter(sel).collect();
        let wins = seg.iter().filter(|g| g.chosen == want).count();
        (wins, seg.len())
    };
    let tilt = share(&|g| g.phase == Phase::Tilt, Gate::Tilt);
    let occl = share(&|g| g.truncated, Gate::NoTilt);
    let frac = |(w, n): (usize, usize)| if n == 0 { 0.0 } else { w as f64 / n as f64 };
    let pass = r.truth.len() == 300
        && m.dp.mean <= 0.5
        && m.yaw_prop.mean <= 0.2
        && m.pitch_prop.mean <= 0.2
        && frac(tilt) >= 0.95
        && frac(occl) >= 0.95
        && secs <= 60.0;
    let o = outcome(
        pass,
        format!(
            "{} frames, tip error {:.3} mm, yaw {:.3} deg, pitch {:.3} deg, tilt segment {}/{} tilt, occlusion segment {}/{} no_tilt, {:.1} s",
            r.truth.len(),
            m.dp.mean,
            m.yaw_prop.mean,
            m.pitch_prop.mean,
            tilt.0,
            tilt.1,
            occl.0,
            occl.1,
            secs
        ),
    );
    (o, r)
}

fn hybrid_vs_depth_only() -> (Outcome, TrialResult) {
    let spec = TrialSpec { noise: NoiseModel::calibrated(), seed: 1, ..TrialSpec::default() };
    let r = run_trial(&spec).unwrap();
    let h = &r.hybrid_metrics;
    let b = r.baseline_metrics.as_ref().unwrap();
    let rz = h.abs_dz.mean / b.abs_dz.mean;
    let rp = h.pitch_prop.mean / b.pitch_prop.mean;
    let pass = rz <= 1.0 / 3.0 && rp <= 1.0 / 3.0;
    let o = outcome(
        pass,
        format!(
            "|dz| hybrid {} vs depth-only {} mm (ratio {rz:.3}), pitch hybrid {} vs depth-only {} deg (ratio {rp:.3})",
            h.abs_dz, b.abs_dz, h.pitch_prop, b.pitch_prop
        ),
    );
    (o, r)
}

fn pnp_registration() -> Outcome {
    let start = Instant::now();
    let k = k();
    let scene = Scene::build(&SceneSpec { landmark_count: 6, ..SceneSpec::default() }).unwrap();
    let pts: Vec<Point3<f64>> = scene.registration_landmarks().iter().map(|(_, p)| *p).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut wt, mut wr, mut wrmse) = (0.0f64, 0.0f64, 0.0f64);
    let mut rounds = 0;
    while rounds < 1000 {
        let truth = RigidTransform::new(
            random_rotation(&mut rng),
            Vector3::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(60.0..200.0)),
        );
        if pts.iter().any(|p| truth.apply(p).z < 20.0) {
            continue;
        }
        rounds += 1;
        let corrs: Vec<_> = pts
            .iter()
            .map(|x| toolnav_core::registration::Correspondence::new("p", k.project(&truth.apply(x)).unwrap(), *x))
            .collect();
        let res = solve_pnp(&corrs, &k).unwrap();
        wt = wt.max((res.t_c_a.translation - truth.translation).norm());
        wr = wr.max(rotation_distance(&res.t_c_a.rotation, &truth.rotation));
        wrmse = wrmse.max(res.rmse_px);
    }
    let four = Scene::build(&SceneSpec::default()).unwrap();
    let rmse: Vec<f64> = (0..200u64)
        .map(|seed| solve_pnp(&simulate_clicks(&four, 3.0, seed).unwrap(), &four.k).unwrap().rmse_px)
        .collect();
    let med = median(rmse);
    let secs = start.elapsed().as_secs_f64();
    let pass = wt < 1e-5 && wr < 1e-5 && wrmse < 1e-6 && (1.0..=6.0).contains(&med) && secs < 10.0;
    outcome(
        pass,
        format!(
            "N=6 exact over {rounds} poses: {wt:.1e} mm, {wr:.1e} rad, RMSE {wrmse:.1e} px; N=4 with 3 px clicks: median RMSE {med:.3} px over 200 seeds; {secs:.2} s"
        ),
    )
}

fn affine_depth() -> Outcome {
    let scene = Scene::build(&SceneSpec::default()).unwrap();
    let tr = generate_trajectory(&TrajectorySpec::stationary(1), &scene.tool, &scene.contact_tip, &scene.initial_axis);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for i in 0..50 {
        let noise = NoiseModel { depth_a: rng.random_range(0.002..5.0), depth_b: rng.random_range(-20.0..20.0), ..NoiseModel::none() };
        let f = render_frame(&scene, &tr[0], 0, &noise, i);
        let mut anchor = f.anatomy_mask.clone();
        anchor.subtract(&f.tool_mask).unwrap();
        let p = fit_affine_scale(&f.relative_depth, &f.true_depth, &anchor, AnchorExtrema::MinMax).unwrap();
        let (z, _) = apply_affine(&f.relative_depth, &p);
        for (x, y) in f.true_anatomy.foreground() {
            worst = worst.max((z.get(x, y) - f.true_depth.get(x, y)).abs());
        }
    }

    // noisy case against the least-squares fit on the same anchor pixels
    let noise = NoiseModel { depth_a: 0.01, depth_b: 0.3, depth_sigma: 0.02, ..NoiseModel::none() };
    let mut ratios = Vec::new();
    for seed in 0..5 {
        let f = render_frame(&scene, &tr[0], 0, &noise, seed);
        let mut anchor = f.anatomy_mask.clone();
        anchor.subtract(&f.tool_mask).unwrap();
        let pairs: Vec<(f64, f64)> =
            anchor.foreground().map(|(x, y)| (f.relative_depth.get(x, y), f.true_depth.get(x, y))).collect();
        let n = pairs.len() as f64;
        let (mr, ms) = (pairs.iter().map(|p| p.0).sum::<f64>() / n, pairs.iter().map(|p| p.1).sum::<f64>() / n);
        let sxy: f64 = pairs.iter().map(|p| (p.0 - mr) * (p.1 - ms)).sum();
        let sxx: f64 = pairs.iter().map(|p| (p.0 - mr).powi(2)).sum();
        let ls = AffineDepthParams { alpha: sxy / sxx, beta: ms - sxy / sxx * mr, low_confidence: false };
        let err = |p: &AffineDepthParams| {
            let (z, _) = apply_affine(&f.relative_depth, p);
            median(f.true_anatomy.foreground().map(|(x, y)| (z.get(x, y) - f.true_depth.get(x, y)).abs()).collect())
        };
        let fit = fit_affine_scale(&f.relative_depth, &f.true_depth, &anchor, AnchorExtrema::MinMax).unwrap();
        ratios.push((err(&fit), err(&ls)));
    }
    let worst_ratio = ratios.iter().map(|(a, b)| a / b).fold(0.0, f64::max);
    let pass = worst <= 1e-9 && worst_ratio <= 2.0;
    outcome(
        pass,
        format!(
            "exact distortions: max error {worst:.1e} mm over 50 maps; sigma 0.02: median error {:.3} mm vs least-squares {:.3} mm (worst ratio {worst_ratio:.3} over 5 seeds)",
            ratios[0].0, ratios[0].1
        ),
    )
}

fn metric_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let stream: Vec<PoseSample> = (0..100)
        .map(|_| PoseSample {
            tip: Point3::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), rng.random_range(80.0..140.0)),
            rotation: random_rotation(&mut rng),
        })
        .collect();
    let none = vec![false; stream.len()];
    let same = compute_metrics(&stream, &stream, &none).unwrap();
    let zero = [same.abs_dx, same.abs_dy, same.abs_dz, same.dp, same.yaw_prop, same.pitch_prop, same.dphi]
        .iter()
        .map(|s| s.mean.abs().max(s.std.abs()))
        .fold(0.0, f64::max);

    let offset: Vec<PoseSample> =
        stream.iter().map(|p| PoseSample { tip: p.tip + Vector3::new(1.0, -2.0, 2.0), ..*p }).collect();
    let m = compute_metrics(&offset, &stream, &none).unwrap();
    let ones = [(m.abs_dx.mean, 1.0), (m.abs_dy.mean, 2.0), (m.abs_dz.mean, 2.0), (m.dp.mean, 3.0)]
        .iter()
        .map(|(v, e)| (v - e).abs())
        .fold(0.0, f64::max);

    let q = random_rotation(&mut rng);
    let rotated: Vec<PoseSample> = stream.iter().map(|p| PoseSample { rotation: q * p.rotation, ..*p }).collect();
    let r = compute_metrics(&rotated, &stream, &none).unwrap();
    let prop = [r.yaw_prop.mean, r.pitch_prop.mean, r.dphi.mean].into_iter().fold(0.0, f64::max);

    let pass = zero <= 1e-9 && ones <= 1e-12 && prop <= 1e-9;
    outcome(pass, format!("identical {zero:.1e}, 1-2-2-3 deviation {ones:.1e}, constant rotation offset {prop:.1e} deg"))
}

fn throughput(runs: &[&TrialResult]) -> Outcome {
    let fps = runs.iter().map(|r| r.hybrid_metrics.fps).fold(f64::INFINITY, f64::min);
    outcome(fps >= 30.0, format!("{fps:.1} FPS (slowest trial, track_frame only, 640x480)"))
}

fn streaming_catch_up() -> Outcome {
    let scene = Scene::build(&SceneSpec::default()).unwrap();
    let truth = generate_trajectory(&TrajectorySpec::default(), &scene.tool, &scene.contact_tip, &scene.initial_axis);
    let (t0, lag) = (10, 60);
    let masks: Arc<Vec<BinaryMask>> =
        Arc::new((0..=t0 + lag).map(|i| render_frame(&scene, &truth[i], i, &NoiseModel::none(), 0).true_tool).collect());
    let buffer = |k: usize, p: &mut dyn toolnav_core::stream::MaskPropagator<usize>| {
        let buf = FrameBuffer::new(256);
        for i in 0..=t0 {
            buf.push(i, i, None).unwrap();
        }
        assert_eq!(buf.begin_selection().unwrap(), t0);
        for i in t0 + 1..=t0 + lag {
            buf.push(i, i, None).unwrap();
        }
        buf.catch_up(&masks[t0], p, k).unwrap()
    };
    let exact = buffer(6, &mut OraclePropagator::new(masks.clone()));
    let head = t0 + lag;
    let exact_ok = exact.head == head && exact.mask == masks[head];
    let iou = |k| {
        let c = buffer(k, &mut DecayPropagator::new(masks.clone(), 8.0, 0.01));
        c.mask.iou(&masks[head]).unwrap()
    };
    let (i6, i2) = (iou(6), iou(2));
    outcome(
        exact_ok && i6 > i2,
        format!("oracle head {} mask exact {exact_ok}; decay propagator head IoU k=6 {i6:.3} vs k=2 {i2:.3}", exact.head),
    )
}

fn property_suites() -> Outcome {
    const N: usize = 1000;
    let k = k();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut failures = Vec::new();

    // Rodrigues alignment, including near anti-parallel pairs
    let tool = ToolMesh::new(pointed_shaft_mesh(1.5, 6.0, 38.0, 12), &-Vector3::z()).unwrap();
    let mut worst = 0.0f64;
    for i in 0..N {
        let a = random_unit(&mut rng);
        let d = if i % 10 == 0 {
            Unit::new_normalize(-a.into_inner() + random_unit(&mut rng).into_inner() * 1e-12)
        } else {
            random_unit(&mut rng)
        };
        worst = worst.max((rotation_from_axes(&a, &d) * a.into_inner() - d.into_inner()).norm());
        let tip = Point3::new(rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0), rng.random_range(60.0..200.0));
        let t = align_mesh(&tool, &d, &tip);
        worst = worst.max((t.apply(&tool.tip) - tip).norm());
        worst = worst.max((t.rotation * tool.axis_local.into_inner() - d.into_inner()).norm());
    }
    if worst > 1e-9 {
        failures.push(format!("rodrigues {worst:.1e}"));
    }

    // projection round trip
    let mut worst = 0.0f64;
    for _ in 0..N {
        let px = Point2::new(rng.random_range(-100.0..740.0), rng.random_range(-100.0..580.0));
        let z = 10f64.powf(rng.random_range(-2.0..4.0));
        let back = k.project(&k.back_project(&px, z).unwrap()).unwrap();
        worst = worst.max((back - px).norm());
    }
    if worst > 1e-9 {
        failures.push(format!("round trip {worst:.1e} px"));
    }

    // projection Jacobian against central differences
    let mut worst = 0.0f64;
    for _ in 0..N {
        let p = Point3::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(20.0..300.0));
        let j = k.projection_jacobian(&p).unwrap();
        let h = 1e-4 * p.coords.norm();
        let mut fd = nalgebra::Matrix2x3::zeros();
        for c in 0..3 {
            let mut e = Vector3::zeros();
            e[c] = h;
            let d = (k.project(&(p + e)).unwrap() - k.project(&(p - e)).unwrap()) / (2.0 * h);
            fd.set_column(c, &d);
        }
        worst = worst.max((j - fd).norm() / j.norm());
    }
    if worst >= 1e-5 {
        failures.push(format!("jacobian {worst:.1e}"));
    }

    // rasterizer occlusion for disjoint-depth triangle pairs
    let small = CameraIntrinsics::new(100.0, 100.0, 40.0, 30.0, 80, 60).unwrap();
    let mut wrong = 0usize;
    for _ in 0..N {
        let mut tri = |z0: f64, z1: f64| -> Vec<Point3<f64>> {
            (0..3)
                .map(|_| {
                    let px = Point2::new(rng.random_range(-10.0..90.0), rng.random_range(-10.0..70.0));
                    small.back_project(&px, rng.random_range(z0..z1)).unwrap()
                })
                .collect()
        };
        let (near, far) = (tri(20.0, 30.0), tri(40.0, 50.0));
        let one = |v: &[Point3<f64>]| TriMesh::new(v.to_vec(), vec![[0, 1, 2]]).unwrap();
        let both = TriMesh::new(near.iter().chain(&far).copied().collect(), vec![[3, 4, 5], [0, 1, 2]]).unwrap();
        let id = RigidTransform::identity();
        let (dn, df, db): (DepthMap, DepthMap, DepthMap) =
            (rasterize_depth(&one(&near), &id, &small), rasterize_depth(&one(&far), &id, &small), rasterize_depth(&both, &id, &small));
        for y in 0..60 {
            for x in 0..80 {
                let expect = if dn.is_valid(x, y) {
                    Some(dn.get(x, y))
                } else if df.is_valid(x, y) {
                    Some(df.get(x, y))
                } else {
                    None
                };
                let got = db.is_valid(x, y).then(|| db.get(x, y));
                if got != expect {
                    wrong += 1;
                }
            }
        }
    }
    if wrong > 0 {
        failures.push(format!("occlusion {wrong} pixels"));
    }

    // opacity monotone in the gap, falloff(0) = 1
    let mut bad = 0usize;
    for _ in 0..N {
        let cfg = OverlayConfig {
            alpha0: rng.random_range(0.0..=1.0),
            tau: rng.random_range(0.1..10.0),
            decay: if rng.random_bool(0.5) { Decay::Exponential } else { Decay::Rational },
        };
        let g1 = rng.random_range(0.0..50.0);
        let g2 = g1 + rng.random_range(0.0..50.0);
        if cfg.falloff(0.0) != 1.0 || cfg.opacity(g1) < cfg.opacity(g2) || cfg.falloff(1e9) > 1e-6 {
            bad += 1;
        }
    }
    if bad > 0 {
        failures.push(format!("opacity {bad} cases"));
    }

    // tip selection never flips under motion below half the skeleton length
    let mut flips = 0usize;
    for _ in 0..N {
        let len = rng.random_range(20.0..300.0);
        let mut tip = Point2::new(rng.random_range(100.0..540.0), rng.random_range(100.0..380.0));
        let mut track = TipTrack { current: tip, previous: tip, initialized: true };
        for _ in 0..20 {
            let step = rng.random_range(0.0..0.49 * len);
            let dir = rng.random_range(0.0..std::f64::consts::TAU);
            tip += Vector2::new(dir.cos(), dir.sin()) * step;
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            let base = tip + Vector2::new(theta.cos(), theta.sin()) * len;
            let (e1, e2) = if rng.random_bool(0.5) { (tip, base) } else { (base, tip) };
            let skel = MaskSkeleton {
                direction: (e2 - e1).normalize(),
                e1,
                e2,
                length_px: len,
                centroid: nalgebra::center(&e1, &e2),
                near_isotropic: false,
                truncated: false,
                cropped: false,
            };
            if select_tip(&skel, &mut track, 640, 480) != tip {
                flips += 1;
            }
        }
    }
    if flips > 0 {
        failures.push(format!("tip flips {flips}"));
    }

    let pass = failures.is_empty();
    outcome(
        pass,
        if pass {
            format!("rodrigues, round trip, jacobian, occlusion, opacity, tip selection: {N} cases each")
        } else {
            failures.join(", ")
        },
    )
}

fn main() {
    // the harness passes filter arguments; this target has a single entry point
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    results.push((1, "closed-form solver exactness", solver_exactness()));
    let (c2, noise_free) = noise_free_tracking();
    results.push((2, "noise-free end-to-end tracking", c2));
    let (c3, calibrated) = hybrid_vs_depth_only();
    results.push((3, "hybrid vs depth-only contrast", c3));
    results.push((4, "PnP registration", pnp_registration()));
    results.push((5, "affine depth recovery", affine_depth()));
    results.push((6, "metric algebra", metric_algebra()));
    results.push((7, "throughput", throughput(&[&noise_free, &calibrated])));
    results.push((8, "streaming catch-up", streaming_catch_up()));
    results.push((9, "property suites", property_suites()));
    let mut failed = 0;
    for (n, name, o) in &results {
        println!("criterion {n} [{}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
