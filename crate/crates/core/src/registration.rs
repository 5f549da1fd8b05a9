//! Anatomy registration from 2D–3D landmark correspondences.
//!
//! The pose is initialized with a control-point (EPnP-style) linear solve and
//! refined by damped Gauss–Newton on the reprojection error.

use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Point3, Rotation3, SymmetricEigen, Vector3, Vector6};
use thiserror::Error;

use crate::camera::{CameraIntrinsics, Pixel};
use crate::depth::DepthMap;
use crate::mesh::{RigidTransform, TriMesh};
use crate::render::rasterize_depth;
use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegistrationError {
    #[error("need at least 4 correspondences, got {0}")]
    TooFewPoints(usize),
    #[error("landmarks are collinear or coincident")]
    DegenerateConfiguration,
    #[error("no solution places all landmarks in front of the camera")]
    NoCheiralSolution,
    #[error("landmark file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("io error: {0}")]
    Io(String),
}

/// A clicked image landmark and its anatomy-frame position.
#[derive(Debug, Clone, PartialEq)]
pub struct Correspondence<T: Real> {
    pub name: String,
    pub u: Pixel<T>,
    pub x: Point3<T>,
}

impl<T: Real> Correspondence<T> {
    pub fn new(name: impl Into<String>, u: Pixel<T>, x: Point3<T>) -> Self {
        Self { name: name.into(), u, x }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult<T: Real> {
    /// Anatomy to camera.
    pub t_c_a: RigidTransform<T>,
    pub rmse_px: T,
    /// `rmse_px · mean landmark depth / mean focal length`.
    pub rmse_mm: T,
    /// Per-landmark reprojection error norms, pixels.
    pub residuals: Vec<T>,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reprojection<T: Real> {
    pub rmse_px: T,
    /// Error norm per correspondence, `None` for landmarks behind the camera.
    pub residuals: Vec<Option<T>>,
    /// Indices of landmarks with non-positive depth, excluded from the RMSE.
    pub behind_camera: Vec<usize>,
}

/// RMS reprojection error of `pose` over the correspondences.
pub fn reprojection_rmse<T: Real>(
    corrs: &[Correspondence<T>],
    pose: &RigidTransform<T>,
    k: &CameraIntrinsics<T>,
) -> Reprojection<T> {
    let mut sum = T::zero();
    let mut n = 0usize;
    let mut residuals = Vec::with_capacity(corrs.len());
    let mut behind_camera = Vec::new();
    for (i, c) in corrs.iter().enumerate() {
        match k.project(&pose.apply(&c.x)) {
            Ok(px) => {
                let e = (px - c.u).norm();
                sum += e * e;
                n += 1;
                residuals.push(Some(e));
            }
            Err(_) => {
                residuals.push(None);
                behind_camera.push(i);
            }
        }
    }
    let rmse_px = if n == 0 { T::zero() } else { (sum / T::lit(n as f64)).sqrt() };
    Reprojection { rmse_px, residuals, behind_camera }
}

/// Refinement settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PnpOptions {
    pub max_iterations: usize,
    /// Stop once the update norm falls below this.
    pub step_tolerance: f64,
}

impl Default for PnpOptions {
    fn default() -> Self {
        Self { max_iterations: 100, step_tolerance: 1e-10 }
    }
}

pub fn solve_pnp<T: Real>(
    corrs: &[Correspondence<T>],
    k: &CameraIntrinsics<T>,
) -> Result<RegistrationResult<T>, RegistrationError> {
    solve_pnp_with(corrs, k, &PnpOptions::default())
}

pub fn solve_pnp_with<T: Real>(
    corrs: &[Correspondence<T>],
    k: &CameraIntrinsics<T>,
    opts: &PnpOptions,
) -> Result<RegistrationResult<T>, RegistrationError> {
    if corrs.len() < 4 {
        return Err(RegistrationError::TooFewPoints(corrs.len()));
    }
    let world: Vec<Point3<T>> = corrs.iter().map(|c| c.x).collect();
    let shape = PointShape::of(&world);
    if shape.collinear {
        return Err(RegistrationError::DegenerateConfiguration);
    }

    let mut candidates = control_point_candidates(corrs, k, &shape, false);
    if !shape.planar {
        // nearly planar landmark sets are poorly served by four control points
        candidates.extend(control_point_candidates(corrs, k, &shape, true));
    }

    let mut best: Option<(RigidTransform<T>, T, usize)> = None;
    for init in candidates {
        if !cheiral(&world, &init) {
            continue;
        }
        let (pose, cost, iters) = refine(corrs, k, init, opts);
        if !cheiral(&world, &pose) {
            continue;
        }
        if best.as_ref().is_none_or(|b| cost < b.1) {
            best = Some((pose, cost, iters));
        }
    }
    let (pose, _, iterations) = best.ok_or(RegistrationError::NoCheiralSolution)?;
    let rep = reprojection_rmse(corrs, &pose, k);
    let n = T::lit(world.len() as f64);
    let mean_z = world.iter().fold(T::zero(), |a, x| a + pose.apply(x).z) / n;
    Ok(RegistrationResult {
        t_c_a: pose,
        rmse_px: rep.rmse_px,
        rmse_mm: rep.rmse_px * mean_z / k.mean_focal(),
        residuals: rep.residuals.into_iter().map(|r| r.unwrap_or(T::zero())).collect(),
        iterations,
    })
}

fn cheiral<T: Real>(world: &[Point3<T>], pose: &RigidTransform<T>) -> bool {
    world.iter().all(|x| pose.apply(x).z > T::zero())
}

struct PointShape<T: Real> {
    centroid: Point3<T>,
    /// Principal directions sorted by decreasing variance, with their variances.
    axes: [(Vector3<T>, T); 3],
    planar: bool,
    collinear: bool,
}

impl<T: Real> PointShape<T> {
    fn of(pts: &[Point3<T>]) -> Self {
        let n = T::lit(pts.len() as f64);
        let centroid = Point3::from(pts.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n);
        let mut cov = Matrix3::zeros();
        for p in pts {
            let d = p - centroid;
            cov += d * d.transpose();
        }
        cov /= n;
        let eig = SymmetricEigen::new(cov);
        let mut idx = [0usize, 1, 2];
        idx.sort_by(|a, b| eig.eigenvalues[*b].partial_cmp(&eig.eigenvalues[*a]).unwrap_or(std::cmp::Ordering::Equal));
        let axes = idx.map(|i| (eig.eigenvectors.column(i).into_owned(), eig.eigenvalues[i].max(T::zero())));
        let l0 = axes[0].1;
        let collinear = !(l0 > T::zero()) || axes[1].1 < l0 * T::tol(1e-10);
        let planar = axes[2].1 < l0 * T::tol(1e-10);
        Self { centroid, axes, planar, collinear }
    }

    /// Control points: centroid plus one per principal direction (two when planar).
    fn control_points(&self, planar: bool) -> Vec<Point3<T>> {
        let m = if planar { 2 } else { 3 };
        let mut c = vec![self.centroid];
        for (v, l) in self.axes.iter().take(m) {
            let s = l.sqrt().max(T::tol(1e-9));
            c.push(self.centroid + v * s);
        }
        c
    }
}

/// Barycentric weights of `x` w.r.t. the control points (affine coordinates).
fn barycentric<T: Real>(x: &Point3<T>, ctrl: &[Point3<T>]) -> Vec<T> {
    let d = x - ctrl[0];
    let mut a = vec![T::zero(); ctrl.len()];
    let m = ctrl.len() - 1;
    let mut basis = DMatrix::<T>::zeros(3, m);
    for j in 0..m {
        basis.set_column(j, &(ctrl[j + 1] - ctrl[0]));
    }
    let rhs = DVector::from_column_slice(d.as_slice());
    // least squares handles the planar (3 x 2) case; the projection onto the plane is what we want
    let sol = basis.clone().svd(true, true).solve(&rhs, T::default_epsilon()).unwrap_or_else(|_| DVector::zeros(m));
    let mut sum = T::zero();
    for j in 0..m {
        a[j + 1] = sol[j];
        sum += sol[j];
    }
    a[0] = T::one() - sum;
    a
}

fn control_point_candidates<T: Real>(
    corrs: &[Correspondence<T>],
    k: &CameraIntrinsics<T>,
    shape: &PointShape<T>,
    planar: bool,
) -> Vec<RigidTransform<T>> {
    let ctrl = shape.control_points(planar || shape.planar);
    let nc = ctrl.len();
    let alphas: Vec<Vec<T>> = corrs.iter().map(|c| barycentric(&c.x, &ctrl)).collect();

    let mut m = DMatrix::<T>::zeros(2 * corrs.len(), 3 * nc);
    for (i, (c, a)) in corrs.iter().zip(&alphas).enumerate() {
        for j in 0..nc {
            m[(2 * i, 3 * j)] = a[j] * k.fx;
            m[(2 * i, 3 * j + 2)] = a[j] * (k.cx - c.u.x);
            m[(2 * i + 1, 3 * j + 1)] = a[j] * k.fy;
            m[(2 * i + 1, 3 * j + 2)] = a[j] * (k.cy - c.u.y);
        }
    }
    let mtm = m.transpose() * &m;
    let eig = SymmetricEigen::new(mtm);
    let mut order: Vec<usize> = (0..3 * nc).collect();
    order.sort_by(|a, b| eig.eigenvalues[*a].partial_cmp(&eig.eigenvalues[*b]).unwrap_or(std::cmp::Ordering::Equal));
    let kernel: Vec<DVector<T>> = order.iter().take(4).map(|i| eig.eigenvectors.column(*i).into_owned()).collect();

    let pairs: Vec<(usize, usize)> = (0..nc).flat_map(|i| (i + 1..nc).map(move |j| (i, j))).collect();
    let rho: Vec<T> = pairs.iter().map(|(i, j)| (ctrl[*i] - ctrl[*j]).norm_squared()).collect();
    let diff = |v: &DVector<T>, i: usize, j: usize| {
        Vector3::new(v[3 * i] - v[3 * j], v[3 * i + 1] - v[3 * j + 1], v[3 * i + 2] - v[3 * j + 2])
    };

    let mut betas: Vec<Vec<T>> = Vec::new();
    // one kernel vector: scale from the control-point distances
    {
        let (mut num, mut den) = (T::zero(), T::zero());
        for (p, (i, j)) in pairs.iter().enumerate() {
            let dv = diff(&kernel[0], *i, *j).norm();
            num += dv * rho[p].sqrt();
            den += dv * dv;
        }
        if den > T::zero() {
            betas.push(vec![num / den]);
        }
    }
    // two and three kernel vectors: linearize the quadratic distance constraints
    for n in 2..=3usize {
        let quad_terms: Vec<(usize, usize)> = (0..n).flat_map(|a| (a..n).map(move |b| (a, b))).collect();
        if quad_terms.len() > pairs.len() {
            continue;
        }
        let mut l = DMatrix::<T>::zeros(pairs.len(), quad_terms.len());
        for (p, (i, j)) in pairs.iter().enumerate() {
            let dv: Vec<Vector3<T>> = (0..n).map(|a| diff(&kernel[a], *i, *j)).collect();
            for (q, (a, b)) in quad_terms.iter().enumerate() {
                let f = if a == b { T::one() } else { T::lit(2.0) };
                l[(p, q)] = f * dv[*a].dot(&dv[*b]);
            }
        }
        let rhs = DVector::from_vec(rho.clone());
        let Ok(bb) = l.svd(true, true).solve(&rhs, T::default_epsilon()) else { continue };
        let term = |a: usize, b: usize| bb[quad_terms.iter().position(|t| *t == (a.min(b), a.max(b))).unwrap()];
        let b0 = term(0, 0).abs().sqrt();
        let mut beta = vec![b0];
        for a in 1..n {
            let mag = term(a, a).abs().sqrt();
            beta.push(if term(0, a) < T::zero() { -mag } else { mag });
        }
        betas.push(beta);
    }

    let mut out = Vec::new();
    for beta0 in betas {
        // Gauss-Newton on the betas, also lifted to four kernel vectors
        for lift in [false, true] {
            let mut beta = beta0.clone();
            if lift {
                beta.resize(4, T::zero());
            }
            refine_betas(&mut beta, &kernel, &pairs, &rho, &diff);
            if let Some(pose) = pose_from_betas(&beta, &kernel, &ctrl, &alphas, corrs) {
                out.push(pose);
            }
        }
    }
    out
}

fn refine_betas<T: Real>(
    beta: &mut [T],
    kernel: &[DVector<T>],
    pairs: &[(usize, usize)],
    rho: &[T],
    diff: &dyn Fn(&DVector<T>, usize, usize) -> Vector3<T>,
) {
    let n = beta.len();
    for _ in 0..10 {
        let mut j = DMatrix::<T>::zeros(pairs.len(), n);
        let mut r = DVector::<T>::zeros(pairs.len());
        for (p, (a, b)) in pairs.iter().enumerate() {
            let dv: Vec<Vector3<T>> = (0..n).map(|q| diff(&kernel[q], *a, *b)).collect();
            let s = dv.iter().zip(beta.iter()).fold(Vector3::zeros(), |acc, (d, bq)| acc + d * *bq);
            r[p] = s.norm_squared() - rho[p];
            for q in 0..n {
                j[(p, q)] = T::lit(2.0) * s.dot(&dv[q]);
            }
        }
        let Ok(step) = j.svd(true, true).solve(&r, T::default_epsilon()) else { return };
        for q in 0..n {
            beta[q] -= step[q];
        }
        if step.norm() < T::tol(1e-14) {
            return;
        }
    }
}

fn pose_from_betas<T: Real>(
    beta: &[T],
    kernel: &[DVector<T>],
    ctrl: &[Point3<T>],
    alphas: &[Vec<T>],
    corrs: &[Correspondence<T>],
) -> Option<RigidTransform<T>> {
    let nc = ctrl.len();
    let mut x = DVector::<T>::zeros(3 * nc);
    for (b, v) in beta.iter().zip(kernel) {
        x += v * *b;
    }
    let cam_ctrl: Vec<Point3<T>> = (0..nc).map(|j| Point3::new(x[3 * j], x[3 * j + 1], x[3 * j + 2])).collect();
    let mut cam: Vec<Point3<T>> = alphas
        .iter()
        .map(|a| Point3::from(a.iter().zip(&cam_ctrl).fold(Vector3::zeros(), |acc, (w, c)| acc + c.coords * *w)))
        .collect();
    // the kernel sign is arbitrary; put the points in front of the camera
    let mean_z = cam.iter().fold(T::zero(), |acc, p| acc + p.z);
    if mean_z < T::zero() {
        for p in &mut cam {
            *p = -*p;
        }
    }
    let world: Vec<Point3<T>> = corrs.iter().map(|c| c.x).collect();
    procrustes(&world, &cam)
}

/// Rigid transform minimizing `Σ |R a_i + t - b_i|²`.
pub fn procrustes<T: Real>(a: &[Point3<T>], b: &[Point3<T>]) -> Option<RigidTransform<T>> {
    let n = T::lit(a.len() as f64);
    let ca = a.iter().fold(Vector3::zeros(), |s, p| s + p.coords) / n;
    let cb = b.iter().fold(Vector3::zeros(), |s, p| s + p.coords) / n;
    let mut h = Matrix3::zeros();
    for (p, q) in a.iter().zip(b) {
        h += (q.coords - cb) * (p.coords - ca).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < T::zero() {
        d[(2, 2)] = -T::one();
    }
    let r = u * d * vt;
    let rotation = Rotation3::from_matrix_unchecked(r);
    Some(RigidTransform::new(rotation, cb - rotation * ca))
}

fn cost<T: Real>(corrs: &[Correspondence<T>], pose: &RigidTransform<T>, k: &CameraIntrinsics<T>) -> T {
    let mut s = T::zero();
    for c in corrs {
        match k.project(&pose.apply(&c.x)) {
            Ok(px) => s += (px - c.u).norm_squared(),
            Err(_) => return T::max_value().unwrap_or(T::one() / T::default_epsilon()),
        }
    }
    s
}

/// Levenberg–Marquardt on `(ω, t)` with the update `R ← exp(ω) R`, `t ← t + δt`.
/// Only cost-decreasing steps are accepted.
fn refine<T: Real>(
    corrs: &[Correspondence<T>],
    k: &CameraIntrinsics<T>,
    init: RigidTransform<T>,
    opts: &PnpOptions,
) -> (RigidTransform<T>, T, usize) {
    let mut pose = init;
    let mut c = cost(corrs, &pose, k);
    let mut lambda = T::lit(1e-3);
    let tol = T::lit(opts.step_tolerance);
    let mut iters = 0;
    while iters < opts.max_iterations {
        iters += 1;
        let mut jtj = Matrix6::<T>::zeros();
        let mut jtr = Vector6::<T>::zeros();
        for cr in corrs {
            let rx = pose.rotation * cr.x.coords;
            let p = Point3::from(rx + pose.translation);
            let (Ok(px), Ok(jp)) = (k.project(&p), k.projection_jacobian(&p)) else { continue };
            let r = px - cr.u;
            // d(R x + t)/dω = -[R x]×, d/dt = I
            let jw = -(jp * rx.cross_matrix());
            let mut j = nalgebra::Matrix2x6::<T>::zeros();
            j.fixed_view_mut::<2, 3>(0, 0).copy_from(&jw);
            j.fixed_view_mut::<2, 3>(0, 3).copy_from(&jp);
            jtj += j.transpose() * j;
            jtr += j.transpose() * r;
        }
        let mut accepted = false;
        let mut step_norm = T::zero();
        for _ in 0..10 {
            let mut a = jtj;
            for i in 0..6 {
                a[(i, i)] += lambda * (jtj[(i, i)] + T::tol(1e-12));
            }
            let Some(delta) = a.cholesky().map(|ch| ch.solve(&(-jtr))) else {
                lambda *= T::lit(10.0);
                continue;
            };
            step_norm = delta.norm();
            let w = Vector3::new(delta[0], delta[1], delta[2]);
            let cand = RigidTransform::new(
                Rotation3::new(w) * pose.rotation,
                pose.translation + Vector3::new(delta[3], delta[4], delta[5]),
            );
            let cc = cost(corrs, &cand, k);
            if cc < c {
                pose = cand;
                c = cc;
                lambda = (lambda / T::lit(10.0)).max(T::lit(1e-12));
                accepted = true;
                break;
            }
            lambda *= T::lit(10.0);
            if step_norm < tol {
                break;
            }
        }
        if !accepted || step_norm < tol {
            break;
        }
    }
    // keep the rotation numerically orthonormal after many left-multiplications
    pose.rotation = Rotation3::from_matrix_eps(pose.rotation.matrix(), T::default_epsilon(), 20, pose.rotation);
    (pose, c, iters)
}

/// Depth of the registered anatomy surface per pixel (sentinel where empty).
pub fn render_anatomy_depth(mesh: &TriMesh<f64>, t_c_a: &RigidTransform<f64>, k: &CameraIntrinsics<f64>) -> DepthMap {
    rasterize_depth(mesh, t_c_a, k)
}

/// Parses `name,u,v,X,Y,Z` landmark rows (header optional).
pub fn parse_landmarks(text: &str) -> Result<Vec<Correspondence<f64>>, RegistrationError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).comment(Some(b'#')).from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 1;
        let rec = rec.map_err(|e| RegistrationError::Parse { line, msg: e.to_string() })?;
        if rec.len() != 6 {
            return Err(RegistrationError::Parse { line, msg: format!("expected 6 fields, got {}", rec.len()) });
        }
        let nums: Result<Vec<f64>, _> = (1..6).map(|j| rec[j].parse::<f64>()).collect();
        match nums {
            Ok(v) => out.push(Correspondence::new(&rec[0], Pixel::new(v[0], v[1]), Point3::new(v[2], v[3], v[4]))),
            Err(_) if i == 0 => continue,
            Err(e) => return Err(RegistrationError::Parse { line, msg: e.to_string() }),
        }
    }
    Ok(out)
}

pub fn landmarks_to_csv(corrs: &[Correspondence<f64>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let _ = w.write_record(["name", "u", "v", "X", "Y", "Z"]);
    for c in corrs {
        let _ = w.write_record([
            c.name.clone(),
            c.u.x.to_string(),
            c.u.y.to_string(),
            c.x.x.to_string(),
            c.x.y.to_string(),
            c.x.z.to_string(),
        ]);
    }
    String::from_utf8(w.into_inner().unwrap_or_default()).unwrap_or_default()
}

pub fn load_landmarks(path: &Path) -> Result<Vec<Correspondence<f64>>, RegistrationError> {
    let text = std::fs::read_to_string(path).map_err(|e| RegistrationError::Io(format!("{}: {e}", path.display())))?;
    parse_landmarks(&text)
}
