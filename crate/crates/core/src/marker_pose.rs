//! Pinhole projection and square-marker pose estimation from four corners.
//!
//! The estimator fits a homography to the four corner correspondences,
//! decomposes it into the two planar pose hypotheses and refines each with a
//! damped Gauss-Newton loop on the 6-DoF reprojection error. The hypothesis
//! with the smaller residual wins.

use std::fmt;

use nalgebra::{Matrix3, Matrix6, Point2, SMatrix, SVector, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point3, RigidTransform};

/// Default square marker side, meters.
pub const DEFAULT_MARKER_SIDE: f64 = 0.04;

/// Corners closer than this to the camera plane cannot be projected.
pub const MIN_DEPTH: f64 = 1e-6;

pub const MAX_ITERATIONS: usize = 50;
pub const STEP_TOLERANCE: f64 = 1e-10;
pub const INITIAL_DAMPING: f64 = 1e-3;

/// Above this RMS (pixels) an estimate that hit the iteration cap is rejected.
pub const NO_CONVERGENCE_RMS: f64 = 5.0;

/// Ratios below this mean the two planar hypotheses are nearly tied.
pub const AMBIGUITY_FLAG_RATIO: f64 = 1.2;

/// Reported when only one distinct minimum exists.
pub const AMBIGUITY_RATIO_CAP: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoseError {
    #[error("marker corner {corner} has depth {depth:.3e} m (must be > {MIN_DEPTH} m)")]
    NonPositiveDepth { corner: usize, depth: f64 },
    #[error("corners are collinear or enclose no area")]
    DegenerateCorners,
    #[error("refinement hit {MAX_ITERATIONS} iterations with rms {rms:.3} px")]
    NoConvergence { rms: f64 },
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid marker side {0} m")]
    InvalidMarkerSide(f64),
    #[error("invalid noise sigma {0}")]
    InvalidNoise(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub image_width: u32,
    pub image_height: u32,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self::centered(800.0, 800.0, 1280, 720)
    }
}

impl CameraIntrinsics {
    /// Principal point at the image center.
    pub fn centered(fx: f64, fy: f64, image_width: u32, image_height: u32) -> Self {
        Self {
            fx,
            fy,
            cx: image_width as f64 / 2.0,
            cy: image_height as f64 / 2.0,
            image_width,
            image_height,
        }
    }

    pub fn validate(&self) -> Result<(), PoseError> {
        let bad = |m: String| Err(PoseError::InvalidIntrinsics(m));
        if !(self.fx > 0.0 && self.fx.is_finite() && self.fy > 0.0 && self.fy.is_finite()) {
            return bad(format!("focal lengths must be positive (fx={}, fy={})", self.fx, self.fy));
        }
        let (w, h) = (self.image_width as f64, self.image_height as f64);
        if !(0.0..=w).contains(&self.cx) || !(0.0..=h).contains(&self.cy) {
            return bad(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.image_width, self.image_height
            ));
        }
        Ok(())
    }

    pub fn contains(&self, p: &Point2<f64>) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x <= self.image_width as f64 && p.y <= self.image_height as f64
    }
}

/// Four corner pixels in marker order: top-left, top-right, bottom-right,
/// bottom-left.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerObservation {
    pub marker_id: i64,
    pub corners: [Point2<f64>; 4],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseEstimate {
    /// Marker pose in the camera frame.
    pub pose: RigidTransform,
    /// Root-mean-square corner distance in pixels.
    pub rms_reprojection_error: f64,
    /// Second-best over best residual; always ≥ 1.
    pub ambiguity_ratio: f64,
}

impl PoseEstimate {
    pub fn is_ambiguous(&self) -> bool {
        self.ambiguity_ratio < AMBIGUITY_FLAG_RATIO
    }
}

/// Marker-frame corner coordinates on the z = 0 plane.
pub fn marker_corners(marker_side: f64) -> [Point3; 4] {
    let h = marker_side / 2.0;
    [
        Point3::new(-h, h, 0.0),
        Point3::new(h, h, 0.0),
        Point3::new(h, -h, 0.0),
        Point3::new(-h, -h, 0.0),
    ]
}

fn check_side(marker_side: f64) -> Result<(), PoseError> {
    if marker_side > 0.0 && marker_side.is_finite() {
        Ok(())
    } else {
        Err(PoseError::InvalidMarkerSide(marker_side))
    }
}

pub fn project(
    pose: &RigidTransform,
    marker_side: f64,
    intrinsics: &CameraIntrinsics,
) -> Result<[Point2<f64>; 4], PoseError> {
    check_side(marker_side)?;
    let corners = marker_corners(marker_side);
    let mut out = [Point2::origin(); 4];
    for (i, c) in corners.iter().enumerate() {
        let p = pose.transform_point(c);
        if !(p.z > MIN_DEPTH) {
            return Err(PoseError::NonPositiveDepth {
                corner: i,
                depth: p.z,
            });
        }
        out[i] = Point2::new(
            intrinsics.fx * p.x / p.z + intrinsics.cx,
            intrinsics.fy * p.y / p.z + intrinsics.cy,
        );
    }
    Ok(out)
}

/// Projection plus iid Gaussian pixel noise drawn from `rng`.
pub fn synthesize_observation_with<R: Rng + ?Sized>(
    true_pose: &RigidTransform,
    marker_side: f64,
    intrinsics: &CameraIntrinsics,
    pixel_noise_sigma: f64,
    rng: &mut R,
) -> Result<MarkerObservation, PoseError> {
    if !(pixel_noise_sigma >= 0.0 && pixel_noise_sigma.is_finite()) {
        return Err(PoseError::InvalidNoise(pixel_noise_sigma));
    }
    let mut corners = project(true_pose, marker_side, intrinsics)?;
    if pixel_noise_sigma > 0.0 {
        let normal = Normal::new(0.0, pixel_noise_sigma).expect("sigma checked above");
        for c in corners.iter_mut() {
            c.x += normal.sample(rng);
            c.y += normal.sample(rng);
        }
    }
    Ok(MarkerObservation {
        marker_id: 0,
        corners,
    })
}

/// Seeded variant of [`synthesize_observation_with`].
pub fn synthesize_observation(
    true_pose: &RigidTransform,
    marker_side: f64,
    intrinsics: &CameraIntrinsics,
    pixel_noise_sigma: f64,
    seed: u64,
) -> Result<MarkerObservation, PoseError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    synthesize_observation_with(true_pose, marker_side, intrinsics, pixel_noise_sigma, &mut rng)
}

fn cross2(o: &Point2<f64>, a: &Point2<f64>, b: &Point2<f64>) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

fn check_quadrilateral(corners: &[Point2<f64>; 4]) -> Result<(), PoseError> {
    if corners.iter().any(|c| !(c.x.is_finite() && c.y.is_finite())) {
        return Err(PoseError::DegenerateCorners);
    }
    let mut max_edge2: f64 = 0.0;
    for i in 0..4 {
        for j in (i + 1)..4 {
            max_edge2 = max_edge2.max((corners[i] - corners[j]).norm_squared());
        }
    }
    if max_edge2 == 0.0 {
        return Err(PoseError::DegenerateCorners);
    }
    let eps = 1e-6 * max_edge2;
    for skip in 0..4 {
        let tri: Vec<_> = (0..4).filter(|&k| k != skip).map(|k| corners[k]).collect();
        if cross2(&tri[0], &tri[1], &tri[2]).abs() <= eps {
            return Err(PoseError::DegenerateCorners);
        }
    }
    Ok(())
}

/// DLT homography from the unit square (±1, ±1) to normalized image
/// coordinates, with h₃₃ fixed to 1.
fn unit_square_homography(normalized: &[Point2<f64>; 4]) -> Option<Matrix3<f64>> {
    const UNIT: [(f64, f64); 4] = [(-1.0, 1.0), (1.0, 1.0), (1.0, -1.0), (-1.0, -1.0)];
    let mut a = SMatrix::<f64, 8, 8>::zeros();
    let mut b = SVector::<f64, 8>::zeros();
    for (i, ((x, y), p)) in UNIT.iter().zip(normalized.iter()).enumerate() {
        let (u, v) = (p.x, p.y);
        let r = 2 * i;
        a.row_mut(r)
            .copy_from_slice(&[*x, *y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y]);
        a.row_mut(r + 1)
            .copy_from_slice(&[0.0, 0.0, 0.0, *x, *y, 1.0, -v * x, -v * y]);
        b[r] = u;
        b[r + 1] = v;
    }
    let h = a.lu().solve(&b)?;
    if h.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some(Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0))
}

/// Nearest proper rotation to `m` (polar decomposition through the SVD).
fn nearest_rotation(m: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    let svd = m.svd(true, true);
    let u = svd.u?;
    let v_t = svd.v_t?;
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u_flip = u;
        u_flip.column_mut(2).neg_mut();
        r = u_flip * v_t;
    }
    Some(r)
}

fn exp_so3(w: &Vector3<f64>) -> Matrix3<f64> {
    nalgebra::Rotation3::new(*w).into_inner()
}

/// Both planar hypotheses, unrefined.
fn initial_hypotheses(
    obs: &MarkerObservation,
    marker_side: f64,
    k: &CameraIntrinsics,
) -> Result<Vec<RigidTransform>, PoseError> {
    let normalized = obs
        .corners
        .map(|c| Point2::new((c.x - k.cx) / k.fx, (c.y - k.cy) / k.fy));
    let h_unit = unit_square_homography(&normalized).ok_or(PoseError::DegenerateCorners)?;
    let half = marker_side / 2.0;
    let h1 = h_unit.column(0) / half;
    let h2 = h_unit.column(1) / half;
    let h3 = h_unit.column(2).into_owned();
    let scale = 2.0 / (h1.norm() + h2.norm());
    if !scale.is_finite() {
        return Err(PoseError::DegenerateCorners);
    }
    let sign = if h3.z < 0.0 { -1.0 } else { 1.0 };
    let r1 = h1 * (scale * sign);
    let r2 = h2 * (scale * sign);
    let t = h3 * (scale * sign);
    let r3 = r1.cross(&r2);
    let rot = nearest_rotation(&Matrix3::from_columns(&[r1, r2, r3]))
        .ok_or(PoseError::DegenerateCorners)?;

    let first = RigidTransform::new(rot, t).map_err(|_| PoseError::DegenerateCorners)?;
    let mut out = vec![first];

    // Mirror the plane normal about the line of sight for the second minimum.
    let n = rot.column(2).into_owned();
    let los = t.normalize();
    let n_mirror = los * (2.0 * n.dot(&los)) - n;
    let axis = n.cross(&n_mirror);
    if axis.norm() > 1e-9 {
        let angle = n.dot(&n_mirror).clamp(-1.0, 1.0).acos();
        let q = exp_so3(&(axis.normalize() * angle));
        if let Ok(second) = RigidTransform::new(q * rot, t) {
            out.push(second);
        }
    }
    Ok(out)
}

struct Refined {
    pose: RigidTransform,
    rms: f64,
    converged: bool,
}

/// Sum of squared pixel residuals, or `None` if any corner is behind the camera.
fn residuals(
    pose: &RigidTransform,
    object: &[Point3; 4],
    obs: &MarkerObservation,
    k: &CameraIntrinsics,
) -> Option<(SVector<f64, 8>, SMatrix<f64, 8, 6>)> {
    let mut r = SVector::<f64, 8>::zeros();
    let mut jac = SMatrix::<f64, 8, 6>::zeros();
    for (i, x) in object.iter().enumerate() {
        let rx = pose.rotation() * x.coords;
        let p = rx + pose.translation();
        if !(p.z > MIN_DEPTH) {
            return None;
        }
        let iz = 1.0 / p.z;
        r[2 * i] = k.fx * p.x * iz + k.cx - obs.corners[i].x;
        r[2 * i + 1] = k.fy * p.y * iz + k.cy - obs.corners[i].y;

        let du = Vector3::new(k.fx * iz, 0.0, -k.fx * p.x * iz * iz);
        let dv = Vector3::new(0.0, k.fy * iz, -k.fy * p.y * iz * iz);
        // d(exp(ω)·Rx)/dω = −[Rx]ₓ, so row·(−[a]ₓ) = a × row.
        let du_w = rx.cross(&du);
        let dv_w = rx.cross(&dv);
        for c in 0..3 {
            jac[(2 * i, c)] = du_w[c];
            jac[(2 * i + 1, c)] = dv_w[c];
            jac[(2 * i, 3 + c)] = du[c];
            jac[(2 * i + 1, 3 + c)] = dv[c];
        }
    }
    Some((r, jac))
}

fn rms_of(cost: f64) -> f64 {
    (cost / 4.0).sqrt()
}

fn refine(
    start: RigidTransform,
    object: &[Point3; 4],
    obs: &MarkerObservation,
    k: &CameraIntrinsics,
) -> Option<Refined> {
    let (mut r, mut jac) = residuals(&start, object, obs, k)?;
    let mut pose = start;
    let mut cost = r.norm_squared();
    let mut lambda = INITIAL_DAMPING;
    let mut converged = cost == 0.0;
    let mut iterations = 0;

    while !converged && iterations < MAX_ITERATIONS {
        iterations += 1;
        let jtj: Matrix6<f64> = jac.transpose() * jac;
        let g: Vector6<f64> = jac.transpose() * r;
        let mut a = jtj;
        for d in 0..6 {
            a[(d, d)] += lambda * jtj[(d, d)].max(1e-12);
        }
        let Some(chol) = a.cholesky() else {
            lambda *= 2.0;
            continue;
        };
        let step = -chol.solve(&g);
        let w = Vector3::new(step[0], step[1], step[2]);
        let dt = Vector3::new(step[3], step[4], step[5]);
        let candidate = RigidTransform::from_rotation(
            nalgebra::Rotation3::from_matrix_unchecked(exp_so3(&w) * pose.rotation()),
            pose.translation() + dt,
        );
        let step_norm = step.norm();
        match residuals(&candidate, object, obs, k) {
            Some((r_new, j_new)) if r_new.norm_squared() < cost => {
                pose = candidate;
                cost = r_new.norm_squared();
                r = r_new;
                jac = j_new;
                lambda *= 0.5;
                if step_norm < STEP_TOLERANCE || cost == 0.0 {
                    converged = true;
                }
            }
            _ => {
                lambda *= 2.0;
                if step_norm < STEP_TOLERANCE {
                    converged = true;
                }
            }
        }
    }

    // Keep the stored rotation exactly orthonormal after many updates.
    let rot = nearest_rotation(pose.rotation())?;
    let pose = RigidTransform::new(rot, *pose.translation()).ok()?;
    let cost = residuals(&pose, object, obs, k)?.0.norm_squared();
    Some(Refined {
        pose,
        rms: rms_of(cost),
        converged,
    })
}

pub fn estimate_pose(
    obs: &MarkerObservation,
    marker_side: f64,
    intrinsics: &CameraIntrinsics,
) -> Result<PoseEstimate, PoseError> {
    check_side(marker_side)?;
    intrinsics.validate()?;
    check_quadrilateral(&obs.corners)?;

    let object = marker_corners(marker_side);
    let mut refined: Vec<Refined> = initial_hypotheses(obs, marker_side, intrinsics)?
        .into_iter()
        .filter_map(|h| refine(h, &object, obs, intrinsics))
        .collect();
    if refined.is_empty() {
        return Err(PoseError::DegenerateCorners);
    }
    refined.sort_by(|a, b| a.rms.total_cmp(&b.rms));

    let best = &refined[0];
    if !best.converged && best.rms > NO_CONVERGENCE_RMS {
        return Err(PoseError::NoConvergence { rms: best.rms });
    }
    let ambiguity_ratio = match refined.get(1) {
        Some(second)
            if second.pose.rotation_angle_to(&best.pose) > 1e-6
                || (second.pose.translation() - best.pose.translation()).norm() > 1e-6 =>
        {
            ((second.rms + 1e-9) / (best.rms + 1e-9)).clamp(1.0, AMBIGUITY_RATIO_CAP)
        }
        _ => AMBIGUITY_RATIO_CAP,
    };
    Ok(PoseEstimate {
        pose: best.pose,
        rms_reprojection_error: best.rms,
        ambiguity_ratio,
    })
}

/// RMS corner reprojection error of an arbitrary pose against an observation.
pub fn reprojection_rms(
    pose: &RigidTransform,
    obs: &MarkerObservation,
    marker_side: f64,
    intrinsics: &CameraIntrinsics,
) -> Result<f64, PoseError> {
    let projected = project(pose, marker_side, intrinsics)?;
    let cost: f64 = projected
        .iter()
        .zip(obs.corners.iter())
        .map(|(p, o)| (p - o).norm_squared())
        .sum();
    Ok(rms_of(cost))
}

/// Robot base in the camera frame, from one view of the base marker.
///
/// `base_marker_to_robot_base` is the pose of the robot base expressed in the
/// base-marker frame.
pub fn calibrate_base(
    obs: &MarkerObservation,
    marker_side: f64,
    intrinsics: &CameraIntrinsics,
    base_marker_to_robot_base: &RigidTransform,
) -> Result<RigidTransform, PoseError> {
    let est = estimate_pose(obs, marker_side, intrinsics)?;
    Ok(est.pose.compose(base_marker_to_robot_base))
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("line {line}: {message}")]
pub struct ObservationParseError {
    pub line: usize,
    pub message: String,
}

/// Parses `marker_id,u0,v0,u1,v1,u2,v2,u3,v3` rows. A leading header line
/// starting with `marker_id` and blank lines are skipped. Each data row
/// yields its own result so callers can keep going past bad rows.
pub fn parse_observations(text: &str) -> Vec<Result<MarkerObservation, ObservationParseError>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with("marker_id") {
            continue;
        }
        out.push(parse_observation_line(line).map_err(|message| ObservationParseError {
            line: idx + 1,
            message,
        }));
    }
    out
}

fn parse_observation_line(line: &str) -> Result<MarkerObservation, String> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != 9 {
        return Err(format!("expected 9 fields, got {}", fields.len()));
    }
    let marker_id = fields[0]
        .parse::<i64>()
        .map_err(|e| format!("marker_id `{}`: {e}", fields[0]))?;
    let mut vals = [0.0; 8];
    for (v, f) in vals.iter_mut().zip(&fields[1..]) {
        *v = f.parse::<f64>().map_err(|e| format!("`{f}`: {e}"))?;
    }
    Ok(MarkerObservation {
        marker_id,
        corners: [
            Point2::new(vals[0], vals[1]),
            Point2::new(vals[2], vals[3]),
            Point2::new(vals[4], vals[5]),
            Point2::new(vals[6], vals[7]),
        ],
    })
}

impl fmt::Display for MarkerObservation {
    /// The CSV row form accepted by [`parse_observations`].
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.marker_id)?;
        for c in &self.corners {
            write!(f, ",{},{}", c.x, c.y)?;
        }
        Ok(())
    }
}
