//! Planar pose recovery from tag corners and multi-tag fusion into a
//! platform displacement.
//!
//! Per tag: normalized DLT homography, decomposition into `[r1 r2 t]`,
//! then damped Gauss-Newton on the reprojection error. All detected tags
//! are then refined jointly as one rigid platform.

use nalgebra::{DMatrix, Matrix3, Matrix6, Rotation3, SMatrix, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{
    displacement_from_platform_pose, CameraError, CameraIntrinsics, Pose, TagGeometry, TagLayout,
};
use crate::dof::Displacement6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoseError {
    #[error("need at least 4 correspondences, got {0}")]
    TooFewPoints(usize),
    #[error("degenerate correspondences: {0}")]
    RankDeficient(String),
    #[error("homography decomposition gives non-positive depth")]
    NonPositiveDepth,
    #[error("refinement diverged (best cost {best_cost:.3e} px²)")]
    Diverged { best: Pose, best_cost: f64 },
    #[error("no detections to solve")]
    NoDetections,
    #[error("tag {0} is not part of the layout")]
    UnknownTag(u32),
    #[error(transparent)]
    Camera(#[from] CameraError),
}

/// A known point on the tag plane and where it was observed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub tag_frame_point: Vector3<f64>,
    pub image_point: Vector2<f64>,
}

/// One tag observed in one frame. Corners follow
/// [`TagGeometry::corners_tag_frame`] ordering.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub timestamp: f64,
    pub tag_id: u32,
    pub corners: [[f64; 2]; 4],
}

impl Detection {
    pub fn new(timestamp: f64, tag_id: u32, corners: &[Vector2<f64>]) -> Self {
        let mut c = [[0.0; 2]; 4];
        for (dst, src) in c.iter_mut().zip(corners) {
            *dst = [src.x, src.y];
        }
        Self { timestamp, tag_id, corners: c }
    }

    pub fn corner(&self, i: usize) -> Vector2<f64> {
        Vector2::new(self.corners[i][0], self.corners[i][1])
    }

    pub fn correspondences(&self, tag: &TagGeometry) -> Vec<Correspondence> {
        tag.corners_tag_frame()
            .iter()
            .enumerate()
            .map(|(i, p)| Correspondence { tag_frame_point: *p, image_point: self.corner(i) })
            .collect()
    }
}

/// Similarity taking points to zero centroid and mean distance √2.
fn normalizing_transform(points: &[Vector2<f64>]) -> Matrix3<f64> {
    let n = points.len() as f64;
    let centroid = points.iter().sum::<Vector2<f64>>() / n;
    let mean_dist = points.iter().map(|p| (p - centroid).norm()).sum::<f64>() / n;
    let s = if mean_dist > 0.0 { std::f64::consts::SQRT_2 / mean_dist } else { 1.0 };
    Matrix3::new(s, 0.0, -s * centroid.x, 0.0, s, -s * centroid.y, 0.0, 0.0, 1.0)
}

fn apply_h(h: &Matrix3<f64>, p: &Vector2<f64>) -> Vector2<f64> {
    let q = h * Vector3::new(p.x, p.y, 1.0);
    Vector2::new(q.x / q.z, q.y / q.z)
}

fn check_planar_spread(points: &[Vector2<f64>]) -> Result<(), PoseError> {
    let n = points.len() as f64;
    let c = points.iter().sum::<Vector2<f64>>() / n;
    let cov = points.iter().fold(nalgebra::Matrix2::zeros(), |acc, p| {
        let d = p - c;
        acc + d * d.transpose()
    });
    let eig = cov.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if !(hi > 0.0) || lo <= 1e-12 * hi {
        return Err(PoseError::RankDeficient("tag-plane points are collinear".into()));
    }
    if points.len() == 4 {
        let scale = hi.sqrt();
        for skip in 0..4 {
            let tri: Vec<_> = (0..4).filter(|&i| i != skip).map(|i| points[i]).collect();
            let (a, b) = (tri[1] - tri[0], tri[2] - tri[0]);
            let area = (a.x * b.y - a.y * b.x).abs();
            if area <= 1e-9 * scale * scale {
                return Err(PoseError::RankDeficient("three of four tag-plane points are collinear".into()));
            }
        }
    }
    Ok(())
}

/// Homography mapping tag-plane `(x, y, 1)` to image pixels, scaled so
/// `H[(2, 2)] = 1`.
pub fn estimate_homography(corr: &[Correspondence]) -> Result<Matrix3<f64>, PoseError> {
    if corr.len() < 4 {
        return Err(PoseError::TooFewPoints(corr.len()));
    }
    let src: Vec<Vector2<f64>> = corr.iter().map(|c| c.tag_frame_point.xy()).collect();
    let dst: Vec<Vector2<f64>> = corr.iter().map(|c| c.image_point).collect();
    check_planar_spread(&src)?;
    check_planar_spread(&dst)?;

    let t_src = normalizing_transform(&src);
    let t_dst = normalizing_transform(&dst);

    let rows = (2 * corr.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (s, d)) in src.iter().zip(dst.iter()).enumerate() {
        let s = apply_h(&t_src, s);
        let d = apply_h(&t_dst, d);
        let (x, y, u, v) = (s.x, s.y, d.x, d.y);
        let r0 = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u];
        let r1 = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v];
        for j in 0..9 {
            a[(2 * i, j)] = r0[j];
            a[(2 * i + 1, j)] = r1[j];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| PoseError::RankDeficient("SVD failed".into()))?;
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[i].total_cmp(&sv[j]));
    let (smallest, second) = (order[0], order[1]);
    if sv[second] <= 1e-10 * sv.max() {
        return Err(PoseError::RankDeficient("homography null space is not one-dimensional".into()));
    }
    let h = v_t.row(smallest);
    let h_norm = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let t_dst_inv = t_dst.try_inverse().expect("similarity is invertible");
    let mut hm = t_dst_inv * h_norm * t_src;
    let scale = hm[(2, 2)];
    if scale.abs() < 1e-300 {
        return Err(PoseError::RankDeficient("homography maps the tag origin to infinity".into()));
    }
    hm /= scale;
    Ok(hm)
}

/// Nearest rotation (Frobenius) to an arbitrary 3×3 matrix.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Rotation3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    Rotation3::from_matrix_unchecked(u * d * v_t)
}

/// Decomposes `K⁻¹H = λ[r1 r2 t]` into a tag pose in front of the camera.
pub fn pose_from_homography(h: &Matrix3<f64>, intr: &CameraIntrinsics) -> Result<Pose, PoseError> {
    let k_inv = intr.matrix().try_inverse().ok_or_else(|| {
        PoseError::Camera(CameraError::InvalidIntrinsics("singular camera matrix".into()))
    })?;
    let m = k_inv * h;
    let (m1, m2, m3) = (m.column(0).into_owned(), m.column(1).into_owned(), m.column(2).into_owned());
    let norm = 0.5 * (m1.norm() + m2.norm());
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(PoseError::RankDeficient("homography has degenerate rotation columns".into()));
    }
    // Only one sign of λ places the tag in front of the camera.
    let mut lambda = 1.0 / norm;
    if lambda * m3.z < 0.0 {
        lambda = -lambda;
    }
    let t = m3 * lambda;
    if !(t.z > 0.0) {
        return Err(PoseError::NonPositiveDepth);
    }
    let r1 = m1 * lambda;
    let r2 = m2 * lambda;
    let r3 = r1.cross(&r2);
    let approx = Matrix3::from_columns(&[r1, r2, r3]);
    Ok(Pose::new(nearest_rotation(&approx), t))
}

/// Sum of squared pixel reprojection errors of object points under `pose`.
pub fn reprojection_cost(intr: &CameraIntrinsics, pose: &Pose, points: &[(Vector3<f64>, Vector2<f64>)]) -> f64 {
    points
        .iter()
        .map(|(p, obs)| {
            let x = pose.transform_point(p);
            if x.z <= 0.0 {
                return f64::INFINITY;
            }
            let u = Vector2::new(intr.fx * x.x / x.z + intr.cx, intr.fy * x.y / x.z + intr.cy);
            (u - obs).norm_squared()
        })
        .sum()
}

/// Applies a left-multiplicative update: rotation by axis-angle `δ[0..3]`
/// (rad) and translation increment `δ[3..6]` (mm).
pub fn perturb_pose(pose: &Pose, delta: &Vector6<f64>) -> Pose {
    let omega = Vector3::new(delta[0], delta[1], delta[2]);
    let dt = Vector3::new(delta[3], delta[4], delta[5]);
    Pose::new(Rotation3::new(omega) * pose.rotation, pose.translation + dt)
}

/// Residuals (`projected − observed`, 2 per point) and their Jacobian with
/// respect to the [`perturb_pose`] parameters at zero.
pub fn reprojection_jacobian(
    intr: &CameraIntrinsics,
    pose: &Pose,
    points: &[(Vector3<f64>, Vector2<f64>)],
) -> (DMatrix<f64>, nalgebra::DVector<f64>) {
    let n = points.len();
    let mut jac = DMatrix::zeros(2 * n, 6);
    let mut res = nalgebra::DVector::zeros(2 * n);
    for (i, (p, obs)) in points.iter().enumerate() {
        let rp = pose.rotation * p;
        let x = rp + pose.translation;
        let iz = 1.0 / x.z;
        res[2 * i] = intr.fx * x.x * iz + intr.cx - obs.x;
        res[2 * i + 1] = intr.fy * x.y * iz + intr.cy - obs.y;
        let dproj = SMatrix::<f64, 2, 3>::new(
            intr.fx * iz,
            0.0,
            -intr.fx * x.x * iz * iz,
            0.0,
            intr.fy * iz,
            -intr.fy * x.y * iz * iz,
        );
        // dX/dω = -[Rp]×, dX/dt = I
        let skew = -rp.cross_matrix();
        let jr = dproj * skew;
        for r in 0..2 {
            for c in 0..3 {
                jac[(2 * i + r, c)] = jr[(r, c)];
                jac[(2 * i + r, 3 + c)] = dproj[(r, c)];
            }
        }
    }
    (jac, res)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineOutcome {
    pub pose: Pose,
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Accepted steps.
    pub iterations: usize,
}

pub const MAX_ITERATIONS: usize = 50;
pub const STEP_TOLERANCE: f64 = 1e-10;
const INITIAL_DAMPING: f64 = 1e-3;
const MAX_DAMPING: f64 = 1e16;

/// Damped Gauss-Newton over the 6 pose parameters for arbitrary object
/// points (not necessarily on one plane).
pub fn refine_object_pose(
    intr: &CameraIntrinsics,
    init: &Pose,
    points: &[(Vector3<f64>, Vector2<f64>)],
) -> Result<RefineOutcome, PoseError> {
    let initial_cost = reprojection_cost(intr, init, points);
    let mut pose = *init;
    let mut cost = initial_cost;
    let mut lambda = INITIAL_DAMPING;
    let mut accepted = 0;

    for _ in 0..MAX_ITERATIONS {
        let (jac, res) = reprojection_jacobian(intr, &pose, points);
        let jtj: Matrix6<f64> = (jac.transpose() * &jac).fixed_view::<6, 6>(0, 0).into_owned();
        let jtr: Vector6<f64> = (jac.transpose() * &res).fixed_rows::<6>(0).into_owned();
        loop {
            let a = jtj + Matrix6::identity() * lambda;
            let step = match a.cholesky() {
                Some(ch) => -ch.solve(&jtr),
                None => Vector6::from_element(f64::NAN),
            };
            if step.norm() < STEP_TOLERANCE {
                return Ok(RefineOutcome { pose, initial_cost, final_cost: cost, iterations: accepted });
            }
            let candidate = perturb_pose(&pose, &step);
            let candidate_cost = reprojection_cost(intr, &candidate, points);
            if candidate_cost < cost {
                pose = candidate;
                cost = candidate_cost;
                lambda = (lambda / 10.0).max(1e-12);
                accepted += 1;
                break;
            }
            lambda *= 10.0;
            if lambda > MAX_DAMPING {
                return Err(PoseError::Diverged { best: pose, best_cost: cost });
            }
        }
    }
    Ok(RefineOutcome { pose, initial_cost, final_cost: cost, iterations: accepted })
}

/// Refines a tag pose against its corner correspondences.
pub fn refine_pose(intr: &CameraIntrinsics, init: &Pose, corr: &[Correspondence]) -> Result<RefineOutcome, PoseError> {
    let points: Vec<_> = corr.iter().map(|c| (c.tag_frame_point, c.image_point)).collect();
    refine_object_pose(intr, init, &points)
}

/// Full single-tag solve: homography, decomposition, refinement.
pub fn solve_tag_pose(intr: &CameraIntrinsics, corr: &[Correspondence]) -> Result<Pose, PoseError> {
    let h = estimate_homography(corr)?;
    let init = pose_from_homography(&h, intr)?;
    Ok(refine_pose(intr, &init, corr)?.pose)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigSolution {
    pub displacement: Displacement6,
    pub platform_pose: Pose,
    pub tags_used: usize,
    /// Fewer tags were seen than the layout carries.
    pub degraded: bool,
    pub reprojection_cost: f64,
}

/// Recovers the platform displacement from the tags detected in one frame.
///
/// Each tag is solved on its own, the candidate with the lowest joint cost
/// seeds a refinement of the platform pose over every detected corner.
pub fn solve_rig_displacement(
    intr: &CameraIntrinsics,
    layout: &TagLayout,
    tag: &TagGeometry,
    detections: &[Detection],
) -> Result<RigSolution, PoseError> {
    if detections.is_empty() {
        return Err(PoseError::NoDetections);
    }
    let mut points = Vec::with_capacity(4 * detections.len());
    let mut candidates = Vec::with_capacity(detections.len());
    for det in detections {
        let mount = layout.mount(det.tag_id).ok_or(PoseError::UnknownTag(det.tag_id))?.mount;
        let corr = det.correspondences(tag);
        let tag_pose = solve_tag_pose(intr, &corr)?;
        candidates.push(tag_pose.compose(&mount.inverse()));
        points.extend(corr.iter().map(|c| (mount.transform_point(&c.tag_frame_point), c.image_point)));
    }
    let init = candidates
        .iter()
        .min_by(|a, b| reprojection_cost(intr, a, &points).total_cmp(&reprojection_cost(intr, b, &points)))
        .copied()
        .expect("at least one candidate");
    let refined = refine_object_pose(intr, &init, &points)?;
    Ok(RigSolution {
        displacement: displacement_from_platform_pose(layout, &refined.pose),
        platform_pose: refined.pose,
        tags_used: detections.len(),
        degraded: detections.len() < layout.tags.len(),
        reprojection_cost: refined.final_cost,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{pose_from_displacement, project_tag, quantize_corners, QuantizationModel};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn intr600() -> CameraIntrinsics {
        CameraIntrinsics::new(600.0, 600.0, 320.0, 240.0, 640, 480).unwrap()
    }

    fn synth(intr: &CameraIntrinsics, pose: &Pose, tag: &TagGeometry) -> Vec<Correspondence> {
        let px = project_tag(intr, pose, tag).unwrap();
        tag.corners_tag_frame()
            .iter()
            .zip(px.corners.iter())
            .map(|(p, u)| Correspondence { tag_frame_point: *p, image_point: *u })
            .collect()
    }

    fn rotation_error_deg(a: &Pose, b: &Pose) -> f64 {
        (a.rotation.inverse() * b.rotation).angle().to_degrees()
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
        Pose::from_euler_deg(
            rng.random_range(-40.0..40.0),
            rng.random_range(-40.0..40.0),
            rng.random_range(-180.0..180.0),
            Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(15.0..30.0)),
        )
    }

    #[test]
    fn fronto_parallel_homography_is_scaled_similarity() {
        let intr = intr600();
        let tag = TagGeometry::default();
        let pose = Pose::from_translation(Vector3::new(0.0, 0.0, 21.0));
        let corr = synth(&intr, &pose, &tag);
        let h = estimate_homography(&corr).unwrap();
        let s = 600.0 / 21.0;
        let expected = Matrix3::new(s, 0.0, 320.0, 0.0, s, 240.0, 0.0, 0.0, 1.0);
        assert!((h - expected).abs().max() < 1e-9, "{h}");
        for c in &corr {
            assert!((apply_h(&h, &c.tag_frame_point.xy()) - c.image_point).norm() < 1e-9);
        }
    }

    #[test]
    fn collinear_points_are_rejected() {
        let corr: Vec<_> = (0..5)
            .map(|i| Correspondence {
                tag_frame_point: Vector3::new(i as f64, 2.0 * i as f64, 0.0),
                image_point: Vector2::new(100.0 + i as f64, 50.0 + 3.0 * i as f64),
            })
            .collect();
        assert!(matches!(estimate_homography(&corr), Err(PoseError::RankDeficient(_))));
        assert!(matches!(estimate_homography(&corr[..3]), Err(PoseError::TooFewPoints(3))));
    }

    #[test]
    fn random_pose_homography_residual() {
        let intr = intr600();
        let tag = TagGeometry::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let pose = random_pose(&mut rng);
            let corr = synth(&intr, &pose, &tag);
            let h = estimate_homography(&corr).unwrap();
            for c in &corr {
                let q = h * Vector3::new(c.tag_frame_point.x, c.tag_frame_point.y, 1.0);
                let algebraic = Vector2::new(q.x - c.image_point.x * q.z, q.y - c.image_point.y * q.z);
                assert!(algebraic.norm() < 1e-8, "{}", algebraic.norm());
            }
        }
    }

    #[test]
    fn decompose_flat_pose() {
        let intr = intr600();
        let tag = TagGeometry::default();
        let pose = Pose::from_translation(Vector3::new(0.0, 0.0, 21.0));
        let h = estimate_homography(&synth(&intr, &pose, &tag)).unwrap();
        let got = pose_from_homography(&h, &intr).unwrap();
        assert!((got.translation - pose.translation).norm() < 1e-6);
        assert!(rotation_error_deg(&got, &pose) < 1e-6);
        // scale invariance
        let got2 = pose_from_homography(&(h * -3.7), &intr).unwrap();
        assert!((got2.translation - got.translation).norm() < 1e-12);
        assert!((got2.rotation.matrix() - got.rotation.matrix()).abs().max() < 1e-12);
    }

    #[test]
    fn decompose_tilted_pose() {
        let intr = intr600();
        let tag = TagGeometry::default();
        let pose = Pose::from_euler_deg(45.0, 0.0, 0.0, Vector3::new(0.0, 0.0, 21.0));
        let h = estimate_homography(&synth(&intr, &pose, &tag)).unwrap();
        let got = pose_from_homography(&h, &intr).unwrap();
        let (theta, _, _) = got.euler_deg();
        assert!((theta - 45.0).abs() < 0.1, "theta = {theta}");
    }

    #[test]
    fn behind_camera_homography_is_rejected() {
        let mut h = Matrix3::identity();
        h[(2, 2)] = 0.0;
        assert!(pose_from_homography(&h, &intr600()).is_err());
    }

    #[test]
    fn refine_is_fixed_point_at_truth() {
        let intr = intr600();
        let tag = TagGeometry::default();
        let pose = Pose::from_euler_deg(10.0, -5.0, 30.0, Vector3::new(0.1, 0.2, 21.0));
        let out = refine_pose(&intr, &pose, &synth(&intr, &pose, &tag)).unwrap();
        assert_eq!(out.iterations, 0);
        assert_eq!(out.pose, pose);
    }

    #[test]
    fn refine_recovers_perturbed_init() {
        let intr = intr600();
        let tag = TagGeometry::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let truth = random_pose(&mut rng);
            let corr = synth(&intr, &truth, &tag);
            let axis = Vector3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5).normalize();
            let dir = Vector3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5).normalize();
            let mut d = Vector6::zeros();
            d.fixed_rows_mut::<3>(0).copy_from(&(axis * 2f64.to_radians()));
            d.fixed_rows_mut::<3>(3).copy_from(&(dir * 0.5));
            let init = perturb_pose(&truth, &d);
            let out = refine_pose(&intr, &init, &corr).unwrap();
            assert!(out.final_cost <= out.initial_cost);
            assert!((out.pose.translation - truth.translation).norm() < 1e-7);
        }
    }

    #[test]
    fn refine_reports_divergence_on_garbage() {
        let intr = intr600();
        let corr = vec![
            Correspondence { tag_frame_point: Vector3::new(0.0, 0.0, 0.0), image_point: Vector2::new(f64::NAN, 0.0) };
            4
        ];
        let err = refine_pose(&intr, &Pose::from_translation(Vector3::new(0.0, 0.0, 20.0)), &corr).unwrap_err();
        assert!(matches!(err, PoseError::Diverged { .. }));
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let intr = intr600();
        let tag = TagGeometry::default();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let pose = random_pose(&mut rng);
            let mut points: Vec<_> = synth(&intr, &pose, &tag).iter().map(|c| (c.tag_frame_point, c.image_point)).collect();
            for (_, obs) in points.iter_mut() {
                obs.x += rng.random_range(-1.0..1.0);
            }
            let (jac, _) = reprojection_jacobian(&intr, &pose, &points);
            let h = 1e-6;
            for k in 0..6 {
                let mut dp = Vector6::zeros();
                dp[k] = h;
                let (_, rp) = reprojection_jacobian(&intr, &perturb_pose(&pose, &dp), &points);
                let (_, rm) = reprojection_jacobian(&intr, &perturb_pose(&pose, &(-dp)), &points);
                let fd = (rp - rm) / (2.0 * h);
                let an = jac.column(k);
                let rel = (an - &fd).norm() / fd.norm().max(1e-12);
                assert!(rel < 1e-4, "column {k}: rel err {rel}");
            }
        }
    }

    fn detections_for(intr: &CameraIntrinsics, layout: &TagLayout, tag: &TagGeometry, d: &Displacement6) -> Vec<Detection> {
        pose_from_displacement(layout, d)
            .iter()
            .map(|(id, p)| Detection::new(0.0, *id, &project_tag(intr, p, tag).unwrap().corners))
            .collect()
    }

    #[test]
    fn rig_rest_is_zero() {
        let intr = CameraIntrinsics::default();
        let layout = TagLayout::two_tag_default(21.0);
        let tag = TagGeometry::default();
        let dets = detections_for(&intr, &layout, &tag, &Displacement6::ZERO);
        let sol = solve_rig_displacement(&intr, &layout, &tag, &dets).unwrap();
        for v in sol.displacement.to_array() {
            assert!(v.abs() < 1e-9, "{:?}", sol.displacement);
        }
        assert!(!sol.degraded);
    }

    #[test]
    fn rig_noiseless_round_trip() {
        let intr = CameraIntrinsics::default();
        let layout = TagLayout::two_tag_default(21.0);
        let tag = TagGeometry::default();
        let d = Displacement6::new(0.5, -0.3, 0.2, 1.0, -1.0, 2.0);
        let sol = solve_rig_displacement(&intr, &layout, &tag, &detections_for(&intr, &layout, &tag, &d)).unwrap();
        for (a, b) in sol.displacement.to_array().iter().zip(d.to_array()) {
            assert!((a - b).abs() < 1e-6, "{:?}", sol.displacement);
        }
    }

    #[test]
    fn rig_errors() {
        let intr = CameraIntrinsics::default();
        let layout = TagLayout::two_tag_default(21.0);
        let tag = TagGeometry::default();
        assert_eq!(solve_rig_displacement(&intr, &layout, &tag, &[]).unwrap_err(), PoseError::NoDetections);
        let mut dets = detections_for(&intr, &layout, &tag, &Displacement6::ZERO);
        dets[0].tag_id = 9;
        assert_eq!(solve_rig_displacement(&intr, &layout, &tag, &dets).unwrap_err(), PoseError::UnknownTag(9));
    }

    #[test]
    fn single_tag_is_flagged_degraded() {
        let intr = CameraIntrinsics::default();
        let layout = TagLayout::two_tag_default(21.0);
        let tag = TagGeometry::default();
        let d = Displacement6::new(0.2, 0.1, -0.1, 0.5, 0.5, -1.0);
        let dets = detections_for(&intr, &layout, &tag, &d);
        let sol = solve_rig_displacement(&intr, &layout, &tag, &dets[1..]).unwrap();
        assert!(sol.degraded);
        assert_eq!(sol.tags_used, 1);
        for (a, b) in sol.displacement.to_array().iter().zip(d.to_array()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn quantized_rig_depth_is_worst_translation() {
        let intr = CameraIntrinsics::default();
        let layout = TagLayout::two_tag_default(21.0);
        let tag = TagGeometry::default();
        let q = QuantizationModel::new(0.25).unwrap().with_dither(true);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut err = [0.0f64; 6];
        let trials = 300;
        for _ in 0..trials {
            let d = Displacement6::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
            );
            let dets: Vec<_> = pose_from_displacement(&layout, &d)
                .iter()
                .map(|(id, p)| {
                    let c = project_tag(&intr, p, &tag).unwrap().corners;
                    Detection::new(0.0, *id, &quantize_corners(&c, &q, Some(&mut rng)))
                })
                .collect();
            let sol = solve_rig_displacement(&intr, &layout, &tag, &dets).unwrap();
            for (e, (a, b)) in err.iter_mut().zip(sol.displacement.to_array().iter().zip(d.to_array())) {
                *e += (a - b).abs() / trials as f64;
            }
        }
        assert!(err[2] > err[0] && err[2] > err[1]);
    }
}
