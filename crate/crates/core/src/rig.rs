//! Spring platform model, synthetic dataset generation and the stale-buffer
//! frame-rate harness.
//!
//! The rig is quasi-static: displacement follows the applied wrench through
//! the linearized spring stiffness with no mass or damping.

use std::collections::VecDeque;
use std::f64::consts::PI;

use nalgebra::{Matrix3, Matrix6, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{
    pose_from_displacement, project_tag, quantize_corners, CameraError, CameraIntrinsics, QuantizationModel,
    TagGeometry, TagLayout,
};
use crate::dof::{Displacement6, Wrench};
use crate::pnp::Detection;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RigError {
    #[error("invalid rig parameters: {0}")]
    InvalidParams(String),
    #[error("stiffness matrix is singular (smallest eigenvalue {min_eigenvalue:.3e})")]
    Singular { min_eigenvalue: f64 },
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("invalid dataset request: {0}")]
    InvalidRequest(String),
    #[error("no confirmed toggles within {timeout_s} s")]
    NoToggles { timeout_s: f64 },
    #[error(transparent)]
    Camera(#[from] CameraError),
}

const DEG: f64 = PI / 180.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigParams {
    /// Axial stiffness of one spring, N/mm.
    pub spring_k: f64,
    /// Spring attachment points relative to the platform centroid, mm.
    pub springs: [[f64; 3]; 4],
    /// Lateral over axial spring stiffness.
    pub lateral_fraction: f64,
    /// Distance from the camera to the platform centroid at rest, mm.
    pub rest_height_mm: f64,
}

impl Default for RigParams {
    fn default() -> Self {
        Self {
            spring_k: 0.7,
            springs: [[10.0, 10.0, 0.0], [-10.0, 10.0, 0.0], [-10.0, -10.0, 0.0], [10.0, -10.0, 0.0]],
            lateral_fraction: 0.5,
            rest_height_mm: 21.0,
        }
    }
}

impl RigParams {
    pub fn validate(&self) -> Result<(), RigError> {
        if !(self.spring_k > 0.0 && self.spring_k.is_finite()) {
            return Err(RigError::InvalidParams(format!("spring_k must be positive, got {}", self.spring_k)));
        }
        if !(self.lateral_fraction > 0.0 && self.lateral_fraction <= 1.0) {
            return Err(RigError::InvalidParams(format!(
                "lateral_fraction must lie in (0, 1], got {}",
                self.lateral_fraction
            )));
        }
        if !(self.rest_height_mm > 0.0) {
            return Err(RigError::InvalidParams(format!("rest_height_mm must be positive, got {}", self.rest_height_mm)));
        }
        if self.springs.iter().flatten().any(|v| !v.is_finite()) {
            return Err(RigError::InvalidParams("spring offsets must be finite".into()));
        }
        Ok(())
    }
}

/// Linearized suspension stiffness.
///
/// Stored in consistent units (mm, rad) → (N, N·mm), where the matrix is
/// symmetric positive-definite. [`StiffnessMatrix::per_degree`] gives the
/// same map with rotations in degrees, which is what a calibration fitted
/// on [`Displacement6`] recovers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StiffnessMatrix {
    radian: Matrix6<f64>,
}

fn degree_scaling() -> Matrix6<f64> {
    Matrix6::from_diagonal(&nalgebra::Vector6::new(1.0, 1.0, 1.0, DEG, DEG, DEG))
}

impl StiffnessMatrix {
    pub fn from_radian_matrix(m: Matrix6<f64>) -> Result<Self, RigError> {
        let asym = (m - m.transpose()).abs().max();
        if asym > 1e-9 * m.abs().max().max(1.0) {
            return Err(RigError::InvalidParams(format!("stiffness matrix not symmetric ({asym:.3e})")));
        }
        let eig = m.symmetric_eigenvalues();
        let (lo, hi) = (eig.min(), eig.max());
        if !(lo > 1e-9 * hi) {
            return Err(RigError::Singular { min_eigenvalue: lo });
        }
        Ok(Self { radian: m })
    }

    /// (mm, rad) → (N, N·mm). Symmetric.
    pub fn radian(&self) -> &Matrix6<f64> {
        &self.radian
    }

    /// (mm, deg) → (N, N·mm).
    pub fn per_degree(&self) -> Matrix6<f64> {
        self.radian * degree_scaling()
    }

    pub fn eigenvalues(&self) -> nalgebra::Vector6<f64> {
        self.radian.symmetric_eigenvalues()
    }

    pub fn wrench(&self, d: &Displacement6) -> Wrench {
        Wrench::from_vector(&(self.per_degree() * d.to_vector()))
    }
}

/// Sums each spring's contribution `Jᵀ S J`, with `J = [I, −[r]×]` the map
/// from small platform motion to attachment-point motion and
/// `S = diag(k·lateral, k·lateral, k)`.
pub fn stiffness_from_springs(p: &RigParams) -> Result<StiffnessMatrix, RigError> {
    p.validate()?;
    let s = Matrix3::from_diagonal(&Vector3::new(
        p.spring_k * p.lateral_fraction,
        p.spring_k * p.lateral_fraction,
        p.spring_k,
    ));
    let mut k = Matrix6::zeros();
    for r in &p.springs {
        let rx = Vector3::new(r[0], r[1], r[2]).cross_matrix();
        let mut j = nalgebra::SMatrix::<f64, 3, 6>::zeros();
        j.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
        j.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-rx));
        k += j.transpose() * s * j;
    }
    // exact symmetry
    let k = (k + k.transpose()) * 0.5;
    StiffnessMatrix::from_radian_matrix(k)
}

/// Solves `K·d = w` for the quasi-static displacement.
pub fn displacement_from_wrench(k: &StiffnessMatrix, w: &Wrench) -> Result<Displacement6, RigError> {
    let chol = k.radian.cholesky().ok_or(RigError::Singular { min_eigenvalue: k.eigenvalues().min() })?;
    let mut d = chol.solve(&w.to_vector());
    for i in 3..6 {
        d[i] /= DEG;
    }
    Ok(Displacement6::from_vector(&d))
}

/// Piecewise-linear wrench waypoints.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    waypoints: Vec<(f64, Wrench)>,
}

impl Trajectory {
    pub fn new(waypoints: Vec<(f64, Wrench)>) -> Result<Self, RigError> {
        if waypoints.is_empty() {
            return Err(RigError::InvalidTrajectory("no waypoints".into()));
        }
        if waypoints.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(RigError::InvalidTrajectory("timestamps must be strictly increasing".into()));
        }
        if waypoints.iter().any(|(t, w)| !t.is_finite() || !w.is_finite()) {
            return Err(RigError::InvalidTrajectory("non-finite waypoint".into()));
        }
        Ok(Self { waypoints })
    }

    pub fn waypoints(&self) -> &[(f64, Wrench)] {
        &self.waypoints
    }

    pub fn start(&self) -> f64 {
        self.waypoints[0].0
    }

    pub fn end(&self) -> f64 {
        self.waypoints[self.waypoints.len() - 1].0
    }

    /// Linear interpolation, held constant outside the waypoint span.
    pub fn at(&self, t: f64) -> Wrench {
        let wp = &self.waypoints;
        if t <= wp[0].0 {
            return wp[0].1;
        }
        if t >= wp[wp.len() - 1].0 {
            return wp[wp.len() - 1].1;
        }
        let i = wp.partition_point(|(ti, _)| *ti <= t);
        let (t0, w0) = wp[i - 1];
        let (t1, w1) = wp[i];
        let u = (t - t0) / (t1 - t0);
        let a = w0.to_array();
        let b = w1.to_array();
        Wrench::from_array(std::array::from_fn(|k| a[k] + u * (b[k] - a[k])))
    }
}

/// One sinusoidal component of an axis load.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tone {
    pub freq_hz: f64,
    /// Relative weight; an axis's weights are normalized to its amplitude.
    pub weight: f64,
}

/// Describes how to build a [`Trajectory`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrajectorySpec {
    /// Every axis loaded at once with a sum of slow tones whose phases are
    /// drawn from the seed.
    Compound {
        duration_s: f64,
        waypoint_dt_s: f64,
        /// Peak load per axis (N, N·mm).
        amplitude: [f64; 6],
        tones: [Vec<Tone>; 6],
    },
    /// Explicit waypoints `[t, fx, fy, fz, mx, my, mz]`.
    Waypoints { points: Vec<[f64; 7]> },
}

impl Default for TrajectorySpec {
    /// 60 s of compound loading. Shear and bending carry most of the load,
    /// axial push and twist are lightly excited.
    fn default() -> Self {
        let tones = |f1: f64, f2: f64| vec![Tone { freq_hz: f1, weight: 0.7 }, Tone { freq_hz: f2, weight: 0.3 }];
        TrajectorySpec::Compound {
            duration_s: 60.0,
            waypoint_dt_s: 0.01,
            amplitude: [1.0, 1.0, 0.25, 20.0, 20.0, 1.0],
            tones: [
                tones(0.050, 0.117),
                tones(0.067, 0.133),
                tones(0.083, 0.150),
                tones(0.058, 0.142),
                tones(0.075, 0.125),
                tones(0.092, 0.108),
            ],
        }
    }
}

impl TrajectorySpec {
    pub fn zero(duration_s: f64) -> Self {
        TrajectorySpec::Waypoints {
            points: vec![[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], [duration_s, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]],
        }
    }

    pub fn build(&self, seed: u64) -> Result<Trajectory, RigError> {
        match self {
            TrajectorySpec::Waypoints { points } => {
                Trajectory::new(points.iter().map(|p| (p[0], Wrench::new(p[1], p[2], p[3], p[4], p[5], p[6]))).collect())
            }
            TrajectorySpec::Compound { duration_s, waypoint_dt_s, amplitude, tones } => {
                if !(*duration_s > 0.0 && *waypoint_dt_s > 0.0) {
                    return Err(RigError::InvalidTrajectory("duration and waypoint spacing must be positive".into()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7472_616a);
                let phases: Vec<Vec<f64>> =
                    tones.iter().map(|axis| axis.iter().map(|_| rng.random_range(0.0..2.0 * PI)).collect()).collect();
                let n = (duration_s / waypoint_dt_s).ceil() as usize;
                let mut points = Vec::with_capacity(n + 1);
                for i in 0..=n {
                    let t = (i as f64 * waypoint_dt_s).min(*duration_s);
                    let w: [f64; 6] = std::array::from_fn(|axis| {
                        let total: f64 = tones[axis].iter().map(|tone| tone.weight.abs()).sum();
                        if total == 0.0 {
                            return 0.0;
                        }
                        let s: f64 = tones[axis]
                            .iter()
                            .zip(&phases[axis])
                            .map(|(tone, ph)| tone.weight * (2.0 * PI * tone.freq_hz * t + ph).sin())
                            .sum();
                        amplitude[axis] * s / total
                    });
                    points.push((t, Wrench::from_array(w)));
                    if t >= *duration_s {
                        break;
                    }
                }
                Trajectory::new(points)
            }
        }
    }
}

/// Everything the simulator needs besides geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRequest {
    pub cam_fps: f64,
    pub truth_fps: f64,
    /// Camera timestamps trail the truth stream by this much.
    pub lag_s: f64,
    /// Uniform frame-time jitter as a fraction of the camera period.
    pub jitter_fraction: f64,
    /// `None` leaves corners at their exact projections.
    pub quantization: Option<QuantizationModel>,
    pub seed: u64,
}

impl Default for DatasetRequest {
    fn default() -> Self {
        Self {
            cam_fps: 25.0,
            truth_fps: 125.0,
            lag_s: 0.040,
            jitter_fraction: 0.02,
            quantization: Some(QuantizationModel::default().with_dither(true)),
            seed: 0,
        }
    }
}

/// Geometry shared by simulator and solver.
#[derive(Debug, Clone, PartialEq)]
pub struct Rig {
    pub params: RigParams,
    pub intrinsics: CameraIntrinsics,
    pub tag: TagGeometry,
    pub layout: TagLayout,
}

impl Default for Rig {
    fn default() -> Self {
        let params = RigParams::default();
        let layout = TagLayout::two_tag_default(params.rest_height_mm);
        Self { params, intrinsics: CameraIntrinsics::default(), tag: TagGeometry::default(), layout }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    pub timestamp: f64,
    pub tag_id: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Ground-truth wrench stream `(t, w)`.
    pub truth: Vec<(f64, Wrench)>,
    /// Rows for every tag detected in every frame, in time order.
    pub detections: Vec<Detection>,
    /// Tags lost because a corner left the frame.
    pub dropouts: Vec<Dropout>,
    /// Emitted timestamp of each camera frame, detected tags or not.
    pub frame_times: Vec<f64>,
    /// Displacement actually applied at each camera frame.
    pub true_displacements: Vec<Displacement6>,
}

/// Samples the trajectory at both rates and renders what the detector
/// would report. Fully determined by the request seed.
pub fn generate_dataset(rig: &Rig, traj: &Trajectory, req: &DatasetRequest) -> Result<Dataset, RigError> {
    if !(req.cam_fps > 0.0 && req.truth_fps > 0.0) {
        return Err(RigError::InvalidRequest("sample rates must be positive".into()));
    }
    if !(req.lag_s >= 0.0) {
        return Err(RigError::InvalidRequest(format!("lag must be non-negative, got {}", req.lag_s)));
    }
    if !(0.0..0.5).contains(&req.jitter_fraction) {
        return Err(RigError::InvalidRequest(format!("jitter fraction must lie in [0, 0.5), got {}", req.jitter_fraction)));
    }
    if let Some(q) = &req.quantization {
        q.validate()?;
    }
    let stiffness = stiffness_from_springs(&rig.params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
    let (t0, t1) = (traj.start(), traj.end());

    let n_truth = ((t1 - t0) * req.truth_fps + 1e-9).floor() as usize;
    let truth = (0..=n_truth)
        .map(|i| {
            let t = t0 + i as f64 / req.truth_fps;
            (t, traj.at(t))
        })
        .collect();

    let period = 1.0 / req.cam_fps;
    let n_frames = ((t1 - t0) * req.cam_fps + 1e-9).floor() as usize;
    let mut detections = Vec::with_capacity(2 * (n_frames + 1));
    let mut dropouts = Vec::new();
    let mut frame_times = Vec::with_capacity(n_frames + 1);
    let mut true_displacements = Vec::with_capacity(n_frames + 1);
    for j in 0..=n_frames {
        let jitter = if req.jitter_fraction > 0.0 {
            rng.random_range(-req.jitter_fraction..req.jitter_fraction) * period
        } else {
            0.0
        };
        let t = (t0 + j as f64 * period + jitter).clamp(t0, t1);
        let d = displacement_from_wrench(&stiffness, &traj.at(t))?;
        let stamp = t + req.lag_s;
        frame_times.push(stamp);
        true_displacements.push(d);
        for (tag_id, pose) in pose_from_displacement(&rig.layout, &d) {
            let projected = match project_tag(&rig.intrinsics, &pose, &rig.tag) {
                Ok(p) if p.in_frame => p,
                _ => {
                    dropouts.push(Dropout { timestamp: stamp, tag_id });
                    continue;
                }
            };
            let corners = match &req.quantization {
                Some(q) => quantize_corners(&projected.corners, q, Some(&mut rng)),
                None => projected.corners.to_vec(),
            };
            if corners.iter().any(|c| !rig.intrinsics.contains(c)) {
                dropouts.push(Dropout { timestamp: stamp, tag_id });
                continue;
            }
            detections.push(Detection::new(stamp, tag_id, &corners));
        }
    }
    Ok(Dataset { truth, detections, dropouts, frame_times, true_displacements })
}

/// Camera behind a capture API that hands out buffered frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameSourceSpec {
    pub true_fps: f64,
    /// Frames the driver queues before dropping the oldest; 0 keeps only
    /// the latest frame.
    pub buffer_depth: usize,
    /// Uniform capture-time jitter as a fraction of the frame period.
    #[serde(default)]
    pub jitter_fraction: f64,
    /// Time the script spends per read (grab + colour check), seconds.
    #[serde(default = "default_read_cost")]
    pub read_cost_s: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_read_cost() -> f64 {
    0.001
}

impl Default for FrameSourceSpec {
    fn default() -> Self {
        Self { true_fps: 25.0, buffer_depth: 2, jitter_fraction: 0.02, read_cost_s: default_read_cost(), seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FpsMeasurement {
    /// Rate from confirmed screen toggles.
    pub fps: f64,
    pub toggles: usize,
    /// What counting raw reads would report.
    pub naive_read_rate: f64,
    pub elapsed_s: f64,
}

/// Runs the black/white toggle protocol against a simulated frame source.
///
/// The script reads frames back to back. A read returns the oldest queued
/// frame, or repeats the last one when nothing new has arrived. When a
/// frame captured after the latest screen change comes back, the toggle is
/// confirmed and the screen flips again. The rate is the number of toggle
/// intervals over the time between the first and last toggle. The clock
/// runs in integer nanoseconds.
pub fn measure_fps(src: &FrameSourceSpec, protocol_timeout_s: f64) -> Result<FpsMeasurement, RigError> {
    if !(src.true_fps > 0.0 && src.true_fps.is_finite()) {
        return Err(RigError::InvalidRequest(format!("true_fps must be positive, got {}", src.true_fps)));
    }
    if !(src.read_cost_s > 0.0) {
        return Err(RigError::InvalidRequest("read_cost_s must be positive".into()));
    }
    if !(0.0..0.5).contains(&src.jitter_fraction) {
        return Err(RigError::InvalidRequest(format!("jitter fraction must lie in [0, 0.5), got {}", src.jitter_fraction)));
    }
    if protocol_timeout_s * src.true_fps < 100.0 {
        return Err(RigError::InvalidRequest(format!(
            "timeout {protocol_timeout_s} s covers fewer than 100 frames at {} fps",
            src.true_fps
        )));
    }
    const NS: f64 = 1e9;
    let period = (NS / src.true_fps).round() as i64;
    let read_cost = ((src.read_cost_s * NS).round() as i64).max(1);
    let timeout = (protocol_timeout_s * NS).round() as i64;
    let mut rng = ChaCha8Rng::seed_from_u64(src.seed);
    let max_jitter = (src.jitter_fraction * period as f64) as i64;
    let capture_time = |k: i64, rng: &mut ChaCha8Rng| -> i64 {
        let j = if max_jitter > 0 { rng.random_range(-max_jitter..=max_jitter) } else { 0 };
        k * period + j
    };

    // Frames captured before the run started show the old colour.
    let mut queue: VecDeque<i64> = (0..src.buffer_depth as i64).map(|i| -(i + 1) * period).rev().collect();
    let mut latest: Option<i64> = None;
    let mut last_returned: Option<i64> = queue.back().copied();
    let mut k = 1i64;
    let mut next_capture = capture_time(k, &mut rng);

    let mut screen_changed_at = 0i64;
    let mut toggle_times = Vec::new();
    let mut reads = 0usize;
    let mut now = 0i64;
    while now <= timeout {
        while next_capture <= now {
            if src.buffer_depth == 0 {
                latest = Some(next_capture);
            } else {
                if queue.len() == src.buffer_depth {
                    queue.pop_front();
                }
                queue.push_back(next_capture);
            }
            k += 1;
            next_capture = capture_time(k, &mut rng);
        }
        let frame = if src.buffer_depth == 0 { latest.take() } else { queue.pop_front() }.or(last_returned);
        last_returned = frame;
        reads += 1;
        if let Some(captured) = frame {
            if captured > screen_changed_at {
                toggle_times.push(now);
                screen_changed_at = now;
            }
        }
        now += read_cost;
    }

    // one toggle gives no interval to time
    if toggle_times.len() < 2 {
        return Err(RigError::NoToggles { timeout_s: protocol_timeout_s });
    }
    let elapsed = (toggle_times[toggle_times.len() - 1] - toggle_times[0]) as f64 / NS;
    let fps = (toggle_times.len() - 1) as f64 / elapsed;
    Ok(FpsMeasurement {
        fps,
        toggles: toggle_times.len(),
        naive_read_rate: reads as f64 / (timeout as f64 / NS),
        elapsed_s: elapsed,
    })
}
