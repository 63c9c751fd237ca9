//! Pinhole camera, rigid transforms, tag corner geometry and pixel
//! quantization.
//!
//! Camera frame: x right, y down, z along the optical axis. A tag at the
//! identity pose is parallel to the image plane with its x axis along image
//! columns and its y axis along image rows.

use nalgebra::{Rotation3, Vector2, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dof::Displacement6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CameraError {
    #[error("point at or behind the camera plane (z = {z})")]
    BehindCamera { z: f64 },
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid quantization: d_R must be positive and finite, got {0}")]
    InvalidQuantization(f64),
    #[error("invalid tag geometry: {0}")]
    InvalidTag(String),
    #[error("layout violation: {0}")]
    Layout(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub frame_w: u32,
    pub frame_h: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, frame_w: u32, frame_h: u32) -> Result<Self, CameraError> {
        let intr = Self { fx, fy, cx, cy, frame_w, frame_h };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(CameraError::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx = {}, fy = {})",
                self.fx, self.fy
            )));
        }
        let (w, h) = (self.frame_w as f64, self.frame_h as f64);
        if !(self.cx > 0.0 && self.cx < w && self.cy > 0.0 && self.cy < h) {
            return Err(CameraError::InvalidIntrinsics(format!(
                "principal point ({}, {}) outside {}x{} frame",
                self.cx, self.cy, self.frame_w, self.frame_h
            )));
        }
        Ok(())
    }

    /// Calibration matrix `K`.
    pub fn matrix(&self) -> nalgebra::Matrix3<f64> {
        nalgebra::Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn contains(&self, px: &Vector2<f64>) -> bool {
        px.x >= 0.0 && px.y >= 0.0 && px.x < self.frame_w as f64 && px.y < self.frame_h as f64
    }

    /// Projects a point already expressed in the camera frame.
    pub fn project_camera_point(&self, p: &Vector3<f64>) -> Result<Vector2<f64>, CameraError> {
        if !(p.z > 0.0) {
            return Err(CameraError::BehindCamera { z: p.z });
        }
        Ok(Vector2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }
}

impl Default for CameraIntrinsics {
    /// 640x480 webcam with a 700 px focal length: a 4.5 mm tag at 21 mm
    /// images to 150 px.
    fn default() -> Self {
        Self { fx: 700.0, fy: 700.0, cx: 320.0, cy: 240.0, frame_w: 640, frame_h: 480 }
    }
}

/// Rigid transform mapping points of a child frame into a parent frame:
/// `p_parent = rotation * p_child + translation` (mm).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Rotation3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self { rotation: Rotation3::identity(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self { rotation: Rotation3::identity(), translation: t }
    }

    /// Builds a pose from Euler angles in degrees, composed as
    /// `Rz(gamma) * Ry(phi) * Rx(theta)`.
    pub fn from_euler_deg(theta: f64, phi: f64, gamma: f64, t: Vector3<f64>) -> Self {
        Self { rotation: rotation_from_euler_deg(theta, phi, gamma), translation: t }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let r_inv = self.rotation.inverse();
        Pose { rotation: r_inv, translation: -(r_inv * self.translation) }
    }

    /// Euler angles `(theta, phi, gamma)` in degrees for the `Rz·Ry·Rx`
    /// convention.
    pub fn euler_deg(&self) -> (f64, f64, f64) {
        euler_deg_from_rotation(&self.rotation)
    }

    /// Largest deviation of `RᵀR` from identity plus `|det R − 1|`.
    pub fn orthonormality_error(&self) -> f64 {
        let m = self.rotation.matrix();
        let gram = m.transpose() * m - nalgebra::Matrix3::identity();
        gram.abs().max() + (m.determinant() - 1.0).abs()
    }
}

pub fn rotation_from_euler_deg(theta: f64, phi: f64, gamma: f64) -> Rotation3<f64> {
    // nalgebra composes (roll, pitch, yaw) as Rz(yaw) * Ry(pitch) * Rx(roll)
    Rotation3::from_euler_angles(theta.to_radians(), phi.to_radians(), gamma.to_radians())
}

pub fn euler_deg_from_rotation(r: &Rotation3<f64>) -> (f64, f64, f64) {
    let (roll, pitch, yaw) = r.euler_angles();
    (roll.to_degrees(), pitch.to_degrees(), yaw.to_degrees())
}

/// Square tag of side `side_mm`, centred at the tag-frame origin in the
/// z = 0 plane.
///
/// Corner order is top-left, bottom-left, bottom-right, top-right: counter
/// clockwise as seen in the image when the tag sits at the identity pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TagGeometry {
    pub side_mm: f64,
}

impl TagGeometry {
    pub fn new(side_mm: f64) -> Result<Self, CameraError> {
        if !(side_mm > 0.0 && side_mm.is_finite()) {
            return Err(CameraError::InvalidTag(format!("side must be positive, got {side_mm}")));
        }
        Ok(Self { side_mm })
    }

    pub fn corners_tag_frame(&self) -> [Vector3<f64>; 4] {
        let h = self.side_mm / 2.0;
        [
            Vector3::new(-h, -h, 0.0),
            Vector3::new(-h, h, 0.0),
            Vector3::new(h, h, 0.0),
            Vector3::new(h, -h, 0.0),
        ]
    }
}

impl Default for TagGeometry {
    /// 3.8 mm marker plus its white border.
    fn default() -> Self {
        Self { side_mm: 4.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TagMount {
    pub tag_id: u32,
    /// Tag pose relative to the platform frame.
    pub mount: Pose,
}

/// Where the tags sit on the platform, and where the platform sits in
/// front of the camera. The platform origin is its centroid: rotations in a
/// [`Displacement6`] are taken about it.
#[derive(Debug, Clone, PartialEq)]
pub struct TagLayout {
    pub platform_rest: Pose,
    pub tags: Vec<TagMount>,
}

impl TagLayout {
    /// Two tags tilted ±45° about the platform x axis, centres 6 mm apart,
    /// with the platform centroid `d_tag_mm` in front of the camera.
    pub fn two_tag_default(d_tag_mm: f64) -> Self {
        Self {
            platform_rest: Pose::from_translation(Vector3::new(0.0, 0.0, d_tag_mm)),
            tags: vec![
                TagMount { tag_id: 0, mount: Pose::from_euler_deg(45.0, 0.0, 0.0, Vector3::new(0.0, -3.0, 0.0)) },
                TagMount { tag_id: 1, mount: Pose::from_euler_deg(-45.0, 0.0, 0.0, Vector3::new(0.0, 3.0, 0.0)) },
            ],
        }
    }

    /// A single tag facing the camera, at the platform centroid.
    pub fn single_flat(d_tag_mm: f64) -> Self {
        Self {
            platform_rest: Pose::from_translation(Vector3::new(0.0, 0.0, d_tag_mm)),
            tags: vec![TagMount { tag_id: 0, mount: Pose::identity() }],
        }
    }

    pub fn mount(&self, tag_id: u32) -> Option<&TagMount> {
        self.tags.iter().find(|m| m.tag_id == tag_id)
    }

    /// Checks that every tag corner projects inside the frame at rest.
    pub fn validate(&self, intr: &CameraIntrinsics, tag: &TagGeometry) -> Result<(), CameraError> {
        if self.tags.is_empty() {
            return Err(CameraError::Layout("layout has no tags".into()));
        }
        for (i, a) in self.tags.iter().enumerate() {
            if self.tags[..i].iter().any(|b| b.tag_id == a.tag_id) {
                return Err(CameraError::Layout(format!("duplicate tag id {}", a.tag_id)));
            }
        }
        for (id, pose) in self.rest_tag_poses() {
            let projected = project_tag(intr, &pose, tag)?;
            if !projected.in_frame {
                return Err(CameraError::Layout(format!("tag {id} leaves the frame at rest")));
            }
        }
        Ok(())
    }

    pub fn rest_tag_poses(&self) -> Vec<(u32, Pose)> {
        self.tags.iter().map(|m| (m.tag_id, self.platform_rest.compose(&m.mount))).collect()
    }
}

/// Subpixel resolution of the corner detector. `d_r` is the smallest
/// discernible image displacement in pixels; the counts-per-pixel factor
/// is its reciprocal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantizationModel {
    pub d_r: f64,
    /// Add uniform noise in `[-d_r/2, d_r/2)` before rounding.
    #[serde(default)]
    pub dither: bool,
}

impl QuantizationModel {
    pub fn new(d_r: f64) -> Result<Self, CameraError> {
        let q = Self { d_r, dither: false };
        q.validate()?;
        Ok(q)
    }

    pub fn with_dither(mut self, dither: bool) -> Self {
        self.dither = dither;
        self
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        if !(self.d_r > 0.0 && self.d_r.is_finite()) {
            return Err(CameraError::InvalidQuantization(self.d_r));
        }
        Ok(())
    }

    /// `C = 1 / d_R`.
    pub fn counts_per_pixel(&self) -> f64 {
        1.0 / self.d_r
    }

    pub fn quantize(&self, v: f64) -> f64 {
        (v / self.d_r).round() * self.d_r
    }
}

impl Default for QuantizationModel {
    fn default() -> Self {
        Self { d_r: 0.25, dither: false }
    }
}

/// Projects a point given in the frame described by `pose` (e.g. a tag or
/// the platform) into pixels. No lens distortion.
pub fn project_point(intr: &CameraIntrinsics, pose: &Pose, p: &Vector3<f64>) -> Result<Vector2<f64>, CameraError> {
    intr.project_camera_point(&pose.transform_point(p))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedTag {
    pub corners: [Vector2<f64>; 4],
    /// False when any corner falls outside the frame.
    pub in_frame: bool,
}

pub fn project_tag(intr: &CameraIntrinsics, tag_pose: &Pose, tag: &TagGeometry) -> Result<ProjectedTag, CameraError> {
    let tag_corners = tag.corners_tag_frame();
    let mut corners = [Vector2::zeros(); 4];
    for (out, c) in corners.iter_mut().zip(tag_corners.iter()) {
        *out = project_point(intr, tag_pose, c)?;
    }
    let in_frame = corners.iter().all(|c| intr.contains(c));
    Ok(ProjectedTag { corners, in_frame })
}

/// Rounds each coordinate to the nearest multiple of `d_r`. When the model
/// has dithering enabled and an RNG is supplied, uniform noise in
/// `[-d_r/2, d_r/2)` is added first.
pub fn quantize_corners<R: Rng + ?Sized>(
    corners: &[Vector2<f64>],
    q: &QuantizationModel,
    mut rng: Option<&mut R>,
) -> Vec<Vector2<f64>> {
    let half = q.d_r / 2.0;
    corners
        .iter()
        .map(|c| {
            let mut c = *c;
            if q.dither {
                if let Some(rng) = rng.as_deref_mut() {
                    c.x += rng.random_range(-half..half);
                    c.y += rng.random_range(-half..half);
                }
            }
            Vector2::new(q.quantize(c.x), q.quantize(c.y))
        })
        .collect()
}

/// Platform pose for a displacement: the rest pose composed with the
/// translation `(Dx, Dy, Dz)` and the rotation `Rz(Dγ)·Ry(Dφ)·Rx(Dθ)` about
/// the platform centroid, both in platform axes.
pub fn platform_pose_from_displacement(layout: &TagLayout, d: &Displacement6) -> Pose {
    let delta = Pose::from_euler_deg(d.theta, d.phi, d.gamma, Vector3::new(d.x, d.y, d.z));
    layout.platform_rest.compose(&delta)
}

/// Inverse of [`platform_pose_from_displacement`].
pub fn displacement_from_platform_pose(layout: &TagLayout, platform: &Pose) -> Displacement6 {
    let delta = layout.platform_rest.inverse().compose(platform);
    let (theta, phi, gamma) = delta.euler_deg();
    let t = delta.translation;
    Displacement6::new(t.x, t.y, t.z, theta, phi, gamma)
}

/// Per-tag camera-frame poses for a platform displacement.
pub fn pose_from_displacement(layout: &TagLayout, d: &Displacement6) -> Vec<(u32, Pose)> {
    let platform = platform_pose_from_displacement(layout, d);
    layout.tags.iter().map(|m| (m.tag_id, platform.compose(&m.mount))).collect()
}
