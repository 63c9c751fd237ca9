//! Six-axis quantities exchanged between the rig, the pose solver and the
//! calibration.
//!
//! Units are fixed at this boundary: millimetres and degrees for
//! displacements, newtons and newton-millimetres for wrenches.

use nalgebra::Vector6;
use serde::{Deserialize, Serialize};

pub const AXIS_NAMES_DISPLACEMENT: [&str; 6] = ["dx", "dy", "dz", "dtheta", "dphi", "dgamma"];
pub const AXIS_NAMES_WRENCH: [&str; 6] = ["fx", "fy", "fz", "mx", "my", "mz"];

/// Platform displacement `(Dx, Dy, Dz, Dθ, Dφ, Dγ)`.
///
/// Translations in mm; `theta`, `phi`, `gamma` are rotations about the
/// platform x, y and z axes, in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Displacement6 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub theta: f64,
    pub phi: f64,
    pub gamma: f64,
}

impl Displacement6 {
    pub const ZERO: Self = Self::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, z: f64, theta: f64, phi: f64, gamma: f64) -> Self {
        Self { x, y, z, theta, phi, gamma }
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self::new(a[0], a[1], a[2], a[3], a[4], a[5])
    }

    pub fn to_array(self) -> [f64; 6] {
        [self.x, self.y, self.z, self.theta, self.phi, self.gamma]
    }

    pub fn to_vector(self) -> Vector6<f64> {
        Vector6::from(self.to_array())
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3], v[4], v[5])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Six-axis force-torque `(Fx, Fy, Fz, Mx, My, Mz)` in N and N·mm.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Wrench {
    pub fx: f64,
    pub fy: f64,
    pub fz: f64,
    pub mx: f64,
    pub my: f64,
    pub mz: f64,
}

impl Wrench {
    pub const ZERO: Self = Self::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.0);

    pub const fn new(fx: f64, fy: f64, fz: f64, mx: f64, my: f64, mz: f64) -> Self {
        Self { fx, fy, fz, mx, my, mz }
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self::new(a[0], a[1], a[2], a[3], a[4], a[5])
    }

    pub fn to_array(self) -> [f64; 6] {
        [self.fx, self.fy, self.fz, self.mx, self.my, self.mz]
    }

    pub fn to_vector(self) -> Vector6<f64> {
        Vector6::from(self.to_array())
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3], v[4], v[5])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}
