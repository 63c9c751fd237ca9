//! Fiducial-based six-axis force-torque sensing.
//!
//! A webcam looks at fiducial tags glued under a spring-suspended platform.
//! Tag corners give the platform pose, the pose gives a displacement, and a
//! linear calibration maps displacement to force-torque. The crate covers
//! the whole chain on detected corner coordinates:
//!
//! - [`camera`]: pinhole projection, rigid transforms, tag layout, pixel quantization
//! - [`pnp`]: planar pose from tag corners and multi-tag platform fusion
//! - [`rig`]: spring platform model, synthetic datasets, frame-rate harness
//! - [`signal`]: exponential smoothing, lag estimation, linear resampling
//! - [`calibration`]: affine force-torque fit and R² evaluation
//! - [`analysis`]: closed-form resolution and sensitivity figures
//! - [`io`], [`pipeline`]: file formats and the calibrate/evaluate workflows

pub mod analysis;
pub mod calibration;
pub mod camera;
pub mod dof;
pub mod io;
pub mod pipeline;
pub mod pnp;
pub mod rig;
pub mod signal;

pub use dof::{Displacement6, Wrench};
