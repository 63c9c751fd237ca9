//! Closed-form resolution and sensitivity figures for a fiducial sensor.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::QuantizationModel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("travel must be positive, got {0} px")]
    NonPositiveTravel(f64),
    #[error("counts per pixel must be at least 1, got {0}")]
    InvalidCounts(f64),
    #[error("reference angle must lie in (0, 90) degrees, got {0}")]
    InvalidAngle(f64),
    #[error("force range must be positive, got {0}")]
    InvalidForceRange(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorGeometry {
    pub w_frame: f64,
    pub h_frame: f64,
    /// Tag footprint in the image, px.
    pub w_img: f64,
    pub h_img: f64,
    pub w_tag_mm: f64,
    pub d_tag_mm: f64,
    pub quantization: QuantizationModel,
}

impl Default for SensorGeometry {
    fn default() -> Self {
        Self {
            w_frame: 640.0,
            h_frame: 480.0,
            w_img: 150.0,
            h_img: 240.0,
            w_tag_mm: 4.5,
            d_tag_mm: 21.0,
            quantization: QuantizationModel::default(),
        }
    }
}

impl SensorGeometry {
    pub fn validate(&self) -> Result<(), AnalysisError> {
        let fields = [
            ("w_frame", self.w_frame),
            ("h_frame", self.h_frame),
            ("w_img", self.w_img),
            ("h_img", self.h_img),
            ("w_tag_mm", self.w_tag_mm),
            ("d_tag_mm", self.d_tag_mm),
            ("quantization.d_r", self.quantization.d_r),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(AnalysisError::Geometry(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.quantization.d_r > 1.0 {
            return Err(AnalysisError::Geometry(format!("d_r must not exceed 1 px, got {}", self.quantization.d_r)));
        }
        if self.w_img >= self.w_frame {
            return Err(AnalysisError::Geometry("w_img must be smaller than w_frame".into()));
        }
        if self.h_img >= self.h_frame {
            return Err(AnalysisError::Geometry("h_img must be smaller than h_frame".into()));
        }
        Ok(())
    }

    pub fn d_r(&self) -> f64 {
        self.quantization.d_r
    }

    pub fn counts_per_pixel(&self) -> f64 {
        1.0 / self.quantization.d_r
    }

    pub fn x_travel_px(&self) -> f64 {
        self.w_frame - self.w_img
    }

    pub fn y_travel_px(&self) -> f64 {
        self.h_frame - self.h_img
    }
}

/// Bits needed to count every quantization step across the travel.
pub fn resolution_bits(c: f64, frame_px: f64, img_px: f64) -> Result<u32, AnalysisError> {
    if !(c >= 1.0) {
        return Err(AnalysisError::InvalidCounts(c));
    }
    let travel = frame_px - img_px;
    if !(travel > 0.0) {
        return Err(AnalysisError::NonPositiveTravel(travel));
    }
    Ok((c * travel).log2().floor() as u32 + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TranslationalSensitivity {
    pub s_x: f64,
    pub s_y: f64,
    pub s_z: f64,
    pub d_1: f64,
    pub d_2: f64,
    pub d_z: f64,
}

pub fn translational_sensitivity(g: &SensorGeometry) -> Result<TranslationalSensitivity, AnalysisError> {
    g.validate()?;
    let s_y = g.w_tag_mm / g.w_img * g.d_r();
    let d_1 = s_y;
    let d_2 = g.w_tag_mm / 2.0 - d_1;
    if !(d_2 > 0.0) {
        return Err(AnalysisError::Geometry(format!("d_2 = {d_2} mm is not positive")));
    }
    let d_z = d_1 / d_2 * g.d_tag_mm;
    Ok(TranslationalSensitivity { s_x: s_y, s_y, s_z: d_z, d_1, d_2, d_z })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationalSensitivity {
    pub theta_deg: f64,
    pub s_tau_z: f64,
    pub s_tau_xy: f64,
    pub r_px: f64,
    pub l_chord_px: f64,
    pub d_z_px: f64,
    pub w_x_px: f64,
}

pub const DEFAULT_THETA_DEG: f64 = 45.0;

pub fn rotational_sensitivity(g: &SensorGeometry, theta_deg: f64) -> Result<RotationalSensitivity, AnalysisError> {
    g.validate()?;
    if !(theta_deg > 0.0 && theta_deg < 90.0) {
        return Err(AnalysisError::InvalidAngle(theta_deg));
    }
    let half = g.w_img / 2.0;
    let r_px = std::f64::consts::SQRT_2 * half;
    let l_chord_px = 2.0 * r_px * (theta_deg.to_radians() / 2.0).sin();
    let d_z_px = half / std::f64::consts::SQRT_2;
    let w_x_px = half - d_z_px;
    Ok(RotationalSensitivity {
        theta_deg,
        s_tau_z: theta_deg / l_chord_px * g.d_r(),
        s_tau_xy: theta_deg / w_x_px * g.d_r(),
        r_px,
        l_chord_px,
        d_z_px,
        w_x_px,
    })
}

/// Smallest resolvable force when `f_range_n` spans the whole travel.
pub fn force_sensitivity(f_range_n: f64, c: f64, travel_px: f64) -> Result<f64, AnalysisError> {
    if !(f_range_n > 0.0 && f_range_n.is_finite()) {
        return Err(AnalysisError::InvalidForceRange(f_range_n));
    }
    if !(c >= 1.0) {
        return Err(AnalysisError::InvalidCounts(c));
    }
    if !(travel_px > 0.0) {
        return Err(AnalysisError::NonPositiveTravel(travel_px));
    }
    Ok(f_range_n / (c * travel_px))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolutionBits {
    pub r_x: u32,
    pub r_y: u32,
    /// Uses the y travel, which limits z as well.
    pub r_z: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForceSensitivity {
    /// Full span, e.g. 2 N for ±1 N.
    pub f_range_n: f64,
    pub s_x_n: f64,
    pub s_y_n: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub geometry: SensorGeometry,
    pub resolution: ResolutionBits,
    pub translational: TranslationalSensitivity,
    pub rotational: RotationalSensitivity,
    pub force: Vec<ForceSensitivity>,
    #[serde(default)]
    pub notes: Vec<String>,
}

pub const DEFAULT_FORCE_RANGES_N: [f64; 2] = [2.0, 80.0];

pub fn sensitivity_report(g: &SensorGeometry, force_ranges_n: &[f64]) -> Result<SensitivityReport, AnalysisError> {
    sensitivity_report_at(g, force_ranges_n, DEFAULT_THETA_DEG)
}

pub fn sensitivity_report_at(
    g: &SensorGeometry,
    force_ranges_n: &[f64],
    theta_deg: f64,
) -> Result<SensitivityReport, AnalysisError> {
    g.validate()?;
    let c = g.counts_per_pixel();
    let r_x = resolution_bits(c, g.w_frame, g.w_img)?;
    let r_y = resolution_bits(c, g.h_frame, g.h_img)?;
    let force = force_ranges_n
        .iter()
        .map(|&f| {
            Ok(ForceSensitivity {
                f_range_n: f,
                s_x_n: force_sensitivity(f, c, g.x_travel_px())?,
                s_y_n: force_sensitivity(f, c, g.y_travel_px())?,
            })
        })
        .collect::<Result<Vec<_>, AnalysisError>>()?;
    let notes = vec![format!(
        "r_z is limited by the y-axis travel ({r_y} bits), the same as r_y"
    )];
    Ok(SensitivityReport {
        geometry: *g,
        resolution: ResolutionBits { r_x, r_y, r_z: r_y },
        translational: translational_sensitivity(g)?,
        rotational: rotational_sensitivity(g, theta_deg)?,
        force,
        notes,
    })
}

impl fmt::Display for SensitivityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let g = &self.geometry;
        let t = &self.translational;
        let r = &self.rotational;
        writeln!(
            f,
            "geometry: frame {}x{} px, tag image {}x{} px, tag {} mm at {} mm, d_R {} px",
            g.w_frame, g.h_frame, g.w_img, g.h_img, g.w_tag_mm, g.d_tag_mm, g.d_r()
        )?;
        writeln!(f, "{:<12} {:>14} {:>8}", "quantity", "value", "unit")?;
        let rows: [(&str, String, &str); 13] = [
            ("r_x", self.resolution.r_x.to_string(), "bits"),
            ("r_y", self.resolution.r_y.to_string(), "bits"),
            ("r_z", self.resolution.r_z.to_string(), "bits"),
            ("s_x", format!("{:.4}", t.s_x), "mm"),
            ("s_y", format!("{:.4}", t.s_y), "mm"),
            ("s_z", format!("{:.4}", t.s_z), "mm"),
            ("  d_1", format!("{:.4}", t.d_1), "mm"),
            ("  d_2", format!("{:.4}", t.d_2), "mm"),
            ("s_tau_z", format!("{:.4}", r.s_tau_z), "deg"),
            ("  r", format!("{:.2}", r.r_px), "px"),
            ("  l_chord", format!("{:.2}", r.l_chord_px), "px"),
            ("s_tau_xy", format!("{:.4}", r.s_tau_xy), "deg"),
            ("  w_x", format!("{:.2}", r.w_x_px), "px"),
        ];
        for (name, value, unit) in rows {
            writeln!(f, "{name:<12} {value:>14} {unit:>8}")?;
        }
        for fs in &self.force {
            writeln!(f, "{:<12} {:>14} {:>8}", format!("s_x@{}N", fs.f_range_n), format!("{:.6}", fs.s_x_n), "N")?;
            writeln!(f, "{:<12} {:>14} {:>8}", format!("s_y@{}N", fs.f_range_n), format!("{:.6}", fs.s_y_n), "N")?;
        }
        for n in &self.notes {
            writeln!(f, "note: {n}")?;
        }
        Ok(())
    }
}
