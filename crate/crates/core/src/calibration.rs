//! Affine force-torque model `F = K·D + B` and per-axis R².

use nalgebra::{DMatrix, Matrix6, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dof::{Displacement6, Wrench, AXIS_NAMES_DISPLACEMENT, AXIS_NAMES_WRENCH};

/// Singular-value ratio below which the design matrix counts as rank
/// deficient.
pub const RANK_TOLERANCE: f64 = 1e-10;
pub const MIN_SAMPLES: usize = 7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("need at least {MIN_SAMPLES} samples, got {0}")]
    TooFewSamples(usize),
    #[error("{displacements} displacements but {wrenches} wrenches")]
    LengthMismatch { displacements: usize, wrenches: usize },
    #[error("design matrix is rank deficient along {direction} (singular value ratio {ratio:.3e})")]
    RankDeficient { direction: String, ratio: f64 },
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("series lengths differ ({pred} predicted vs {truth} truth)")]
    SeriesMismatch { pred: usize, truth: usize },
    #[error("empty series")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Units {
    pub displacement: String,
    pub wrench: String,
}

impl Default for Units {
    fn default() -> Self {
        Self {
            displacement: "dx,dy,dz mm; dtheta,dphi,dgamma deg".into(),
            wrench: "fx,fy,fz N; mx,my,mz N*mm".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMetadata {
    pub sample_count: usize,
    /// Training-set R² per wrench axis.
    pub r_squared_train: [f64; 6],
    /// Axes whose training truth had zero variance (R² reported as 0).
    pub degenerate_axes: Vec<String>,
    /// Ratio of extreme singular values of `[D | 1]`.
    pub condition_number: f64,
    /// Preprocessing applied before the fit, when fitted through the
    /// pipeline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter_alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_lag_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lag_s: Option<f64>,
}

/// Fitted calibration. `k` is row-major: `k[i][j]` is the sensitivity of
/// wrench axis `i` to displacement axis `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationModel {
    #[serde(default)]
    pub units: Units,
    pub k: [[f64; 6]; 6],
    pub b: [f64; 6],
    pub metadata: FitMetadata,
}

impl CalibrationModel {
    /// Model without fit metadata, e.g. from a known stiffness.
    pub fn from_parts(k: Matrix6<f64>, b: Vector6<f64>) -> Self {
        Self {
            units: Units::default(),
            k: std::array::from_fn(|i| std::array::from_fn(|j| k[(i, j)])),
            b: std::array::from_fn(|i| b[i]),
            metadata: FitMetadata {
                sample_count: 0,
                r_squared_train: [0.0; 6],
                degenerate_axes: Vec::new(),
                condition_number: f64::NAN,
                filter_alpha: None,
                max_lag_s: None,
                lag_s: None,
            },
        }
    }

    pub fn k_matrix(&self) -> Matrix6<f64> {
        Matrix6::from_fn(|i, j| self.k[i][j])
    }

    pub fn b_vector(&self) -> Vector6<f64> {
        Vector6::from(self.b)
    }
}

/// `K·d + B`.
pub fn apply_calibration(m: &CalibrationModel, d: &Displacement6) -> Wrench {
    let x = d.to_array();
    Wrench::from_array(std::array::from_fn(|i| {
        m.k[i].iter().zip(x.iter()).map(|(k, v)| k * v).sum::<f64>() + m.b[i]
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RSquared {
    pub values: [f64; 6],
    /// Axis truth had zero variance; the value is reported as 0.
    pub degenerate: [bool; 6],
}

/// Per-axis `1 − SS_res/SS_tot`, with `SS_tot` taken about the truth mean.
pub fn r_squared(pred: &[[f64; 6]], truth: &[[f64; 6]]) -> Result<RSquared, CalibrationError> {
    if pred.len() != truth.len() {
        return Err(CalibrationError::SeriesMismatch { pred: pred.len(), truth: truth.len() });
    }
    if truth.is_empty() {
        return Err(CalibrationError::Empty);
    }
    let n = truth.len() as f64;
    let mut values = [0.0; 6];
    let mut degenerate = [false; 6];
    for axis in 0..6 {
        let mean = truth.iter().map(|t| t[axis]).sum::<f64>() / n;
        let ss_tot: f64 = truth.iter().map(|t| (t[axis] - mean).powi(2)).sum();
        let ss_res: f64 = pred.iter().zip(truth).map(|(p, t)| (p[axis] - t[axis]).powi(2)).sum();
        if ss_tot == 0.0 {
            degenerate[axis] = true;
        } else {
            values[axis] = 1.0 - ss_res / ss_tot;
        }
    }
    Ok(RSquared { values, degenerate })
}

/// Ordinary least squares per wrench axis on `[D | 1]`, solved through the
/// SVD of the design matrix.
pub fn fit_calibration(d: &[Displacement6], f: &[Wrench]) -> Result<CalibrationModel, CalibrationError> {
    if d.len() != f.len() {
        return Err(CalibrationError::LengthMismatch { displacements: d.len(), wrenches: f.len() });
    }
    if d.len() < MIN_SAMPLES {
        return Err(CalibrationError::TooFewSamples(d.len()));
    }
    if let Some(i) = d.iter().zip(f).position(|(a, b)| !a.is_finite() || !b.is_finite()) {
        return Err(CalibrationError::NonFinite(i));
    }
    let n = d.len();
    let design = DMatrix::from_fn(n, 7, |r, c| if c < 6 { d[r].to_array()[c] } else { 1.0 });
    let rhs = DMatrix::from_fn(n, 6, |r, c| f[r].to_array()[c]);

    let svd = design.svd(true, true);
    let sv = &svd.singular_values;
    let (hi, lo_idx) = (sv.max(), sv.imin());
    let lo = sv[lo_idx];
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    if !(lo > RANK_TOLERANCE * hi) {
        let dir = v_t.row(lo_idx);
        let worst = (0..7).max_by(|&a, &b| dir[a].abs().total_cmp(&dir[b].abs())).unwrap();
        let name = if worst < 6 { AXIS_NAMES_DISPLACEMENT[worst] } else { "bias" };
        let parts: Vec<String> = (0..7)
            .filter(|&i| dir[i].abs() > 1e-3)
            .map(|i| format!("{:+.3}*{}", dir[i], if i < 6 { AXIS_NAMES_DISPLACEMENT[i] } else { "1" }))
            .collect();
        return Err(CalibrationError::RankDeficient {
            direction: format!("{name} ({})", parts.join(" ")),
            ratio: lo / hi,
        });
    }
    let u = svd.u.as_ref().expect("u requested");
    let ut_f = u.transpose() * &rhs;
    let scaled = DMatrix::from_fn(7, 6, |r, c| ut_f[(r, c)] / sv[r]);
    let x = v_t.transpose() * scaled;

    let mut model = CalibrationModel::from_parts(
        Matrix6::from_fn(|i, j| x[(j, i)]),
        Vector6::from_fn(|i, _| x[(6, i)]),
    );
    let pred: Vec<[f64; 6]> = d.iter().map(|di| apply_calibration(&model, di).to_array()).collect();
    let truth: Vec<[f64; 6]> = f.iter().map(|w| w.to_array()).collect();
    let r2 = r_squared(&pred, &truth)?;
    model.metadata.sample_count = n;
    model.metadata.r_squared_train = r2.values;
    model.metadata.degenerate_axes =
        (0..6).filter(|&i| r2.degenerate[i]).map(|i| AXIS_NAMES_WRENCH[i].to_string()).collect();
    model.metadata.condition_number = hi / lo;
    Ok(model)
}
