//! Detections and truth in, calibrated model and fit metrics out.
//!
//! Both workflows run the same preprocessing: solve each frame for the
//! platform displacement, smooth with an exponential filter, move the
//! camera stream onto the truth clock by the alignment lag, and linearly
//! interpolate truth at the shifted camera times.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{apply_calibration, fit_calibration, r_squared, CalibrationError, CalibrationModel};
use crate::dof::{Displacement6, Wrench, AXIS_NAMES_WRENCH};
use crate::pnp::{solve_rig_displacement, Detection};
use crate::rig::Rig;
use crate::signal::{estimate_lag_channels, exponential_filter, resample_linear, LagEstimate, SignalError, TimedSeries};

pub const DEFAULT_ALPHA: f64 = 0.2;
pub const DEFAULT_MAX_LAG_S: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("no detections")]
    NoDetections,
    #[error("no frame could be solved ({0} frames)")]
    NoSolvableFrames(usize),
    #[error("no truth samples")]
    NoTruth,
    #[error("only {0} camera samples overlap the truth span")]
    NoOverlap(usize),
    #[error("model lacks preprocessing metadata `{0}`")]
    ModelMetadata(&'static str),
    #[error("alpha must lie in (0, 1], got {0}")]
    InvalidAlpha(f64),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineOptions {
    pub alpha: f64,
    pub max_lag_s: f64,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self { alpha: DEFAULT_ALPHA, max_lag_s: DEFAULT_MAX_LAG_S }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameStats {
    pub frames: usize,
    pub solved: usize,
    pub failed: usize,
    /// Solved with fewer tags than the layout carries.
    pub degraded: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerAxis {
    pub fx: f64,
    pub fy: f64,
    pub fz: f64,
    pub mx: f64,
    pub my: f64,
    pub mz: f64,
}

impl PerAxis {
    pub fn from_array(a: [f64; 6]) -> Self {
        Self { fx: a[0], fy: a[1], fz: a[2], mx: a[3], my: a[4], mz: a[5] }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.fx, self.fy, self.fz, self.mx, self.my, self.mz]
    }
}

/// Per-frame displacement track recovered from detections.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementTrack {
    pub series: TimedSeries,
    pub stats: FrameStats,
}

/// Groups detection rows into frames by timestamp and solves each frame.
/// Frames that cannot be solved are counted and skipped.
pub fn solve_frames(rig: &Rig, detections: &[Detection]) -> Result<DisplacementTrack, PipelineError> {
    if detections.is_empty() {
        return Err(PipelineError::NoDetections);
    }
    let mut sorted = detections.to_vec();
    sorted.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp).then(a.tag_id.cmp(&b.tag_id)));

    let mut stats = FrameStats::default();
    let mut times = Vec::new();
    let mut rows: Vec<[f64; 6]> = Vec::new();
    for frame in sorted.chunk_by(|a, b| a.timestamp == b.timestamp) {
        stats.frames += 1;
        match solve_rig_displacement(&rig.intrinsics, &rig.layout, &rig.tag, frame) {
            Ok(sol) => {
                stats.solved += 1;
                if sol.degraded {
                    stats.degraded += 1;
                }
                times.push(frame[0].timestamp);
                rows.push(sol.displacement.to_array());
            }
            Err(_) => stats.failed += 1,
        }
    }
    if rows.is_empty() {
        return Err(PipelineError::NoSolvableFrames(stats.frames));
    }
    Ok(DisplacementTrack { series: TimedSeries::from_rows(times, &rows)?, stats })
}

pub fn truth_series(truth: &[(f64, Wrench)]) -> Result<TimedSeries, PipelineError> {
    if truth.is_empty() {
        return Err(PipelineError::NoTruth);
    }
    let mut sorted = truth.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let ts = sorted.iter().map(|(t, _)| *t).collect();
    let rows: Vec<[f64; 6]> = sorted.iter().map(|(_, w)| w.to_array()).collect();
    Ok(TimedSeries::from_rows(ts, &rows)?)
}

/// Lag of the camera stream behind truth, taken from the axis whose
/// displacement correlates best with its own wrench component.
pub fn estimate_alignment_lag(
    truth: &TimedSeries,
    displacement: &TimedSeries,
    max_lag_s: f64,
) -> Result<(LagEstimate, usize), PipelineError> {
    let mut best: Option<(LagEstimate, usize)> = None;
    let mut first_err = None;
    for axis in 0..6 {
        match estimate_lag_channels(truth, axis, displacement, axis, max_lag_s) {
            Ok(est) => {
                if best.as_ref().is_none_or(|(b, _)| est.peak_correlation > b.peak_correlation) {
                    best = Some((est, axis));
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    match (best, first_err) {
        (Some(b), _) => Ok(b),
        (None, Some(e)) => Err(e.into()),
        (None, None) => unreachable!("six axes searched"),
    }
}

/// Displacements paired with truth interpolated at the lag-corrected
/// camera times.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedSamples {
    pub timestamps: Vec<f64>,
    pub displacements: Vec<Displacement6>,
    pub truth: Vec<Wrench>,
}

pub fn align(truth: &TimedSeries, displacement: &TimedSeries, lag_s: f64) -> Result<AlignedSamples, PipelineError> {
    let shifted = displacement.shifted(-lag_s);
    let (lo, hi) = (truth.first_time().unwrap(), truth.last_time().unwrap());
    let keep: Vec<usize> = (0..shifted.len()).filter(|&i| (lo..=hi).contains(&shifted.timestamps()[i])).collect();
    if keep.is_empty() {
        return Err(PipelineError::NoOverlap(0));
    }
    let timestamps: Vec<f64> = keep.iter().map(|&i| shifted.timestamps()[i]).collect();
    let resampled = resample_linear(truth, &timestamps)?;
    let displacements = keep
        .iter()
        .map(|&i| {
            let r = shifted.row(i);
            Displacement6::new(r[0], r[1], r[2], r[3], r[4], r[5])
        })
        .collect();
    let truth = resampled.rows().map(|r| Wrench::new(r[0], r[1], r[2], r[3], r[4], r[5])).collect();
    Ok(AlignedSamples { timestamps, displacements, truth })
}

fn check_alpha(alpha: f64) -> Result<(), PipelineError> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(PipelineError::InvalidAlpha(alpha))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub frames: FrameStats,
    pub samples: usize,
    pub alpha: f64,
    pub max_lag_s: f64,
    /// Includes the group delay of the smoothing filter.
    pub lag: LagEstimate,
    pub lag_axis: String,
    pub r_squared: PerAxis,
    pub degenerate_axes: Vec<String>,
    pub condition_number: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub model: CalibrationModel,
    pub report: CalibrationReport,
}

pub fn calibrate(
    rig: &Rig,
    detections: &[Detection],
    truth: &[(f64, Wrench)],
    opts: &PipelineOptions,
) -> Result<Calibration, PipelineError> {
    check_alpha(opts.alpha)?;
    let track = solve_frames(rig, detections)?;
    let truth = truth_series(truth)?;
    let filtered = exponential_filter(&track.series, opts.alpha)?;
    let (lag, lag_axis) = estimate_alignment_lag(&truth, &filtered, opts.max_lag_s)?;
    let aligned = align(&truth, &filtered, lag.lag_s)?;
    let mut model = fit_calibration(&aligned.displacements, &aligned.truth)?;
    model.metadata.filter_alpha = Some(opts.alpha);
    model.metadata.max_lag_s = Some(opts.max_lag_s);
    model.metadata.lag_s = Some(lag.lag_s);
    let report = CalibrationReport {
        frames: track.stats,
        samples: aligned.timestamps.len(),
        alpha: opts.alpha,
        max_lag_s: opts.max_lag_s,
        lag,
        lag_axis: AXIS_NAMES_WRENCH[lag_axis].to_string(),
        r_squared: PerAxis::from_array(model.metadata.r_squared_train),
        degenerate_axes: model.metadata.degenerate_axes.clone(),
        condition_number: model.metadata.condition_number,
    };
    Ok(Calibration { model, report })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub frames: FrameStats,
    pub samples: usize,
    pub alpha: f64,
    pub lag_s: f64,
    pub r_squared: PerAxis,
    pub rmse: PerAxis,
    pub degenerate_axes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: EvaluationReport,
    pub timestamps: Vec<f64>,
    pub truth: Vec<Wrench>,
    pub predicted: Vec<Wrench>,
}

/// Scores a model on a dataset using the preprocessing stored in the model.
pub fn evaluate(
    model: &CalibrationModel,
    rig: &Rig,
    detections: &[Detection],
    truth: &[(f64, Wrench)],
) -> Result<Evaluation, PipelineError> {
    let alpha = model.metadata.filter_alpha.ok_or(PipelineError::ModelMetadata("filter_alpha"))?;
    let lag_s = model.metadata.lag_s.ok_or(PipelineError::ModelMetadata("lag_s"))?;
    check_alpha(alpha)?;
    let track = solve_frames(rig, detections)?;
    let truth = truth_series(truth)?;
    let filtered = exponential_filter(&track.series, alpha)?;
    let aligned = align(&truth, &filtered, lag_s)?;
    let predicted: Vec<Wrench> = aligned.displacements.iter().map(|d| apply_calibration(model, d)).collect();
    let p: Vec<[f64; 6]> = predicted.iter().map(|w| w.to_array()).collect();
    let t: Vec<[f64; 6]> = aligned.truth.iter().map(|w| w.to_array()).collect();
    let r2 = r_squared(&p, &t)?;
    let n = p.len() as f64;
    let rmse = std::array::from_fn(|i| (p.iter().zip(&t).map(|(a, b)| (a[i] - b[i]).powi(2)).sum::<f64>() / n).sqrt());
    let report = EvaluationReport {
        frames: track.stats,
        samples: p.len(),
        alpha,
        lag_s,
        r_squared: PerAxis::from_array(r2.values),
        rmse: PerAxis::from_array(rmse),
        degenerate_axes: (0..6).filter(|&i| r2.degenerate[i]).map(|i| AXIS_NAMES_WRENCH[i].to_string()).collect(),
    };
    Ok(Evaluation { report, timestamps: aligned.timestamps, truth: aligned.truth, predicted })
}
