//! File formats: detection and truth CSVs, geometry JSON.
//!
//! Floats are written in shortest round-trip form, so a write/read cycle is
//! lossless and output bytes depend only on the values.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector3;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::SensorGeometry;
use crate::camera::{CameraIntrinsics, Pose, QuantizationModel, TagGeometry, TagLayout, TagMount};
use crate::dof::Wrench;
use crate::pnp::Detection;
use crate::rig::{Rig, RigParams};

pub const DETECTION_COLUMNS: [&str; 10] = ["timestamp_s", "tag_id", "x0", "y0", "x1", "y1", "x2", "y2", "x3", "y3"];
pub const TRUTH_COLUMNS: [&str; 7] = ["timestamp_s", "fx", "fy", "fz", "mx", "my", "mz"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IoError {
    #[error("{origin}: {msg}")]
    File { origin: String, msg: String },
    #[error("{origin}: missing column `{column}`")]
    MissingColumn { origin: String, column: String },
    #[error("{origin} line {line}: {msg}")]
    Parse { origin: String, line: u64, msg: String },
    #[error("{origin}: no data rows")]
    Empty { origin: String },
    #[error("{origin}:{line}:{column}: {msg}")]
    Json { origin: String, line: usize, column: usize, msg: String },
    #[error("{origin}: {msg}")]
    Invalid { origin: String, msg: String },
}

fn file_err(origin: &Path, e: impl std::fmt::Display) -> IoError {
    IoError::File { origin: origin.display().to_string(), msg: e.to_string() }
}

fn open(path: &Path) -> Result<File, IoError> {
    File::open(path).map_err(|e| file_err(path, e))
}

fn create(path: &Path) -> Result<File, IoError> {
    File::create(path).map_err(|e| file_err(path, e))
}

fn csv_write_err(origin: &str, e: impl std::fmt::Display) -> IoError {
    IoError::File { origin: origin.to_string(), msg: e.to_string() }
}

/// Header positions of `required` columns; extra columns are ignored.
fn column_index(origin: &str, headers: &csv::StringRecord, required: &[&str]) -> Result<Vec<usize>, IoError> {
    required
        .iter()
        .map(|name| {
            headers.iter().position(|h| h.trim() == *name).ok_or_else(|| IoError::MissingColumn {
                origin: origin.to_string(),
                column: name.to_string(),
            })
        })
        .collect()
}

fn record_line(rec: &csv::StringRecord) -> u64 {
    rec.position().map(|p| p.line()).unwrap_or(0)
}

fn parse_field<T: std::str::FromStr>(origin: &str, rec: &csv::StringRecord, idx: usize, name: &str) -> Result<T, IoError>
where
    T::Err: std::fmt::Display,
{
    let raw = rec.get(idx).unwrap_or("").trim();
    raw.parse::<T>().map_err(|e| IoError::Parse {
        origin: origin.to_string(),
        line: record_line(rec),
        msg: format!("column `{name}`: cannot parse {raw:?}: {e}"),
    })
}

fn finite(origin: &str, rec: &csv::StringRecord, name: &str, v: f64) -> Result<f64, IoError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(IoError::Parse {
            origin: origin.to_string(),
            line: record_line(rec),
            msg: format!("column `{name}`: non-finite value"),
        })
    }
}

fn records<R: Read>(origin: &str, r: R, required: &[&str]) -> Result<(Vec<usize>, Vec<csv::StringRecord>), IoError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(r);
    let headers = reader
        .headers()
        .map_err(|e| IoError::Parse { origin: origin.to_string(), line: 1, msg: e.to_string() })?
        .clone();
    let idx = column_index(origin, &headers, required)?;
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| IoError::Parse {
            origin: origin.to_string(),
            line: e.position().map(|p| p.line()).unwrap_or(0),
            msg: e.to_string(),
        })?;
        rows.push(rec);
    }
    if rows.is_empty() {
        return Err(IoError::Empty { origin: origin.to_string() });
    }
    Ok((idx, rows))
}

pub fn write_detections<W: Write>(w: W, detections: &[Detection]) -> Result<(), IoError> {
    let mut out = csv::Writer::from_writer(w);
    let origin = "detections";
    out.write_record(DETECTION_COLUMNS).map_err(|e| csv_write_err(origin, e))?;
    for d in detections {
        let mut row = vec![d.timestamp.to_string(), d.tag_id.to_string()];
        for c in &d.corners {
            row.push(c[0].to_string());
            row.push(c[1].to_string());
        }
        out.write_record(&row).map_err(|e| csv_write_err(origin, e))?;
    }
    out.flush().map_err(|e| csv_write_err(origin, e))
}

pub fn read_detections<R: Read>(origin: &str, r: R) -> Result<Vec<Detection>, IoError> {
    let (idx, rows) = records(origin, r, &DETECTION_COLUMNS)?;
    rows.iter()
        .map(|rec| {
            let t = parse_field::<f64>(origin, rec, idx[0], DETECTION_COLUMNS[0])?;
            let t = finite(origin, rec, DETECTION_COLUMNS[0], t)?;
            let tag_id = parse_field::<u32>(origin, rec, idx[1], DETECTION_COLUMNS[1])?;
            let mut corners = [[0.0; 2]; 4];
            for k in 0..8 {
                let name = DETECTION_COLUMNS[2 + k];
                let v = parse_field::<f64>(origin, rec, idx[2 + k], name)?;
                corners[k / 2][k % 2] = finite(origin, rec, name, v)?;
            }
            Ok(Detection { timestamp: t, tag_id, corners })
        })
        .collect()
}

pub fn write_truth<W: Write>(w: W, truth: &[(f64, Wrench)]) -> Result<(), IoError> {
    let mut out = csv::Writer::from_writer(w);
    let origin = "truth";
    out.write_record(TRUTH_COLUMNS).map_err(|e| csv_write_err(origin, e))?;
    for (t, wr) in truth {
        let mut row = vec![t.to_string()];
        row.extend(wr.to_array().iter().map(|v| v.to_string()));
        out.write_record(&row).map_err(|e| csv_write_err(origin, e))?;
    }
    out.flush().map_err(|e| csv_write_err(origin, e))
}

pub fn read_truth<R: Read>(origin: &str, r: R) -> Result<Vec<(f64, Wrench)>, IoError> {
    let (idx, rows) = records(origin, r, &TRUTH_COLUMNS)?;
    rows.iter()
        .map(|rec| {
            let mut v = [0.0; 7];
            for (k, slot) in v.iter_mut().enumerate() {
                let x = parse_field::<f64>(origin, rec, idx[k], TRUTH_COLUMNS[k])?;
                *slot = finite(origin, rec, TRUTH_COLUMNS[k], x)?;
            }
            Ok((v[0], Wrench::from_array([v[1], v[2], v[3], v[4], v[5], v[6]])))
        })
        .collect()
}

pub fn read_detections_file(path: &Path) -> Result<Vec<Detection>, IoError> {
    read_detections(&path.display().to_string(), open(path)?)
}

pub fn write_detections_file(path: &Path, detections: &[Detection]) -> Result<(), IoError> {
    write_detections(create(path)?, detections)
}

pub fn read_truth_file(path: &Path) -> Result<Vec<(f64, Wrench)>, IoError> {
    read_truth(&path.display().to_string(), open(path)?)
}

pub fn write_truth_file(path: &Path, truth: &[(f64, Wrench)]) -> Result<(), IoError> {
    write_truth(create(path)?, truth)
}

/// Parses JSON, reporting serde failures with line and column.
pub fn parse_json<T: DeserializeOwned>(origin: &str, text: &str) -> Result<T, IoError> {
    serde_json::from_str(text).map_err(|e| IoError::Json {
        origin: origin.to_string(),
        line: e.line(),
        column: e.column(),
        msg: e.to_string(),
    })
}

pub fn read_json_file<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| file_err(path, e))?;
    parse_json(&path.display().to_string(), &text)
}

/// Pretty JSON with a trailing newline.
pub fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| file_err(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| file_err(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseSpec {
    #[serde(default)]
    pub translation_mm: [f64; 3],
    /// `[theta, phi, gamma]` about x, y, z.
    #[serde(default)]
    pub euler_deg: [f64; 3],
}

impl PoseSpec {
    pub fn to_pose(&self) -> Pose {
        let [a, b, c] = self.euler_deg;
        Pose::from_euler_deg(a, b, c, Vector3::from(self.translation_mm))
    }

    pub fn from_pose(p: &Pose) -> Self {
        let (a, b, c) = p.euler_deg();
        Self { translation_mm: p.translation.into(), euler_deg: [a, b, c] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TagMountSpec {
    pub tag_id: u32,
    pub mount: PoseSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutSpec {
    pub platform_rest: PoseSpec,
    pub tags: Vec<TagMountSpec>,
}

impl LayoutSpec {
    pub fn to_layout(&self) -> TagLayout {
        TagLayout {
            platform_rest: self.platform_rest.to_pose(),
            tags: self.tags.iter().map(|t| TagMount { tag_id: t.tag_id, mount: t.mount.to_pose() }).collect(),
        }
    }
}

/// Sensor and rig description. Every section is optional; a missing
/// `layout` means the two-tag layout at the rig rest height.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub camera: CameraIntrinsics,
    pub tag: TagGeometry,
    pub layout: Option<LayoutSpec>,
    /// `null` disables corner quantization in simulation.
    pub quantization: Option<QuantizationModel>,
    pub rig: RigParams,
    pub analysis: SensorGeometry,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            camera: CameraIntrinsics::default(),
            tag: TagGeometry::default(),
            layout: None,
            quantization: Some(QuantizationModel::default().with_dither(true)),
            rig: RigParams::default(),
            analysis: SensorGeometry::default(),
        }
    }
}

impl GeometryConfig {
    pub fn load(path: &Path) -> Result<Self, IoError> {
        read_json_file(path)
    }

    /// Validated rig built from this description.
    pub fn rig(&self, origin: &str) -> Result<Rig, IoError> {
        let invalid = |e: &dyn std::fmt::Display| IoError::Invalid { origin: origin.to_string(), msg: e.to_string() };
        self.camera.validate().map_err(|e| invalid(&e))?;
        self.rig.validate().map_err(|e| invalid(&e))?;
        if let Some(q) = &self.quantization {
            q.validate().map_err(|e| invalid(&e))?;
        }
        let layout = match &self.layout {
            Some(l) => l.to_layout(),
            None => TagLayout::two_tag_default(self.rig.rest_height_mm),
        };
        layout.validate(&self.camera, &self.tag).map_err(|e| invalid(&e))?;
        Ok(Rig { params: self.rig.clone(), intrinsics: self.camera, tag: self.tag, layout })
    }
}
