//! Text file formats.
//!
//! Streams (radar, detections, correspondences, reports, truth) are JSON
//! Lines: one compact object per line. Calibration, scene, class-model,
//! settings and metrics files are single pretty-printed JSON documents.
//! Unknown keys are rejected everywhere. Floats are written in shortest
//! round-trip form and parsed exactly, so parse(serialize(x)) == x.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tempfile::NamedTempFile;
use thiserror::Error;

use crate::calibration::{CalibrationResult, Correspondence};
use crate::consistency::ClassSizeModel;
use crate::geometry::{ProjectionMatrix, RigGeometry};
use crate::pipeline::{EvalMetrics, FrameReport, PipelineSettings};
use crate::simulator::{rig_matrix, NoiseSpec, Scene, SceneObject, TruthFrame};
use crate::sync::{DetectionFrame, RadarFrame};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("line {line}: malformed: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("line {line}: timestamp goes backwards")]
    UnsortedTimestamps { line: usize },
    #[error("line {line}: field `{field}`: {message}")]
    SchemaViolation {
        line: usize,
        field: String,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn malformed(e: serde_json::Error, line: usize) -> FormatError {
    FormatError::MalformedLine {
        line,
        message: e.to_string(),
    }
}

fn schema(line: usize, field: impl Into<String>, message: impl Into<String>) -> FormatError {
    FormatError::SchemaViolation {
        line,
        field: field.into(),
        message: message.into(),
    }
}

/// Parses one JSON value per non-blank line, validating each as it goes.
fn parse_lines<T: DeserializeOwned>(
    text: &str,
    mut check: impl FnMut(&T, usize) -> Result<(), FormatError>,
) -> Result<Vec<T>, FormatError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let value: T = serde_json::from_str(raw).map_err(|e| malformed(e, line))?;
        check(&value, line)?;
        out.push(value);
    }
    Ok(out)
}

fn write_lines<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("in-memory values serialize"));
        out.push('\n');
    }
    out
}

fn parse_document<T: DeserializeOwned>(text: &str) -> Result<T, FormatError> {
    serde_json::from_str(text).map_err(|e| {
        let line = e.line();
        malformed(e, line)
    })
}

fn write_document<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("in-memory values serialize");
    s.push('\n');
    s
}

fn sorted_by_time(last: &mut Option<u64>, t_us: u64, line: usize) -> Result<(), FormatError> {
    if last.is_some_and(|prev| t_us < prev) {
        return Err(FormatError::UnsortedTimestamps { line });
    }
    *last = Some(t_us);
    Ok(())
}

pub fn parse_radar_stream(text: &str) -> Result<Vec<RadarFrame>, FormatError> {
    let mut last = None;
    parse_lines(text, |f: &RadarFrame, line| {
        sorted_by_time(&mut last, f.t_us, line)?;
        for p in &f.points {
            p.validate().map_err(|e| match e {
                crate::geometry::GeometryError::Invalid { field, reason } => schema(line, field, reason),
                other => schema(line, "points", other.to_string()),
            })?;
        }
        Ok(())
    })
}

pub fn write_radar_stream(frames: &[RadarFrame]) -> String {
    write_lines(frames)
}

pub fn parse_detection_stream(text: &str) -> Result<Vec<DetectionFrame>, FormatError> {
    let mut last = None;
    parse_lines(text, |f: &DetectionFrame, line| {
        sorted_by_time(&mut last, f.t_us, line)?;
        for b in &f.boxes {
            b.validate().map_err(|(field, reason)| schema(line, field, reason))?;
        }
        Ok(())
    })
}

pub fn write_detection_stream(frames: &[DetectionFrame]) -> String {
    write_lines(frames)
}

pub fn parse_correspondences(text: &str) -> Result<Vec<Correspondence>, FormatError> {
    parse_lines(text, |c: &Correspondence, line| {
        c.validate().map_err(|e| schema(line, "weight", e.to_string()))
    })
}

pub fn write_correspondences(corrs: &[Correspondence]) -> String {
    write_lines(corrs)
}

pub fn parse_reports(text: &str) -> Result<Vec<FrameReport>, FormatError> {
    let mut last = None;
    parse_lines(text, |r: &FrameReport, line| sorted_by_time(&mut last, r.t_us, line))
}

pub fn write_reports(reports: &[FrameReport]) -> String {
    write_lines(reports)
}

pub fn parse_truth(text: &str) -> Result<Vec<TruthFrame>, FormatError> {
    let mut last = None;
    parse_lines(text, |f: &TruthFrame, line| sorted_by_time(&mut last, f.t_us, line))
}

pub fn write_truth(frames: &[TruthFrame]) -> String {
    write_lines(frames)
}

/// Stored projection plus fit diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationFile {
    pub matrix: ProjectionMatrix,
    pub rms_error_px: f64,
    pub inlier_count: usize,
    /// RFC 3339 UTC timestamp.
    pub created_at: String,
    pub tool_version: String,
}

impl CalibrationFile {
    pub fn from_result(result: &CalibrationResult, created_at: String) -> Self {
        Self {
            matrix: result.matrix,
            rms_error_px: result.rms_reprojection_error,
            inlier_count: result.inlier_count(),
            created_at,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CalibrationDoc {
    /// Row-major P11..P34.
    matrix: [f64; 12],
    rms_error_px: f64,
    inlier_count: usize,
    created_at: String,
    tool_version: String,
}

pub fn parse_calibration(text: &str) -> Result<CalibrationFile, FormatError> {
    let doc: CalibrationDoc = parse_document(text)?;
    let matrix = ProjectionMatrix::from_row_major(&doc.matrix).map_err(|e| schema(0, "matrix", e.to_string()))?;
    if !(doc.rms_error_px.is_finite() && doc.rms_error_px >= 0.0) {
        return Err(schema(0, "rms_error_px", "must be finite and non-negative"));
    }
    Ok(CalibrationFile {
        matrix,
        rms_error_px: doc.rms_error_px,
        inlier_count: doc.inlier_count,
        created_at: doc.created_at,
        tool_version: doc.tool_version,
    })
}

pub fn write_calibration(c: &CalibrationFile) -> String {
    write_document(&CalibrationDoc {
        matrix: c.matrix.to_row_major(),
        rms_error_px: c.rms_error_px,
        inlier_count: c.inlier_count,
        created_at: c.created_at.clone(),
        tool_version: c.tool_version.clone(),
    })
}

fn default_radar_period() -> u64 {
    100_000
}

fn default_detection_period() -> u64 {
    500_000
}

fn default_correspondence_count() -> usize {
    40
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneDoc {
    objects: Vec<SceneObject>,
    #[serde(default)]
    rig: RigGeometry,
    /// Derived from the rig when omitted.
    #[serde(default)]
    true_matrix: Option<[f64; 12]>,
    #[serde(default = "default_radar_period")]
    radar_period_us: u64,
    #[serde(default = "default_detection_period")]
    detection_period_us: u64,
    duration_us: u64,
    #[serde(default)]
    noise: NoiseSpec,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_correspondence_count")]
    calibration_points: usize,
}

/// Scene description plus the number of calibration correspondences the
/// simulator should emit alongside the streams.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneFile {
    pub scene: Scene,
    pub calibration_points: usize,
}

impl SceneFile {
    pub fn new(scene: Scene) -> Self {
        Self {
            scene,
            calibration_points: default_correspondence_count(),
        }
    }
}

pub fn parse_scene(text: &str) -> Result<SceneFile, FormatError> {
    let doc: SceneDoc = parse_document(text)?;
    let true_matrix = match doc.true_matrix {
        Some(values) => ProjectionMatrix::from_row_major(&values),
        None => rig_matrix(&doc.rig),
    }
    .map_err(|e| schema(0, "true_matrix", e.to_string()))?;
    let scene = Scene {
        objects: doc.objects,
        rig: doc.rig,
        true_matrix,
        radar_period_us: doc.radar_period_us,
        detection_period_us: doc.detection_period_us,
        duration_us: doc.duration_us,
        noise: doc.noise,
        seed: doc.seed,
    };
    scene.validate().map_err(|e| schema(0, "scene", e.to_string()))?;
    Ok(SceneFile {
        scene,
        calibration_points: doc.calibration_points,
    })
}

pub fn write_scene(f: &SceneFile) -> String {
    let s = &f.scene;
    write_document(&SceneDoc {
        objects: s.objects.clone(),
        rig: s.rig,
        true_matrix: Some(s.true_matrix.to_row_major()),
        radar_period_us: s.radar_period_us,
        detection_period_us: s.detection_period_us,
        duration_us: s.duration_us,
        noise: s.noise,
        seed: s.seed,
        calibration_points: f.calibration_points,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassModelsDoc {
    models: Vec<ClassSizeModel>,
}

pub fn parse_class_models(text: &str) -> Result<Vec<ClassSizeModel>, FormatError> {
    let doc: ClassModelsDoc = parse_document(text)?;
    for (i, m) in doc.models.iter().enumerate() {
        m.validate().map_err(|e| schema(0, format!("models[{i}]"), e.to_string()))?;
    }
    Ok(doc.models)
}

pub fn write_class_models(models: &[ClassSizeModel]) -> String {
    write_document(&ClassModelsDoc {
        models: models.to_vec(),
    })
}

pub fn parse_metrics(text: &str) -> Result<EvalMetrics, FormatError> {
    parse_document(text)
}

pub fn write_metrics(m: &EvalMetrics) -> String {
    write_document(m)
}

pub fn parse_settings(text: &str) -> Result<PipelineSettings, FormatError> {
    let s: PipelineSettings = parse_document(text)?;
    s.validate().map_err(|e| schema(0, "settings", e.to_string()))?;
    Ok(s)
}

pub fn write_settings(s: &PipelineSettings) -> String {
    write_document(s)
}

pub fn read_text(path: &Path) -> Result<String, FormatError> {
    fs::read_to_string(path).map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Stages output files next to their destinations and moves them into place
/// only on [`OutputBatch::commit`]; dropping an uncommitted batch deletes the
/// staged files.
#[derive(Default)]
pub struct OutputBatch {
    staged: Vec<(NamedTempFile, PathBuf)>,
}

impl OutputBatch {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stage(&mut self, path: &Path, contents: &str) -> Result<(), FormatError> {
        let io = |source| FormatError::Io {
            path: path.to_path_buf(),
            source,
        };
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let mut tmp = NamedTempFile::new_in(dir).map_err(io)?;
        tmp.write_all(contents.as_bytes()).map_err(io)?;
        tmp.flush().map_err(io)?;
        self.staged.push((tmp, path.to_path_buf()));
        Ok(())
    }

    pub fn commit(self) -> Result<(), FormatError> {
        for (tmp, path) in self.staged {
            tmp.persist(&path).map_err(|e| FormatError::Io {
                path: path.clone(),
                source: e.error,
            })?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RadarPointSpherical;

    #[test]
    fn negative_range_names_field_and_line() {
        let text = "{\"t_us\":0,\"points\":[]}\n{\"t_us\":5,\"points\":[{\"r_m\":-1.0,\"az_rad\":0.0,\"el_rad\":0.0,\"doppler_mps\":0.0,\"snr_db\":3.0}]}\n";
        match parse_radar_stream(text).unwrap_err() {
            FormatError::SchemaViolation { line, field, .. } => {
                assert_eq!(line, 2);
                assert_eq!(field, "r_m");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn out_of_order_timestamps() {
        let text = "{\"t_us\":10,\"boxes\":[]}\n{\"t_us\":20,\"boxes\":[]}\n{\"t_us\":15,\"boxes\":[]}\n";
        assert!(matches!(
            parse_detection_stream(text),
            Err(FormatError::UnsortedTimestamps { line: 3 })
        ));
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = "{\"t_us\":0,\"points\":[],\"extra\":1}\n";
        assert!(matches!(parse_radar_stream(text), Err(FormatError::MalformedLine { line: 1, .. })));
        let text = "{\"t_us\":0,\"boxes\":[{\"u_min\":0,\"v_min\":0,\"u_max\":1,\"v_max\":1,\"class\":\"a\",\"conf\":0.5,\"id\":3}]}";
        assert!(parse_detection_stream(text).is_err());
    }

    #[test]
    fn malformed_line_number() {
        let text = "{\"t_us\":0,\"points\":[]}\n\nnot json\n";
        assert!(matches!(parse_radar_stream(text), Err(FormatError::MalformedLine { line: 3, .. })));
    }

    #[test]
    fn twenty_frame_round_trip() {
        let frames: Vec<RadarFrame> = (0..20)
            .map(|k| RadarFrame {
                t_us: k * 100_000,
                points: (0..k % 4)
                    .map(|i| {
                        RadarPointSpherical::new(1.0 + i as f64 / 3.0, 0.1 * i as f64, -0.05)
                            .with_doppler(-0.3)
                            .with_snr(12.5)
                    })
                    .collect(),
            })
            .collect();
        let text = write_radar_stream(&frames);
        assert_eq!(parse_radar_stream(&text).unwrap(), frames);
        assert_eq!(text.lines().count(), 20);
    }

    #[test]
    fn rank_two_calibration_rejected() {
        let text = r#"{"matrix":[1,0,0,0, 0,1,0,0, 1,1,0,0],"rms_error_px":0.1,"inlier_count":10,"created_at":"x","tool_version":"0"}"#;
        match parse_calibration(text).unwrap_err() {
            FormatError::SchemaViolation { field, .. } => assert_eq!(field, "matrix"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn calibration_is_renormalized_on_read() {
        let text = r#"{"matrix":[-2,0,0,0, 0,-2,0,0, 0,0,-2,0],"rms_error_px":0.1,"inlier_count":10,"created_at":"x","tool_version":"0"}"#;
        let c = parse_calibration(text).unwrap();
        assert!((c.matrix.matrix().norm() - 1.0).abs() < 1e-12);
        assert!(c.matrix.matrix()[(2, 2)] > 0.0);
    }

    #[test]
    fn scene_matrix_defaults_to_rig() {
        let text = r#"{"objects":[],"duration_us":1000000}"#;
        let f = parse_scene(text).unwrap();
        assert_eq!(f.scene.true_matrix, rig_matrix(&RigGeometry::default()).unwrap());
        assert_eq!(f.scene.radar_period_us, 100_000);
        assert_eq!(f.calibration_points, 40);
    }

    #[test]
    fn staged_outputs_vanish_without_commit() {
        let dir = tempfile::tempdir().unwrap();
        let target = dir.path().join("out.txt");
        {
            let mut batch = OutputBatch::new();
            batch.stage(&target, "hello").unwrap();
        }
        assert!(!target.exists());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);

        let mut batch = OutputBatch::new();
        batch.stage(&target, "hello").unwrap();
        batch.commit().unwrap();
        assert_eq!(fs::read_to_string(&target).unwrap(), "hello");
    }
}
