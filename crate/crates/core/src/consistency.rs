//! Spoof checks on fused detections.
//!
//! A camera detection with no radar return behind it is flagged outright.
//! One with a return is checked against a pinhole size model: an object of
//! nominal height `H` at range `r` should appear `f * H / r` pixels tall.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::FusedDetection;
use crate::geometry::RigGeometry;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConsistencyError {
    #[error("detection {index} has non-positive radar range {range}")]
    NonPositiveRange { index: usize, range: f64 },
    #[error("focal length {0} px must be positive")]
    InvalidFocal(f64),
    #[error("invalid class model for {class}: {reason}")]
    InvalidModel { class: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSizeModel {
    #[serde(rename = "class")]
    pub class_label: String,
    #[serde(rename = "nominal_height_m")]
    pub nominal_height: f64,
    pub tolerance_factor: f64,
}

impl ClassSizeModel {
    pub fn new(class_label: impl Into<String>, nominal_height: f64, tolerance_factor: f64) -> Self {
        Self {
            class_label: class_label.into(),
            nominal_height,
            tolerance_factor,
        }
    }

    pub fn validate(&self) -> Result<(), ConsistencyError> {
        let fail = |reason: String| ConsistencyError::InvalidModel {
            class: self.class_label.clone(),
            reason,
        };
        if !(self.nominal_height.is_finite() && self.nominal_height > 0.0) {
            return Err(fail(format!("nominal height {} must be positive", self.nominal_height)));
        }
        if !(self.tolerance_factor.is_finite() && self.tolerance_factor > 1.0) {
            return Err(fail(format!("tolerance factor {} must exceed 1", self.tolerance_factor)));
        }
        Ok(())
    }

    /// Person 1.7 m and car 1.5 m, both with a 1.5x tolerance.
    pub fn defaults() -> Vec<Self> {
        vec![Self::new("person", 1.7, 1.5), Self::new("car", 1.5, 1.5)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case", deny_unknown_fields)]
pub enum Verdict {
    Consistent,
    NoRadarReturn,
    SizeRangeMismatch {
        expected_height_px: f64,
        observed_height_px: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyVerdict {
    /// Index into the fused detections that were checked.
    pub detection: usize,
    #[serde(flatten)]
    pub verdict: Verdict,
}

impl ConsistencyVerdict {
    pub fn is_flagged(&self) -> bool {
        self.verdict != Verdict::Consistent
    }
}

pub fn expected_height_px(focal_px: f64, nominal_height: f64, range: f64) -> f64 {
    focal_px * nominal_height / range
}

pub fn check_frame(
    fused: &[FusedDetection],
    models: &[ClassSizeModel],
    focal_px: f64,
) -> Result<Vec<ConsistencyVerdict>, ConsistencyError> {
    if !(focal_px.is_finite() && focal_px > 0.0) {
        return Err(ConsistencyError::InvalidFocal(focal_px));
    }
    fused
        .iter()
        .enumerate()
        .map(|(detection, d)| {
            let verdict = match &d.radar {
                None => Verdict::NoRadarReturn,
                Some(radar) => {
                    if !(radar.range > 0.0) {
                        return Err(ConsistencyError::NonPositiveRange {
                            index: detection,
                            range: radar.range,
                        });
                    }
                    match models.iter().find(|m| m.class_label == d.bbox.class_label) {
                        None => Verdict::Consistent,
                        Some(model) => {
                            let expected = expected_height_px(focal_px, model.nominal_height, radar.range);
                            let observed = d.bbox.height();
                            let lo = expected / model.tolerance_factor;
                            let hi = expected * model.tolerance_factor;
                            if (lo..=hi).contains(&observed) {
                                Verdict::Consistent
                            } else {
                                Verdict::SizeRangeMismatch {
                                    expected_height_px: expected,
                                    observed_height_px: observed,
                                }
                            }
                        }
                    }
                }
            };
            Ok(ConsistencyVerdict { detection, verdict })
        })
        .collect()
}

/// Focal length in pixels from the horizontal field of view.
pub fn estimate_focal(g: &RigGeometry) -> f64 {
    (g.image_width / 2.0) / (g.camera_fov_horizontal / 2.0).tan()
}
