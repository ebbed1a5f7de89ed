//! Nearest-timestamp pairing of the camera detection stream with the
//! faster radar stream.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::RadarPointSpherical;

/// Half the radar period at 10 frames per second.
pub const DEFAULT_TOLERANCE_US: u64 = 50_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SyncError {
    #[error("{stream} stream is not sorted by time at frame {index}")]
    UnsortedInput { stream: &'static str, index: usize },
    #[error("tolerance must be positive")]
    InvalidTolerance,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadarFrame {
    pub t_us: u64,
    pub points: Vec<RadarPointSpherical>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundingBox {
    pub u_min: f64,
    pub v_min: f64,
    pub u_max: f64,
    pub v_max: f64,
    #[serde(rename = "class")]
    pub class_label: String,
    #[serde(rename = "conf")]
    pub confidence: f64,
}

impl BoundingBox {
    pub fn new(u_min: f64, v_min: f64, u_max: f64, v_max: f64, class_label: impl Into<String>) -> Self {
        Self {
            u_min,
            v_min,
            u_max,
            v_max,
            class_label: class_label.into(),
            confidence: 1.0,
        }
    }

    /// Box of the given size centred on `(u, v)`.
    pub fn centered(u: f64, v: f64, width: f64, height: f64, class_label: impl Into<String>) -> Self {
        Self::new(
            u - width / 2.0,
            v - height / 2.0,
            u + width / 2.0,
            v + height / 2.0,
            class_label,
        )
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.u_min + self.u_max) / 2.0, (self.v_min + self.v_max) / 2.0)
    }

    pub fn height(&self) -> f64 {
        self.v_max - self.v_min
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        (self.u_min..=self.u_max).contains(&u) && (self.v_min..=self.v_max).contains(&v)
    }

    /// Returns the offending field name and reason on failure.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        for (field, value) in [
            ("u_min", self.u_min),
            ("v_min", self.v_min),
            ("u_max", self.u_max),
            ("v_max", self.v_max),
            ("conf", self.confidence),
        ] {
            if !value.is_finite() {
                return Err((field, format!("{value} is not finite")));
            }
        }
        if self.u_min >= self.u_max {
            return Err(("u_max", format!("u_min {} >= u_max {}", self.u_min, self.u_max)));
        }
        if self.v_min >= self.v_max {
            return Err(("v_max", format!("v_min {} >= v_max {}", self.v_min, self.v_max)));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(("conf", format!("{} outside [0, 1]", self.confidence)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionFrame {
    pub t_us: u64,
    pub boxes: Vec<BoundingBox>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyncedPair<'a> {
    pub detection: &'a DetectionFrame,
    pub radar: &'a RadarFrame,
    /// `radar.t_us - detection.t_us`
    pub offset_us: i64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SyncOutcome<'a> {
    pub pairs: Vec<SyncedPair<'a>>,
    /// Indices of detection frames with no radar frame inside the tolerance.
    pub dropped: Vec<usize>,
}

/// Pairs every detection frame with the radar frame of smallest absolute
/// offset inside `tolerance_us`, preferring the earlier radar frame on ties.
/// Radar frames may be shared between detections.
pub fn pair_streams<'a>(
    radar: &'a [RadarFrame],
    detections: &'a [DetectionFrame],
    tolerance_us: u64,
) -> Result<SyncOutcome<'a>, SyncError> {
    if tolerance_us == 0 {
        return Err(SyncError::InvalidTolerance);
    }
    check_sorted("radar", radar.iter().map(|f| f.t_us))?;
    check_sorted("detection", detections.iter().map(|f| f.t_us))?;

    let mut outcome = SyncOutcome::default();
    // First radar frame that could still be within tolerance; only moves forward.
    let mut lo = 0;
    for (index, det) in detections.iter().enumerate() {
        let earliest = det.t_us.saturating_sub(tolerance_us);
        while lo < radar.len() && radar[lo].t_us < earliest {
            lo += 1;
        }
        let mut best: Option<(u64, usize)> = None;
        for (j, frame) in radar.iter().enumerate().skip(lo) {
            if frame.t_us > det.t_us.saturating_add(tolerance_us) {
                break;
            }
            let gap = frame.t_us.abs_diff(det.t_us);
            if best.is_none_or(|(g, _)| gap < g) {
                best = Some((gap, j));
            }
        }
        match best {
            Some((_, j)) => outcome.pairs.push(SyncedPair {
                detection: det,
                radar: &radar[j],
                offset_us: radar[j].t_us as i64 - det.t_us as i64,
            }),
            None => outcome.dropped.push(index),
        }
    }
    Ok(outcome)
}

fn check_sorted(stream: &'static str, times: impl Iterator<Item = u64>) -> Result<(), SyncError> {
    let mut prev = 0;
    for (index, t) in times.enumerate() {
        if t < prev {
            return Err(SyncError::UnsortedInput { stream, index });
        }
        prev = t;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn radar_at(times_ms: &[u64]) -> Vec<RadarFrame> {
        times_ms
            .iter()
            .map(|&t| RadarFrame {
                t_us: t * 1000,
                points: vec![],
            })
            .collect()
    }

    fn det_at(times_ms: &[u64]) -> Vec<DetectionFrame> {
        times_ms
            .iter()
            .map(|&t| DetectionFrame {
                t_us: t * 1000,
                boxes: vec![],
            })
            .collect()
    }

    #[test]
    fn nearest_neighbour() {
        let radar = radar_at(&[100, 200]);
        let dets = det_at(&[130]);
        let out = pair_streams(&radar, &dets, 50_000).unwrap();
        assert_eq!(out.pairs.len(), 1);
        assert_eq!(out.pairs[0].radar.t_us, 100_000);
        assert_eq!(out.pairs[0].offset_us, -30_000);
    }

    #[test]
    fn ties_go_to_the_earlier_frame() {
        let radar = radar_at(&[100, 200]);
        let dets = det_at(&[150]);
        let out = pair_streams(&radar, &dets, 50_000).unwrap();
        assert_eq!(out.pairs[0].radar.t_us, 100_000);
        assert_eq!(out.pairs[0].offset_us, -50_000);
    }

    #[test]
    fn duplicate_radar_times_pick_first() {
        let radar = radar_at(&[100, 100, 200]);
        let dets = det_at(&[110]);
        let out = pair_streams(&radar, &dets, 50_000).unwrap();
        assert!(std::ptr::eq(out.pairs[0].radar, &radar[0]));
    }

    #[test]
    fn ten_and_two_fps() {
        let radar = radar_at(&(0..100).map(|k| k * 100).collect::<Vec<_>>());
        let dets = det_at(&(0..20).map(|k| k * 500).collect::<Vec<_>>());
        let out = pair_streams(&radar, &dets, DEFAULT_TOLERANCE_US).unwrap();
        assert_eq!(out.pairs.len(), 20);
        assert!(out.dropped.is_empty());
        assert!(out.pairs.iter().all(|p| p.offset_us == 0));
    }

    #[test]
    fn gaps_are_dropped_not_errors() {
        let radar = radar_at(&[0, 1000]);
        let dets = det_at(&[10, 500, 990]);
        let out = pair_streams(&radar, &dets, 50_000).unwrap();
        assert_eq!(out.pairs.len(), 2);
        assert_eq!(out.dropped, vec![1]);
    }

    #[test]
    fn unsorted_streams_rejected() {
        let radar = radar_at(&[0, 200, 100]);
        let dets = det_at(&[0]);
        assert_eq!(
            pair_streams(&radar, &dets, 1).unwrap_err(),
            SyncError::UnsortedInput {
                stream: "radar",
                index: 2
            }
        );
        let radar = radar_at(&[0]);
        let dets = det_at(&[5, 1]);
        assert!(matches!(
            pair_streams(&radar, &dets, 1),
            Err(SyncError::UnsortedInput { stream: "detection", index: 1 })
        ));
        assert_eq!(pair_streams(&radar, &dets, 0).unwrap_err(), SyncError::InvalidTolerance);
    }

    #[test]
    fn box_validation() {
        assert!(BoundingBox::new(0.0, 0.0, 1.0, 1.0, "person").validate().is_ok());
        assert_eq!(
            BoundingBox::new(2.0, 0.0, 1.0, 1.0, "person").validate().unwrap_err().0,
            "u_max"
        );
        let mut b = BoundingBox::new(0.0, 0.0, 1.0, 1.0, "person");
        b.confidence = 1.5;
        assert_eq!(b.validate().unwrap_err().0, "conf");
    }
}
