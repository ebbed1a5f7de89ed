//! End-to-end orchestration: sync, gate, cluster, associate, track, check.
//!
//! The pipeline is keyed on the slow detection stream: one [`FrameReport`]
//! per synced pair. Radar frames between detections only matter through the
//! tracker's prediction.

use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consistency::{check_frame, estimate_focal, ClassSizeModel, ConsistencyError, ConsistencyVerdict, Verdict};
use crate::fusion::{associate, AssociationConfig, FusedDetection};
use crate::geometry::{ProjectionMatrix, RigGeometry};
use crate::radar_proc::{cluster_frame, gate_frame, ClusterConfig};
use crate::simulator::{TruthFrame, TruthStream};
use crate::sync::{pair_streams, DetectionFrame, RadarFrame, SyncError, DEFAULT_TOLERANCE_US};
use crate::tracking::{Track, Tracker, TrackerConfig, TrackingError, TrackStatus};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid pipeline config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Sync(#[from] SyncError),
    #[error("frame at {t_us} us: {source}")]
    Tracking { t_us: u64, source: TrackingError },
    #[error("frame at {t_us} us: {source}")]
    Consistency { t_us: u64, source: ConsistencyError },
}

/// Everything except the calibration; loadable from a config file with any
/// field omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSettings {
    pub sync_tolerance_us: u64,
    pub rig: RigGeometry,
    pub cluster: ClusterConfig,
    pub association: AssociationConfig,
    pub tracker: TrackerConfig,
    pub tracking_enabled: bool,
    pub consistency_enabled: bool,
    pub class_models: Vec<ClassSizeModel>,
    /// Defaults to the focal length implied by the rig.
    pub focal_px: Option<f64>,
    /// Wall-clock stage timings make reports non-reproducible; off by default.
    pub record_timings: bool,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self {
            sync_tolerance_us: DEFAULT_TOLERANCE_US,
            rig: RigGeometry::default(),
            cluster: ClusterConfig::default(),
            association: AssociationConfig::default(),
            tracker: TrackerConfig::default(),
            tracking_enabled: true,
            consistency_enabled: true,
            class_models: ClassSizeModel::defaults(),
            focal_px: None,
            record_timings: false,
        }
    }
}

impl PipelineSettings {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = PipelineError::InvalidConfig;
        if self.sync_tolerance_us == 0 {
            return Err(bad("sync_tolerance_us must be positive".into()));
        }
        self.rig.validate().map_err(|e| bad(e.to_string()))?;
        self.cluster.validate().map_err(bad)?;
        self.association.validate().map_err(bad)?;
        self.tracker.validate().map_err(|e| bad(e.to_string()))?;
        for m in &self.class_models {
            m.validate().map_err(|e| bad(e.to_string()))?;
        }
        if let Some(f) = self.focal_px {
            if !(f.is_finite() && f > 0.0) {
                return Err(bad(format!("focal_px {f} must be positive")));
            }
        }
        Ok(())
    }

    pub fn focal(&self) -> f64 {
        self.focal_px.unwrap_or_else(|| estimate_focal(&self.rig))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub settings: PipelineSettings,
    pub calibration: ProjectionMatrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageTimings {
    pub gate_us: f64,
    pub cluster_us: f64,
    pub associate_us: f64,
    pub track_us: f64,
    pub consistency_us: f64,
}

impl StageTimings {
    fn accumulate(&mut self, other: &Self) {
        self.gate_us += other.gate_us;
        self.cluster_us += other.cluster_us;
        self.associate_us += other.associate_us;
        self.track_us += other.track_us;
        self.consistency_us += other.consistency_us;
    }

    fn scaled(&self, s: f64) -> Self {
        Self {
            gate_us: self.gate_us * s,
            cluster_us: self.cluster_us * s,
            associate_us: self.associate_us * s,
            track_us: self.track_us * s,
            consistency_us: self.consistency_us * s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameReport {
    pub t_us: u64,
    pub radar_t_us: u64,
    pub fused: Vec<FusedDetection>,
    pub tracks: Vec<Track>,
    pub verdicts: Vec<ConsistencyVerdict>,
    pub unmatched_clusters: usize,
    pub degenerate_clusters: usize,
    pub timings: StageTimings,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSummary {
    pub frames: usize,
    pub detections: usize,
    pub fused_with_radar: usize,
    pub camera_only: usize,
    pub dropped_detection_frames: usize,
    pub unmatched_clusters: usize,
    /// Confirmed tracks per report, in report order.
    pub confirmed_tracks_per_frame: Vec<usize>,
    pub distinct_confirmed_tracks: usize,
    pub no_radar_return_flags: usize,
    pub size_range_mismatch_flags: usize,
    pub mean_stage_latency: StageTimings,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PipelineOutput {
    pub reports: Vec<FrameReport>,
    pub summary: PipelineSummary,
}

struct Stopwatch {
    enabled: bool,
    start: Instant,
}

impl Stopwatch {
    fn new(enabled: bool) -> Self {
        Self {
            enabled,
            start: Instant::now(),
        }
    }

    /// Microseconds since the last lap, or zero when disabled.
    fn lap(&mut self) -> f64 {
        if !self.enabled {
            return 0.0;
        }
        let now = Instant::now();
        let us = (now - self.start).as_secs_f64() * 1e6;
        self.start = now;
        us
    }
}

pub fn run(cfg: &PipelineConfig, radar: &[RadarFrame], detections: &[DetectionFrame]) -> Result<PipelineOutput, PipelineError> {
    let s = &cfg.settings;
    s.validate()?;
    let focal = s.focal();
    let outcome = pair_streams(radar, detections, s.sync_tolerance_us)?;
    let mut tracker = Tracker::new(s.tracker).map_err(|e| PipelineError::InvalidConfig(e.to_string()))?;

    let mut reports = Vec::with_capacity(outcome.pairs.len());
    for pair in &outcome.pairs {
        let t_us = pair.detection.t_us;
        let mut clock = Stopwatch::new(s.record_timings);
        let mut timings = StageTimings::default();

        let gated = gate_frame(&s.rig, &s.cluster, pair.radar);
        timings.gate_us = clock.lap();
        let clusters = cluster_frame(&s.cluster, &gated);
        timings.cluster_us = clock.lap();
        let association = associate(&cfg.calibration, &s.association, pair, &clusters);
        timings.associate_us = clock.lap();
        let tracks = if s.tracking_enabled {
            tracker
                .step(&association.fused, t_us)
                .map_err(|source| PipelineError::Tracking { t_us, source })?
        } else {
            Vec::new()
        };
        timings.track_us = clock.lap();
        let verdicts = if s.consistency_enabled {
            check_frame(&association.fused, &s.class_models, focal)
                .map_err(|source| PipelineError::Consistency { t_us, source })?
        } else {
            Vec::new()
        };
        timings.consistency_us = clock.lap();

        reports.push(FrameReport {
            t_us,
            radar_t_us: pair.radar.t_us,
            fused: association.fused,
            tracks,
            verdicts,
            unmatched_clusters: association.unmatched_clusters.len(),
            degenerate_clusters: association.degenerate_clusters.len(),
            timings,
        });
    }

    let mut summary = summarize(&reports);
    summary.dropped_detection_frames = outcome.dropped.len();
    Ok(PipelineOutput { reports, summary })
}

pub fn summarize(reports: &[FrameReport]) -> PipelineSummary {
    let mut summary = PipelineSummary {
        frames: reports.len(),
        ..PipelineSummary::default()
    };
    let mut confirmed_ids = std::collections::BTreeSet::new();
    let mut total = StageTimings::default();
    for r in reports {
        summary.detections += r.fused.len();
        summary.fused_with_radar += r.fused.iter().filter(|f| f.radar.is_some()).count();
        summary.unmatched_clusters += r.unmatched_clusters;
        let confirmed: Vec<_> = r.tracks.iter().filter(|t| t.status == TrackStatus::Confirmed).collect();
        summary.confirmed_tracks_per_frame.push(confirmed.len());
        confirmed_ids.extend(confirmed.iter().map(|t| t.id));
        for v in &r.verdicts {
            match v.verdict {
                Verdict::NoRadarReturn => summary.no_radar_return_flags += 1,
                Verdict::SizeRangeMismatch { .. } => summary.size_range_mismatch_flags += 1,
                Verdict::Consistent => {}
            }
        }
        total.accumulate(&r.timings);
    }
    summary.camera_only = summary.detections - summary.fused_with_radar;
    summary.distinct_confirmed_tracks = confirmed_ids.len();
    if !reports.is_empty() {
        summary.mean_stage_latency = total.scaled(1.0 / reports.len() as f64);
    }
    summary
}

/// Ground-truth comparison of a pipeline run. Ratios are `None` when they
/// have no denominator.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalMetrics {
    pub frames: usize,
    pub confirmed_tracks: usize,
    pub identity_consistency: Option<f64>,
    pub position_rmse_m: Option<f64>,
    pub spoof_true_positives: usize,
    pub spoof_false_positives: usize,
    pub spoof_false_negatives: usize,
    pub spoof_precision: Option<f64>,
    pub spoof_recall: Option<f64>,
    /// Detection ticks in the truth log with no report.
    pub dropped_detections: usize,
}

/// Scores reports against a simulator truth log.
///
/// A confirmed track is bound to the nearest genuine object at the first
/// frame it is reported confirmed; identity consistency is the fraction of
/// confirmed (track, frame) samples whose nearest genuine object is still
/// that one, and the RMSE is measured against the bound object. A box counts
/// as flagged when its verdict is anything but consistent.
pub fn evaluate(reports: &[FrameReport], truth: &[TruthFrame]) -> EvalMetrics {
    let by_time: HashMap<u64, &TruthFrame> = truth
        .iter()
        .filter(|f| f.stream == TruthStream::Detection)
        .map(|f| (f.t_us, f))
        .collect();

    let mut m = EvalMetrics {
        frames: reports.len(),
        dropped_detections: by_time.len().saturating_sub(
            reports.iter().filter(|r| by_time.contains_key(&r.t_us)).count(),
        ),
        ..EvalMetrics::default()
    };

    let mut bindings: BTreeMap<u64, u32> = BTreeMap::new();
    let (mut samples, mut kept, mut sq_err) = (0usize, 0usize, 0.0);
    for r in reports {
        let Some(frame) = by_time.get(&r.t_us) else {
            continue;
        };

        for (i, _) in r.fused.iter().enumerate() {
            let Some(spoofed) = frame
                .box_object_ids
                .get(i)
                .and_then(|id| frame.objects.iter().find(|o| o.id == *id))
                .map(|o| o.spoofed)
            else {
                continue;
            };
            let flagged = r.verdicts.iter().any(|v| v.detection == i && v.is_flagged());
            match (spoofed, flagged) {
                (true, true) => m.spoof_true_positives += 1,
                (false, true) => m.spoof_false_positives += 1,
                (true, false) => m.spoof_false_negatives += 1,
                (false, false) => {}
            }
        }

        for t in r.tracks.iter().filter(|t| t.status == TrackStatus::Confirmed) {
            let p = [t.state.position.x, t.state.position.y, t.state.position.z];
            let Some(nearest) = nearest_genuine(frame, &p) else {
                continue;
            };
            let bound = *bindings.entry(t.id).or_insert(nearest);
            samples += 1;
            if bound == nearest {
                kept += 1;
            }
            if let Some(o) = frame.objects.iter().find(|o| o.id == bound) {
                sq_err += dist_sq(&o.position, &p);
            }
        }
    }

    m.confirmed_tracks = bindings.len();
    if samples > 0 {
        m.identity_consistency = Some(kept as f64 / samples as f64);
        m.position_rmse_m = Some((sq_err / samples as f64).sqrt());
    }
    let (tp, fp, fnn) = (m.spoof_true_positives, m.spoof_false_positives, m.spoof_false_negatives);
    m.spoof_precision = (tp + fp > 0).then(|| tp as f64 / (tp + fp) as f64);
    m.spoof_recall = (tp + fnn > 0).then(|| tp as f64 / (tp + fnn) as f64);
    m
}

fn nearest_genuine(frame: &TruthFrame, p: &[f64; 3]) -> Option<u32> {
    frame
        .objects
        .iter()
        .filter(|o| !o.spoofed)
        .min_by(|a, b| dist_sq(&a.position, p).total_cmp(&dist_sq(&b.position, p)).then(a.id.cmp(&b.id)))
        .map(|o| o.id)
}

fn dist_sq(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
