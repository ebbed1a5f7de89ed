//! Camera box / radar cluster association through the calibrated projection.

use serde::{Deserialize, Serialize};

use crate::assignment;
use crate::geometry::{GeometryError, ProjectionMatrix};
use crate::radar_proc::RadarCluster;
use crate::sync::{BoundingBox, SyncedPair};

/// Interior matches cost half their centre distance.
pub const INSIDE_BOX_DISCOUNT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssociationConfig {
    /// Largest admissible association cost in pixels.
    pub gate_px: f64,
    /// When false, clusters projecting outside a box are never paired with it.
    pub allow_outside_box: bool,
}

impl Default for AssociationConfig {
    fn default() -> Self {
        Self {
            gate_px: 75.0,
            allow_outside_box: true,
        }
    }
}

impl AssociationConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.gate_px.is_finite() && self.gate_px > 0.0) {
            return Err(format!("gate_px {} must be positive", self.gate_px));
        }
        Ok(())
    }
}

/// The radar half of a fused detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadarMatch {
    pub cluster: RadarCluster,
    /// Position of the cluster in the list handed to [`associate`].
    pub cluster_index: usize,
    pub range: f64,
    pub radial_velocity: f64,
    pub association_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusedDetection {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub radar: Option<RadarMatch>,
    pub t_us: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Association {
    /// One entry per box, in box order.
    pub fused: Vec<FusedDetection>,
    pub unmatched_clusters: Vec<usize>,
    /// Clusters whose centroid has no valid projection; excluded from matching.
    pub degenerate_clusters: Vec<usize>,
}

/// Pixel distance from the projected centroid to the box centre, halved when
/// the projection falls inside the box (edges included).
pub fn association_cost(m: &ProjectionMatrix, bbox: &BoundingBox, c: &RadarCluster) -> Result<f64, GeometryError> {
    let p = m.project(&c.centroid)?;
    Ok(cost_from_projection(bbox, p.u, p.v))
}

fn cost_from_projection(bbox: &BoundingBox, u: f64, v: f64) -> f64 {
    let (cu, cv) = bbox.center();
    let d = (u - cu).hypot(v - cv);
    if bbox.contains(u, v) {
        d * INSIDE_BOX_DISCOUNT
    } else {
        d
    }
}

/// Optimal one-to-one gated assignment of the pair's boxes to `clusters`.
pub fn associate(
    m: &ProjectionMatrix,
    cfg: &AssociationConfig,
    pair: &SyncedPair<'_>,
    clusters: &[RadarCluster],
) -> Association {
    let boxes = &pair.detection.boxes;
    let mut degenerate = Vec::new();
    let projections: Vec<Option<(f64, f64)>> = clusters
        .iter()
        .enumerate()
        .map(|(j, c)| match m.project(&c.centroid) {
            Ok(p) => Some((p.u, p.v)),
            Err(_) => {
                degenerate.push(j);
                None
            }
        })
        .collect();

    let costs: Vec<Vec<Option<f64>>> = boxes
        .iter()
        .map(|b| {
            projections
                .iter()
                .map(|proj| {
                    let (u, v) = (*proj)?;
                    if !cfg.allow_outside_box && !b.contains(u, v) {
                        return None;
                    }
                    let cost = cost_from_projection(b, u, v);
                    (cost <= cfg.gate_px).then_some(cost)
                })
                .collect()
        })
        .collect();

    let assignment = assignment::solve(&costs);
    let mut used = vec![false; clusters.len()];
    let fused = boxes
        .iter()
        .zip(&assignment)
        .enumerate()
        .map(|(i, (b, col))| FusedDetection {
            bbox: b.clone(),
            radar: col.map(|j| {
                used[j] = true;
                let cluster = clusters[j].clone();
                RadarMatch {
                    range: cluster.range(),
                    radial_velocity: cluster.mean_doppler,
                    association_cost: costs[i][j].expect("assigned pairs are admissible"),
                    cluster_index: j,
                    cluster,
                }
            }),
            t_us: pair.detection.t_us,
        })
        .collect();

    let unmatched_clusters = (0..clusters.len())
        .filter(|&j| !used[j] && projections[j].is_some())
        .collect();
    Association {
        fused,
        unmatched_clusters,
        degenerate_clusters: degenerate,
    }
}
