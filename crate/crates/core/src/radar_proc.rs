//! Radar frame gating and object-level clustering.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::geometry::{in_radar_fov, spherical_to_cartesian, RadarPointCartesian, RadarPointSpherical, RigGeometry};
use crate::sync::RadarFrame;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterConfig {
    /// Neighbourhood radius in metres.
    pub eps: f64,
    pub min_points: usize,
    pub max_range: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            eps: 0.5,
            min_points: 3,
            // unambiguous range of the evaluation unit
            max_range: 10.0,
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(format!("eps {} must be positive", self.eps));
        }
        if self.min_points == 0 {
            return Err("min_points must be at least 1".into());
        }
        if !(self.max_range.is_finite() && self.max_range > 0.0) {
            return Err(format!("max_range {} must be positive", self.max_range));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadarCluster {
    pub centroid: RadarPointCartesian,
    /// SNR-weighted (linear power) mean radial velocity.
    pub mean_doppler: f64,
    pub point_count: usize,
    /// Largest pairwise distance between member points.
    pub extent: f64,
    pub mean_snr: f64,
    /// Indices of the member points in the clustered frame, ascending.
    pub members: Vec<usize>,
}

impl RadarCluster {
    pub fn range(&self) -> f64 {
        self.centroid.norm()
    }
}

/// Keeps points inside the radar field of view and within `max_range`.
pub fn gate_frame(g: &RigGeometry, cfg: &ClusterConfig, f: &RadarFrame) -> RadarFrame {
    RadarFrame {
        t_us: f.t_us,
        points: f
            .points
            .iter()
            .filter(|p| in_radar_fov(g, p) && p.range <= cfg.max_range)
            .copied()
            .collect(),
    }
}

/// Single-level density clustering: points closer than `eps` are linked,
/// connected components smaller than `min_points` are noise. Clusters come
/// back sorted by centroid range.
pub fn cluster_frame(cfg: &ClusterConfig, f: &RadarFrame) -> Vec<RadarCluster> {
    let cart: Vec<RadarPointCartesian> = f.points.iter().map(spherical_to_cartesian).collect();
    let grid = Grid::new(&cart, cfg.eps);

    let mut visited = vec![false; cart.len()];
    let mut clusters = Vec::new();
    let mut queue = Vec::new();
    for seed in 0..cart.len() {
        if visited[seed] {
            continue;
        }
        visited[seed] = true;
        queue.clear();
        queue.push(seed);
        let mut members = Vec::new();
        while let Some(i) = queue.pop() {
            members.push(i);
            grid.for_each_neighbour(&cart, i, cfg.eps, |j| {
                if !visited[j] {
                    visited[j] = true;
                    queue.push(j);
                }
            });
        }
        if members.len() >= cfg.min_points {
            members.sort_unstable();
            clusters.push(summarize(&f.points, &cart, members));
        }
    }
    clusters.sort_by(|a, b| {
        a.range()
            .total_cmp(&b.range())
            .then_with(|| cmp_point(&a.centroid, &b.centroid))
    });
    clusters
}

fn summarize(points: &[RadarPointSpherical], cart: &[RadarPointCartesian], members: Vec<usize>) -> RadarCluster {
    // Sum in a canonical order so the result does not depend on input order.
    let mut order = members.clone();
    order.sort_by(|&a, &b| {
        cmp_point(&cart[a], &cart[b])
            .then_with(|| points[a].doppler.total_cmp(&points[b].doppler))
            .then_with(|| points[a].snr.total_cmp(&points[b].snr))
    });

    let n = order.len() as f64;
    let (mut sx, mut sy, mut sz) = (0.0, 0.0, 0.0);
    let (mut weight_sum, mut doppler_sum, mut snr_sum) = (0.0, 0.0, 0.0);
    for &i in &order {
        sx += cart[i].x;
        sy += cart[i].y;
        sz += cart[i].z;
        let w = 10f64.powf(points[i].snr / 10.0);
        weight_sum += w;
        doppler_sum += w * points[i].doppler;
        snr_sum += points[i].snr;
    }
    let mean_doppler = if weight_sum > 0.0 {
        doppler_sum / weight_sum
    } else {
        order.iter().map(|&i| points[i].doppler).sum::<f64>() / n
    };

    let mut extent: f64 = 0.0;
    for (k, &a) in order.iter().enumerate() {
        for &b in &order[k + 1..] {
            extent = extent.max(cart[a].distance(cart[b]));
        }
    }

    RadarCluster {
        centroid: RadarPointCartesian::new(sx / n, sy / n, sz / n),
        mean_doppler,
        point_count: order.len(),
        extent,
        mean_snr: snr_sum / n,
        members,
    }
}

fn cmp_point(a: &RadarPointCartesian, b: &RadarPointCartesian) -> Ordering {
    a.x.total_cmp(&b.x)
        .then_with(|| a.y.total_cmp(&b.y))
        .then_with(|| a.z.total_cmp(&b.z))
}

/// Uniform hash grid with cells slightly wider than `eps`, so linked points
/// are always in neighbouring cells.
struct Grid {
    cell: f64,
    cells: HashMap<[i64; 3], Vec<usize>>,
}

impl Grid {
    fn new(points: &[RadarPointCartesian], eps: f64) -> Self {
        let cell = eps * (1.0 + 1e-9);
        let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(cell, p)).or_default().push(i);
        }
        Self { cell, cells }
    }

    fn key(cell: f64, p: &RadarPointCartesian) -> [i64; 3] {
        [
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        ]
    }

    fn for_each_neighbour(&self, points: &[RadarPointCartesian], i: usize, eps: f64, mut f: impl FnMut(usize)) {
        let [kx, ky, kz] = Self::key(self.cell, &points[i]);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(bucket) = self.cells.get(&[kx + dx, ky + dy, kz + dz]) else {
                        continue;
                    };
                    for &j in bucket {
                        if j != i && points[i].distance(points[j]) <= eps {
                            f(j);
                        }
                    }
                }
            }
        }
    }
}
