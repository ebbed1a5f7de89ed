//! Shared generators and brute-force oracles for the integration tests.
#![allow(dead_code)]

use nalgebra::{Rotation3, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use radcam::geometry::{cartesian_to_spherical, PixelCoord, ProjectionMatrix, RadarPointCartesian, RigGeometry};
use radcam::simulator::{NoiseSpec, Scene};
use radcam::sync::RadarFrame;

/// Camera looking roughly down +z with random intrinsics and a small random pose.
pub fn random_camera(rng: &mut ChaCha8Rng) -> ProjectionMatrix {
    let focal = rng.random_range(300.0..900.0);
    let principal = PixelCoord::new(rng.random_range(280.0..360.0), rng.random_range(200.0..280.0));
    let tilt = Rotation3::from_euler_angles(
        rng.random_range(-0.15..0.15),
        rng.random_range(-0.15..0.15),
        rng.random_range(-0.1..0.1),
    );
    let flip = nalgebra::Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0);
    let r = flip * tilt.matrix();
    let t = Vector3::new(
        rng.random_range(-0.5..0.5),
        rng.random_range(-1.5..0.5),
        rng.random_range(-0.3..0.3),
    );
    ProjectionMatrix::from_pinhole(focal, principal, &r, &t).unwrap()
}

/// Default-rig scene whose projection has been replaced by `m`.
pub fn scene_with(m: ProjectionMatrix, pixel_sigma: f64, seed: u64) -> Scene {
    let noise = NoiseSpec {
        pixel_sigma,
        ..NoiseSpec::noise_free()
    };
    let mut scene = Scene::new(vec![], RigGeometry::default(), 1_000_000, noise, seed).unwrap();
    scene.true_matrix = m;
    scene
}

/// Connected components of the `eps`-neighbour graph with at least
/// `min_points` members, by all-pairs union-find.
pub fn brute_force_components(points: &[RadarPointCartesian], eps: f64, min_points: usize) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            if points[i].distance(points[j]) <= eps {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a] = b;
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..n {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(i);
    }
    let mut out: Vec<Vec<usize>> = groups.into_values().filter(|g| g.len() >= min_points).collect();
    out.sort();
    out
}

/// Random frame of up to `max_points` returns: a few blobs plus scattered clutter.
pub fn random_frame(rng: &mut ChaCha8Rng, max_points: usize) -> RadarFrame {
    let n = rng.random_range(0..=max_points);
    let blobs: Vec<Vector3<f64>> = (0..rng.random_range(1..6))
        .map(|_| {
            Vector3::new(
                rng.random_range(-4.0..4.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(1.0..9.0),
            )
        })
        .collect();
    let points = (0..n)
        .map(|_| {
            let p = if rng.random_bool(0.8) {
                let c = blobs[rng.random_range(0..blobs.len())];
                c + Vector3::new(
                    rng.random_range(-0.6..0.6),
                    rng.random_range(-0.6..0.6),
                    rng.random_range(-0.6..0.6),
                )
            } else {
                Vector3::new(
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(0.5..10.0),
                )
            };
            cartesian_to_spherical(&RadarPointCartesian::from_vector(&p))
                .unwrap()
                .with_doppler(rng.random_range(-2.0..2.0))
                .with_snr(rng.random_range(0.0..30.0))
        })
        .collect();
    RadarFrame { t_us: 0, points }
}

/// Exhaustive search over partial one-to-one assignments: most matches
/// first, then least total cost. Returns `(matches, cost)`.
pub fn brute_force_assignment(costs: &[Vec<Option<f64>>]) -> (usize, f64) {
    fn go(costs: &[Vec<Option<f64>>], row: usize, used: &mut Vec<bool>, count: usize, cost: f64, best: &mut (usize, f64)) {
        if row == costs.len() {
            if count > best.0 || (count == best.0 && cost < best.1) {
                *best = (count, cost);
            }
            return;
        }
        go(costs, row + 1, used, count, cost, best);
        for (j, c) in costs[row].iter().enumerate() {
            if let Some(c) = c {
                if !used[j] {
                    used[j] = true;
                    go(costs, row + 1, used, count + 1, cost + c, best);
                    used[j] = false;
                }
            }
        }
    }
    let cols = costs.first().map_or(0, Vec::len);
    let mut best = (0, 0.0);
    go(costs, 0, &mut vec![false; cols], 0, 0.0, &mut best);
    best
}

/// Random gated cost matrix up to 6 x 6; integer costs make sums exact.
pub fn random_costs(rng: &mut ChaCha8Rng) -> Vec<Vec<Option<f64>>> {
    let rows = rng.random_range(0..=6);
    let cols = rng.random_range(0..=6);
    let gate_prob = rng.random_range(0.0..0.6);
    let integer = rng.random_bool(0.5);
    (0..rows)
        .map(|_| {
            (0..cols)
                .map(|_| {
                    if rng.random_bool(gate_prob) {
                        None
                    } else if integer {
                        Some(rng.random_range(0..20) as f64)
                    } else {
                        Some(rng.random_range(0.0..100.0))
                    }
                })
                .collect()
        })
        .collect()
}

/// Nearest radar timestamp within `tol`, earliest on ties, by linear scan.
pub fn brute_force_match(radar: &[u64], det: u64, tol: u64) -> Option<usize> {
    let mut best: Option<(u64, usize)> = None;
    for (j, &t) in radar.iter().enumerate() {
        let gap = t.abs_diff(det);
        if gap <= tol && best.is_none_or(|(g, _)| gap < g) {
            best = Some((gap, j));
        }
    }
    best.map(|(_, j)| j)
}

/// Least-squares slope of each coordinate against time.
pub fn line_fit_velocity(times: &[f64], positions: &[Vector3<f64>]) -> Vector3<f64> {
    let n = times.len() as f64;
    let t_mean = times.iter().sum::<f64>() / n;
    let p_mean = positions.iter().sum::<Vector3<f64>>() / n;
    let mut num = Vector3::zeros();
    let mut den = 0.0;
    for (t, p) in times.iter().zip(positions) {
        num += (p - p_mean) * (t - t_mean);
        den += (t - t_mean) * (t - t_mean);
    }
    num / den
}
