mod common;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use radcam::assignment;
use radcam::fusion::{associate, AssociationConfig};
use radcam::geometry::RigGeometry;
use radcam::radar_proc::{cluster_frame, gate_frame, ClusterConfig};
use radcam::simulator::{generate, NoiseSpec, Scene, SceneObject};
use radcam::sync::pair_streams;
use radcam::tracking::{self, Measurement, Track, TrackStatus, Tracker, TrackerConfig};

fn separated_scene(rng: &mut ChaCha8Rng, n: usize, seed: u64) -> Scene {
    let rig = RigGeometry::default();
    let m = radcam::simulator::rig_matrix(&rig).unwrap();
    let mut objects: Vec<SceneObject> = Vec::new();
    while objects.len() < n {
        let p = [rng.random_range(-2.5..2.5), rng.random_range(-0.5..0.5), rng.random_range(2.0..9.0)];
        let here = radcam::geometry::RadarPointCartesian::new(p[0], p[1], p[2]);
        let Ok(px) = m.project(&here) else { continue };
        if !rig.contains_pixel(px) {
            continue;
        }
        let clear = objects.iter().all(|o| {
            let q = radcam::geometry::RadarPointCartesian::new(o.initial_position[0], o.initial_position[1], o.initial_position[2]);
            here.distance(q) > 1.0 && m.project(&q).unwrap().distance(px) > 40.0
        });
        if clear {
            objects.push(SceneObject {
                id: objects.len() as u32 + 1,
                class_label: "person".into(),
                height: 1.7,
                initial_position: p,
                velocity: [0.0; 3],
                spoofed: false,
            });
        }
    }
    let mut scene = Scene::new(objects, rig, 500_000, NoiseSpec::noise_free(), seed).unwrap();
    scene.detection_period_us = 500_000;
    scene
}

#[test]
fn exact_calibration_gives_identity_association() {
    let cfg = ClusterConfig::default();
    for seed in 0..40u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=5);
        let scene = separated_scene(&mut rng, n, seed);
        let sim = generate(&scene).unwrap();
        let sync = pair_streams(&sim.radar, &sim.detections, 50_000).unwrap();
        let pair = sync.pairs[0];
        let clusters = cluster_frame(&cfg, &gate_frame(&scene.rig, &cfg, pair.radar));
        assert_eq!(clusters.len(), n, "seed {seed}");
        let out = associate(&scene.true_matrix, &AssociationConfig::default(), &pair, &clusters);
        let truth = sim.truth.iter().find(|f| f.t_us == pair.detection.t_us && !f.box_object_ids.is_empty()).unwrap();
        for (fused, id) in out.fused.iter().zip(&truth.box_object_ids) {
            let obj = scene.objects.iter().find(|o| o.id == *id).unwrap();
            let c = fused.radar.as_ref().expect("every box matched").cluster.centroid;
            assert!((c.to_vector() - Vector3::from(obj.initial_position)).norm() < 1e-9, "seed {seed}: box of object {id} got the wrong cluster");
        }
        assert!(out.unmatched_clusters.is_empty());
    }
}

#[test]
fn gate_and_one_to_one_hold() {
    let cfg = AssociationConfig {
        gate_px: 40.0,
        ..AssociationConfig::default()
    };
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scene = separated_scene(&mut rng, 4, seed);
        let mut sim = generate(&scene).unwrap();
        for b in &mut sim.detections[0].boxes {
            let shift = rng.random_range(-60.0..60.0);
            b.u_min += shift;
            b.u_max += shift;
        }
        let sync = pair_streams(&sim.radar, &sim.detections, 50_000).unwrap();
        let clusters = cluster_frame(&ClusterConfig::default(), sync.pairs[0].radar);
        let out = associate(&scene.true_matrix, &cfg, &sync.pairs[0], &clusters);
        let mut used = vec![false; clusters.len()];
        for f in &out.fused {
            if let Some(r) = &f.radar {
                assert!(r.association_cost <= cfg.gate_px);
                assert!(!used[r.cluster_index]);
                used[r.cluster_index] = true;
            }
        }
        for j in &out.unmatched_clusters {
            assert!(!used[*j]);
        }
    }
}

fn exact_tracker() -> TrackerConfig {
    TrackerConfig {
        meas_noise_pos: 1e-6,
        ..TrackerConfig::default()
    }
}

#[test]
fn exact_updates_never_move_away_from_truth() {
    let cfg = exact_tracker();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let p0 = Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-1.0..1.0), rng.random_range(2.0..9.0));
        let v = Vector3::new(rng.random_range(-1.0..1.0), 0.0, rng.random_range(-1.0..1.0));
        let mut tracker = Tracker::new(cfg).unwrap();
        for k in 0..10u64 {
            let t = k as f64 * 0.5;
            let truth = p0 + v * t;
            if let Some(track) = tracker.tracks().first() {
                let predicted = tracking::predict(track, 0.5, &cfg);
                let z = Measurement {
                    position: truth,
                    radial_velocity: None,
                };
                let updated = tracking::update(&predicted, &z, &cfg).unwrap();
                assert!((updated.state.position - truth).norm() <= (predicted.state.position - truth).norm() + 1e-12);
            }
            let z = Measurement {
                position: truth,
                radial_velocity: None,
            };
            tracker.step_measurements(&[(z, "person")], k * 500_000).unwrap();
        }
    }
}

#[test]
fn tracker_assignment_is_optimal() {
    let cfg = TrackerConfig {
        gate_chi2: 50.0,
        ..TrackerConfig::default()
    };
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tracker = Tracker::new(cfg).unwrap();
        let n_tracks = rng.random_range(1..=5);
        let seeds: Vec<(Measurement, &str)> = (0..n_tracks)
            .map(|_| {
                (
                    Measurement {
                        position: Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-0.5..0.5), rng.random_range(3.0..6.0)),
                        radial_velocity: None,
                    },
                    "person",
                )
            })
            .collect();
        tracker.step_measurements(&seeds, 0).unwrap();
        let before: Vec<Track> = tracker.tracks().to_vec();

        let n_meas = rng.random_range(0..=5);
        let meas: Vec<(Measurement, &str)> = (0..n_meas)
            .map(|_| {
                (
                    Measurement {
                        position: Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-0.5..0.5), rng.random_range(3.0..6.0)),
                        radial_velocity: None,
                    },
                    "person",
                )
            })
            .collect();
        let predicted: Vec<Track> = before.iter().map(|t| tracking::predict(t, 0.5, &cfg)).collect();
        let costs: Vec<Vec<Option<f64>>> = predicted
            .iter()
            .map(|t| {
                meas.iter()
                    .map(|(m, _)| {
                        let d2 = tracking::mahalanobis_sq(t, &m.position, &cfg).unwrap();
                        (d2 <= cfg.gate_chi2).then_some(d2)
                    })
                    .collect()
            })
            .collect();
        let emitted = tracker.step_measurements(&meas, 500_000).unwrap();

        // recover which measurement each track absorbed
        let implied: Vec<Option<usize>> = predicted
            .iter()
            .zip(&emitted)
            .map(|(p, after)| {
                assert_eq!(p.id, after.id);
                (0..meas.len()).find(|&j| {
                    let u = tracking::update(p, &meas[j].0, &cfg).unwrap();
                    u.state == after.state
                })
            })
            .collect();
        assert_eq!(assignment::score(&costs, &implied), common::brute_force_assignment(&costs), "seed {seed}");
    }
}

#[test]
fn identical_inputs_give_identical_ids() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut tracker = Tracker::new(TrackerConfig::default()).unwrap();
        let mut ids = Vec::new();
        for k in 0..40u64 {
            let meas: Vec<(Measurement, &str)> = (0..rng.random_range(0..4))
                .map(|_| {
                    (
                        Measurement {
                            position: Vector3::new(rng.random_range(-3.0..3.0), 0.0, rng.random_range(2.0..8.0)),
                            radial_velocity: Some(rng.random_range(-1.0..1.0)),
                        },
                        "person",
                    )
                })
                .collect();
            let out = tracker.step_measurements(&meas, k * 500_000).unwrap();
            ids.push(out.iter().map(|t| (t.id, t.status)).collect::<Vec<_>>());
        }
        ids
    };
    assert_eq!(run(), run());
}

#[test]
fn parallel_targets_keep_their_ids() {
    let mut tracker = Tracker::new(TrackerConfig::default()).unwrap();
    let starts = [Vector3::new(-1.0, 0.0, 5.0), Vector3::new(1.0, 0.0, 5.0)];
    let v = Vector3::new(0.0, 0.0, 0.5);
    for k in 0..20u64 {
        let t = k as f64 * 0.5;
        let meas: Vec<(Measurement, &str)> = starts
            .iter()
            .map(|s| {
                let p = s + v * t;
                (
                    Measurement {
                        position: p,
                        radial_velocity: Some(p.dot(&v) / p.norm()),
                    },
                    "person",
                )
            })
            .collect();
        tracker.step_measurements(&meas, k * 500_000).unwrap();
    }
    let tracks = tracker.tracks();
    assert_eq!(tracks.len(), 2);
    for (t, s) in tracks.iter().zip(&starts) {
        assert_eq!(t.status, TrackStatus::Confirmed);
        assert!((t.state.position - (s + v * 9.5)).norm() < 0.05);
        assert!((t.state.velocity - v).norm() < 0.05);
    }
    assert_eq!(tracks[0].id, 1);
    assert_eq!(tracks[1].id, 2);
}

#[test]
fn lifecycle_confirm_lose_and_fresh_ids() {
    let cfg = TrackerConfig::default();
    let mut tracker = Tracker::new(cfg).unwrap();
    let z = |x: f64| {
        (
            Measurement {
                position: Vector3::new(x, 0.0, 5.0),
                radial_velocity: None,
            },
            "person",
        )
    };
    let mut t = 0;
    let mut step = |tracker: &mut Tracker, m: &[(Measurement, &str)]| {
        let out = tracker.step_measurements(m, t).unwrap();
        t += 500_000;
        out
    };
    assert_eq!(step(&mut tracker, &[z(0.0)])[0].status, TrackStatus::Tentative);
    assert_eq!(step(&mut tracker, &[z(0.0)])[0].status, TrackStatus::Tentative);
    assert_eq!(step(&mut tracker, &[z(0.0)])[0].status, TrackStatus::Confirmed);
    for miss in 1..cfg.lose_misses {
        let out = step(&mut tracker, &[]);
        assert_eq!((out[0].status, out[0].misses), (TrackStatus::Confirmed, miss));
    }
    let out = step(&mut tracker, &[]);
    assert_eq!(out[0].status, TrackStatus::Lost);
    assert!(tracker.tracks().is_empty());
    assert!(step(&mut tracker, &[]).is_empty());
    assert_eq!(step(&mut tracker, &[z(0.0)])[0].id, 2);
    assert!(tracker.step_measurements(&[], 0).is_err());
}
