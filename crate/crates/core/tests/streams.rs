mod common;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use radcam::radar_proc::{cluster_frame, ClusterConfig};
use radcam::sync::{pair_streams, DetectionFrame, RadarFrame};

fn sorted_times(rng: &mut ChaCha8Rng, n: usize, span: u64) -> Vec<u64> {
    let mut v: Vec<u64> = (0..n).map(|_| rng.random_range(0..span)).collect();
    v.sort_unstable();
    v
}

#[test]
fn sync_matches_linear_scan() {
    for seed in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n_radar, n_det) = (rng.random_range(0..=200), rng.random_range(0..=200));
        let radar_times = sorted_times(&mut rng, n_radar, 5_000_000);
        let det_times = sorted_times(&mut rng, n_det, 5_000_000);
        let tol = rng.random_range(1..80_000);
        let radar: Vec<RadarFrame> = radar_times.iter().map(|&t_us| RadarFrame { t_us, points: vec![] }).collect();
        let dets: Vec<DetectionFrame> = det_times.iter().map(|&t_us| DetectionFrame { t_us, boxes: vec![] }).collect();

        let out = pair_streams(&radar, &dets, tol).unwrap();
        let mut pairs = out.pairs.iter();
        for (i, det) in dets.iter().enumerate() {
            match common::brute_force_match(&radar_times, det.t_us, tol) {
                // the first of several equal timestamps is the one returned
                Some(j) => {
                    let p = pairs.next().expect("pair missing");
                    assert!(std::ptr::eq(p.detection, det));
                    assert_eq!(p.radar.t_us, radar_times[j], "seed {seed}");
                    assert_eq!(p.offset_us, radar_times[j] as i64 - det.t_us as i64);
                    assert!(radar_times.iter().all(|t| t.abs_diff(det.t_us) >= p.offset_us.unsigned_abs()));
                }
                None => assert!(out.dropped.contains(&i), "seed {seed}: detection {i} neither paired nor dropped"),
            }
        }
        assert!(pairs.next().is_none());
        assert_eq!(out.pairs.len() + out.dropped.len(), dets.len());
        assert_eq!(pair_streams(&radar, &dets, tol).unwrap(), out);
    }
}

#[test]
fn tie_prefers_earlier_radar_frame() {
    let radar = [0u64, 100].map(|t_us| RadarFrame { t_us, points: vec![] });
    let dets = [DetectionFrame { t_us: 50, boxes: vec![] }];
    let out = pair_streams(&radar, &dets, 50).unwrap();
    assert_eq!(out.pairs[0].radar.t_us, 0);
    assert_eq!(out.pairs[0].offset_us, -50);
}

#[test]
fn clusters_ignore_point_order() {
    let cfg = ClusterConfig::default();
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frame = common::random_frame(&mut rng, 200);
        let mut perm: Vec<usize> = (0..frame.points.len()).collect();
        perm.shuffle(&mut rng);
        let shuffled = RadarFrame {
            t_us: frame.t_us,
            points: perm.iter().map(|&i| frame.points[i]).collect(),
        };
        let a = cluster_frame(&cfg, &frame);
        let b = cluster_frame(&cfg, &shuffled);
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.centroid, y.centroid, "seed {seed}");
            assert_eq!(x.mean_doppler, y.mean_doppler);
            assert_eq!(x.mean_snr, y.mean_snr);
            assert_eq!(x.extent, y.extent);
            let mut mapped: Vec<usize> = y.members.iter().map(|&i| perm[i]).collect();
            mapped.sort_unstable();
            assert_eq!(x.members, mapped);
        }
    }
}

#[test]
fn every_point_in_at_most_one_cluster() {
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frame = common::random_frame(&mut rng, 200);
        let clusters = cluster_frame(&ClusterConfig::default(), &frame);
        let mut owner = vec![0u32; frame.points.len()];
        for c in &clusters {
            assert!(c.point_count >= 3);
            for &i in &c.members {
                owner[i] += 1;
            }
        }
        assert!(owner.iter().all(|&n| n <= 1));
        assert!(clusters.windows(2).all(|w| w[0].range() <= w[1].range()));
    }
}
