//! Deterministic ground-truth scene generator.
//!
//! Objects are vertical sticks moving at constant velocity in the radar
//! frame. Every radar tick, each visible genuine object emits a small cloud
//! of spherical returns around its centre; every detection tick, each object
//! that projects into the image (spoofs included) yields a bounding box
//! centred on the projection of its centre. All randomness comes from a
//! ChaCha stream seeded by the scene.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{Correspondence, MIN_CORRESPONDENCES};
use crate::consistency::estimate_focal;
use crate::geometry::{
    cartesian_to_spherical, in_radar_fov, GeometryError, PixelCoord, ProjectionMatrix, RadarPointCartesian,
    RigGeometry,
};
use crate::sync::{BoundingBox, DetectionFrame, RadarFrame};

const DETECTION_CONFIDENCE: f64 = 0.9;
const MIN_BOX_HEIGHT_PX: f64 = 1.0;
const MAX_SAMPLING_ATTEMPTS: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneObject {
    pub id: u32,
    #[serde(rename = "class")]
    pub class_label: String,
    #[serde(rename = "height_m")]
    pub height: f64,
    pub initial_position: [f64; 3],
    pub velocity: [f64; 3],
    /// Visible to the camera, invisible to the radar.
    #[serde(default)]
    pub spoofed: bool,
}

impl SceneObject {
    pub fn position_at(&self, t_us: u64) -> Vector3<f64> {
        Vector3::from(self.initial_position) + Vector3::from(self.velocity) * (t_us as f64 * 1e-6)
    }

    /// Radial velocity of the object centre, positive when receding.
    pub fn doppler_at(&self, t_us: u64) -> f64 {
        let p = self.position_at(t_us);
        let n = p.norm();
        if n == 0.0 {
            0.0
        } else {
            p.dot(&Vector3::from(self.velocity)) / n
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub radar_range_sigma: f64,
    pub radar_angle_sigma: f64,
    pub pixel_sigma: f64,
    pub dropout_prob: f64,
    /// Inclusive `[min, max]` returns per object per radar frame.
    pub points_per_object: [usize; 2],
    /// Standard deviation of the isotropic scatter of returns about the centre.
    pub point_spread: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            radar_range_sigma: 0.0,
            radar_angle_sigma: 0.0,
            pixel_sigma: 0.0,
            dropout_prob: 0.0,
            points_per_object: [5, 30],
            point_spread: 0.1,
        }
    }
}

impl NoiseSpec {
    /// Every return sits exactly on the object centre; no pixel noise.
    pub fn noise_free() -> Self {
        Self {
            point_spread: 0.0,
            points_per_object: [8, 8],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        for (name, v) in [
            ("radar_range_sigma", self.radar_range_sigma),
            ("radar_angle_sigma", self.radar_angle_sigma),
            ("pixel_sigma", self.pixel_sigma),
            ("point_spread", self.point_spread),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(format!("{name} = {v} must be finite and non-negative")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return Err(invalid(format!("dropout_prob {} outside [0, 1)", self.dropout_prob)));
        }
        let [lo, hi] = self.points_per_object;
        if lo == 0 || lo > hi {
            return Err(invalid(format!("points_per_object [{lo}, {hi}] is empty or zero")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub objects: Vec<SceneObject>,
    pub rig: RigGeometry,
    pub true_matrix: ProjectionMatrix,
    pub radar_period_us: u64,
    pub detection_period_us: u64,
    pub duration_us: u64,
    pub noise: NoiseSpec,
    pub seed: u64,
}

impl Scene {
    /// Scene with the projection derived from the rig and the 10 / 2 frames
    /// per second radar / detection rates.
    pub fn new(objects: Vec<SceneObject>, rig: RigGeometry, duration_us: u64, noise: NoiseSpec, seed: u64) -> Result<Self, SimError> {
        Ok(Self {
            objects,
            true_matrix: rig_matrix(&rig)?,
            rig,
            radar_period_us: 100_000,
            detection_period_us: 500_000,
            duration_us,
            noise,
            seed,
        })
    }

    /// Two pedestrians and a photograph of a third over ten seconds.
    pub fn demo() -> Self {
        let objects = vec![
            SceneObject {
                id: 1,
                class_label: "person".into(),
                height: 1.7,
                initial_position: [-2.0, -0.15, 6.0],
                velocity: [0.3, 0.0, 0.0],
                spoofed: false,
            },
            SceneObject {
                id: 2,
                class_label: "person".into(),
                height: 1.7,
                initial_position: [2.5, -0.15, 4.0],
                velocity: [0.0, 0.0, 0.25],
                spoofed: false,
            },
            SceneObject {
                id: 3,
                class_label: "person".into(),
                height: 1.7,
                initial_position: [0.5, -0.15, 3.0],
                velocity: [0.0, 0.0, 0.0],
                spoofed: true,
            },
        ];
        Self::new(objects, RigGeometry::default(), 10_000_000, NoiseSpec::noise_free(), 2024)
            .expect("default rig is valid")
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.rig.validate()?;
        self.noise.validate()?;
        if self.radar_period_us == 0 || self.detection_period_us == 0 {
            return Err(invalid("periods must be positive".into()));
        }
        if self.duration_us < self.radar_period_us.min(self.detection_period_us) {
            return Err(invalid("duration shorter than one period".into()));
        }
        for o in &self.objects {
            let finite = o.initial_position.iter().chain(&o.velocity).all(|v| v.is_finite());
            if !(o.height.is_finite() && o.height > 0.0) || !finite {
                return Err(invalid(format!("object {} has invalid height or motion", o.id)));
            }
        }
        let mut ids: Vec<_> = self.objects.iter().map(|o| o.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("object ids must be unique".into()));
        }
        Ok(())
    }

    pub fn focal_px(&self) -> f64 {
        estimate_focal(&self.rig)
    }

    fn ticks(&self, period: u64) -> impl Iterator<Item = u64> {
        (0..self.duration_us / period).map(move |k| k * period)
    }
}

/// Pinhole camera from the rig: focal length from the horizontal field of
/// view, principal point at the image centre, camera axes aligned with the
/// radar except for a downward image `v`, optical centre `radar_height_ry`
/// metres above the radar.
pub fn rig_matrix(rig: &RigGeometry) -> Result<ProjectionMatrix, GeometryError> {
    rig.validate()?;
    let flip_y = Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0);
    let centre = Vector3::new(0.0, rig.radar_height_ry, 0.0);
    ProjectionMatrix::from_pinhole(estimate_focal(rig), rig.principal_point(), &flip_y, &(-(flip_y * centre)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthStream {
    Radar,
    Detection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectTruth {
    pub id: u32,
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    pub spoofed: bool,
    /// Produced returns (radar ticks) or a box (detection ticks).
    pub observed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthFrame {
    pub t_us: u64,
    pub stream: TruthStream,
    pub objects: Vec<ObjectTruth>,
    /// Generating object of each box, in box order; empty on radar ticks.
    #[serde(default)]
    pub box_object_ids: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub radar: Vec<RadarFrame>,
    pub detections: Vec<DetectionFrame>,
    /// Radar and detection ticks merged in time order (radar first on ties).
    pub truth: Vec<TruthFrame>,
    pub true_matrix: ProjectionMatrix,
    /// Objects no sensor ever sees.
    pub warnings: Vec<String>,
}

struct Noise {
    range: Normal<f64>,
    angle: Normal<f64>,
    pixel: Normal<f64>,
    spread: Normal<f64>,
}

impl Noise {
    fn new(spec: &NoiseSpec) -> Self {
        let n = |s: f64| Normal::new(0.0, s).expect("validated sigma");
        Self {
            range: n(spec.radar_range_sigma),
            angle: n(spec.radar_angle_sigma),
            pixel: n(spec.pixel_sigma),
            spread: n(spec.point_spread),
        }
    }
}

pub fn generate(scene: &Scene) -> Result<SimOutput, SimError> {
    scene.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
    let noise = Noise::new(&scene.noise);
    let focal = scene.focal_px();
    let mut seen = vec![false; scene.objects.len()];

    let mut radar = Vec::new();
    let mut radar_truth = Vec::new();
    for t_us in scene.ticks(scene.radar_period_us) {
        let mut points = Vec::new();
        let mut objects = Vec::with_capacity(scene.objects.len());
        for (k, o) in scene.objects.iter().enumerate() {
            let centre = o.position_at(t_us);
            let visible = !o.spoofed
                && cartesian_to_spherical(&RadarPointCartesian::from_vector(&centre))
                    .is_ok_and(|s| in_radar_fov(&scene.rig, &s));
            if visible {
                seen[k] = true;
                let [lo, hi] = scene.noise.points_per_object;
                let count = rng.random_range(lo..=hi);
                let doppler = o.doppler_at(t_us);
                for _ in 0..count {
                    let offset = Vector3::new(
                        noise.spread.sample(&mut rng),
                        noise.spread.sample(&mut rng),
                        noise.spread.sample(&mut rng),
                    );
                    let (dr, daz, del) = (
                        noise.range.sample(&mut rng),
                        noise.angle.sample(&mut rng),
                        noise.angle.sample(&mut rng),
                    );
                    let Ok(mut p) = cartesian_to_spherical(&RadarPointCartesian::from_vector(&(centre + offset))) else {
                        continue;
                    };
                    p.range = (p.range + dr).abs();
                    p.azimuth = wrap_angle(p.azimuth + daz);
                    p.elevation = (p.elevation + del).clamp(-std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2);
                    p.doppler = doppler;
                    p.snr = return_snr(p.range);
                    points.push(p);
                }
            }
            objects.push(object_truth(o, t_us, visible));
        }
        radar.push(RadarFrame { t_us, points });
        radar_truth.push(TruthFrame {
            t_us,
            stream: TruthStream::Radar,
            objects,
            box_object_ids: Vec::new(),
        });
    }

    let mut detections = Vec::new();
    let mut detection_truth = Vec::new();
    for t_us in scene.ticks(scene.detection_period_us) {
        let mut boxes = Vec::new();
        let mut box_object_ids = Vec::new();
        let mut objects = Vec::with_capacity(scene.objects.len());
        for (k, o) in scene.objects.iter().enumerate() {
            let centre = RadarPointCartesian::from_vector(&o.position_at(t_us));
            let du = noise.pixel.sample(&mut rng);
            let dv = noise.pixel.sample(&mut rng);
            let dh = noise.pixel.sample(&mut rng);
            let dropped = rng.random::<f64>() < scene.noise.dropout_prob;

            let projected = (scene.true_matrix.camera_depth(&centre) > 0.0)
                .then(|| scene.true_matrix.project(&centre).ok())
                .flatten()
                .filter(|p| scene.rig.contains_pixel(*p));
            let mut observed = false;
            if let Some(p) = projected {
                seen[k] = true;
                if !dropped {
                    let height = (focal * o.height / centre.norm() + dh).max(MIN_BOX_HEIGHT_PX);
                    let width = height * aspect_ratio(&o.class_label);
                    let mut b = BoundingBox::centered(p.u + du, p.v + dv, width, height, o.class_label.clone());
                    b.confidence = DETECTION_CONFIDENCE;
                    boxes.push(b);
                    box_object_ids.push(o.id);
                    observed = true;
                }
            }
            objects.push(object_truth(o, t_us, observed));
        }
        detections.push(DetectionFrame { t_us, boxes });
        detection_truth.push(TruthFrame {
            t_us,
            stream: TruthStream::Detection,
            objects,
            box_object_ids,
        });
    }

    let warnings = scene
        .objects
        .iter()
        .zip(&seen)
        .filter(|(_, &s)| !s)
        .map(|(o, _)| format!("object {} is outside both fields of view for the whole scene", o.id))
        .collect();

    let mut truth = Vec::with_capacity(radar_truth.len() + detection_truth.len());
    let mut det_iter = detection_truth.into_iter().peekable();
    for r in radar_truth {
        while let Some(d) = det_iter.next_if(|d| d.t_us < r.t_us) {
            truth.push(d);
        }
        truth.push(r);
    }
    truth.extend(det_iter);

    Ok(SimOutput {
        radar,
        detections,
        truth,
        true_matrix: scene.true_matrix,
        warnings,
    })
}

/// `n` random correspondences inside both fields of view, pixels through the
/// true matrix plus the scene's pixel noise. Uses its own random stream, so
/// it does not perturb [`generate`].
pub fn generate_correspondences(scene: &Scene, n: usize) -> Result<Vec<Correspondence>, SimError> {
    scene.validate()?;
    if n < MIN_CORRESPONDENCES {
        return Err(invalid(format!("need at least {MIN_CORRESPONDENCES} correspondences, asked for {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
    rng.set_stream(1);
    let pixel = Normal::new(0.0, scene.noise.pixel_sigma).expect("validated sigma");
    let half_az = scene.rig.radar_fov_azimuth / 2.0;
    let half_el = scene.rig.radar_fov_elevation / 2.0;

    let mut out = Vec::with_capacity(n);
    let mut attempts = 0;
    while out.len() < n {
        attempts += 1;
        if attempts > MAX_SAMPLING_ATTEMPTS {
            return Err(invalid("radar and camera fields of view do not overlap".into()));
        }
        let range = rng.random_range(1.0..10.0);
        let az = rng.random_range(-half_az..=half_az);
        let el = rng.random_range(-half_el..=half_el);
        let radar = crate::geometry::spherical_to_cartesian(&crate::geometry::RadarPointSpherical::new(range, az, el));
        if scene.true_matrix.camera_depth(&radar) <= 0.0 {
            continue;
        }
        let Ok(p) = scene.true_matrix.project(&radar) else {
            continue;
        };
        if !scene.rig.contains_pixel(p) {
            continue;
        }
        let noisy = PixelCoord::new(p.u + pixel.sample(&mut rng), p.v + pixel.sample(&mut rng));
        out.push(Correspondence::new(radar, noisy));
    }
    Ok(out)
}

fn object_truth(o: &SceneObject, t_us: u64, observed: bool) -> ObjectTruth {
    ObjectTruth {
        id: o.id,
        position: o.position_at(t_us).into(),
        velocity: o.velocity,
        spoofed: o.spoofed,
        observed,
    }
}

fn aspect_ratio(class_label: &str) -> f64 {
    match class_label {
        "person" => 0.4,
        "car" => 2.2,
        _ => 0.75,
    }
}

/// Free-space fall-off, 40 dB at one metre.
fn return_snr(range: f64) -> f64 {
    40.0 - 40.0 * range.max(0.1).log10()
}

fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    if a.abs() <= PI {
        a
    } else {
        (a + PI).rem_euclid(TAU) - PI
    }
}

fn invalid(msg: String) -> SimError {
    SimError::InvalidScene(msg)
}
