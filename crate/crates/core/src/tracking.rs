//! Constant-velocity Kalman tracking in radar Cartesian coordinates.
//!
//! State is `[x y z vx vy vz]`. Prediction uses the piecewise-constant white
//! acceleration model; position measurements update linearly and an
//! optional Doppler reading follows as a scalar update on the linearised
//! radial velocity `p . v / |p|`.

use nalgebra::{Matrix3, Matrix3x6, Matrix6, RowVector6, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment;
use crate::fusion::FusedDetection;

/// Innovation variances at or below this are treated as singular.
pub const INNOVATION_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackingError {
    #[error("innovation covariance is singular")]
    SingularInnovation,
    #[error("time went backwards: {t_now_us} us after {last_us} us")]
    NonMonotoneTime { t_now_us: u64, last_us: u64 },
    #[error("invalid tracker config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackerConfig {
    /// Standard deviation of the white acceleration, m/s^2.
    pub process_noise_accel: f64,
    /// Position measurement standard deviation, m.
    pub meas_noise_pos: f64,
    /// Doppler measurement standard deviation, m/s.
    pub meas_noise_doppler: f64,
    /// Velocity standard deviation given to a freshly spawned track, m/s.
    pub init_velocity_sigma: f64,
    /// Squared Mahalanobis gate on the 3-D position innovation.
    pub gate_chi2: f64,
    pub confirm_hits: u32,
    pub lose_misses: u32,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            process_noise_accel: 1.0,
            meas_noise_pos: 0.15,
            meas_noise_doppler: 0.1,
            init_velocity_sigma: 3.0,
            // 99.9% quantile of chi-square with 3 degrees of freedom
            gate_chi2: 16.27,
            confirm_hits: 3,
            lose_misses: 5,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), TrackingError> {
        let reals = [
            ("process_noise_accel", self.process_noise_accel),
            ("meas_noise_pos", self.meas_noise_pos),
            ("meas_noise_doppler", self.meas_noise_doppler),
            ("init_velocity_sigma", self.init_velocity_sigma),
            ("gate_chi2", self.gate_chi2),
        ];
        for (name, v) in reals {
            if !(v.is_finite() && v > 0.0) {
                return Err(TrackingError::InvalidConfig(format!("{name} = {v} must be positive")));
            }
        }
        if self.confirm_hits == 0 || self.lose_misses == 0 {
            return Err(TrackingError::InvalidConfig(
                "confirm_hits and lose_misses must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub covariance: Matrix6<f64>,
}

impl TrackState {
    fn vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.position.x,
            self.position.y,
            self.position.z,
            self.velocity.x,
            self.velocity.y,
            self.velocity.z,
        )
    }

    fn set_vector(&mut self, x: &Vector6<f64>) {
        self.position = x.fixed_rows::<3>(0).into_owned();
        self.velocity = x.fixed_rows::<3>(3).into_owned();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackStatus {
    Tentative,
    Confirmed,
    Lost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Track {
    pub id: u64,
    pub state: TrackState,
    pub class_label: String,
    pub status: TrackStatus,
    pub hits: u32,
    pub misses: u32,
    pub last_update_us: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub position: Vector3<f64>,
    pub radial_velocity: Option<f64>,
}

pub fn transition(dt: f64) -> Matrix6<f64> {
    let mut f = Matrix6::identity();
    for i in 0..3 {
        f[(i, i + 3)] = dt;
    }
    f
}

pub fn process_noise(dt: f64, sigma_accel: f64) -> Matrix6<f64> {
    let q = sigma_accel * sigma_accel;
    let (dt2, dt3, dt4) = (dt * dt, dt * dt * dt, dt * dt * dt * dt);
    let mut m = Matrix6::zeros();
    for i in 0..3 {
        m[(i, i)] = q * dt4 / 4.0;
        m[(i, i + 3)] = q * dt3 / 2.0;
        m[(i + 3, i)] = q * dt3 / 2.0;
        m[(i + 3, i + 3)] = q * dt2;
    }
    m
}

fn position_observation() -> Matrix3x6<f64> {
    let mut h = Matrix3x6::zeros();
    for i in 0..3 {
        h[(i, i)] = 1.0;
    }
    h
}

/// Propagates the track `dt` seconds forward.
pub fn predict(t: &Track, dt: f64, cfg: &TrackerConfig) -> Track {
    let mut out = t.clone();
    if dt <= 0.0 {
        return out;
    }
    let f = transition(dt);
    out.state.position += t.state.velocity * dt;
    out.state.covariance = symmetrize(f * t.state.covariance * f.transpose() + process_noise(dt, cfg.process_noise_accel));
    out
}

/// Squared Mahalanobis distance of a position measurement from the track.
pub fn mahalanobis_sq(t: &Track, position: &Vector3<f64>, cfg: &TrackerConfig) -> Result<f64, TrackingError> {
    let h = position_observation();
    let s = h * t.state.covariance * h.transpose() + Matrix3::identity() * cfg.meas_noise_pos.powi(2);
    let y = position - t.state.position;
    let chol = s.cholesky().ok_or(TrackingError::SingularInnovation)?;
    Ok(y.dot(&chol.solve(&y)))
}

/// Kalman measurement update. Hits are incremented and misses reset.
pub fn update(t: &Track, z: &Measurement, cfg: &TrackerConfig) -> Result<Track, TrackingError> {
    let mut out = t.clone();
    let h = position_observation();
    let r = Matrix3::identity() * cfg.meas_noise_pos.powi(2);
    let p = t.state.covariance;
    let s = symmetrize3(h * p * h.transpose() + r);
    if s.determinant().abs() <= INNOVATION_EPS.powi(3) {
        return Err(TrackingError::SingularInnovation);
    }
    let s_inv = s
        .cholesky()
        .ok_or(TrackingError::SingularInnovation)?
        .inverse();
    let k = p * h.transpose() * s_inv;
    let x = t.state.vector() + k * (z.position - t.state.position);
    out.state.covariance = joseph(&p, &k, &h, &r);
    out.state.set_vector(&x);

    if let Some(doppler) = z.radial_velocity {
        doppler_update(&mut out.state, doppler, cfg)?;
    }
    out.hits += 1;
    out.misses = 0;
    Ok(out)
}

fn doppler_update(state: &mut TrackState, doppler: f64, cfg: &TrackerConfig) -> Result<(), TrackingError> {
    let p = state.position;
    let v = state.velocity;
    let r = p.norm();
    if r <= f64::EPSILON {
        return Ok(());
    }
    let predicted = p.dot(&v) / r;
    let d_dp = v / r - p * (predicted / (r * r));
    let d_dv = p / r;
    let h = RowVector6::new(d_dp.x, d_dp.y, d_dp.z, d_dv.x, d_dv.y, d_dv.z);

    let cov = state.covariance;
    let s = (h * cov * h.transpose())[(0, 0)] + cfg.meas_noise_doppler.powi(2);
    if s <= INNOVATION_EPS {
        return Err(TrackingError::SingularInnovation);
    }
    let k = cov * h.transpose() / s;
    let x = state.vector() + k * (doppler - predicted);
    let i_kh = Matrix6::identity() - k * h;
    state.covariance = symmetrize(i_kh * cov * i_kh.transpose() + k * k.transpose() * cfg.meas_noise_doppler.powi(2));
    state.set_vector(&x);
    Ok(())
}

fn joseph(p: &Matrix6<f64>, k: &nalgebra::Matrix6x3<f64>, h: &Matrix3x6<f64>, r: &Matrix3<f64>) -> Matrix6<f64> {
    let i_kh = Matrix6::identity() - k * h;
    symmetrize(i_kh * p * i_kh.transpose() + k * r * k.transpose())
}

fn symmetrize(m: Matrix6<f64>) -> Matrix6<f64> {
    (m + m.transpose()) * 0.5
}

fn symmetrize3(m: Matrix3<f64>) -> Matrix3<f64> {
    (m + m.transpose()) * 0.5
}

/// Multi-target tracker; owns its tracks and hands out snapshots.
#[derive(Debug, Clone)]
pub struct Tracker {
    cfg: TrackerConfig,
    tracks: Vec<Track>,
    next_id: u64,
    last_time_us: Option<u64>,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig) -> Result<Self, TrackingError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            tracks: Vec::new(),
            next_id: 1,
            last_time_us: None,
        })
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    /// Advances to `t_now_us` and folds in `detections`; entries without a
    /// radar match are ignored. Returns every track touched this step,
    /// including ones that just became lost (they are then dropped).
    pub fn step(&mut self, detections: &[FusedDetection], t_now_us: u64) -> Result<Vec<Track>, TrackingError> {
        let measurements: Vec<(Measurement, &str)> = detections
            .iter()
            .filter_map(|d| {
                let radar = d.radar.as_ref()?;
                let c = radar.cluster.centroid;
                Some((
                    Measurement {
                        position: Vector3::new(c.x, c.y, c.z),
                        radial_velocity: Some(radar.radial_velocity),
                    },
                    d.bbox.class_label.as_str(),
                ))
            })
            .collect();
        self.step_measurements(&measurements, t_now_us)
    }

    pub fn step_measurements(
        &mut self,
        measurements: &[(Measurement, &str)],
        t_now_us: u64,
    ) -> Result<Vec<Track>, TrackingError> {
        if let Some(last) = self.last_time_us {
            if t_now_us < last {
                return Err(TrackingError::NonMonotoneTime {
                    t_now_us,
                    last_us: last,
                });
            }
        }
        let dt = self.last_time_us.map_or(0.0, |last| (t_now_us - last) as f64 * 1e-6);
        self.last_time_us = Some(t_now_us);
        let cfg = self.cfg;

        for t in &mut self.tracks {
            *t = predict(t, dt, &cfg);
        }

        let costs = self
            .tracks
            .iter()
            .map(|t| {
                measurements
                    .iter()
                    .map(|(m, _)| {
                        let d2 = mahalanobis_sq(t, &m.position, &cfg)?;
                        Ok((d2 <= cfg.gate_chi2).then_some(d2))
                    })
                    .collect::<Result<Vec<_>, TrackingError>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        let assignment = assignment::solve(&costs);

        let mut claimed = vec![false; measurements.len()];
        for (track, slot) in self.tracks.iter_mut().zip(&assignment) {
            match slot {
                Some(j) => {
                    claimed[*j] = true;
                    *track = update(track, &measurements[*j].0, &cfg)?;
                    track.last_update_us = t_now_us;
                    if track.status == TrackStatus::Tentative && track.hits >= cfg.confirm_hits {
                        track.status = TrackStatus::Confirmed;
                    }
                }
                None => {
                    track.misses += 1;
                    if track.misses >= cfg.lose_misses {
                        track.status = TrackStatus::Lost;
                    }
                }
            }
        }

        for (j, (m, label)) in measurements.iter().enumerate() {
            if claimed[j] {
                continue;
            }
            let mut covariance = Matrix6::zeros();
            for i in 0..3 {
                covariance[(i, i)] = cfg.meas_noise_pos.powi(2);
                covariance[(i + 3, i + 3)] = cfg.init_velocity_sigma.powi(2);
            }
            let status = if cfg.confirm_hits <= 1 {
                TrackStatus::Confirmed
            } else {
                TrackStatus::Tentative
            };
            self.tracks.push(Track {
                id: self.next_id,
                state: TrackState {
                    position: m.position,
                    velocity: Vector3::zeros(),
                    covariance,
                },
                class_label: label.to_string(),
                status,
                hits: 1,
                misses: 0,
                last_update_us: t_now_us,
            });
            self.next_id += 1;
        }

        let emitted = self.tracks.clone();
        self.tracks.retain(|t| t.status != TrackStatus::Lost);
        Ok(emitted)
    }
}
