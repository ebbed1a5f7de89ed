//! Coordinate conventions shared by every stage.
//!
//! Radar Cartesian frame: `x` to the right, `y` up, `z` forward along the
//! radar boresight. Spherical returns use azimuth positive to the right of
//! boresight and elevation positive upwards:
//!
//! ```text
//! x = r cos(el) sin(az)
//! y = r sin(el)
//! z = r cos(el) cos(az)
//! ```
//!
//! Pixels are `(u, v)` = (column, row). The radar-to-pixel map is a 3x4
//! homogeneous matrix, defined only up to scale; [`ProjectionMatrix`] keeps
//! a canonical representative (unit Frobenius norm, sign fixed on the last
//! row).

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix3x4, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Guard on the homogeneous depth before dividing.
pub const DEPTH_EPS: f64 = 1e-12;

/// Elements of the (unit-norm) last row at or below this magnitude are
/// treated as zero when fixing the sign.
pub const SIGN_EPS: f64 = 1e-9;

/// Smallest singular value relative to the largest below which a matrix is
/// considered rank deficient.
pub const RANK_EPS: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point is at the origin, direction undefined")]
    ZeroRange,
    #[error("degenerate homogeneous depth {w:e}: point lies on the camera principal plane")]
    DegenerateDepth { w: f64 },
    #[error("projection matrix has non-finite entries")]
    NonFinite,
    #[error("projection matrix is rank deficient (singular values {singular_values:?})")]
    RankDeficient { singular_values: [f64; 3] },
    #[error("invalid {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
}

/// A single radar return in sensor-native spherical form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadarPointSpherical {
    #[serde(rename = "r_m")]
    pub range: f64,
    #[serde(rename = "az_rad")]
    pub azimuth: f64,
    #[serde(rename = "el_rad")]
    pub elevation: f64,
    /// Radial velocity, positive when receding.
    #[serde(rename = "doppler_mps")]
    pub doppler: f64,
    #[serde(rename = "snr_db")]
    pub snr: f64,
}

impl RadarPointSpherical {
    pub fn new(range: f64, azimuth: f64, elevation: f64) -> Self {
        Self {
            range,
            azimuth,
            elevation,
            doppler: 0.0,
            snr: 0.0,
        }
    }

    pub fn with_doppler(mut self, doppler: f64) -> Self {
        self.doppler = doppler;
        self
    }

    pub fn with_snr(mut self, snr: f64) -> Self {
        self.snr = snr;
        self
    }

    /// Checks the type invariants, naming the first offending field.
    pub fn validate(&self) -> Result<(), GeometryError> {
        let fields = [
            ("r_m", self.range),
            ("az_rad", self.azimuth),
            ("el_rad", self.elevation),
            ("doppler_mps", self.doppler),
            ("snr_db", self.snr),
        ];
        for (field, value) in fields {
            if !value.is_finite() {
                return Err(invalid(field, format!("{value} is not finite")));
            }
        }
        if self.range < 0.0 {
            return Err(invalid("r_m", format!("range {} is negative", self.range)));
        }
        if self.azimuth.abs() > PI {
            return Err(invalid("az_rad", format!("|{}| exceeds pi", self.azimuth)));
        }
        if self.elevation.abs() > FRAC_PI_2 {
            return Err(invalid("el_rad", format!("|{}| exceeds pi/2", self.elevation)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadarPointCartesian {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl RadarPointCartesian {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }

    pub fn homogeneous(self) -> Vector4<f64> {
        Vector4::new(self.x, self.y, self.z, 1.0)
    }

    pub fn norm(self) -> f64 {
        self.to_vector().norm()
    }

    pub fn distance(self, other: Self) -> f64 {
        (self.to_vector() - other.to_vector()).norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PixelCoord {
    pub u: f64,
    pub v: f64,
}

impl PixelCoord {
    pub const fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn distance(self, other: Self) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }

    pub fn is_finite(self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }
}

pub fn spherical_to_cartesian(p: &RadarPointSpherical) -> RadarPointCartesian {
    let (sin_az, cos_az) = p.azimuth.sin_cos();
    let (sin_el, cos_el) = p.elevation.sin_cos();
    RadarPointCartesian {
        x: p.range * cos_el * sin_az,
        y: p.range * sin_el,
        z: p.range * cos_el * cos_az,
    }
}

/// Inverse of [`spherical_to_cartesian`]. Doppler and SNR are not carried by
/// a Cartesian point and come back as zero.
pub fn cartesian_to_spherical(p: &RadarPointCartesian) -> Result<RadarPointSpherical, GeometryError> {
    let horizontal = p.x.hypot(p.z);
    let range = horizontal.hypot(p.y);
    if range == 0.0 {
        return Err(GeometryError::ZeroRange);
    }
    Ok(RadarPointSpherical::new(
        range,
        p.x.atan2(p.z),
        p.y.atan2(horizontal),
    ))
}

/// Canonical 3x4 radar-to-pixel projection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionMatrix(Matrix3x4<f64>);

impl ProjectionMatrix {
    /// Validates rank and finiteness, then rescales to unit Frobenius norm
    /// with the first non-negligible element of the last row positive.
    pub fn new(m: Matrix3x4<f64>) -> Result<Self, GeometryError> {
        if m.iter().any(|x| !x.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let norm = m.norm();
        if norm == 0.0 {
            return Err(GeometryError::RankDeficient {
                singular_values: [0.0; 3],
            });
        }
        // Already-canonical input is kept bit-for-bit so re-reading is lossless.
        let mut m = if (norm - 1.0).abs() <= 4.0 * f64::EPSILON { m } else { m / norm };
        let sv = m.singular_values();
        let mut singular_values = [sv[0], sv[1], sv[2]];
        singular_values.sort_by(|a, b| b.total_cmp(a));
        if singular_values[2] <= RANK_EPS * singular_values[0] {
            return Err(GeometryError::RankDeficient { singular_values });
        }
        if let Some(lead) = m.row(2).iter().copied().find(|e| e.abs() > SIGN_EPS) {
            if lead < 0.0 {
                m = -m;
            }
        }
        Ok(Self(m))
    }

    pub fn from_row_major(values: &[f64; 12]) -> Result<Self, GeometryError> {
        Self::new(Matrix3x4::from_row_slice(values))
    }

    pub fn to_row_major(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for r in 0..3 {
            for c in 0..4 {
                out[r * 4 + c] = self.0[(r, c)];
            }
        }
        out
    }

    /// Pinhole composition `K [R | t]` with square pixels and no skew.
    /// `rotation` maps radar axes into camera axes (camera `y` pointing down
    /// the image), `translation` is expressed in camera axes.
    pub fn from_pinhole(
        focal_px: f64,
        principal: PixelCoord,
        rotation: &nalgebra::Matrix3<f64>,
        translation: &Vector3<f64>,
    ) -> Result<Self, GeometryError> {
        let k = nalgebra::Matrix3::new(
            focal_px, 0.0, principal.u, //
            0.0, focal_px, principal.v, //
            0.0, 0.0, 1.0,
        );
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(rotation);
        rt.set_column(3, translation);
        Self::new(k * rt)
    }

    pub fn matrix(&self) -> &Matrix3x4<f64> {
        &self.0
    }

    /// Homogeneous depth of `p`, the third component of `M [x y z 1]^T`.
    pub fn depth(&self, p: &RadarPointCartesian) -> f64 {
        self.0.row(2).dot(&p.homogeneous().transpose())
    }

    /// Distance of `p` in front of the camera along the optical axis, in
    /// units of the canonical scale; negative behind it. Unlike [`depth`]
    /// it does not depend on the overall sign of the matrix. Pixel `v` runs
    /// down while radar `y` runs up, so a physical camera has a left-handed
    /// left 3x3 block; the determinant sign is folded in accordingly.
    ///
    /// [`depth`]: Self::depth
    pub fn camera_depth(&self, p: &RadarPointCartesian) -> f64 {
        let det = self.0.fixed_view::<3, 3>(0, 0).determinant();
        -det.signum() * self.depth(p) / self.0.fixed_view::<1, 3>(2, 0).norm()
    }

    pub fn project(&self, p: &RadarPointCartesian) -> Result<PixelCoord, GeometryError> {
        project_raw(&self.0, p)
    }

    pub fn frobenius_distance(&self, other: &Self) -> f64 {
        (self.0 - other.0).norm()
    }
}

/// Projection through an arbitrary (not necessarily canonical) 3x4 matrix.
pub fn project_raw(m: &Matrix3x4<f64>, p: &RadarPointCartesian) -> Result<PixelCoord, GeometryError> {
    let h = m * p.homogeneous();
    let w = h[2];
    if w.abs() <= DEPTH_EPS {
        return Err(GeometryError::DegenerateDepth { w });
    }
    Ok(PixelCoord::new(h[0] / w, h[1] / w))
}

impl Serialize for ProjectionMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_row_major().serialize(s)
    }
}

impl<'de> Deserialize<'de> for ProjectionMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let values = <[f64; 12]>::deserialize(d)?;
        Self::from_row_major(&values).map_err(serde::de::Error::custom)
    }
}

/// Physical layout of the radar/camera rig.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigGeometry {
    /// Radar mounting height above ground; the simulator also uses it as the
    /// vertical offset of the camera centre above the radar.
    pub radar_height_ry: f64,
    pub radar_fov_azimuth: f64,
    pub radar_fov_elevation: f64,
    pub camera_fov_horizontal: f64,
    pub image_width: f64,
    pub image_height: f64,
}

impl Default for RigGeometry {
    /// IWR6843 evaluation unit (108 x 44 degrees) beside a 65 degree VGA camera.
    fn default() -> Self {
        Self {
            radar_height_ry: 1.0,
            radar_fov_azimuth: 108f64.to_radians(),
            radar_fov_elevation: 44f64.to_radians(),
            camera_fov_horizontal: 65f64.to_radians(),
            image_width: 640.0,
            image_height: 480.0,
        }
    }
}

impl RigGeometry {
    pub fn validate(&self) -> Result<(), GeometryError> {
        let positive = [
            ("radar_height_ry", self.radar_height_ry),
            ("radar_fov_azimuth", self.radar_fov_azimuth),
            ("radar_fov_elevation", self.radar_fov_elevation),
            ("camera_fov_horizontal", self.camera_fov_horizontal),
            ("image_width", self.image_width),
            ("image_height", self.image_height),
        ];
        for (field, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(invalid(field, format!("{value} must be positive and finite")));
            }
        }
        let fovs = [
            ("radar_fov_azimuth", self.radar_fov_azimuth),
            ("radar_fov_elevation", self.radar_fov_elevation),
            ("camera_fov_horizontal", self.camera_fov_horizontal),
        ];
        for (field, value) in fovs {
            if value >= 2.0 * PI {
                return Err(invalid(field, format!("{value} must be below 2*pi")));
            }
        }
        Ok(())
    }

    pub fn principal_point(&self) -> PixelCoord {
        PixelCoord::new(self.image_width / 2.0, self.image_height / 2.0)
    }

    pub fn contains_pixel(&self, p: PixelCoord) -> bool {
        (0.0..=self.image_width).contains(&p.u) && (0.0..=self.image_height).contains(&p.v)
    }
}

/// Boundary-inclusive radar field-of-view test.
pub fn in_radar_fov(g: &RigGeometry, p: &RadarPointSpherical) -> bool {
    p.azimuth.abs() <= g.radar_fov_azimuth / 2.0 && p.elevation.abs() <= g.radar_fov_elevation / 2.0
}

fn invalid(field: &'static str, reason: String) -> GeometryError {
    GeometryError::Invalid { field, reason }
}
