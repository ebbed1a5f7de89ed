//! Radar-to-pixel calibration from point correspondences.
//!
//! The projection is estimated with a normalized direct linear transform:
//! both point sets are centred and scaled, every correspondence contributes
//! the two rows obtained by cross-multiplying `[u v 1]^T ~ P [x y z 1]^T`,
//! and the solution is the right singular vector of the smallest singular
//! value of the stacked `2N x 12` system. [`solve_robust`] wraps that in a
//! seeded RANSAC loop over minimal six-point samples.

use nalgebra::{DMatrix, Matrix3, Matrix3x4, Matrix4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, PixelCoord, ProjectionMatrix, RadarPointCartesian, RANK_EPS};

/// 11 degrees of freedom at two equations per correspondence.
pub const MIN_CORRESPONDENCES: usize = 6;

/// Above this smallest/second-smallest singular value ratio the design
/// system no longer has a well separated one-dimensional null space.
pub const MAX_CONDITION_RATIO: f64 = 0.5;

/// Consensus refinement rounds after the sampling phase.
const MAX_REFINE_ROUNDS: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("insufficient correspondences: got {got}, need at least {MIN_CORRESPONDENCES}")]
    InsufficientCorrespondences { got: usize },
    #[error("degenerate correspondence configuration (condition ratio {condition_ratio:.3e})")]
    DegenerateConfiguration { condition_ratio: f64 },
    #[error("no consensus: no sample reached {MIN_CORRESPONDENCES} inliers")]
    NoConsensus,
    #[error("correspondence {index}: {source}")]
    DegenerateDepth { index: usize, source: GeometryError },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Correspondence {
    pub radar: RadarPointCartesian,
    pub pixel: PixelCoord,
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

impl Correspondence {
    pub fn new(radar: RadarPointCartesian, pixel: PixelCoord) -> Self {
        Self {
            radar,
            pixel,
            weight: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), CalibrationError> {
        let r = self.radar;
        if ![r.x, r.y, r.z].iter().all(|v| v.is_finite()) || !self.pixel.is_finite() {
            return Err(CalibrationError::InvalidInput("non-finite coordinate".into()));
        }
        if !(self.weight.is_finite() && self.weight > 0.0) {
            return Err(CalibrationError::InvalidInput(format!(
                "weight {} must be positive",
                self.weight
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub matrix: ProjectionMatrix,
    /// Root-mean-square pixel error over the correspondences the fit used.
    pub rms_reprojection_error: f64,
    pub inlier_flags: Vec<bool>,
    /// Smallest over second-smallest singular value of the final design system.
    pub condition_ratio: f64,
}

impl CalibrationResult {
    pub fn inlier_count(&self) -> usize {
        self.inlier_flags.iter().filter(|&&f| f).count()
    }
}

/// Normalized DLT over every correspondence.
pub fn solve_dlt(corrs: &[Correspondence]) -> Result<CalibrationResult, CalibrationError> {
    if corrs.len() < MIN_CORRESPONDENCES {
        return Err(CalibrationError::InsufficientCorrespondences { got: corrs.len() });
    }
    corrs.iter().try_for_each(Correspondence::validate)?;

    let (matrix, condition_ratio) = fit(corrs)?;
    let errors = reprojection_errors(&matrix, corrs)?;
    Ok(CalibrationResult {
        matrix,
        rms_reprojection_error: rms(&errors),
        inlier_flags: vec![true; corrs.len()],
        condition_ratio,
    })
}

/// RANSAC over six-point samples, refit on the largest consensus set.
///
/// When the number of distinct six-point subsets does not exceed `max_iters`
/// they are enumerated exhaustively in lexicographic order, otherwise
/// iteration `i` draws the `i`-th sample of a ChaCha stream seeded with
/// `seed`. Either way the result depends only on the inputs. The reported
/// RMS error covers the inliers only.
pub fn solve_robust(
    corrs: &[Correspondence],
    threshold_px: f64,
    max_iters: usize,
    seed: u64,
) -> Result<CalibrationResult, CalibrationError> {
    if corrs.len() < MIN_CORRESPONDENCES {
        return Err(CalibrationError::InsufficientCorrespondences { got: corrs.len() });
    }
    if !(threshold_px.is_finite() && threshold_px > 0.0) {
        return Err(CalibrationError::InvalidInput(format!(
            "threshold {threshold_px} px must be positive"
        )));
    }
    corrs.iter().try_for_each(Correspondence::validate)?;

    let n = corrs.len();
    let mut best: Option<Vec<bool>> = None;
    let mut best_count = 0;
    let mut sample_buf = Vec::with_capacity(MIN_CORRESPONDENCES);
    let mut consider = |sample: &[usize]| {
        sample_buf.clear();
        sample_buf.extend(sample.iter().map(|&i| corrs[i]));
        let Ok((model, _)) = fit(&sample_buf) else {
            return;
        };
        // A minimal model that does not fit its own sample cannot win.
        if !sample_buf.iter().all(|c| within(&model, c, threshold_px)) {
            return;
        }
        let flags: Vec<bool> = corrs.iter().map(|c| within(&model, c, threshold_px)).collect();
        let count = flags.iter().filter(|&&f| f).count();
        if count > best_count {
            best_count = count;
            best = Some(flags);
        }
    };

    if binomial(n, MIN_CORRESPONDENCES).is_some_and(|total| total <= max_iters as u128) {
        let mut combo: Vec<usize> = (0..MIN_CORRESPONDENCES).collect();
        loop {
            consider(&combo);
            if !next_combination(&mut combo, n) {
                break;
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..max_iters {
            let mut sample = rand::seq::index::sample(&mut rng, n, MIN_CORRESPONDENCES).into_vec();
            sample.sort_unstable();
            consider(&sample);
        }
    }

    let mut flags = match best {
        Some(flags) if best_count >= MIN_CORRESPONDENCES => flags,
        _ => return Err(CalibrationError::NoConsensus),
    };

    let mut result = refit(corrs, &flags)?;
    for _ in 0..MAX_REFINE_ROUNDS {
        let next: Vec<bool> = corrs
            .iter()
            .map(|c| within(&result.matrix, c, threshold_px))
            .collect();
        if next == flags || next.iter().filter(|&&f| f).count() < MIN_CORRESPONDENCES {
            break;
        }
        flags = next;
        result = refit(corrs, &flags)?;
    }
    Ok(result)
}

/// Per-correspondence Euclidean distance between the projected radar point
/// and the observed pixel.
pub fn reprojection_errors(
    m: &ProjectionMatrix,
    corrs: &[Correspondence],
) -> Result<Vec<f64>, CalibrationError> {
    corrs
        .iter()
        .enumerate()
        .map(|(index, c)| {
            m.project(&c.radar)
                .map(|p| p.distance(c.pixel))
                .map_err(|source| CalibrationError::DegenerateDepth { index, source })
        })
        .collect()
}

pub fn rms(errors: &[f64]) -> f64 {
    if errors.is_empty() {
        return 0.0;
    }
    (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt()
}

fn within(m: &ProjectionMatrix, c: &Correspondence, threshold_px: f64) -> bool {
    m.project(&c.radar)
        .is_ok_and(|p| p.distance(c.pixel) < threshold_px)
}

fn refit(corrs: &[Correspondence], flags: &[bool]) -> Result<CalibrationResult, CalibrationError> {
    let subset: Vec<Correspondence> = corrs
        .iter()
        .zip(flags)
        .filter(|(_, &f)| f)
        .map(|(c, _)| *c)
        .collect();
    let mut result = solve_dlt(&subset)?;
    result.inlier_flags = flags.to_vec();
    Ok(result)
}

/// Core normalized DLT; returns the canonical matrix and the condition ratio.
fn fit(corrs: &[Correspondence]) -> Result<(ProjectionMatrix, f64), CalibrationError> {
    let radar: Vec<_> = corrs.iter().map(|c| c.radar).collect();
    let pixels: Vec<_> = corrs.iter().map(|c| c.pixel).collect();
    let degenerate = |condition_ratio| CalibrationError::DegenerateConfiguration { condition_ratio };

    let t3 = normalize_3d(&radar).ok_or(degenerate(f64::INFINITY))?;
    let t2 = normalize_2d(&pixels).ok_or(degenerate(f64::INFINITY))?;

    let mut a = DMatrix::<f64>::zeros(2 * corrs.len(), 12);
    for (i, c) in corrs.iter().enumerate() {
        let x = t3 * c.radar.homogeneous();
        let p = t2 * nalgebra::Vector3::new(c.pixel.u, c.pixel.v, 1.0);
        let (u, v) = (p.x / p.z, p.y / p.z);
        let w = c.weight.sqrt();
        for k in 0..4 {
            a[(2 * i, k)] = w * x[k];
            a[(2 * i, 8 + k)] = -w * u * x[k];
            a[(2 * i + 1, 4 + k)] = w * x[k];
            a[(2 * i + 1, 8 + k)] = -w * v * x[k];
        }
    }

    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let smallest = svd.singular_values[order[0]];
    let second = svd.singular_values[order[1]];
    let largest = svd.singular_values[order[order.len() - 1]];

    let condition_ratio = if second > 0.0 { smallest / second } else { f64::INFINITY };
    if second <= RANK_EPS * largest || condition_ratio > MAX_CONDITION_RATIO {
        return Err(degenerate(condition_ratio));
    }

    let h = v_t.row(order[0]);
    let normalized = Matrix3x4::from_fn(|r, c| h[r * 4 + c]);
    let t2_inv = t2.try_inverse().ok_or(degenerate(condition_ratio))?;
    let matrix = ProjectionMatrix::new(t2_inv * normalized * t3).map_err(|_| degenerate(condition_ratio))?;
    Ok((matrix, condition_ratio))
}

/// Similarity taking the points to zero mean and mean distance sqrt(3).
fn normalize_3d(points: &[RadarPointCartesian]) -> Option<Matrix4<f64>> {
    let n = points.len() as f64;
    let centroid = points.iter().map(|p| p.to_vector()).sum::<nalgebra::Vector3<f64>>() / n;
    let mean_dist = points.iter().map(|p| (p.to_vector() - centroid).norm()).sum::<f64>() / n;
    if !(mean_dist.is_finite() && mean_dist > 0.0) {
        return None;
    }
    let s = 3f64.sqrt() / mean_dist;
    Some(Matrix4::new(
        s, 0.0, 0.0, -s * centroid.x, //
        0.0, s, 0.0, -s * centroid.y, //
        0.0, 0.0, s, -s * centroid.z, //
        0.0, 0.0, 0.0, 1.0,
    ))
}

/// Similarity taking the pixels to zero mean and mean distance sqrt(2).
fn normalize_2d(points: &[PixelCoord]) -> Option<Matrix3<f64>> {
    let n = points.len() as f64;
    let cu = points.iter().map(|p| p.u).sum::<f64>() / n;
    let cv = points.iter().map(|p| p.v).sum::<f64>() / n;
    let mean_dist = points.iter().map(|p| (p.u - cu).hypot(p.v - cv)).sum::<f64>() / n;
    if !(mean_dist.is_finite() && mean_dist > 0.0) {
        return None;
    }
    let s = 2f64.sqrt() / mean_dist;
    Some(Matrix3::new(
        s, 0.0, -s * cu, //
        0.0, s, -s * cv, //
        0.0, 0.0, 1.0,
    ))
}

fn binomial(n: usize, k: usize) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.checked_mul((n - i) as u128)? / (i as u128 + 1);
    }
    Some(acc)
}

/// Advances `combo` to the next k-subset of `0..n` in lexicographic order.
fn next_combination(combo: &mut [usize], n: usize) -> bool {
    let k = combo.len();
    let Some(i) = (0..k).rev().find(|&i| combo[i] < n - k + i) else {
        return false;
    };
    combo[i] += 1;
    for j in i + 1..k {
        combo[j] = combo[j - 1] + 1;
    }
    true
}
