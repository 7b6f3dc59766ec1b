//! Cross-domain similarity between an acoustic frame and a map crop, and the
//! distance-to-weight inversion used by the filter.

use crate::error::{Error, Result};
use crate::geomap::{Class, CropImage};
use crate::sonar::AcousticImage;

/// Dissimilarity between an acoustic frame and a crop; lower is better.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct MatchDistance(f64);

impl MatchDistance {
    pub fn new(d: f64) -> Result<Self> {
        if d.is_finite() && d >= 0.0 {
            Ok(MatchDistance(d))
        } else {
            Err(Error::InvalidConfig(format!("match distance {d} must be finite and >= 0")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Normalized per-particle scores; non-negative and summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector(Vec<f64>);

impl ScoreVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Anything that can compare an acoustic frame with a map crop.
///
/// Implementations must be deterministic and free of side effects; the
/// filter calls them concurrently across particles.
pub trait Scorer: Send + Sync {
    fn score(&self, acoustic: &AcousticImage, crop: &CropImage) -> Result<MatchDistance>;
}

fn check_shapes(acoustic: &AcousticImage, crop: &CropImage) -> Result<()> {
    if acoustic.shape() != crop.shape() {
        return Err(Error::DimensionMismatch {
            expected: acoustic.shape(),
            actual: crop.shape(),
        });
    }
    Ok(())
}

/// `1 - IoU` between the non-zero acoustic pixels and the crop's Structure
/// cells. Movable and Unknown cells never count as structure. Two empty masks
/// give distance 1.
#[derive(Debug, Clone, Copy, Default)]
pub struct BaselineScorer;

impl Scorer for BaselineScorer {
    fn score(&self, acoustic: &AcousticImage, crop: &CropImage) -> Result<MatchDistance> {
        check_shapes(acoustic, crop)?;
        let (mut inter, mut union) = (0usize, 0usize);
        for (&v, &c) in acoustic.data().iter().zip(&crop.cells) {
            let a = v > 0.0;
            let s = c == Class::Structure;
            inter += (a && s) as usize;
            union += (a || s) as usize;
        }
        let d = if union == 0 {
            1.0
        } else {
            1.0 - inter as f64 / union as f64
        };
        MatchDistance::new(d)
    }
}

/// Scores a crop by how far its source pose is from the frame's ground-truth
/// pose: position error in meters plus heading error in radians. Only usable
/// on simulated data.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleScorer;

impl Scorer for OracleScorer {
    fn score(&self, acoustic: &AcousticImage, crop: &CropImage) -> Result<MatchDistance> {
        check_shapes(acoustic, crop)?;
        let truth = acoustic.truth.ok_or(Error::MissingGroundTruth)?;
        MatchDistance::new(crop.pose.distance_to(&truth) + crop.pose.heading_error(&truth))
    }
}

/// Inverts distances into normalized scores.
///
/// With `dmax` and `dmin` the extreme distances, each raw score is
/// `dmax - d + dmin`; scores are then divided by their sum. The all-zero case
/// (every distance zero) yields the uniform vector.
pub fn normalize_scores(distances: &[MatchDistance]) -> Result<ScoreVector> {
    if distances.is_empty() {
        return Err(Error::EmptyInput("normalize_scores needs at least one distance"));
    }
    let k = distances.len();
    let (dmin, dmax) = distances
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| {
            (lo.min(d.0), hi.max(d.0))
        });
    let raw: Vec<f64> = distances.iter().map(|d| dmax - d.0 + dmin).collect();
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        return Ok(ScoreVector(vec![1.0 / k as f64; k]));
    }
    Ok(ScoreVector(raw.into_iter().map(|f| f / total).collect()))
}
