//! Acoustic image handling: segmentation into centroid clouds, frame-to-frame
//! ICP registration, multi-frame enhancement and the information gate.

mod centroids;
mod enhance;
mod icp;

use std::path::Path;

use image::{ExtendedColorType, ImageFormat};

pub use centroids::extract_centroids;
pub use enhance::{enhance, fuse, register_batch, warp_into, EnhanceParams};
pub use icp::{icp_align, IcpParams, IcpResult, PointCloud2D, RigidTransform2D};

use crate::error::{Error, Result};
use crate::geomap::{image_error, Pose2D, SonarFootprint};

/// Fraction of non-zero pixels below which a frame carries no usable structure.
pub const DEFAULT_INFO_THRESHOLD: f64 = 0.02;

/// Polar intensity raster from the forward-looking sonar.
///
/// Rows are range bins (ascending), columns are bearing bins ascending from
/// `-fov/2`. Intensities are in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AcousticImage {
    pub footprint: SonarFootprint,
    pub timestamp: f64,
    data: Vec<f64>,
    /// Ground-truth pose of the sensor, only known for simulated frames.
    pub truth: Option<Pose2D>,
}

impl AcousticImage {
    pub fn new(footprint: SonarFootprint, timestamp: f64, data: Vec<f64>) -> Result<Self> {
        if data.len() != footprint.len() {
            return Err(Error::DimensionMismatch {
                expected: footprint.shape(),
                actual: (data.len() / footprint.bearing_bins.max(1), footprint.bearing_bins),
            });
        }
        if let Some(v) = data.iter().find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
            return Err(Error::InvalidConfig(format!(
                "acoustic intensity {v} outside [0, 1]"
            )));
        }
        Ok(AcousticImage {
            footprint,
            timestamp,
            data,
            truth: None,
        })
    }

    pub fn zeros(footprint: SonarFootprint, timestamp: f64) -> Self {
        AcousticImage {
            footprint,
            timestamp,
            data: vec![0.0; footprint.len()],
            truth: None,
        }
    }

    pub fn with_truth(mut self, pose: Pose2D) -> Self {
        self.truth = Some(pose);
        self
    }

    pub fn shape(&self) -> (usize, usize) {
        self.footprint.shape()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, r: usize, b: usize) -> f64 {
        self.data[r * self.footprint.bearing_bins + b]
    }

    /// Sets a pixel, clamping into `[0, 1]`.
    pub fn set(&mut self, r: usize, b: usize, v: f64) {
        let v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
        self.data[r * self.footprint.bearing_bins + b] = v;
    }

    pub fn nonzero_count(&self) -> usize {
        self.data.iter().filter(|&&v| v > 0.0).count()
    }

    pub fn nonzero_fraction(&self) -> f64 {
        self.nonzero_count() as f64 / self.data.len() as f64
    }

    /// Reads an 8-bit PGM/PNG in polar layout; 0..=255 maps linearly onto
    /// `[0, 1]`.
    pub fn load(path: &Path, footprint: SonarFootprint, timestamp: f64) -> Result<Self> {
        let img = image::open(path).map_err(|e| image_error(path, e))?;
        let img = match img {
            image::DynamicImage::ImageLuma8(g) => g,
            other => {
                return Err(Error::InvalidConfig(format!(
                    "{}: expected 8-bit grayscale sonar frame, got {:?}",
                    path.display(),
                    other.color()
                )))
            }
        };
        let actual = (img.height() as usize, img.width() as usize);
        if actual != footprint.shape() {
            return Err(Error::DimensionMismatch {
                expected: footprint.shape(),
                actual,
            });
        }
        let data = img.as_raw().iter().map(|&v| v as f64 / 255.0).collect();
        Self::new(footprint, timestamp, data)
    }

    /// Writes the frame as an 8-bit image (format chosen by extension).
    pub fn save(&self, path: &Path) -> Result<()> {
        let raw = self.to_u8();
        let (rows, cols) = self.shape();
        let format = ImageFormat::from_path(path).map_err(|e| image_error(path, e))?;
        image::save_buffer_with_format(
            path,
            &raw,
            cols as u32,
            rows as u32,
            ExtendedColorType::L8,
            format,
        )
        .map_err(|e| image_error(path, e))
    }

    /// Quantizes to 8 bits; any non-zero intensity stays non-zero.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| {
                let q = (v * 255.0).round() as u8;
                if v > 0.0 {
                    q.max(1)
                } else {
                    0
                }
            })
            .collect()
    }

    /// Re-reads the 8-bit quantized form, as a frame stored on disk would be.
    pub fn quantized(&self) -> Self {
        let data = self.to_u8().into_iter().map(|v| v as f64 / 255.0).collect();
        AcousticImage {
            data,
            ..self.clone()
        }
    }
}

/// Information gate: a frame counts when at least `threshold` of its pixels
/// are non-zero. Equality passes.
pub fn is_informative(img: &AcousticImage, threshold: f64) -> bool {
    img.nonzero_fraction() >= threshold
}
