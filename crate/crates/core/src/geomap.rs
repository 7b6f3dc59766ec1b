//! Semantic aerial map, world/pixel transforms and pose-conditioned polar crops.
//!
//! The map is a raster of class labels with a fixed metric resolution. Pixel
//! `(col, row)` covers the square `[origin + col*res, origin + (col+1)*res)` in
//! x and the same in y, so row indices grow with the world y axis. A crop
//! samples the map on the same polar grid as an acoustic image: rows are range
//! bins, columns are bearing bins ascending from `-fov/2`.

use std::f64::consts::{PI, TAU};
use std::fs;
use std::path::{Path, PathBuf};

use image::{ExtendedColorType, GrayImage, ImageFormat};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let w = a.rem_euclid(TAU);
    if w > PI {
        w - TAU
    } else {
        w
    }
}

/// Per-pixel semantic label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Class {
    Water = 0,
    Structure = 1,
    Movable = 2,
    Unknown = 255,
}

impl Class {
    pub fn from_u8(v: u8) -> Option<Class> {
        match v {
            0 => Some(Class::Water),
            1 => Some(Class::Structure),
            2 => Some(Class::Movable),
            255 => Some(Class::Unknown),
            _ => None,
        }
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }
}

/// Planar pose in the world frame. `theta` is kept in `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Pose2D {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }

    pub fn distance_to(&self, other: &Pose2D) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Absolute heading difference in `[0, pi]`.
    pub fn heading_error(&self, other: &Pose2D) -> f64 {
        normalize_angle(self.theta - other.theta).abs()
    }
}

/// Geometry of the forward-looking sonar fan, shared by acoustic images and
/// map crops.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SonarFootprint {
    /// Maximum range in meters.
    pub max_range: f64,
    /// Horizontal field of view in radians.
    pub fov: f64,
    pub range_bins: usize,
    pub bearing_bins: usize,
}

impl Default for SonarFootprint {
    fn default() -> Self {
        SonarFootprint {
            max_range: 30.0,
            fov: PI / 2.0,
            range_bins: 128,
            bearing_bins: 256,
        }
    }
}

impl SonarFootprint {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_range.is_finite() && self.max_range > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "sonar max_range must be positive, got {}",
                self.max_range
            )));
        }
        if !(self.fov > 0.0 && self.fov < TAU) {
            return Err(Error::InvalidConfig(format!(
                "sonar fov must lie in (0, 2pi), got {}",
                self.fov
            )));
        }
        if self.range_bins == 0 || self.bearing_bins == 0 {
            return Err(Error::InvalidConfig(
                "sonar range_bins and bearing_bins must be positive".into(),
            ));
        }
        Ok(())
    }

    /// `(rows, cols)` of images on this footprint.
    pub fn shape(&self) -> (usize, usize) {
        (self.range_bins, self.bearing_bins)
    }

    pub fn len(&self) -> usize {
        self.range_bins * self.bearing_bins
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range_step(&self) -> f64 {
        self.max_range / self.range_bins as f64
    }

    pub fn bearing_step(&self) -> f64 {
        self.fov / self.bearing_bins as f64
    }

    /// Range of the center of bin `r`, which may be fractional.
    pub fn range_of(&self, r: f64) -> f64 {
        (r + 0.5) * self.range_step()
    }

    /// Bearing of the center of column `b` relative to the sensor heading.
    pub fn bearing_of(&self, b: f64) -> f64 {
        -0.5 * self.fov + (b + 0.5) * self.bearing_step()
    }

    /// Inverse of [`range_of`](Self::range_of).
    pub fn range_bin_of(&self, range: f64) -> f64 {
        range / self.range_step() - 0.5
    }

    /// Inverse of [`bearing_of`](Self::bearing_of).
    pub fn bearing_bin_of(&self, bearing: f64) -> f64 {
        (bearing + 0.5 * self.fov) / self.bearing_step() - 0.5
    }

    /// Sensor-frame Cartesian point (x forward, y left) at fractional bin
    /// coordinates.
    pub fn bin_to_sensor(&self, r: f64, b: f64) -> (f64, f64) {
        let rho = self.range_of(r);
        let beta = self.bearing_of(b);
        (rho * beta.cos(), rho * beta.sin())
    }

    /// Fractional bin coordinates `(r, b)` of a sensor-frame point.
    pub fn sensor_to_bin(&self, x: f64, y: f64) -> (f64, f64) {
        (self.range_bin_of(x.hypot(y)), self.bearing_bin_of(y.atan2(x)))
    }
}

/// Sidecar metadata stored next to the map raster.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapMeta {
    pub resolution_m_per_px: f64,
    pub origin_x_m: f64,
    pub origin_y_m: f64,
}

/// Georeferenced raster of semantic classes.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticMap {
    width: usize,
    height: usize,
    resolution: f64,
    origin: (f64, f64),
    cells: Vec<Class>,
}

impl SemanticMap {
    /// Builds a map from row-major cells (`cells[row * width + col]`).
    pub fn new(
        width: usize,
        height: usize,
        resolution: f64,
        origin: (f64, f64),
        cells: Vec<Class>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidMap("map must be at least 1x1".into()));
        }
        if !(resolution.is_finite() && resolution > 0.0) {
            return Err(Error::InvalidMap(format!(
                "resolution must be positive, got {resolution}"
            )));
        }
        if !(origin.0.is_finite() && origin.1.is_finite()) {
            return Err(Error::InvalidMap("origin must be finite".into()));
        }
        if cells.len() != width * height {
            return Err(Error::InvalidMap(format!(
                "expected {} cells, got {}",
                width * height,
                cells.len()
            )));
        }
        Ok(SemanticMap {
            width,
            height,
            resolution,
            origin,
            cells,
        })
    }

    pub fn filled(
        width: usize,
        height: usize,
        resolution: f64,
        origin: (f64, f64),
        class: Class,
    ) -> Result<Self> {
        Self::new(width, height, resolution, origin, vec![class; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> (f64, f64) {
        self.origin
    }

    pub fn cells(&self) -> &[Class] {
        &self.cells
    }

    /// World-space bounds `(min_x, min_y, max_x, max_y)`.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        (
            self.origin.0,
            self.origin.1,
            self.origin.0 + self.width as f64 * self.resolution,
            self.origin.1 + self.height as f64 * self.resolution,
        )
    }

    pub fn meta(&self) -> MapMeta {
        MapMeta {
            resolution_m_per_px: self.resolution,
            origin_x_m: self.origin.0,
            origin_y_m: self.origin.1,
        }
    }

    /// Pixel `(col, row)` containing the world point, or `None` when the point
    /// falls outside the raster.
    pub fn world_to_pixel(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let fx = ((x - self.origin.0) / self.resolution).floor();
        let fy = ((y - self.origin.1) / self.resolution).floor();
        // NaN fails both comparisons and lands here too.
        if !(fx >= 0.0 && fy >= 0.0 && fx < self.width as f64 && fy < self.height as f64) {
            return None;
        }
        Some((fx as usize, fy as usize))
    }

    /// World coordinates of the center of pixel `(col, row)`.
    pub fn pixel_to_world(&self, col: usize, row: usize) -> (f64, f64) {
        (
            self.origin.0 + (col as f64 + 0.5) * self.resolution,
            self.origin.1 + (row as f64 + 0.5) * self.resolution,
        )
    }

    pub fn get(&self, col: usize, row: usize) -> Class {
        self.cells[row * self.width + col]
    }

    pub fn set(&mut self, col: usize, row: usize, class: Class) {
        self.cells[row * self.width + col] = class;
    }

    /// Class at a world point; [`Class::Unknown`] off the map.
    pub fn class_at(&self, x: f64, y: f64) -> Class {
        match self.world_to_pixel(x, y) {
            Some((c, r)) => self.get(c, r),
            None => Class::Unknown,
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.world_to_pixel(x, y).is_some()
    }

    pub fn count(&self, class: Class) -> usize {
        self.cells.iter().filter(|&&c| c == class).count()
    }

    /// Loads a raster (PGM or PNG, 8-bit grayscale) and its JSON sidecar
    /// (same path with a `.json` extension).
    pub fn load(image_path: &Path) -> Result<Self> {
        let sidecar = image_path.with_extension("json");
        let text = fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        let meta: MapMeta = serde_json::from_str(&text)
            .map_err(|e| Error::json(sidecar.display().to_string(), e))?;

        let img = image::open(image_path).map_err(|e| image_error(image_path, e))?;
        let img = match img {
            image::DynamicImage::ImageLuma8(g) => g,
            other => {
                return Err(Error::InvalidMap(format!(
                    "{}: expected 8-bit single-channel image, got {:?}",
                    image_path.display(),
                    other.color()
                )))
            }
        };
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut cells = Vec::with_capacity(w * h);
        for (i, &v) in img.as_raw().iter().enumerate() {
            let class = Class::from_u8(v).ok_or_else(|| {
                Error::InvalidMap(format!(
                    "{}: pixel ({}, {}) has value {v}, expected one of 0, 1, 2, 255",
                    image_path.display(),
                    i % w,
                    i / w
                ))
            })?;
            cells.push(class);
        }
        Self::new(
            w,
            h,
            meta.resolution_m_per_px,
            (meta.origin_x_m, meta.origin_y_m),
            cells,
        )
    }

    /// Loads `map.png` or `map.pgm` from a map directory.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        for name in ["map.png", "map.pgm"] {
            let p = dir.join(name);
            if p.exists() {
                return Self::load(&p);
            }
        }
        Err(Error::io(
            dir.join("map.png"),
            std::io::Error::new(std::io::ErrorKind::NotFound, "no map.png or map.pgm"),
        ))
    }

    /// Writes the raster (format chosen by extension) plus its sidecar.
    pub fn save(&self, image_path: &Path) -> Result<()> {
        let raw: Vec<u8> = self.cells.iter().map(|c| c.as_u8()).collect();
        let img = GrayImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length matches dimensions");
        let format = ImageFormat::from_path(image_path).map_err(|e| image_error(image_path, e))?;
        image::save_buffer_with_format(
            image_path,
            img.as_raw(),
            img.width(),
            img.height(),
            ExtendedColorType::L8,
            format,
        )
        .map_err(|e| image_error(image_path, e))?;
        let sidecar = image_path.with_extension("json");
        let text = serde_json::to_string_pretty(&self.meta())
            .map_err(|e| Error::json("map sidecar", e))?;
        fs::write(&sidecar, text).map_err(|e| Error::io(&sidecar, e))
    }

    /// Writes `map.png` and `map.json` into `dir`, creating it if needed.
    pub fn save_dir(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = dir.join("map.png");
        self.save(&p)?;
        Ok(p)
    }
}

pub(crate) fn image_error(path: &Path, source: image::ImageError) -> Error {
    match source {
        image::ImageError::IoError(e) => Error::io(path, e),
        other => Error::Image {
            path: path.to_path_buf(),
            source: other,
        },
    }
}

/// Map classes sampled on the sonar's polar grid from a given pose.
#[derive(Debug, Clone, PartialEq)]
pub struct CropImage {
    pub footprint: SonarFootprint,
    pub pose: Pose2D,
    /// Row-major, `cells[r * bearing_bins + b]`.
    pub cells: Vec<Class>,
}

impl CropImage {
    pub fn get(&self, r: usize, b: usize) -> Class {
        self.cells[r * self.footprint.bearing_bins + b]
    }

    pub fn shape(&self) -> (usize, usize) {
        self.footprint.shape()
    }

    pub fn structure_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c == Class::Structure).count()
    }
}

/// Samples the map at every `(range, bearing)` bin center of the footprint as
/// seen from `pose`. Off-map samples are [`Class::Unknown`].
pub fn crop_from_pose(map: &SemanticMap, pose: &Pose2D, fp: &SonarFootprint) -> CropImage {
    let (rows, cols) = fp.shape();
    let mut cells = vec![Class::Unknown; rows * cols];
    let ranges: Vec<f64> = (0..rows).map(|r| fp.range_of(r as f64)).collect();
    for b in 0..cols {
        let (s, c) = (pose.theta + fp.bearing_of(b as f64)).sin_cos();
        for (r, &rho) in ranges.iter().enumerate() {
            cells[r * cols + b] = map.class_at(pose.x + rho * c, pose.y + rho * s);
        }
    }
    CropImage {
        footprint: *fp,
        pose: *pose,
        cells,
    }
}

/// Outcome of the three bad-particle tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Validity {
    /// The pose sits on a Structure pixel.
    pub on_structure: bool,
    /// The pose lies outside the map raster.
    pub out_of_map: bool,
    /// The crop sees no Structure at all.
    pub open_water: bool,
}

impl Validity {
    pub fn is_valid(&self) -> bool {
        !(self.on_structure || self.out_of_map || self.open_water)
    }
}

pub fn pose_validity(map: &SemanticMap, pose: &Pose2D, crop: &CropImage) -> Validity {
    let here = map.world_to_pixel(pose.x, pose.y);
    Validity {
        on_structure: matches!(here, Some((c, r)) if map.get(c, r) == Class::Structure),
        out_of_map: here.is_none(),
        open_water: !crop.cells.contains(&Class::Structure),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wall_map() -> SemanticMap {
        // 60 m x 60 m at 1 m/px, origin (-30, -30); Structure for x >= 10.
        let mut m = SemanticMap::filled(60, 60, 1.0, (-30.0, -30.0), Class::Water).unwrap();
        for row in 0..60 {
            for col in 40..60 {
                m.set(col, row, Class::Structure);
            }
        }
        m
    }

    #[test]
    fn world_to_pixel_examples() {
        let m = SemanticMap::filled(100, 100, 1.0, (0.0, 0.0), Class::Water).unwrap();
        assert_eq!(m.world_to_pixel(3.0, 4.0), Some((3, 4)));
        assert_eq!(m.world_to_pixel(-1.0, 0.0), None);
        assert_eq!(m.world_to_pixel(100.0, 5.0), None);
        assert_eq!(m.world_to_pixel(f64::NAN, 5.0), None);

        let m = SemanticMap::filled(10, 10, 0.5, (10.0, 10.0), Class::Water).unwrap();
        assert_eq!(m.world_to_pixel(10.0, 10.0), Some((0, 0)));
    }

    #[test]
    fn pixel_round_trip() {
        let m = SemanticMap::filled(37, 23, 0.37, (-4.2, 7.9), Class::Water).unwrap();
        for row in 0..m.height() {
            for col in 0..m.width() {
                let (x, y) = m.pixel_to_world(col, row);
                assert_eq!(m.world_to_pixel(x, y), Some((col, row)));
            }
        }
    }

    #[test]
    fn rejects_bad_maps() {
        assert!(SemanticMap::filled(0, 4, 1.0, (0.0, 0.0), Class::Water).is_err());
        assert!(SemanticMap::filled(4, 4, 0.0, (0.0, 0.0), Class::Water).is_err());
        assert!(SemanticMap::new(2, 2, 1.0, (0.0, 0.0), vec![Class::Water; 3]).is_err());
    }

    #[test]
    fn uniform_and_offmap_crops() {
        let fp = SonarFootprint::default();
        let m = SemanticMap::filled(200, 200, 0.5, (-50.0, -50.0), Class::Water).unwrap();
        let crop = crop_from_pose(&m, &Pose2D::new(0.0, 0.0, 0.3), &fp);
        // max range 30 m from the center of a 100 m map stays inside
        assert!(crop.cells.iter().all(|&c| c == Class::Water));

        let crop = crop_from_pose(&m, &Pose2D::new(500.0, 500.0, 0.0), &fp);
        assert!(crop.cells.iter().all(|&c| c == Class::Unknown));
    }

    #[test]
    fn wall_first_appears_at_bin_43() {
        let fp = SonarFootprint::default();
        let crop = crop_from_pose(&wall_map(), &Pose2D::new(0.0, 0.0, 0.0), &fp);
        for b in [127, 128] {
            let first = (0..fp.range_bins)
                .find(|&r| crop.get(r, b) == Class::Structure)
                .unwrap();
            assert!(first == 42 || first == 43, "first structure bin {first}");
            assert_eq!(first, 43);
        }
    }

    #[test]
    fn validity_flags() {
        let m = wall_map();
        let fp = SonarFootprint::default();

        let p = Pose2D::new(15.0, 0.0, 0.0);
        let v = pose_validity(&m, &p, &crop_from_pose(&m, &p, &fp));
        assert!(v.on_structure && !v.out_of_map && !v.open_water);

        // facing away from the wall, 30 m of water ahead before the map edge
        let p = Pose2D::new(0.0, 0.0, PI);
        let v = pose_validity(&m, &p, &crop_from_pose(&m, &p, &fp));
        assert!(v.open_water && !v.on_structure && !v.out_of_map);

        let water = SemanticMap::filled(10, 10, 1.0, (0.0, 0.0), Class::Water).unwrap();
        let p = Pose2D::new(-5.0, -5.0, 0.0);
        let v = pose_validity(&water, &p, &crop_from_pose(&water, &p, &fp));
        assert!(v.out_of_map && !v.is_valid());
    }

    #[test]
    fn angles_normalize_into_half_open_interval() {
        assert_eq!(normalize_angle(PI), PI);
        assert!((normalize_angle(-PI) - PI).abs() < 1e-15);
        assert!((normalize_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((normalize_angle(0.5 + TAU) - 0.5).abs() < 1e-12);
        for k in -20..20 {
            let a = normalize_angle(k as f64 * 0.77);
            assert!(a > -PI && a <= PI);
        }
    }

    #[test]
    fn map_file_round_trip_and_rejection() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = SemanticMap::filled(7, 5, 0.25, (1.0, -2.0), Class::Water).unwrap();
        m.set(1, 2, Class::Structure);
        m.set(6, 4, Class::Movable);
        m.set(0, 0, Class::Unknown);
        for name in ["m.png", "m.pgm"] {
            let p = dir.path().join(name);
            m.save(&p).unwrap();
            assert_eq!(SemanticMap::load(&p).unwrap(), m);
        }

        let bad = dir.path().join("bad.png");
        GrayImage::from_raw(2, 1, vec![0, 7]).unwrap().save(&bad).unwrap();
        std::fs::write(
            bad.with_extension("json"),
            r#"{"resolution_m_per_px": 1.0, "origin_x_m": 0.0, "origin_y_m": 0.0}"#,
        )
        .unwrap();
        assert!(matches!(SemanticMap::load(&bad), Err(Error::InvalidMap(_))));
    }
}
