//! Time-ordered sensor log: odometry, compass, sonar frames and ground truth.
//!
//! On disk a log is a directory holding `log.jsonl` (one JSON record per
//! line) and the sonar frames it references by relative path. Frames can also
//! be held in memory, which is how the simulator hands logs to the harness
//! without touching the filesystem.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geomap::{Pose2D, SonarFootprint};
use crate::sonar::AcousticImage;

pub const LOG_FILE: &str = "log.jsonl";
/// Optional sidecar describing the sonar geometry of the frames.
pub const SONAR_FILE: &str = "sonar.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Record {
    Odom { t: f64, v_x: f64 },
    Compass { t: f64, heading: f64 },
    Sonar { t: f64, frame: String },
    Gps { t: f64, x: f64, y: f64, theta: f64 },
}

impl Record {
    pub fn t(&self) -> f64 {
        match *self {
            Record::Odom { t, .. }
            | Record::Compass { t, .. }
            | Record::Sonar { t, .. }
            | Record::Gps { t, .. } => t,
        }
    }

    pub fn gps_pose(&self) -> Option<Pose2D> {
        match *self {
            Record::Gps { x, y, theta, .. } => Some(Pose2D::new(x, y, theta)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct MessageLog {
    records: Vec<Record>,
    base_dir: Option<PathBuf>,
    frames: BTreeMap<String, AcousticImage>,
}

impl MessageLog {
    /// Builds an in-memory log. Every sonar record must name a frame in
    /// `frames`.
    pub fn new(records: Vec<Record>, frames: BTreeMap<String, AcousticImage>) -> Result<Self> {
        let log = MessageLog {
            records,
            base_dir: None,
            frames,
        };
        log.validate()?;
        Ok(log)
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn validate(&self) -> Result<()> {
        let mut prev = f64::NEG_INFINITY;
        for (i, r) in self.records.iter().enumerate() {
            let t = r.t();
            if !t.is_finite() {
                return Err(Error::InvalidConfig(format!("non-finite timestamp {t}")).at_record(i));
            }
            if t < prev {
                return Err(Error::InvalidConfig(format!(
                    "timestamp {t} precedes previous record at {prev}"
                ))
                .at_record(i));
            }
            prev = t;
            if let Record::Sonar { frame, .. } = r {
                let known = self.frames.contains_key(frame)
                    || self.base_dir.as_ref().is_some_and(|d| d.join(frame).is_file());
                if !known {
                    return Err(Error::io(
                        frame,
                        std::io::Error::new(std::io::ErrorKind::NotFound, "missing sonar frame"),
                    )
                    .at_record(i));
                }
            }
        }
        Ok(())
    }

    /// Reads `dir/log.jsonl`; frames are loaded lazily from `dir`.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(LOG_FILE);
        let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut records = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(&line)
                .map_err(|e| Error::json(format!("{}:{}", path.display(), i + 1), e))?;
            records.push(rec);
        }
        let log = MessageLog {
            records,
            base_dir: Some(dir.to_path_buf()),
            frames: BTreeMap::new(),
        };
        log.validate()?;
        Ok(log)
    }

    /// Sonar geometry stored alongside the log, if any.
    pub fn load_footprint(dir: &Path) -> Result<Option<SonarFootprint>> {
        let path = dir.join(SONAR_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| Error::json(path.display().to_string(), e))
    }

    /// Writes `log.jsonl`, every in-memory frame, and the sonar geometry.
    pub fn save(&self, dir: &Path, footprint: &SonarFootprint) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOG_FILE);
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        for r in &self.records {
            let line = serde_json::to_string(r).map_err(|e| Error::json("log record", e))?;
            writeln!(w, "{line}").map_err(|e| Error::io(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;

        for (name, img) in &self.frames {
            let p = dir.join(name);
            if let Some(parent) = p.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            img.save(&p)?;
        }
        let sonar = dir.join(SONAR_FILE);
        let text = serde_json::to_string_pretty(footprint).map_err(|e| Error::json("sonar", e))?;
        fs::write(&sonar, text).map_err(|e| Error::io(&sonar, e))
    }

    /// Fetches a frame by name, from memory or from the log directory.
    pub fn frame(&self, name: &str, footprint: &SonarFootprint, t: f64) -> Result<AcousticImage> {
        if let Some(img) = self.frames.get(name) {
            if img.footprint.shape() != footprint.shape() {
                return Err(Error::DimensionMismatch {
                    expected: footprint.shape(),
                    actual: img.shape(),
                });
            }
            let mut img = img.clone();
            img.footprint = *footprint;
            img.timestamp = t;
            return Ok(img);
        }
        let dir = self
            .base_dir
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig(format!("frame {name} not in memory")))?;
        AcousticImage::load(&dir.join(name), *footprint, t)
    }

    /// Records grouped by identical timestamp, in log order.
    pub fn batches(&self) -> impl Iterator<Item = (usize, &[Record])> {
        let mut start = 0;
        std::iter::from_fn(move || {
            if start >= self.records.len() {
                return None;
            }
            let t = self.records[start].t();
            let len = self.records[start..]
                .iter()
                .take_while(|r| r.t() == t)
                .count();
            let batch = (start, &self.records[start..start + len]);
            start += len;
            Some(batch)
        })
    }

    /// First ground-truth record, used as the initial pose guess.
    pub fn first_gps(&self) -> Option<(f64, Pose2D)> {
        self.records
            .iter()
            .find_map(|r| r.gps_pose().map(|p| (r.t(), p)))
    }

    /// Every ground-truth pose in time order.
    pub fn ground_truth(&self) -> Vec<(f64, Pose2D)> {
        self.records
            .iter()
            .filter_map(|r| r.gps_pose().map(|p| (r.t(), p)))
            .collect()
    }
}
