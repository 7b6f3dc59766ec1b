//! Log replay through the filter, result persistence and error metrics.

use std::collections::{HashMap, VecDeque};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{Belief, FilterConfig};
use crate::geomap::{Pose2D, SemanticMap, SonarFootprint};
use crate::log::{MessageLog, Record, LOG_FILE, SONAR_FILE};
use crate::matcher::{BaselineScorer, OracleScorer, Scorer};
use crate::simulator::{ControlTracker, DeadReckoner};
use crate::sonar::{enhance, AcousticImage, EnhanceParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    #[serde(flatten)]
    pub filter: FilterConfig,
    pub enhance: EnhanceParams,
    /// Seconds of log skipped before the filter starts, while still
    /// initializing at the first ground-truth pose.
    pub init_delay: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            filter: FilterConfig::default(),
            enhance: EnhanceParams::default(),
            init_delay: 0.0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.filter.validate()?;
        if self.enhance.batch_len == 0 {
            return Err(Error::InvalidConfig("enhance.batch_len must be at least 1".into()));
        }
        if !(self.init_delay.is_finite() && self.init_delay >= 0.0) {
            return Err(Error::InvalidConfig(format!("init_delay {} must be >= 0", self.init_delay)));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: RunConfig = read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Reads any JSON document from `path`.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}

/// Writes `value` as pretty-printed JSON, creating parent directories.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::json(path.display().to_string(), e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScorerKind {
    Baseline,
    Oracle,
}

impl ScorerKind {
    pub fn scorer(self) -> &'static dyn Scorer {
        match self {
            ScorerKind::Baseline => &BaselineScorer,
            ScorerKind::Oracle => &OracleScorer,
        }
    }
}

impl FromStr for ScorerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(ScorerKind::Baseline),
            "oracle" => Ok(ScorerKind::Oracle),
            other => Err(Error::InvalidConfig(format!("unknown scorer {other:?}"))),
        }
    }
}

/// Filter output after one batch of equal-timestamp records.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub estimate: Pose2D,
    pub spread: f64,
    /// Whether an acoustic frame in this batch updated the weights.
    pub applied: bool,
    pub truth: Option<Pose2D>,
    pub dead_reckoning: Pose2D,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunResult {
    pub steps: Vec<StepRecord>,
}

/// Sliding batch of raw frames feeding the enhancement stage.
struct Window {
    frames: VecDeque<AcousticImage>,
    len: usize,
}

impl Window {
    fn enhanced(&mut self, img: AcousticImage, params: &EnhanceParams) -> AcousticImage {
        if self.frames.len() == self.len {
            self.frames.pop_front();
        }
        self.frames.push_back(img);
        enhance(self.frames.make_contiguous(), params)
    }
}

/// Replays `log` through the particle filter.
///
/// The belief starts at the first ground-truth pose once `init_delay` seconds
/// of log have passed. Controls move the particles, each sonar frame is
/// enhanced with its predecessors and, if informative, reweights and
/// resamples the set. One step is emitted per record batch from then on.
pub fn run_localization(
    log: &MessageLog,
    map: &SemanticMap,
    cfg: &RunConfig,
    scorer: &dyn Scorer,
) -> Result<RunResult> {
    cfg.validate()?;
    let fcfg = &cfg.filter;
    let (t0, start) = log
        .first_gps()
        .ok_or_else(|| Error::EmptyLog("no ground-truth record to initialize from".into()))?;
    let t_start = t0 + cfg.init_delay;

    let mut dr = DeadReckoner::new(start);
    let mut belief: Option<Belief> = None;
    let mut controls = ControlTracker::default();
    let mut window = Window {
        frames: VecDeque::with_capacity(cfg.enhance.batch_len),
        len: cfg.enhance.batch_len,
    };
    let mut last_gps: Option<Pose2D> = None;
    let mut steps = Vec::new();

    for (first, batch) in log.batches() {
        let t = batch[0].t();
        if t < t0 {
            continue;
        }
        let dr_pose = dr.step(batch);
        let truth = batch.iter().find_map(Record::gps_pose);
        last_gps = truth.or(last_gps);
        if t < t_start {
            continue;
        }
        let belief = belief.get_or_insert_with(|| Belief::init(start, fcfg, t));
        if let Some(u) = controls.observe(batch) {
            belief.predict(&u, fcfg);
        }
        belief.timestamp = t;

        let mut applied = false;
        for (offset, r) in batch.iter().enumerate() {
            let Record::Sonar { frame, .. } = r else { continue };
            let at = |e: Error| e.at_record(first + offset);
            let mut img = log.frame(frame, &fcfg.footprint, t).map_err(at)?;
            img.truth = last_gps;
            let obs = window.enhanced(img, &cfg.enhance);
            if belief.update(&obs, map, scorer, fcfg).map_err(at)? {
                belief.resample(map, fcfg);
                applied = true;
            }
        }
        let est = belief.estimate();
        steps.push(StepRecord {
            t,
            estimate: est.pose,
            spread: est.spread,
            applied,
            truth,
            dead_reckoning: dr_pose,
        });
    }
    Ok(RunResult { steps })
}

const RESULT_HEADER: [&str; 12] = [
    "t", "x", "y", "theta", "spread", "applied", "gt_x", "gt_y", "gt_theta", "dr_x", "dr_y",
    "dr_theta",
];

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io("csv", io),
        other => Error::Csv(format!("{other:?}")),
    }
}

fn parse_f64(s: &str, row: usize, col: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::Csv(format!("row {row}: column {col} is not a number: {s:?}")))
}

impl RunResult {
    /// Dead-reckoning poses carried alongside the estimates.
    pub fn dead_reckoning(&self) -> Vec<(f64, Pose2D)> {
        self.steps.iter().map(|s| (s.t, s.dead_reckoning)).collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(RESULT_HEADER).map_err(csv_err)?;
        for s in &self.steps {
            let gt = match s.truth {
                Some(p) => [p.x.to_string(), p.y.to_string(), p.theta.to_string()],
                None => Default::default(),
            };
            let e = s.estimate;
            let d = s.dead_reckoning;
            w.write_record([
                s.t.to_string(),
                e.x.to_string(),
                e.y.to_string(),
                e.theta.to_string(),
                s.spread.to_string(),
                (s.applied as u8).to_string(),
                gt[0].clone(),
                gt[1].clone(),
                gt[2].clone(),
                d.x.to_string(),
                d.y.to_string(),
                d.theta.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io("csv", e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file)).map_err(|e| match e {
            Error::Io { source, .. } => Error::io(path, source),
            other => other,
        })
    }

    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers().map_err(csv_err)?.clone();
        if header.iter().ne(RESULT_HEADER) {
            return Err(Error::Csv(format!("unexpected header {:?}", header.iter().collect::<Vec<_>>())));
        }
        let mut steps = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let row = i + 2;
            let f = |c: usize| parse_f64(&rec[c], row, RESULT_HEADER[c]);
            let truth = if rec[6].is_empty() {
                None
            } else {
                Some(Pose2D::new(f(6)?, f(7)?, f(8)?))
            };
            let applied = match &rec[5] {
                "0" => false,
                "1" => true,
                other => return Err(Error::Csv(format!("row {row}: applied must be 0 or 1, got {other:?}"))),
            };
            steps.push(StepRecord {
                t: f(0)?,
                estimate: Pose2D::new(f(1)?, f(2)?, f(3)?),
                spread: f(4)?,
                applied,
                truth,
                dead_reckoning: Pose2D::new(f(9)?, f(10)?, f(11)?),
            });
        }
        Ok(RunResult { steps })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(file))
    }
}

/// Position errors at one ground-truth timestamp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorRow {
    pub t: f64,
    pub pf: f64,
    pub baseline: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ErrorSummary {
    pub mean: f64,
    pub rmse: f64,
    pub max: f64,
}

impl ErrorSummary {
    fn of(errors: impl Iterator<Item = f64> + Clone) -> Self {
        let n = errors.clone().count() as f64;
        ErrorSummary {
            mean: errors.clone().sum::<f64>() / n,
            rmse: (errors.clone().map(|e| e * e).sum::<f64>() / n).sqrt(),
            max: errors.fold(0.0, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub rows: Vec<ErrorRow>,
    pub pf: ErrorSummary,
    pub baseline: ErrorSummary,
    /// Share of steps where the filter error is strictly below the baseline's.
    pub pf_better_fraction: f64,
}

/// Compares filter estimates and a baseline trajectory against ground truth.
/// Only steps that carry ground truth and have a baseline pose at the same
/// timestamp are scored.
pub fn evaluate(result: &RunResult, baseline: &[(f64, Pose2D)]) -> Result<Metrics> {
    let base: HashMap<u64, Pose2D> = baseline.iter().map(|(t, p)| (t.to_bits(), *p)).collect();
    let rows: Vec<ErrorRow> = result
        .steps
        .iter()
        .filter_map(|s| {
            let truth = s.truth?;
            let b = base.get(&s.t.to_bits())?;
            Some(ErrorRow {
                t: s.t,
                pf: s.estimate.distance_to(&truth),
                baseline: b.distance_to(&truth),
            })
        })
        .collect();
    if rows.is_empty() {
        return Err(Error::MissingGroundTruth);
    }
    let better = rows.iter().filter(|r| r.pf < r.baseline).count();
    Ok(Metrics {
        pf: ErrorSummary::of(rows.iter().map(|r| r.pf)),
        baseline: ErrorSummary::of(rows.iter().map(|r| r.baseline)),
        pf_better_fraction: better as f64 / rows.len() as f64,
        rows,
    })
}

impl Metrics {
    /// Mean errors (filter, baseline) over the steps from `from` of the way
    /// through the run to its end; `from = 0.5` is the final half.
    pub fn tail_means(&self, from: f64) -> (f64, f64) {
        let skip = ((self.rows.len() as f64) * from).floor() as usize;
        let tail = &self.rows[skip.min(self.rows.len() - 1)..];
        let n = tail.len() as f64;
        (
            tail.iter().map(|r| r.pf).sum::<f64>() / n,
            tail.iter().map(|r| r.baseline).sum::<f64>() / n,
        )
    }

    /// One `step` row per scored timestamp followed by summary rows.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["row", "t", "pf_error", "dr_error"]).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record(["step", &r.t.to_string(), &r.pf.to_string(), &r.baseline.to_string()])
                .map_err(csv_err)?;
        }
        let (tail_pf, tail_dr) = self.tail_means(0.5);
        let summary = [
            ("mean", self.pf.mean, self.baseline.mean),
            ("rmse", self.pf.rmse, self.baseline.rmse),
            ("max", self.pf.max, self.baseline.max),
            ("final_half_mean", tail_pf, tail_dr),
        ];
        for (name, pf, dr) in summary {
            w.write_record([name, "", &pf.to_string(), &dr.to_string()]).map_err(csv_err)?;
        }
        w.write_record(["pf_better_fraction", "", &self.pf_better_fraction.to_string(), ""])
            .map_err(csv_err)?;
        w.flush().map_err(|e| Error::io("csv", e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Enhances every sonar frame of the log with its predecessors and writes a
/// copy of the log whose frames are the enhanced images. Returns the number
/// of frames written.
pub fn preprocess_sonar(
    log: &MessageLog,
    footprint: &SonarFootprint,
    params: &EnhanceParams,
    out: &Path,
) -> Result<usize> {
    let mut window = Window {
        frames: VecDeque::with_capacity(params.batch_len.max(1)),
        len: params.batch_len.max(1),
    };
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut written = 0;
    for (i, r) in log.records().iter().enumerate() {
        let Record::Sonar { t, frame } = r else { continue };
        let img = log.frame(frame, footprint, *t).map_err(|e| e.at_record(i))?;
        let enhanced = window.enhanced(img, params);
        let path = out.join(frame);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        enhanced.save(&path)?;
        written += 1;
    }
    let lines: Vec<String> = log
        .records()
        .iter()
        .map(|r| serde_json::to_string(r).map_err(|e| Error::json("log record", e)))
        .collect::<Result<_>>()?;
    let log_path = out.join(LOG_FILE);
    fs::write(&log_path, lines.join("\n") + "\n").map_err(|e| Error::io(&log_path, e))?;
    let sonar = out.join(SONAR_FILE);
    let text = serde_json::to_string_pretty(footprint).map_err(|e| Error::json("sonar", e))?;
    fs::write(&sonar, text).map_err(|e| Error::io(&sonar, e))?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn step(t: f64, est: (f64, f64), truth: Option<(f64, f64)>) -> StepRecord {
        StepRecord {
            t,
            estimate: Pose2D::new(est.0, est.1, 0.0),
            spread: 0.0,
            applied: false,
            truth: truth.map(|(x, y)| Pose2D::new(x, y, 0.0)),
            dead_reckoning: Pose2D::new(est.0, est.1, 0.0),
        }
    }

    #[test]
    fn perfect_estimates_score_zero() {
        let r = RunResult { steps: (0..10).map(|i| step(i as f64, (i as f64, 1.0), Some((i as f64, 1.0)))).collect() };
        let m = evaluate(&r, &r.dead_reckoning()).unwrap();
        assert_eq!(m.pf, ErrorSummary::default());
        assert_eq!(m.pf_better_fraction, 0.0);
    }

    #[test]
    fn constant_offset() {
        let r = RunResult { steps: (0..7).map(|i| step(i as f64, (i as f64 + 2.0, 0.0), Some((i as f64, 0.0)))).collect() };
        let m = evaluate(&r, &r.dead_reckoning()).unwrap();
        assert!((m.pf.mean - 2.0).abs() < 1e-12);
        assert!((m.pf.rmse - 2.0).abs() < 1e-12);
        assert!((m.pf.max - 2.0).abs() < 1e-12);
    }

    #[test]
    fn steps_without_truth_are_skipped() {
        let r = RunResult { steps: vec![step(0.0, (1.0, 0.0), None), step(1.0, (3.0, 4.0), Some((0.0, 0.0)))] };
        let m = evaluate(&r, &[(1.0, Pose2D::new(0.0, 1.0, 0.0))]).unwrap();
        assert_eq!(m.rows.len(), 1);
        assert_eq!(m.rows[0].pf, 5.0);
        assert_eq!(m.rows[0].baseline, 1.0);
        assert_eq!(m.pf_better_fraction, 0.0);
        let none = RunResult { steps: vec![step(0.0, (1.0, 0.0), None)] };
        assert!(matches!(evaluate(&none, &none.dead_reckoning()), Err(Error::MissingGroundTruth)));
    }

    #[test]
    fn result_csv_round_trip() {
        let mut r = RunResult { steps: vec![step(0.0, (0.1, -2.5), None), step(0.1, (1.0 / 3.0, 2.0), Some((1e-17, 5.0)))] };
        r.steps[1].applied = true;
        r.steps[1].spread = 0.25;
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(RunResult::read_csv(buf.as_slice()).unwrap(), r);
        assert!(RunResult::read_csv("a,b\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn odometry_only_log_tracks_dead_reckoning() {
        let mut records = vec![Record::Gps { t: 0.0, x: 5.0, y: 5.0, theta: 0.0 }];
        for i in 0..50 {
            let t = i as f64 * 0.1;
            records.push(Record::Odom { t, v_x: 0.5 });
            records.push(Record::Compass { t, heading: 0.3 });
        }
        let log = MessageLog::new(records, BTreeMap::new()).unwrap();
        let map = SemanticMap::filled(40, 40, 0.5, (0.0, 0.0), crate::geomap::Class::Water).unwrap();
        let mut cfg = RunConfig::default();
        cfg.filter.particle_count = 400;
        let res = run_localization(&log, &map, &cfg, &BaselineScorer).unwrap();
        assert_eq!(res.steps.len(), 50);
        assert!(res.steps.iter().all(|s| !s.applied));
        let last = res.steps.last().unwrap();
        // per-axis variance: init jitter plus the position random walk over the run
        let n = cfg.filter.motion_noise;
        let var = cfg.filter.sigma_init.powi(2) + n.sigma_pos.powi(2) * last.t;
        let tol = 4.0 * var.sqrt() / (cfg.filter.particle_count as f64).sqrt() + 0.05;
        assert!(last.estimate.distance_to(&last.dead_reckoning) < tol);
        let expected = (2.0 * var).sqrt();
        assert!((last.spread - expected).abs() < 0.1 * expected, "{} vs {expected}", last.spread);
    }

    #[test]
    fn scorer_names() {
        assert_eq!("oracle".parse::<ScorerKind>().unwrap(), ScorerKind::Oracle);
        assert!("dnn".parse::<ScorerKind>().is_err());
    }

    #[test]
    fn config_json_defaults() {
        let cfg: RunConfig = serde_json::from_str(r#"{"particle_count": 50, "init_delay": 2.0}"#).unwrap();
        assert_eq!(cfg.filter.particle_count, 50);
        assert_eq!(cfg.init_delay, 2.0);
        assert_eq!(cfg.enhance, EnhanceParams::default());
        assert!(serde_json::from_str::<RunConfig>(r#"{"init_delay": -1}"#).map(|c| c.validate()).unwrap().is_err());
    }
}
