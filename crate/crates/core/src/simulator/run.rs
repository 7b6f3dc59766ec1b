use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::render::{render_sonar, NoiseSpec, SonarModel};
use crate::error::{Error, Result};
use crate::filter::ControlInput;
use crate::geomap::{Class, Pose2D, SemanticMap, SonarFootprint};
use crate::log::{MessageLog, Record};

/// Top speed of the vehicle the simulator models, m/s.
pub const MAX_SPEED: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub waypoints: Vec<[f64; 2]>,
    pub speed: f64,
}

impl Trajectory {
    pub fn length(&self) -> f64 {
        self.waypoints
            .windows(2)
            .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
            .sum()
    }

    /// Checks speed and that the whole polyline stays on water inside the
    /// map (sampled every 0.1 m).
    pub fn validate(&self, map: &SemanticMap) -> Result<()> {
        if self.waypoints.len() < 2 {
            return Err(Error::InvalidTrajectory("need at least two waypoints".into()));
        }
        if !(self.speed > 0.0 && self.speed <= MAX_SPEED) {
            return Err(Error::InvalidTrajectory(format!(
                "speed {} outside (0, {MAX_SPEED}]",
                self.speed
            )));
        }
        for (i, w) in self.waypoints.iter().enumerate() {
            match map.world_to_pixel(w[0], w[1]).map(|(c, r)| map.get(c, r)) {
                None => {
                    return Err(Error::InvalidTrajectory(format!("waypoint {i} outside the map")))
                }
                Some(Class::Structure) => {
                    return Err(Error::InvalidTrajectory(format!("waypoint {i} lies on structure")))
                }
                _ => {}
            }
        }
        for (i, w) in self.waypoints.windows(2).enumerate() {
            let len = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
            let n = (len / 0.1).ceil() as usize;
            for k in 0..=n {
                let f = if n == 0 { 0.0 } else { k as f64 / n as f64 };
                let x = w[0][0] + f * (w[1][0] - w[0][0]);
                let y = w[0][1] + f * (w[1][1] - w[0][1]);
                if matches!(map.class_at(x, y), Class::Structure | Class::Unknown) {
                    return Err(Error::InvalidTrajectory(format!(
                        "leg {i} crosses structure or leaves the map near ({x:.1}, {y:.1})"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Sensor cadence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Rates {
    /// Odometry, compass and ground truth, Hz.
    pub control_hz: f64,
    /// Seconds between sonar frames; a multiple of the control period.
    pub sonar_period: f64,
}

impl Default for Rates {
    fn default() -> Self {
        Rates {
            control_hz: 10.0,
            sonar_period: 4.0,
        }
    }
}

impl Rates {
    /// Control steps between sonar frames.
    pub fn sonar_every(&self) -> Result<usize> {
        let k = self.sonar_period * self.control_hz;
        if !(self.control_hz > 0.0 && k >= 1.0 - 1e-9 && (k - k.round()).abs() < 1e-6) {
            return Err(Error::InvalidConfig(format!(
                "sonar period {} s is not a positive multiple of the control period",
                self.sonar_period
            )));
        }
        Ok(k.round() as usize)
    }
}

/// Everything about the simulated vehicle's sensors except noise.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorSetup {
    pub footprint: SonarFootprint,
    pub model: SonarModel,
    pub rates: Rates,
}

/// Path name of the `i`-th sonar frame inside a log directory.
pub fn frame_name(i: usize) -> String {
    format!("frames/{i:05}.pgm")
}

struct Step {
    t: f64,
    pose: Pose2D,
    v: f64,
}

/// Steers along the waypoints at constant speed, one control period per
/// step. Position advances with the same update the filter and dead
/// reckoning apply, so noiseless odometry integrates back to the truth.
fn truth_path(traj: &Trajectory, hz: f64) -> Vec<Step> {
    let wps = &traj.waypoints;
    let step_len = traj.speed / hz;
    let (mut x, mut y) = (wps[0][0], wps[0][1]);
    let mut idx = 1;
    let mut theta = 0.0;
    let mut steps = Vec::new();
    for i in 0.. {
        let t = i as f64 / hz;
        while idx < wps.len() && (wps[idx][0] - x).hypot(wps[idx][1] - y) < 1e-9 {
            idx += 1;
        }
        if idx == wps.len() {
            steps.push(Step { t, pose: Pose2D::new(x, y, theta), v: 0.0 });
            break;
        }
        let (dx, dy) = (wps[idx][0] - x, wps[idx][1] - y);
        theta = dy.atan2(dx);
        let dt = (i + 1) as f64 / hz - t;
        let v = dx.hypot(dy).min(step_len) / dt;
        steps.push(Step { t, pose: Pose2D::new(x, y, theta), v });
        let (s, c) = theta.sin_cos();
        x += v * dt * c;
        y += v * dt * s;
    }
    steps
}

fn gauss(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    let n: f64 = StandardNormal.sample(rng);
    sigma * n
}

/// Drives the vehicle along `traj` and records what its sensors report.
/// The result is a pure function of the arguments.
pub fn simulate_run(
    map: &SemanticMap,
    traj: &Trajectory,
    noise: &NoiseSpec,
    setup: &SensorSetup,
    seed: u64,
) -> Result<MessageLog> {
    traj.validate(map)?;
    noise.validate()?;
    setup.footprint.validate()?;
    let every = setup.rates.sonar_every()?;
    let steps = truth_path(traj, setup.rates.control_hz);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(steps.len() * 3 + steps.len() / every + 1);
    let mut jobs = Vec::new();
    for (i, s) in steps.iter().enumerate() {
        let p = s.pose;
        records.push(Record::Gps { t: s.t, x: p.x, y: p.y, theta: p.theta });
        let v = s.v + noise.odom_bias + gauss(&mut rng, noise.odom_std);
        records.push(Record::Odom { t: s.t, v_x: v });
        let heading = p.theta + gauss(&mut rng, noise.compass_std);
        records.push(Record::Compass { t: s.t, heading: crate::geomap::normalize_angle(heading) });
        if i % every == 0 {
            let name = frame_name(jobs.len());
            jobs.push((name.clone(), p, rng.random::<u64>()));
            records.push(Record::Sonar { t: s.t, frame: name });
        }
    }
    let frames: BTreeMap<_, _> = jobs
        .into_par_iter()
        .map(|(name, pose, frame_seed)| {
            let img = render_sonar(map, &pose, &setup.footprint, &setup.model, noise, frame_seed);
            (name, img.quantized())
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect();
    MessageLog::new(records, frames)
}

/// Turns a stream of record batches into constant-velocity control steps.
///
/// The most recent speed and heading are held until new readings arrive;
/// each time the clock advances the held control is applied over the elapsed
/// interval.
#[derive(Debug, Clone, Default)]
pub struct ControlTracker {
    v: Option<f64>,
    heading: Option<f64>,
    last_t: Option<f64>,
}

impl ControlTracker {
    /// Feeds one batch of equal-timestamp records. Returns the control to
    /// apply for the interval that ended at this batch, if any.
    pub fn observe(&mut self, batch: &[Record]) -> Option<ControlInput> {
        let t = batch.first()?.t();
        let u = match (self.v, self.heading, self.last_t) {
            (Some(v_x), Some(heading), Some(last)) if t > last => Some(ControlInput {
                v_x,
                heading,
                dt: t - last,
            }),
            _ => None,
        };
        self.last_t = Some(t);
        for r in batch {
            match *r {
                Record::Odom { v_x, .. } => self.v = Some(v_x),
                Record::Compass { heading, .. } => self.heading = Some(heading),
                _ => {}
            }
        }
        u
    }

    /// Most recent compass reading.
    pub fn heading(&self) -> Option<f64> {
        self.heading
    }
}

/// Noiseless integration of odometry and compass from a starting pose.
#[derive(Debug, Clone)]
pub struct DeadReckoner {
    pub pose: Pose2D,
    tracker: ControlTracker,
}

impl DeadReckoner {
    pub fn new(start: Pose2D) -> Self {
        DeadReckoner { pose: start, tracker: ControlTracker::default() }
    }

    pub fn step(&mut self, batch: &[Record]) -> Pose2D {
        if let Some(u) = self.tracker.observe(batch) {
            let (s, c) = u.heading.sin_cos();
            self.pose.x += u.v_x * u.dt * c;
            self.pose.y += u.v_x * u.dt * s;
            self.pose.theta = u.heading;
        }
        if let Some(h) = self.tracker.heading() {
            self.pose.theta = crate::geomap::normalize_angle(h);
        }
        self.pose
    }
}

/// Dead-reckoned pose after every record batch, starting at the first
/// ground-truth pose.
pub fn dead_reckoning(log: &MessageLog) -> Result<Vec<(f64, Pose2D)>> {
    let (t0, start) = log
        .first_gps()
        .ok_or_else(|| Error::EmptyLog("no ground-truth record to start from".into()))?;
    if !log.records().iter().any(|r| matches!(r, Record::Odom { .. })) {
        return Err(Error::EmptyLog("no odometry records".into()));
    }
    let mut dr = DeadReckoner::new(start);
    Ok(log
        .batches()
        .filter(|(_, b)| b[0].t() >= t0)
        .map(|(_, b)| (b[0].t(), dr.step(b)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::world::{generate_world, WorldSpec};

    fn open_map() -> SemanticMap {
        SemanticMap::filled(200, 100, 1.0, (0.0, 0.0), Class::Water).unwrap()
    }

    fn straight(len: f64) -> Trajectory {
        Trajectory { waypoints: vec![[20.0, 50.0], [20.0 + len, 50.0]], speed: 0.5 }
    }

    fn gps_at(log: &MessageLog) -> BTreeMap<u64, Pose2D> {
        log.ground_truth().into_iter().map(|(t, p)| (t.to_bits(), p)).collect()
    }

    #[test]
    fn noiseless_dead_reckoning_is_exact() {
        let world = generate_world(&WorldSpec { seed: 2, ..WorldSpec::default() }).unwrap();
        let traj = Trajectory {
            waypoints: vec![[10.0, 40.0], [60.0, 45.0], [70.0, 20.0], [20.0, 10.0]],
            speed: 0.6,
        };
        let log = simulate_run(&world.map, &traj, &NoiseSpec::NONE, &SensorSetup::default(), 1).unwrap();
        let truth = gps_at(&log);
        let dr = dead_reckoning(&log).unwrap();
        assert_eq!(dr.len(), truth.len());
        for (t, p) in dr {
            let g = truth[&t.to_bits()];
            assert!(p.distance_to(&g) <= 1e-9, "t={t}: {p:?} vs {g:?}");
            assert!(p.heading_error(&g) <= 1e-9);
        }
    }

    #[test]
    fn biased_odometry_drifts_linearly() {
        let noise = NoiseSpec { odom_bias: 0.05, ..NoiseSpec::NONE };
        let traj = straight(100.0);
        let log = simulate_run(&open_map(), &traj, &noise, &SensorSetup::default(), 3).unwrap();
        let truth = gps_at(&log);
        let dr = dead_reckoning(&log).unwrap();
        let mut prev = -1.0;
        for &(t, p) in &dr {
            let e = p.distance_to(&truth[&t.to_bits()]);
            assert!(e >= prev - 1e-12);
            prev = e;
        }
        // travel time is len / speed; the last step carries no motion
        let duration = traj.length() / traj.speed;
        let expected = 0.05 * duration;
        assert!((prev - expected).abs() < 0.05 + 1e-6, "{prev} vs {expected}");
    }

    #[test]
    fn runs_are_seeded() {
        let world = generate_world(&WorldSpec { seed: 5, ..WorldSpec::default() }).unwrap();
        let traj = Trajectory { waypoints: vec![[20.0, 60.0], [60.0, 62.0]], speed: 0.5 };
        let setup = SensorSetup::default();
        let a = simulate_run(&world.map, &traj, &NoiseSpec::default(), &setup, 8).unwrap();
        let b = simulate_run(&world.map, &traj, &NoiseSpec::default(), &setup, 8).unwrap();
        assert_eq!(a.records(), b.records());
        let fp = setup.footprint;
        for r in a.records() {
            if let Record::Sonar { t, frame } = r {
                assert_eq!(a.frame(frame, &fp, *t).unwrap(), b.frame(frame, &fp, *t).unwrap());
            }
        }
        let c = simulate_run(&world.map, &traj, &NoiseSpec::default(), &setup, 9).unwrap();
        assert_ne!(a.records(), c.records());
    }

    #[test]
    fn sonar_every_four_seconds() {
        let log = simulate_run(&open_map(), &straight(30.0), &NoiseSpec::NONE, &SensorSetup::default(), 0).unwrap();
        let times: Vec<f64> = log
            .records()
            .iter()
            .filter(|r| matches!(r, Record::Sonar { .. }))
            .map(Record::t)
            .collect();
        assert!(times.len() > 10);
        for w in times.windows(2) {
            assert!((w[1] - w[0] - 4.0).abs() < 1e-9);
        }
    }

    #[test]
    fn trajectory_checks() {
        let world = generate_world(&WorldSpec { seed: 1, ..WorldSpec::default() }).unwrap();
        let pier = world.piers[0];
        let on_pier = [(pier.x0 + pier.x1) / 2.0, (pier.y0 + pier.y1) / 2.0];
        let t = Trajectory { waypoints: vec![[5.0, 5.0], on_pier], speed: 0.5 };
        assert!(matches!(
            simulate_run(&world.map, &t, &NoiseSpec::NONE, &SensorSetup::default(), 0),
            Err(Error::InvalidTrajectory(_))
        ));
        let fast = Trajectory { speed: 0.7, ..straight(10.0) };
        assert!(fast.validate(&open_map()).is_err());
        assert!(Trajectory { waypoints: vec![[1.0, 1.0]], speed: 0.5 }.validate(&open_map()).is_err());
    }

    #[test]
    fn dead_reckoning_needs_a_start() {
        let log = MessageLog::new(vec![Record::Odom { t: 0.0, v_x: 1.0 }], BTreeMap::new()).unwrap();
        assert!(matches!(dead_reckoning(&log), Err(Error::EmptyLog(_))));
    }
}
