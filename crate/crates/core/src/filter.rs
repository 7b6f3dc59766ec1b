//! Particle filter over planar vehicle poses.
//!
//! The belief is a fixed-size set of weighted poses. Each control message
//! moves every particle with a noisy constant-velocity model driven by the
//! compass heading. Each informative acoustic frame replaces the weights with
//! normalized match scores of pose-conditioned map crops, after which the set
//! is resampled by roulette wheel. Children that land on structure, off the
//! map, or where no structure is in view are re-drawn with a much wider
//! jitter; after `max_redraws` failures a uniform in-map pose is used.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geomap::{
    crop_from_pose, normalize_angle, pose_validity, Class, Pose2D, SemanticMap, SonarFootprint,
};
use crate::matcher::{normalize_scores, Scorer};
use crate::sonar::{is_informative, AcousticImage};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle {
    pub pose: Pose2D,
    pub weight: f64,
}

/// Control message: body-frame forward speed, compass heading and the time
/// elapsed since the previous control.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlInput {
    pub v_x: f64,
    pub heading: f64,
    pub dt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionNoise {
    /// Std of the forward speed (m/s), drawn per particle per control.
    pub sigma_v: f64,
    /// Std of the heading (rad), drawn per particle per control.
    pub sigma_theta: f64,
    /// Isotropic position random walk, meters per square-root second.
    pub sigma_pos: f64,
}

impl Default for MotionNoise {
    fn default() -> Self {
        MotionNoise {
            sigma_v: 0.2,
            sigma_theta: 0.05,
            sigma_pos: 0.25,
        }
    }
}

/// Filter parameters. Each sigma applies to x and y in meters and to theta
/// in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub particle_count: usize,
    pub sigma_init: f64,
    pub sigma_resample: f64,
    pub sigma_bad: f64,
    pub max_redraws: usize,
    pub info_threshold: f64,
    pub motion_noise: MotionNoise,
    pub footprint: SonarFootprint,
    pub seed: u64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            particle_count: 120,
            sigma_init: 0.5,
            sigma_resample: 0.15,
            sigma_bad: 15.0,
            max_redraws: 10,
            info_threshold: crate::sonar::DEFAULT_INFO_THRESHOLD,
            motion_noise: MotionNoise::default(),
            footprint: SonarFootprint::default(),
            seed: 0,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particle_count == 0 {
            return Err(Error::InvalidConfig("particle_count must be >= 1".into()));
        }
        let sigmas = [
            ("sigma_init", self.sigma_init),
            ("sigma_resample", self.sigma_resample),
            ("sigma_bad", self.sigma_bad),
            ("motion_noise.sigma_v", self.motion_noise.sigma_v),
            ("motion_noise.sigma_theta", self.motion_noise.sigma_theta),
            ("motion_noise.sigma_pos", self.motion_noise.sigma_pos),
        ];
        for (name, s) in sigmas {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be >= 0, got {s}")));
            }
        }
        if !(0.0..=1.0).contains(&self.info_threshold) {
            return Err(Error::InvalidConfig(format!(
                "info_threshold must lie in [0, 1], got {}",
                self.info_threshold
            )));
        }
        self.footprint.validate()
    }
}

/// Weighted particle set plus the generator that drives every random draw.
#[derive(Debug, Clone)]
pub struct Belief {
    pub particles: Vec<Particle>,
    pub timestamp: f64,
    rng: ChaCha8Rng,
}

/// Point estimate extracted from a belief.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub pose: Pose2D,
    /// Weighted RMS distance of particles from the mean position (meters).
    pub spread: f64,
}

fn gauss(rng: &mut ChaCha8Rng, mean: f64, sigma: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    mean + sigma * z
}

fn jitter(rng: &mut ChaCha8Rng, p: &Pose2D, sigma: f64) -> Pose2D {
    let x = gauss(rng, p.x, sigma);
    let y = gauss(rng, p.y, sigma);
    let theta = gauss(rng, p.theta, sigma);
    Pose2D::new(x, y, theta)
}

/// Index of the first cumulative weight strictly greater than `u`.
///
/// `cumulative` must be non-decreasing; `u` is expected in
/// `[0, cumulative.last())`. Out-of-range draws clamp to the last index.
pub fn roulette_select(cumulative: &[f64], u: f64) -> usize {
    cumulative
        .partition_point(|&c| c <= u)
        .min(cumulative.len() - 1)
}

impl Belief {
    /// Draws `particle_count` poses around `mean` with `sigma_init` and equal
    /// weights.
    pub fn init(mean: Pose2D, cfg: &FilterConfig, timestamp: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let k = cfg.particle_count;
        let particles = (0..k)
            .map(|_| Particle {
                pose: jitter(&mut rng, &mean, cfg.sigma_init),
                weight: 1.0 / k as f64,
            })
            .collect();
        Belief {
            particles,
            timestamp,
            rng,
        }
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn weight_sum(&self) -> f64 {
        self.particles.iter().map(|p| p.weight).sum()
    }

    /// Constant-velocity transition. Each particle draws its own speed and
    /// heading around the control; weights are unchanged.
    pub fn predict(&mut self, u: &ControlInput, cfg: &FilterConfig) {
        debug_assert!(u.dt > 0.0);
        let noise = cfg.motion_noise;
        for p in &mut self.particles {
            let v = gauss(&mut self.rng, u.v_x, noise.sigma_v);
            let theta = gauss(&mut self.rng, u.heading, noise.sigma_theta);
            let (s, c) = theta.sin_cos();
            let mut x = p.pose.x + v * u.dt * c;
            let mut y = p.pose.y + v * u.dt * s;
            if noise.sigma_pos > 0.0 {
                let walk = noise.sigma_pos * u.dt.sqrt();
                x = gauss(&mut self.rng, x, walk);
                y = gauss(&mut self.rng, y, walk);
            }
            p.pose = Pose2D::new(x, y, theta);
        }
        self.timestamp += u.dt;
    }

    /// Observation update. Returns `false` and leaves the belief untouched
    /// when the frame fails the information gate; otherwise every weight is
    /// replaced by the particle's normalized match score.
    pub fn update(
        &mut self,
        acoustic: &AcousticImage,
        map: &SemanticMap,
        scorer: &dyn Scorer,
        cfg: &FilterConfig,
    ) -> Result<bool> {
        if acoustic.footprint != cfg.footprint {
            return Err(Error::DimensionMismatch {
                expected: cfg.footprint.shape(),
                actual: acoustic.shape(),
            });
        }
        if !is_informative(acoustic, cfg.info_threshold) {
            return Ok(false);
        }
        let distances = self
            .particles
            .par_iter()
            .map(|p| scorer.score(acoustic, &crop_from_pose(map, &p.pose, &cfg.footprint)))
            .collect::<Result<Vec<_>>>()?;
        let scores = normalize_scores(&distances)?;
        for (p, &w) in self.particles.iter_mut().zip(scores.as_slice()) {
            p.weight = w;
        }
        Ok(true)
    }

    fn cumulative(&self) -> Vec<f64> {
        self.particles
            .iter()
            .scan(0.0, |acc, p| {
                *acc += p.weight;
                Some(*acc)
            })
            .collect()
    }

    fn draw_parent(&mut self, cumulative: &[f64]) -> usize {
        let total = *cumulative.last().expect("non-empty");
        let u = self.rng.random::<f64>() * total;
        roulette_select(cumulative, u)
    }

    /// Roulette-wheel resampling with bad-particle recovery. Leaves `K`
    /// particles with equal weights.
    pub fn resample(&mut self, map: &SemanticMap, cfg: &FilterConfig) {
        let k = self.particles.len();
        let cumulative = self.cumulative();
        let parents: Vec<Pose2D> = self.particles.iter().map(|p| p.pose).collect();

        let mut children = Vec::with_capacity(k);
        for _ in 0..k {
            let parent = self.draw_parent(&cumulative);
            children.push(jitter(&mut self.rng, &parents[parent], cfg.sigma_resample));
        }

        let fp = cfg.footprint;
        let valid = |pose: &Pose2D| pose_validity(map, pose, &crop_from_pose(map, pose, &fp)).is_valid();
        let ok: Vec<bool> = children.par_iter().map(valid).collect();

        for (child, ok) in children.iter_mut().zip(ok) {
            if ok {
                continue;
            }
            let mut redraws = 0;
            *child = loop {
                if redraws == cfg.max_redraws {
                    break self.uniform_pose(map);
                }
                redraws += 1;
                let parent = self.draw_parent(&cumulative);
                let candidate = jitter(&mut self.rng, &parents[parent], cfg.sigma_bad);
                if valid(&candidate) {
                    break candidate;
                }
            };
        }

        let w = 1.0 / k as f64;
        self.particles = children
            .into_iter()
            .map(|pose| Particle { pose, weight: w })
            .collect();
    }

    /// Uniformly random pose inside the map and off structure.
    fn uniform_pose(&mut self, map: &SemanticMap) -> Pose2D {
        let (x0, y0, x1, y1) = map.bounds();
        for _ in 0..1000 {
            let x = self.rng.random_range(x0..x1);
            let y = self.rng.random_range(y0..y1);
            let theta = self.rng.random_range(-PI..PI);
            if let Some((c, r)) = map.world_to_pixel(x, y) {
                if map.get(c, r) != Class::Structure {
                    return Pose2D::new(x, y, theta);
                }
            }
        }
        // nearly all structure: pick among the remaining free pixels directly
        let free: Vec<usize> = map
            .cells()
            .iter()
            .enumerate()
            .filter(|(_, &c)| c != Class::Structure)
            .map(|(i, _)| i)
            .collect();
        let i = if free.is_empty() {
            map.cells().len() / 2
        } else {
            free[self.rng.random_range(0..free.len())]
        };
        let (x, y) = map.pixel_to_world(i % map.width(), i / map.width());
        Pose2D::new(x, y, self.rng.random_range(-PI..PI))
    }

    /// Weighted mean position, circular mean heading and weighted RMS spread.
    pub fn estimate(&self) -> Estimate {
        let total = self.weight_sum();
        let (mut x, mut y, mut s, mut c) = (0.0, 0.0, 0.0, 0.0);
        for p in &self.particles {
            let w = p.weight / total;
            x += w * p.pose.x;
            y += w * p.pose.y;
            s += w * p.pose.theta.sin();
            c += w * p.pose.theta.cos();
        }
        let spread = self
            .particles
            .iter()
            .map(|p| p.weight / total * ((p.pose.x - x).powi(2) + (p.pose.y - y).powi(2)))
            .sum::<f64>()
            .sqrt();
        Estimate {
            pose: Pose2D::new(x, y, normalize_angle(s.atan2(c))),
            spread,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcher::OracleScorer;

    fn cfg() -> FilterConfig {
        FilterConfig::default()
    }

    fn quiet() -> FilterConfig {
        FilterConfig {
            motion_noise: MotionNoise {
                sigma_v: 0.0,
                sigma_theta: 0.0,
                sigma_pos: 0.0,
            },
            ..cfg()
        }
    }

    fn with_poses(poses: &[(f64, f64, f64)], weights: &[f64]) -> Belief {
        let mut b = Belief::init(Pose2D::new(0.0, 0.0, 0.0), &FilterConfig { particle_count: poses.len(), ..cfg() }, 0.0);
        for (p, (&(x, y, t), &w)) in b.particles.iter_mut().zip(poses.iter().zip(weights)) {
            p.pose = Pose2D::new(x, y, t);
            p.weight = w;
        }
        b
    }

    #[test]
    fn defaults_follow_experiment_parameters() {
        let c = cfg();
        assert_eq!(c.particle_count, 120);
        assert_eq!(c.sigma_init, 0.5);
        assert_eq!(c.sigma_resample, 0.15);
        assert_eq!(c.sigma_bad, 15.0);
        assert_eq!(c.max_redraws, 10);
        assert_eq!(c.info_threshold, 0.02);
        c.validate().unwrap();
    }

    #[test]
    fn config_json_defaults_fill_missing_fields() {
        let c: FilterConfig = serde_json::from_str(r#"{"seed": 9, "particle_count": 30}"#).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.particle_count, 30);
        assert_eq!(c.sigma_bad, 15.0);
        let back: FilterConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert!(FilterConfig { particle_count: 0, ..c }.validate().is_err());
        assert!(FilterConfig { sigma_init: -1.0, ..c }.validate().is_err());
    }

    #[test]
    fn zero_sigma_init_stacks_particles() {
        let mean = Pose2D::new(3.0, -2.0, 0.7);
        let b = Belief::init(mean, &FilterConfig { sigma_init: 0.0, ..cfg() }, 0.0);
        assert_eq!(b.len(), 120);
        assert!(b.particles.iter().all(|p| p.pose == mean));
        assert!((b.weight_sum() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn init_sample_mean_is_within_monte_carlo_bound() {
        let k = 10_000;
        let b = Belief::init(Pose2D::new(5.0, 1.0, 0.0), &FilterConfig { particle_count: k, seed: 3, ..cfg() }, 0.0);
        let mx = b.particles.iter().map(|p| p.pose.x).sum::<f64>() / k as f64;
        assert!((mx - 5.0).abs() < 3.0 * 0.5 / (k as f64).sqrt());
    }

    #[test]
    fn noiseless_prediction() {
        let mut b = with_poses(&[(0.0, 0.0, 0.0)], &[1.0]);
        b.predict(&ControlInput { v_x: 1.0, heading: 0.0, dt: 2.0 }, &quiet());
        assert_eq!(b.particles[0].pose, Pose2D::new(2.0, 0.0, 0.0));
        assert_eq!(b.timestamp, 2.0);

        let mut b = with_poses(&[(0.0, 0.0, 0.0)], &[1.0]);
        b.predict(&ControlInput { v_x: 1.0, heading: PI / 2.0, dt: 1.0 }, &quiet());
        let p = b.particles[0].pose;
        assert!(p.x.abs() < 1e-12 && (p.y - 1.0).abs() < 1e-12 && (p.theta - PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn noisy_prediction_mean_matches_noiseless_update() {
        let k = 10_000;
        let c = FilterConfig {
            particle_count: k,
            sigma_init: 0.0,
            motion_noise: MotionNoise { sigma_v: 0.2, sigma_theta: 0.1, sigma_pos: 0.0 },
            seed: 5,
            ..cfg()
        };
        let mut b = Belief::init(Pose2D::new(0.0, 0.0, 0.0), &c, 0.0);
        let u = ControlInput { v_x: 1.0, heading: 0.3, dt: 1.0 };
        b.predict(&u, &c);
        let mx = b.particles.iter().map(|p| p.pose.x).sum::<f64>() / k as f64;
        let my = b.particles.iter().map(|p| p.pose.y).sum::<f64>() / k as f64;
        // E[v cos(theta)] = v cos(h) exp(-s^2/2); the sample std is below 0.25
        let ex = 0.3f64.cos() * (-0.005f64).exp();
        let ey = 0.3f64.sin() * (-0.005f64).exp();
        let bound = 3.0 * 0.25 / (k as f64).sqrt();
        assert!((mx - ex).abs() < bound, "{mx} vs {ex}");
        assert!((my - ey).abs() < bound, "{my} vs {ey}");
    }

    #[test]
    fn position_walk_variance_scales_with_dt() {
        let k = 20_000;
        let c = FilterConfig {
            particle_count: k,
            sigma_init: 0.0,
            motion_noise: MotionNoise { sigma_v: 0.0, sigma_theta: 0.0, sigma_pos: 0.5 },
            seed: 6,
            ..cfg()
        };
        let mut b = Belief::init(Pose2D::new(0.0, 0.0, 0.0), &c, 0.0);
        b.predict(&ControlInput { v_x: 0.0, heading: 0.0, dt: 4.0 }, &c);
        let var = b.particles.iter().map(|p| p.pose.x * p.pose.x).sum::<f64>() / k as f64;
        // 0.5^2 * 4 = 1; the sample variance has std sqrt(2/k)
        assert!((var - 1.0).abs() < 4.0 * (2.0 / k as f64).sqrt(), "{var}");
    }

    #[test]
    fn estimate_examples() {
        let b = with_poses(&[(1.0, 2.0, 0.3); 4], &[0.25; 4]);
        let e = b.estimate();
        assert!((e.pose.x - 1.0).abs() < 1e-12 && (e.pose.y - 2.0).abs() < 1e-12);
        assert!((e.pose.theta - 0.3).abs() < 1e-12);
        assert!(e.spread < 1e-12);

        let b = with_poses(&[(0.0, 0.0, 0.0), (2.0, 0.0, 0.0)], &[0.5, 0.5]);
        let e = b.estimate();
        assert_eq!((e.pose.x, e.pose.y, e.pose.theta), (1.0, 0.0, 0.0));
        assert!((e.spread - 1.0).abs() < 1e-12);

        let a = 170f64.to_radians();
        let b = with_poses(&[(0.0, 0.0, a), (0.0, 0.0, -a)], &[0.5, 0.5]);
        assert!((b.estimate().pose.theta.abs() - PI).abs() < 1e-9);
    }

    fn open_map() -> SemanticMap {
        // 100 m square with a structure band along the top 10 m
        let mut m = SemanticMap::filled(200, 200, 0.5, (0.0, 0.0), Class::Water).unwrap();
        for row in 180..200 {
            for col in 0..200 {
                m.set(col, row, Class::Structure);
            }
        }
        m
    }

    #[test]
    fn degenerate_weights_clone_the_winner() {
        let map = open_map();
        let mut poses = vec![(50.0, 80.0, PI / 2.0)];
        poses.extend((1..10).map(|i| (10.0 + i as f64, 20.0, 0.0)));
        let mut w = vec![0.0; 10];
        w[0] = 1.0;
        let mut b = with_poses(&poses, &w);
        b.resample(&map, &FilterConfig { sigma_resample: 0.0, particle_count: 10, ..cfg() });
        assert_eq!(b.len(), 10);
        assert!(b.particles.iter().all(|p| p.pose == Pose2D::new(50.0, 80.0, PI / 2.0)));
        assert!((b.weight_sum() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn resampling_repairs_invalid_children() {
        let map = open_map();
        let c = FilterConfig { particle_count: 60, seed: 2, ..cfg() };
        // every parent sits on the structure band
        let mut b = Belief::init(Pose2D::new(50.0, 95.0, PI / 2.0), &c, 0.0);
        b.resample(&map, &c);
        assert_eq!(b.len(), 60);
        for p in &b.particles {
            let v = pose_validity(&map, &p.pose, &crop_from_pose(&map, &p.pose, &c.footprint));
            assert!(!v.on_structure && !v.out_of_map, "{:?}", p.pose);
        }
    }

    #[test]
    fn uniform_fallback_avoids_structure() {
        // sigma_bad = 0 keeps re-drawing the invalid parent, forcing fallback
        let map = open_map();
        let c = FilterConfig { particle_count: 20, sigma_bad: 0.0, sigma_resample: 0.0, seed: 4, ..cfg() };
        let mut b = Belief::init(Pose2D::new(50.0, 95.0, 0.0), &FilterConfig { sigma_init: 0.0, ..c }, 0.0);
        b.resample(&map, &c);
        for p in &b.particles {
            assert_ne!(map.class_at(p.pose.x, p.pose.y), Class::Structure);
            assert!(map.contains(p.pose.x, p.pose.y));
        }
    }

    #[test]
    fn roulette_selection_boundaries() {
        let cum = [0.2, 0.5, 0.5, 1.0];
        assert_eq!(roulette_select(&cum, 0.0), 0);
        assert_eq!(roulette_select(&cum, 0.2), 1);
        assert_eq!(roulette_select(&cum, 0.49), 1);
        assert_eq!(roulette_select(&cum, 0.5), 3);
        assert_eq!(roulette_select(&cum, 0.999), 3);
        assert_eq!(roulette_select(&cum, 1.0), 3);
    }

    #[test]
    fn gated_update_leaves_belief_alone() {
        let map = open_map();
        let c = FilterConfig { particle_count: 10, ..cfg() };
        let mut b = Belief::init(Pose2D::new(50.0, 60.0, PI / 2.0), &c, 0.0);
        let before = b.particles.clone();
        let img = AcousticImage::zeros(c.footprint, 0.0).with_truth(Pose2D::new(50.0, 60.0, PI / 2.0));
        assert!(!b.update(&img, &map, &OracleScorer, &c).unwrap());
        assert_eq!(b.particles, before);
    }

    #[test]
    fn oracle_update_favours_the_true_pose() {
        let map = open_map();
        let c = FilterConfig { particle_count: 25, seed: 8, ..cfg() };
        let truth = Pose2D::new(50.0, 70.0, PI / 2.0);
        let mut b = Belief::init(truth, &FilterConfig { sigma_init: 2.0, ..c }, 0.0);
        b.particles[13].pose = truth;
        let mut img = AcousticImage::zeros(c.footprint, 0.0).with_truth(truth);
        for r in 0..20 {
            for col in 0..256 {
                img.set(r, col, 1.0);
            }
        }
        assert!(b.update(&img, &map, &OracleScorer, &c).unwrap());
        let best = (0..b.len()).max_by(|&i, &j| b.particles[i].weight.total_cmp(&b.particles[j].weight)).unwrap();
        assert_eq!(best, 13);
        assert!((b.weight_sum() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn footprint_mismatch_is_rejected() {
        let map = open_map();
        let c = cfg();
        let mut b = Belief::init(Pose2D::new(50.0, 60.0, 0.0), &c, 0.0);
        let other = SonarFootprint { range_bins: 64, ..c.footprint };
        let img = AcousticImage::zeros(other, 0.0);
        assert!(matches!(b.update(&img, &map, &OracleScorer, &c), Err(Error::DimensionMismatch { .. })));
    }
}
