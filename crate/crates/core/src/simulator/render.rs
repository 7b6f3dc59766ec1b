use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::geomap::{Class, Pose2D, SemanticMap, SonarFootprint};
use crate::sonar::AcousticImage;

/// Sensor noise injected by the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    /// Constant offset added to every odometry speed reading, m/s.
    pub odom_bias: f64,
    pub odom_std: f64,
    /// Compass noise, radians.
    pub compass_std: f64,
    /// Additive noise on sonar return pixels.
    pub sonar_std: f64,
    /// Probability that any sonar pixel reads zero.
    pub sonar_dropout: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            odom_bias: 0.05,
            odom_std: 0.05,
            compass_std: 0.02,
            sonar_std: 0.05,
            sonar_dropout: 0.05,
        }
    }
}

impl NoiseSpec {
    pub const NONE: NoiseSpec = NoiseSpec {
        odom_bias: 0.0,
        odom_std: 0.0,
        compass_std: 0.0,
        sonar_std: 0.0,
        sonar_dropout: 0.0,
    };

    pub fn validate(&self) -> crate::Result<()> {
        let stds = [self.odom_std, self.compass_std, self.sonar_std];
        if !self.odom_bias.is_finite() || stds.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(crate::Error::InvalidConfig(
                "noise bias must be finite and stds non-negative".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.sonar_dropout) {
            return Err(crate::Error::InvalidConfig(format!(
                "sonar dropout {} outside [0, 1]",
                self.sonar_dropout
            )));
        }
        Ok(())
    }
}

/// Single-bounce intensity model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SonarModel {
    /// Intensity lost per meter of range.
    pub attenuation: f64,
    /// Bins lit behind the first return, including it.
    pub smear_bins: usize,
    /// Geometric falloff along the smear.
    pub smear_decay: f64,
}

impl Default for SonarModel {
    fn default() -> Self {
        SonarModel {
            attenuation: 0.015,
            smear_bins: 16,
            smear_decay: 0.9,
        }
    }
}

fn reflects(c: Class) -> bool {
    matches!(c, Class::Structure | Class::Movable)
}

/// Distance from `(x, y)` along the unit direction `(c, s)` to the first
/// reflecting pixel, if one starts within `max` meters. Walks the grid one
/// pixel boundary at a time, so no pixel the ray touches is skipped.
fn cast(map: &SemanticMap, x: f64, y: f64, c: f64, s: f64, max: f64) -> Option<f64> {
    let res = map.resolution();
    let (ox, oy) = map.origin();
    let (w, h) = (map.width() as f64, map.height() as f64);
    // pixel units from here on
    let (px, py) = ((x - ox) / res, (y - oy) / res);
    let limit = max / res;

    let (mut t0, mut t1) = (0.0f64, limit);
    for (p, d, hi) in [(px, c, w), (py, s, h)] {
        if d == 0.0 {
            if p < 0.0 || p >= hi {
                return None;
            }
        } else {
            let (a, b) = ((0.0 - p) / d, (hi - p) / d);
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
    }
    if t0 >= t1 {
        return None;
    }

    let axis = |p: f64, d: f64, n: f64| {
        let cell = (p + t0 * d).floor().clamp(0.0, n - 1.0);
        let next = if d > 0.0 {
            (cell + 1.0 - p) / d
        } else if d < 0.0 {
            (cell - p) / d
        } else {
            f64::INFINITY
        };
        (cell as i64, next, (1.0 / d).abs(), d.signum() as i64)
    };
    let (mut col, mut next_x, dx, sx) = axis(px, c, w);
    let (mut row, mut next_y, dy, sy) = axis(py, s, h);
    let mut t = t0;
    loop {
        if reflects(map.get(col as usize, row as usize)) {
            return Some(t * res);
        }
        if next_x < next_y {
            t = next_x;
            next_x += dx;
            col += sx;
        } else {
            t = next_y;
            next_y += dy;
            row += sy;
        }
        if t >= t1 || col < 0 || row < 0 || col >= w as i64 || row >= h as i64 {
            return None;
        }
    }
}

/// First range bin per bearing column whose ray hits something reflective,
/// if any. A hit is reported at the first bin center at or beyond it, the
/// same centers the map crop samples, so thick walls line up with the crop
/// while structures thinner than a bin still return.
pub fn first_returns(map: &SemanticMap, pose: &Pose2D, fp: &SonarFootprint) -> Vec<Option<usize>> {
    let bin = fp.range_step();
    (0..fp.bearing_bins)
        .map(|b| {
            let (s, c) = (pose.theta + fp.bearing_of(b as f64)).sin_cos();
            cast(map, pose.x, pose.y, c, s, fp.max_range)
                .map(|rho| ((rho / bin - 0.5).ceil().max(0.0) as usize).min(fp.range_bins - 1))
        })
        .collect()
}

/// Renders a forward-looking sonar frame at `pose`. Deterministic in `seed`.
pub fn render_sonar(
    map: &SemanticMap,
    pose: &Pose2D,
    fp: &SonarFootprint,
    model: &SonarModel,
    noise: &NoiseSpec,
    seed: u64,
) -> AcousticImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = AcousticImage::zeros(*fp, 0.0);
    for (b, hit) in first_returns(map, pose, fp).into_iter().enumerate() {
        let Some(r0) = hit else { continue };
        let base = 1.0 - model.attenuation * fp.range_of(r0 as f64);
        let mut gain = 1.0;
        for r in r0..(r0 + model.smear_bins).min(fp.range_bins) {
            let mut v = base * gain;
            gain *= model.smear_decay;
            if noise.sonar_std > 0.0 {
                let n: f64 = StandardNormal.sample(&mut rng);
                v += noise.sonar_std * n;
            }
            if noise.sonar_dropout > 0.0 && rng.random::<f64>() < noise.sonar_dropout {
                v = 0.0;
            }
            img.set(r, b, v);
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sonar::{is_informative, DEFAULT_INFO_THRESHOLD};

    fn wall_map() -> SemanticMap {
        let mut m = SemanticMap::filled(60, 60, 1.0, (-30.0, -30.0), Class::Water).unwrap();
        for row in 0..60 {
            for col in 40..60 {
                m.set(col, row, Class::Structure);
            }
        }
        m
    }

    #[test]
    fn open_water_renders_nothing() {
        let m = SemanticMap::filled(80, 80, 1.0, (-40.0, -40.0), Class::Water).unwrap();
        let fp = SonarFootprint::default();
        let img = render_sonar(&m, &Pose2D::new(0.0, 0.0, 0.3), &fp, &SonarModel::default(), &NoiseSpec::default(), 4);
        assert_eq!(img.nonzero_count(), 0);
        assert!(!is_informative(&img, DEFAULT_INFO_THRESHOLD));
    }

    #[test]
    fn wall_first_return_bin() {
        let fp = SonarFootprint::default();
        let img = render_sonar(&wall_map(), &Pose2D::new(0.0, 0.0, 0.0), &fp, &SonarModel::default(), &NoiseSpec::NONE, 0);
        let center = fp.bearing_bins / 2;
        let first = (0..fp.range_bins).find(|&r| img.get(r, center) > 0.0).unwrap();
        assert!(first == 42 || first == 43, "first return at {first}");
    }

    #[test]
    fn shadowed_behind_smear() {
        let fp = SonarFootprint::default();
        let model = SonarModel::default();
        let img = render_sonar(&wall_map(), &Pose2D::new(0.0, 0.0, 0.2), &fp, &model, &NoiseSpec { sonar_dropout: 0.0, ..NoiseSpec::default() }, 9);
        for b in 0..fp.bearing_bins {
            if let Some(first) = (0..fp.range_bins).find(|&r| img.get(r, b) > 0.0) {
                for r in first + model.smear_bins..fp.range_bins {
                    assert_eq!(img.get(r, b), 0.0, "column {b} lit at {r}");
                }
            }
        }
    }

    #[test]
    fn seeded_render_is_repeatable() {
        let fp = SonarFootprint::default();
        let pose = Pose2D::new(-2.0, 1.0, 0.1);
        let a = render_sonar(&wall_map(), &pose, &fp, &SonarModel::default(), &NoiseSpec::default(), 11);
        let b = render_sonar(&wall_map(), &pose, &fp, &SonarModel::default(), &NoiseSpec::default(), 11);
        assert_eq!(a, b);
        let c = render_sonar(&wall_map(), &pose, &fp, &SonarModel::default(), &NoiseSpec::default(), 12);
        assert_ne!(a, c);
    }

    #[test]
    fn boats_reflect_but_are_not_structure() {
        let mut m = SemanticMap::filled(60, 60, 1.0, (-30.0, -30.0), Class::Water).unwrap();
        for row in 28..32 {
            m.set(35, row, Class::Movable);
        }
        let fp = SonarFootprint::default();
        let img = render_sonar(&m, &Pose2D::new(0.0, 0.0, 0.0), &fp, &SonarModel::default(), &NoiseSpec::NONE, 0);
        assert!(img.nonzero_count() > 0);
        assert_eq!(crate::geomap::crop_from_pose(&m, &Pose2D::new(0.0, 0.0, 0.0), &fp).structure_count(), 0);
    }
}
