use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geomap::{Class, SemanticMap};

/// Parameters of a synthetic marina: a structure band along the top edge of
/// the map (the shoreline), piers hanging from it, and boats moored beside
/// the piers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldSpec {
    pub width_m: f64,
    pub height_m: f64,
    pub resolution: f64,
    pub shoreline_width_m: f64,
    pub pier_count: usize,
    pub pier_length_m: [f64; 2],
    pub pier_width_m: [f64; 2],
    /// Minimum free water between neighbouring piers and from the side edges.
    pub pier_gap_m: f64,
    pub movable_count: usize,
    /// Boat footprint: beam x length, meters.
    pub boat_size_m: [f64; 2],
    pub seed: u64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec {
            width_m: 160.0,
            height_m: 120.0,
            resolution: 0.5,
            shoreline_width_m: 3.0,
            pier_count: 4,
            pier_length_m: [20.0, 35.0],
            pier_width_m: [2.0, 3.0],
            pier_gap_m: 14.0,
            movable_count: 2,
            boat_size_m: [2.0, 5.0],
            seed: 0,
        }
    }
}

/// Axis-aligned rectangle in world meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

/// Generated map plus the geometry it was rasterized from.
#[derive(Debug, Clone)]
pub struct World {
    pub map: SemanticMap,
    pub shoreline: Option<Rect>,
    pub piers: Vec<Rect>,
    pub boats: Vec<Rect>,
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("width_m", self.width_m),
            ("height_m", self.height_m),
            ("resolution", self.resolution),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidSpec(format!("{name} must be positive, got {v}")));
            }
        }
        let ordered = [
            ("pier_length_m", self.pier_length_m),
            ("pier_width_m", self.pier_width_m),
        ];
        for (name, [lo, hi]) in ordered {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(Error::InvalidSpec(format!("{name} must satisfy 0 < min <= max")));
            }
        }
        if !(self.shoreline_width_m >= 0.0 && self.shoreline_width_m < self.height_m) {
            return Err(Error::InvalidSpec(format!(
                "shoreline width {} must lie in [0, height)",
                self.shoreline_width_m
            )));
        }
        if self.pier_count > 0 {
            if self.pier_length_m[1] + self.shoreline_width_m >= self.height_m {
                return Err(Error::InvalidSpec("piers longer than the map is tall".into()));
            }
            let needed = self.pier_count as f64 * (self.pier_width_m[1] + self.pier_gap_m)
                + self.pier_gap_m;
            if needed > self.width_m {
                return Err(Error::InvalidSpec(format!(
                    "{} piers need {needed} m of shoreline, map is {} m wide",
                    self.pier_count, self.width_m
                )));
            }
        }
        if self.movable_count > 0 && self.pier_count == 0 {
            return Err(Error::InvalidSpec("boats are moored at piers; no piers given".into()));
        }
        if self.boat_size_m.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidSpec("boat size must be positive".into()));
        }
        Ok(())
    }
}

/// Builds a marina map from the spec. Deterministic in `spec.seed`.
pub fn generate_world(spec: &WorldSpec) -> Result<World> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let width = (spec.width_m / spec.resolution).round() as usize;
    let height = (spec.height_m / spec.resolution).round() as usize;
    if width == 0 || height == 0 {
        return Err(Error::InvalidSpec("map smaller than one pixel".into()));
    }
    let (w, h) = (width as f64 * spec.resolution, height as f64 * spec.resolution);
    let shore_y = h - spec.shoreline_width_m;
    let shoreline = (spec.shoreline_width_m > 0.0).then_some(Rect {
        x0: 0.0,
        y0: shore_y,
        x1: w,
        y1: h,
    });

    // Piers: widths first, then distribute the spare shoreline randomly
    // between the mandatory gaps.
    let widths: Vec<f64> = (0..spec.pier_count)
        .map(|_| rng.random_range(spec.pier_width_m[0]..=spec.pier_width_m[1]))
        .collect();
    let lengths: Vec<f64> = (0..spec.pier_count)
        .map(|_| rng.random_range(spec.pier_length_m[0]..=spec.pier_length_m[1]))
        .collect();
    let fixed = widths.iter().sum::<f64>() + (spec.pier_count + 1) as f64 * spec.pier_gap_m;
    let spare = (w - fixed).max(0.0);
    let mut cuts: Vec<f64> = (0..spec.pier_count).map(|_| rng.random_range(0.0..=spare)).collect();
    cuts.sort_by(f64::total_cmp);
    let mut piers = Vec::with_capacity(spec.pier_count);
    let mut x = spec.pier_gap_m;
    let mut prev_cut = 0.0;
    for i in 0..spec.pier_count {
        x += cuts[i] - prev_cut;
        prev_cut = cuts[i];
        piers.push(Rect {
            x0: x,
            y0: shore_y - lengths[i],
            x1: x + widths[i],
            y1: shore_y,
        });
        x += widths[i] + spec.pier_gap_m;
    }

    // Boats alongside piers, on either side, with a 1 m gap.
    let [beam, length] = spec.boat_size_m;
    let mut boats = Vec::with_capacity(spec.movable_count);
    for _ in 0..spec.movable_count {
        let pier = piers[rng.random_range(0..piers.len())];
        let left = rng.random_bool(0.5);
        let span = (pier.y1 - pier.y0 - length).max(0.0);
        let y0 = pier.y0 + rng.random_range(0.0..=span);
        let x0 = if left { pier.x0 - 1.0 - beam } else { pier.x1 + 1.0 };
        boats.push(Rect {
            x0,
            y0,
            x1: x0 + beam,
            y1: y0 + length,
        });
    }

    let mut map = SemanticMap::filled(width, height, spec.resolution, (0.0, 0.0), Class::Water)?;
    for row in 0..height {
        for col in 0..width {
            let (cx, cy) = map.pixel_to_world(col, row);
            let structure = shoreline.is_some_and(|r| r.contains(cx, cy))
                || piers.iter().any(|r| r.contains(cx, cy));
            if structure {
                map.set(col, row, Class::Structure);
            } else if boats.iter().any(|r| r.contains(cx, cy)) {
                map.set(col, row, Class::Movable);
            }
        }
    }
    Ok(World {
        map,
        shoreline,
        piers,
        boats,
    })
}
