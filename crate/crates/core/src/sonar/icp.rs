//! Rigid 2D point-to-point ICP.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geomap::normalize_angle;

/// Below this many target points, nearest neighbours are found exhaustively.
const EXHAUSTIVE_LIMIT: usize = 200;

/// Rotations (degrees) tried around the centroid-aligned initial guess.
const START_ROTATIONS_DEG: [f64; 9] = [0.0, 5.0, -5.0, 10.0, -10.0, 15.0, -15.0, 20.0, -20.0];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud2D {
    points: Vec<[f64; 2]>,
}

impl PointCloud2D {
    pub fn new(points: Vec<[f64; 2]>) -> Self {
        debug_assert!(points.iter().all(|p| p[0].is_finite() && p[1].is_finite()));
        PointCloud2D { points }
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn transformed(&self, t: &RigidTransform2D) -> Self {
        PointCloud2D {
            points: self.points.iter().map(|&p| t.apply(p)).collect(),
        }
    }

    fn centroid(&self) -> [f64; 2] {
        let n = self.points.len() as f64;
        let (sx, sy) = self
            .points
            .iter()
            .fold((0.0, 0.0), |(sx, sy), p| (sx + p[0], sy + p[1]));
        [sx / n, sy / n]
    }

    /// Fails when the scatter matrix is rank deficient (fewer than three
    /// points, all points coincident, or all points collinear).
    fn check_rank(&self, which: &str) -> Result<()> {
        if self.points.len() < 3 {
            return Err(Error::DegenerateCloud(format!(
                "{which} cloud has {} points, need at least 3",
                self.points.len()
            )));
        }
        let c = self.centroid();
        let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
        for p in &self.points {
            let (dx, dy) = (p[0] - c[0], p[1] - c[1]);
            sxx += dx * dx;
            sxy += dx * dy;
            syy += dy * dy;
        }
        let tr = sxx + syy;
        let det = sxx * syy - sxy * sxy;
        let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
        let (lmax, lmin) = (0.5 * tr + disc, 0.5 * tr - disc);
        if lmax <= 1e-18 || lmin <= 1e-10 * lmax {
            return Err(Error::DegenerateCloud(format!(
                "{which} cloud is coincident or collinear"
            )));
        }
        Ok(())
    }
}

/// Rotation about the origin followed by a translation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RigidTransform2D {
    pub rotation: f64,
    pub tx: f64,
    pub ty: f64,
}

impl RigidTransform2D {
    pub const IDENTITY: RigidTransform2D = RigidTransform2D {
        rotation: 0.0,
        tx: 0.0,
        ty: 0.0,
    };

    pub fn new(rotation: f64, tx: f64, ty: f64) -> Self {
        RigidTransform2D {
            rotation: normalize_angle(rotation),
            tx,
            ty,
        }
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.rotation.sin_cos();
        [c * p[0] - s * p[1] + self.tx, s * p[0] + c * p[1] + self.ty]
    }

    pub fn inverse(&self) -> Self {
        let (s, c) = self.rotation.sin_cos();
        RigidTransform2D::new(
            -self.rotation,
            -(c * self.tx + s * self.ty),
            s * self.tx - c * self.ty,
        )
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform2D) -> Self {
        let [tx, ty] = self.apply([other.tx, other.ty]);
        RigidTransform2D::new(self.rotation + other.rotation, tx, ty)
    }

    pub fn is_identity(&self) -> bool {
        self.rotation == 0.0 && self.tx == 0.0 && self.ty == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcpParams {
    pub max_iters: usize,
    /// Stop once the RMS residual improves by less than this (meters).
    pub conv_tol: f64,
}

impl Default for IcpParams {
    fn default() -> Self {
        IcpParams {
            max_iters: 50,
            conv_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpResult {
    /// Maps `src` onto `dst`.
    pub transform: RigidTransform2D,
    /// Final RMS nearest-neighbour distance (meters).
    pub residual: f64,
    pub iterations: usize,
    /// RMS residual observed at each iteration of the winning start.
    pub history: Vec<f64>,
}

/// Estimates the rigid transform taking `src` onto `dst`.
///
/// Runs point-to-point ICP (nearest-neighbour correspondences, closed-form
/// Procrustes) from the identity and from a handful of centroid-aligned
/// rotations, keeping the start with the lowest final residual.
pub fn icp_align(src: &PointCloud2D, dst: &PointCloud2D, params: &IcpParams) -> Result<IcpResult> {
    src.check_rank("source")?;
    dst.check_rank("target")?;
    let index = NearestIndex::new(dst.points());

    let (cs, cd) = (src.centroid(), dst.centroid());
    let mut starts = vec![RigidTransform2D::IDENTITY];
    for deg in START_ROTATIONS_DEG {
        let rot = RigidTransform2D::new(deg.to_radians(), 0.0, 0.0);
        let [rx, ry] = rot.apply(cs);
        starts.push(RigidTransform2D::new(rot.rotation, cd[0] - rx, cd[1] - ry));
    }

    let mut best: Option<IcpResult> = None;
    for start in starts {
        let run = icp_from(src, dst, &index, start, params);
        if best.as_ref().is_none_or(|b| run.residual < b.residual) {
            let done = run.residual <= 1e-12;
            best = Some(run);
            if done {
                break;
            }
        }
    }
    Ok(best.expect("at least one start"))
}

fn icp_from(
    src: &PointCloud2D,
    dst: &PointCloud2D,
    index: &NearestIndex,
    start: RigidTransform2D,
    params: &IcpParams,
) -> IcpResult {
    let mut transform = start;
    let mut history = Vec::new();
    let mut matches = Vec::with_capacity(src.len());
    let mut iterations = 0;
    loop {
        matches.clear();
        let mut sq = 0.0;
        for &p in src.points() {
            let (j, d2) = index.nearest(transform.apply(p));
            matches.push(j);
            sq += d2;
        }
        let rms = (sq / src.len() as f64).sqrt();
        let converged = history
            .last()
            .is_some_and(|&prev: &f64| prev - rms < params.conv_tol);
        history.push(rms);
        if converged || iterations >= params.max_iters {
            break;
        }
        transform = procrustes(src.points(), dst.points(), &matches);
        iterations += 1;
    }
    IcpResult {
        transform,
        residual: *history.last().expect("non-empty"),
        iterations,
        history,
    }
}

/// Least-squares rotation and translation taking `src[i]` onto
/// `dst[matches[i]]`.
fn procrustes(src: &[[f64; 2]], dst: &[[f64; 2]], matches: &[usize]) -> RigidTransform2D {
    let n = src.len() as f64;
    let (mut ma, mut mb) = ([0.0; 2], [0.0; 2]);
    for (a, &j) in src.iter().zip(matches) {
        let b = dst[j];
        ma[0] += a[0];
        ma[1] += a[1];
        mb[0] += b[0];
        mb[1] += b[1];
    }
    ma = [ma[0] / n, ma[1] / n];
    mb = [mb[0] / n, mb[1] / n];
    let (mut dot, mut cross) = (0.0, 0.0);
    for (a, &j) in src.iter().zip(matches) {
        let b = dst[j];
        let (ax, ay) = (a[0] - ma[0], a[1] - ma[1]);
        let (bx, by) = (b[0] - mb[0], b[1] - mb[1]);
        dot += ax * bx + ay * by;
        cross += ax * by - ay * bx;
    }
    let theta = cross.atan2(dot);
    let (s, c) = theta.sin_cos();
    RigidTransform2D::new(
        theta,
        mb[0] - (c * ma[0] - s * ma[1]),
        mb[1] - (s * ma[0] + c * ma[1]),
    )
}

/// Nearest-neighbour lookup over a fixed point set: brute force for small
/// sets, a uniform bucket grid otherwise.
struct NearestIndex<'a> {
    points: &'a [[f64; 2]],
    grid: Option<Grid>,
}

struct Grid {
    min: [f64; 2],
    cell: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<usize>>,
}

impl<'a> NearestIndex<'a> {
    fn new(points: &'a [[f64; 2]]) -> Self {
        let grid = (points.len() >= EXHAUSTIVE_LIMIT).then(|| Grid::build(points));
        NearestIndex { points, grid }
    }

    /// Index and squared distance of the nearest point.
    fn nearest(&self, q: [f64; 2]) -> (usize, f64) {
        match &self.grid {
            Some(g) => g.nearest(self.points, q),
            None => brute_nearest(self.points, q),
        }
    }
}

fn brute_nearest(points: &[[f64; 2]], q: [f64; 2]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, p) in points.iter().enumerate() {
        let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
        if d2 < best.1 {
            best = (i, d2);
        }
    }
    best
}

impl Grid {
    fn build(points: &[[f64; 2]]) -> Grid {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in points {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let area = ((hi[0] - lo[0]) * (hi[1] - lo[1])).max(1e-12);
        let cell = (area / points.len() as f64)
            .sqrt()
            .max((hi[0] - lo[0]) / 1024.0)
            .max((hi[1] - lo[1]) / 1024.0)
            .max(1e-9);
        let nx = ((hi[0] - lo[0]) / cell) as usize + 1;
        let ny = ((hi[1] - lo[1]) / cell) as usize + 1;
        let mut g = Grid {
            min: lo,
            cell,
            nx,
            ny,
            buckets: vec![Vec::new(); nx * ny],
        };
        for (i, p) in points.iter().enumerate() {
            let (cx, cy) = g.cell_of(*p);
            g.buckets[cy * nx + cx].push(i);
        }
        g
    }

    fn cell_of(&self, p: [f64; 2]) -> (usize, usize) {
        let cx = ((p[0] - self.min[0]) / self.cell).floor().clamp(0.0, (self.nx - 1) as f64);
        let cy = ((p[1] - self.min[1]) / self.cell).floor().clamp(0.0, (self.ny - 1) as f64);
        (cx as usize, cy as usize)
    }

    fn nearest(&self, points: &[[f64; 2]], q: [f64; 2]) -> (usize, f64) {
        let (qx, qy) = self.cell_of(q);
        // distance from q to the grid's bounding box, so rings are measured
        // from where q actually lies
        let outside = {
            let max = [
                self.min[0] + self.nx as f64 * self.cell,
                self.min[1] + self.ny as f64 * self.cell,
            ];
            let dx = (self.min[0] - q[0]).max(q[0] - max[0]).max(0.0);
            let dy = (self.min[1] - q[1]).max(q[1] - max[1]).max(0.0);
            dx.hypot(dy)
        };
        let mut best = (usize::MAX, f64::INFINITY);
        let max_ring = self.nx.max(self.ny);
        for ring in 0..=max_ring {
            let x0 = qx.saturating_sub(ring);
            let x1 = (qx + ring).min(self.nx - 1);
            let y0 = qy.saturating_sub(ring);
            let y1 = (qy + ring).min(self.ny - 1);
            for cy in y0..=y1 {
                for cx in x0..=x1 {
                    let on_ring = cx.abs_diff(qx) == ring || cy.abs_diff(qy) == ring;
                    if !on_ring {
                        continue;
                    }
                    for &i in &self.buckets[cy * self.nx + cx] {
                        let p = points[i];
                        let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
                        if d2 < best.1 || (d2 == best.1 && i < best.0) {
                            best = (i, d2);
                        }
                    }
                }
            }
            // unvisited cells lie at least `ring` whole cells beyond q's cell
            // along one axis, on top of q's offset from the grid box
            let gap = ring as f64 * self.cell;
            if best.0 != usize::MAX && outside * outside + gap * gap >= best.1 {
                break;
            }
        }
        best
    }
}
