//! Ready-made trajectories through generated marinas.

use super::run::Trajectory;
use super::world::World;
use crate::error::{Error, Result};

/// Standoff from pier tips and from the shoreline, meters.
const STANDOFF: f64 = 7.0;
/// Sideways distance between leaving and returning on an excursion, meters.
const RETURN_OFFSET: f64 = 20.0;

fn gap_centers(world: &World) -> Vec<f64> {
    let (x0, _, x1, _) = world.map.bounds();
    let mut edges = vec![x0];
    for p in &world.piers {
        edges.push(p.x0);
        edges.push(p.x1);
    }
    edges.push(x1);
    edges.chunks(2).map(|c| 0.5 * (c[0] + c[1])).collect()
}

fn tips_y(world: &World) -> Result<f64> {
    world
        .piers
        .iter()
        .map(|p| p.y0)
        .min_by(f64::total_cmp)
        .ok_or_else(|| Error::InvalidSpec("scenario needs at least one pier".into()))
}

fn shore_y(world: &World) -> f64 {
    world.shoreline.map_or(world.map.bounds().3, |s| s.y0)
}

/// One pass up and down every water gap between piers, left to right.
pub fn marina_pass(world: &World) -> Result<Vec<[f64; 2]>> {
    let low = tips_y(world)? - STANDOFF;
    let high = shore_y(world) - STANDOFF;
    let mut wps = Vec::new();
    for gx in gap_centers(world) {
        wps.push([gx, low]);
        wps.push([gx, high]);
        wps.push([gx, low]);
    }
    Ok(wps)
}

/// Cuts the polyline after `length` meters of travel.
fn truncate(wps: &[[f64; 2]], length: f64) -> Vec<[f64; 2]> {
    let mut out = vec![wps[0]];
    let mut left = length;
    for w in wps.windows(2) {
        let seg = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
        if seg >= left {
            let f = left / seg;
            out.push([w[0][0] + f * (w[1][0] - w[0][0]), w[0][1] + f * (w[1][1] - w[0][1])]);
            return out;
        }
        left -= seg;
        out.push(w[1]);
    }
    out
}

/// Back-and-forth marina passes lasting `duration` seconds at `speed`.
pub fn marina_tour(world: &World, duration: f64, speed: f64) -> Result<Trajectory> {
    let pass = marina_pass(world)?;
    let target = duration * speed;
    let mut wps = pass.clone();
    let mut forward = false;
    while (Trajectory { waypoints: wps.clone(), speed }).length() < target {
        if forward {
            wps.extend(pass.iter().skip(1));
        } else {
            wps.extend(pass.iter().rev().skip(1));
        }
        forward = !forward;
    }
    Ok(Trajectory { waypoints: truncate(&wps, target), speed })
}

/// Like [`marina_tour`], but runs on past `min_duration` to the next
/// closest approach to the shoreline, so the run ends facing structure.
pub fn marina_tour_ending_ashore(world: &World, min_duration: f64, speed: f64) -> Result<Trajectory> {
    let high = shore_y(world) - STANDOFF;
    let pass_len = Trajectory { waypoints: marina_pass(world)?, speed }.length();
    let long = marina_tour(world, min_duration + pass_len / speed, speed)?;
    let mut travelled = 0.0;
    let mut wps = vec![long.waypoints[0]];
    for w in long.waypoints.windows(2) {
        travelled += (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
        wps.push(w[1]);
        if travelled >= min_duration * speed && w[1][1] == high {
            break;
        }
    }
    Ok(Trajectory { waypoints: wps, speed })
}

/// Where each phase of an open-water excursion starts, seconds from the
/// beginning of the run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExcursionTimes {
    /// Vehicle turns away from the marina.
    pub leave: f64,
    /// Vehicle is back at the pier line.
    pub back: f64,
}

/// Marina work, then a trip out of sonar range of every structure, then back
/// to the piers for more work. `clearance` is the distance kept from the
/// nearest pier tip while out.
pub fn open_water_excursion(
    world: &World,
    before: f64,
    after: f64,
    clearance: f64,
    speed: f64,
) -> Result<(Trajectory, ExcursionTimes)> {
    let low = tips_y(world)? - STANDOFF;
    let far = tips_y(world)? - clearance;
    let (x0, y0, x1, _) = world.map.bounds();
    if far < y0 + 5.0 {
        return Err(Error::InvalidSpec(format!(
            "map too short for a {clearance} m open-water excursion"
        )));
    }
    let head = marina_tour(world, before, speed)?;
    let mut wps = head.waypoints;
    let last = *wps.last().expect("non-empty tour");
    // return to the pier line first, then straight out and back
    let exit = [last[0], low];
    wps.push(exit);
    let leave_len = Trajectory { waypoints: wps.clone(), speed }.length();
    // come back up a different gap so odometry bias does not cancel out
    let target = if exit[0] < 0.5 * (x0 + x1) { exit[0] + RETURN_OFFSET } else { exit[0] - RETURN_OFFSET };
    let pass = marina_pass(world)?;
    let start = (0..pass.len())
        .step_by(3)
        .min_by(|&a, &b| (pass[a][0] - target).abs().total_cmp(&(pass[b][0] - target).abs()))
        .expect("non-empty pass");
    let gap_x = pass[start][0];
    wps.push([exit[0], far]);
    wps.push([gap_x, far]);
    wps.push([gap_x, low]);
    let back_len = Trajectory { waypoints: wps.clone(), speed }.length();

    let tail: Vec<[f64; 2]> = pass[start + 1..].iter().chain(pass.iter().rev()).copied().collect();
    let mut tail_wps = vec![[gap_x, low]];
    tail_wps.extend(tail);
    wps.extend(truncate(&tail_wps, after * speed).into_iter().skip(1));
    Ok((
        Trajectory { waypoints: wps, speed },
        ExcursionTimes { leave: leave_len / speed, back: back_len / speed },
    ))
}
