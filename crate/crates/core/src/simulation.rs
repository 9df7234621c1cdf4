//! Offline walking agent for the synthetic world.
//!
//! The agent captures a query, localizes, asks for guidance and then turns and
//! walks as instructed, all against ground truth it never sees. Captures that
//! fail to localize, or walks cut short by a wall, make it rotate in place
//! before the next capture. Arrival counts once two consecutive captures from
//! different headings agree on it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::descriptors::FeatureMatcher;
use crate::geometry::{Direction, FloorPoint};
use crate::localization::{localize, LocalizationConfig, Method};
use crate::map::{Destination, TopometricMap};
use crate::navigation::{Instruction, NavGraph, NavigationError};
use crate::synthetic::{SyntheticError, SyntheticWorld};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Navigation(#[from] NavigationError),
    #[error(transparent)]
    World(#[from] SyntheticError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Metres walked between captures at most.
    pub stride: f64,
    pub max_captures: usize,
    /// Degrees turned after a failed capture.
    pub retry_turn: f64,
    /// The agent never gets closer than this to a wall, metres.
    pub body_radius: f64,
    /// Consecutive arrived instructions, each from a new heading, needed to stop.
    pub confirmations: usize,
    /// Seeds the jitter on turns and strides that keeps the agent out of cycles.
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            stride: 1.5,
            max_captures: 120,
            retry_turn: 90.0,
            body_radius: 0.4,
            confirmations: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimStep {
    pub true_location: FloorPoint,
    pub true_direction: Direction,
    pub estimate: Option<FloorPoint>,
    pub estimate_direction: Option<Direction>,
    pub method: Option<Method>,
    pub instruction: Option<Instruction>,
    /// Feet left along the route after this instruction's target.
    pub remaining: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOutcome {
    pub arrived: bool,
    /// Feet from the true final position to the destination image.
    pub final_distance: f64,
    pub captures: usize,
    pub failed_captures: usize,
    pub trace: Vec<SimStep>,
}

/// Walks from `start` until guidance reports arrival or captures run out.
#[allow(clippy::too_many_arguments)]
pub fn simulate(
    world: &SyntheticWorld,
    map: &TopometricMap,
    graph: &NavGraph,
    destination: &Destination,
    start: FloorPoint,
    heading: Direction,
    loc: &LocalizationConfig,
    matcher: &dyn FeatureMatcher,
    cfg: &SimConfig,
) -> Result<SimOutcome, SimError> {
    let goal = map
        .image(destination.image_id)
        .ok_or(NavigationError::UnknownDestination(destination.image_id))?
        .location;
    let mut here = start;
    let mut facing = heading;
    let mut trace = Vec::new();
    let mut failed = 0;
    let mut arrived = false;
    let mut agreeing = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..cfg.max_captures {
        let query = world.query(here, facing)?;
        let mut step = SimStep {
            true_location: here,
            true_direction: facing,
            estimate: None,
            estimate_direction: None,
            method: None,
            instruction: None,
            remaining: None,
        };
        let turn_around = Direction::new(facing.degrees() + cfg.retry_turn * rng.random_range(0.5..1.5));
        let result = match localize(&query, map, loc, matcher) {
            Ok(r) => r,
            Err(_) => {
                failed += 1;
                trace.push(step);
                facing = turn_around;
                continue;
            }
        };
        step.estimate = Some(result.location);
        step.estimate_direction = result.direction;
        step.method = Some(result.method);
        let instruction = graph.guide(&result, destination)?;
        step.instruction = Some(instruction.clone());
        match instruction {
            Instruction::Arrived { .. } => {
                trace.push(step);
                agreeing += 1;
                if agreeing >= cfg.confirmations {
                    arrived = true;
                    break;
                }
                facing = turn_around;
            }
            Instruction::Walk {
                turn,
                bearing,
                distance,
                remaining,
                ..
            } => {
                agreeing = 0;
                step.remaining = Some(remaining);
                trace.push(step);
                facing = match result.direction {
                    Some(_) => Direction::new(facing.degrees() + turn),
                    None => bearing,
                };
                let metres = (distance / map.scale() / world.config().pixels_per_metre).min(cfg.stride * rng.random_range(0.5..1.0));
                let next = walk(world, here, facing, metres, cfg.body_radius);
                let moved = next.distance(&here) / world.config().pixels_per_metre;
                here = next;
                if moved < 0.5 * metres {
                    facing = turn_around;
                }
            }
        }
    }
    Ok(SimOutcome {
        arrived,
        final_distance: here.distance(&goal) * map.scale(),
        captures: trace.len(),
        failed_captures: failed,
        trace,
    })
}

/// Moves up to `metres` along `facing`. A blocked increment steers around
/// the obstacle by the smallest deviation, up to 80 degrees, that is free.
fn walk(world: &SyntheticWorld, from: FloorPoint, facing: Direction, metres: f64, radius: f64) -> FloorPoint {
    const INCREMENT: f64 = 0.05;
    const DEVIATIONS: [f64; 17] = [
        0.0, 10.0, -10.0, 20.0, -20.0, 30.0, -30.0, 40.0, -40.0, 50.0, -50.0, 60.0, -60.0, 70.0, -70.0, 80.0, -80.0,
    ];
    let ppm = world.config().pixels_per_metre;
    let free = |a: FloorPoint, b: FloorPoint| {
        let [x, z] = world.to_world(b);
        world.contains(x, z) && world.wall_clearance(x, z) >= radius && world.line_of_sight(world.to_world(a), [x, z])
    };
    let mut at = from;
    let mut walked = 0.0;
    while walked < metres {
        let s = INCREMENT.min(metres - walked) * ppm;
        let next = DEVIATIONS.iter().find_map(|dev| {
            let r = (facing.degrees() + dev).to_radians();
            let c = FloorPoint::new(at.x + r.cos() * s, at.y + r.sin() * s);
            free(at, c).then_some(c)
        });
        let Some(next) = next else { break };
        at = next;
        walked += s / ppm;
    }
    at
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::WorldConfig;

    #[test]
    fn walking_stops_at_walls() {
        let world = SyntheticWorld::new(WorldConfig::default());
        let start = world.to_floor(1.0, 1.0);
        // Facing -x in the world: the outer wall at x = 0 is 1 m away.
        let west = Direction::new(180.0);
        let end = walk(&world, start, west, 0.8, 0.15);
        let [x, z] = world.to_world(end);
        assert!((x - 0.2).abs() < 1e-9, "{x}");
        assert!((z - 1.0).abs() < 1e-9);
        // Heading into the wall at an angle slides along it.
        let slid = walk(&world, start, Direction::new(135.0), 3.0, 0.15);
        let [x, z] = world.to_world(slid);
        assert!(x < 0.3 && z > 2.0, "{x} {z}");
        let east = walk(&world, start, Direction::new(0.0), 0.5, 0.15);
        assert!((world.to_world(east)[0] - 1.5).abs() < 1e-9);
    }
}
