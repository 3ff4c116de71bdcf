//! Random-waypoint mobility and the dwell-time estimate consumed by call
//! admission control.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::topology::{Fap, Point2D, Topology, Ue, Vec2};

/// Speed range and pause duration for the random-waypoint model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MobilityParams {
    pub v_min_mps: f64,
    pub v_max_mps: f64,
    pub pause_s: f64,
}

impl Default for MobilityParams {
    fn default() -> Self {
        MobilityParams {
            v_min_mps: 0.5,
            v_max_mps: 1.5,
            pause_s: 5.0,
        }
    }
}

/// Per-UE random-waypoint state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MobilityState {
    pub waypoint: Point2D,
    pub speed_mps: f64,
    pub pause_remaining_s: f64,
}

/// Axis-aligned rectangle the waypoints are drawn from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub min: Point2D,
    pub max: Point2D,
}

impl Bounds {
    pub fn contains(&self, p: Point2D) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    /// Waypoint field for a deployment: the femtocell neighborhood when FAPs
    /// exist (their disc bounding box, inflated by two radii so UEs keep
    /// crossing coverage edges), otherwise the macro coverage box.
    pub fn of_topology(topology: &Topology) -> Bounds {
        let discs: Vec<(Point2D, f64)> = if topology.faps.is_empty() {
            topology.macros.iter().map(|m| (m.center, m.radius_m)).collect()
        } else {
            let r = 3.0 * topology.fap_radius_m;
            topology.faps.iter().map(|f| (f.position, r)).collect()
        };
        let mut b = Bounds {
            min: Point2D::new(f64::INFINITY, f64::INFINITY),
            max: Point2D::new(f64::NEG_INFINITY, f64::NEG_INFINITY),
        };
        for (c, r) in discs {
            b.min.x = b.min.x.min(c.x - r);
            b.min.y = b.min.y.min(c.y - r);
            b.max.x = b.max.x.max(c.x + r);
            b.max.y = b.max.y.max(c.y + r);
        }
        b
    }
}

fn draw_waypoint(bounds: &Bounds, rng: &mut ChaCha8Rng) -> Point2D {
    let x = rng.gen_range(bounds.min.x..=bounds.max.x);
    let y = rng.gen_range(bounds.min.y..=bounds.max.y);
    Point2D::new(x, y)
}

fn draw_speed(params: &MobilityParams, rng: &mut ChaCha8Rng) -> f64 {
    if params.v_max_mps <= params.v_min_mps {
        params.v_min_mps
    } else {
        rng.gen_range(params.v_min_mps..=params.v_max_mps)
    }
}

/// Initial waypoint/speed draw for a freshly placed UE.
pub fn init_state(bounds: &Bounds, params: &MobilityParams, rng: &mut ChaCha8Rng) -> MobilityState {
    let waypoint = draw_waypoint(bounds, rng);
    let speed_mps = draw_speed(params, rng);
    MobilityState {
        waypoint,
        speed_mps,
        pause_remaining_s: 0.0,
    }
}

/// Advances one UE by `dt` seconds of random-waypoint motion: move toward the
/// waypoint at the drawn speed, pause on arrival, then draw a new waypoint
/// and speed. Returns the updated UE (position, velocity) and state.
pub fn step(
    ue: &Ue,
    state: &MobilityState,
    dt_s: f64,
    bounds: &Bounds,
    params: &MobilityParams,
    rng: &mut ChaCha8Rng,
) -> (Ue, MobilityState) {
    debug_assert!(dt_s > 0.0);
    let mut ue = ue.clone();
    let mut state = *state;
    let mut remaining = dt_s;
    // A step may span several legs (finish pause, walk, arrive, pause again).
    for _ in 0..64 {
        if remaining <= 0.0 {
            break;
        }
        if state.pause_remaining_s > 0.0 {
            let consumed = state.pause_remaining_s.min(remaining);
            state.pause_remaining_s -= consumed;
            remaining -= consumed;
            ue.velocity_mps = Vec2::ZERO;
            continue;
        }
        if state.speed_mps <= 0.0 {
            // Degenerate zero speed: hold position for the whole step.
            ue.velocity_mps = Vec2::ZERO;
            break;
        }
        let dist = ue.position.distance(state.waypoint);
        if dist <= f64::EPSILON {
            state.pause_remaining_s = params.pause_s;
            state.waypoint = draw_waypoint(bounds, rng);
            state.speed_mps = draw_speed(params, rng);
            continue;
        }
        let dir = Vec2::new(
            (state.waypoint.x - ue.position.x) / dist,
            (state.waypoint.y - ue.position.y) / dist,
        );
        let time_to_wp = dist / state.speed_mps;
        if time_to_wp > remaining {
            ue.position.x += dir.x * state.speed_mps * remaining;
            ue.position.y += dir.y * state.speed_mps * remaining;
            ue.velocity_mps = Vec2::new(dir.x * state.speed_mps, dir.y * state.speed_mps);
            remaining = 0.0;
        } else {
            ue.position = state.waypoint;
            ue.velocity_mps = Vec2::new(dir.x * state.speed_mps, dir.y * state.speed_mps);
            remaining -= time_to_wp;
            state.pause_remaining_s = params.pause_s;
            state.waypoint = draw_waypoint(bounds, rng);
            state.speed_mps = draw_speed(params, rng);
        }
    }
    (ue, state)
}

/// Predicted time the UE's current straight-line trajectory spends inside the
/// FAP's coverage disc: chord transit time from now. Infinite for a
/// stationary UE, zero when the forward ray misses the disc.
pub fn estimate_dwell_time_s(ue: &Ue, fap: &Fap, fap_radius_m: f64) -> f64 {
    let v = ue.velocity_mps;
    let speed = v.speed();
    if speed == 0.0 {
        return f64::INFINITY;
    }
    let dx = ue.position.x - fap.position.x;
    let dy = ue.position.y - fap.position.y;
    // Solve |p + t·v − c|² = r² for t (t already in seconds).
    let a = v.x * v.x + v.y * v.y;
    let b = 2.0 * (dx * v.x + dy * v.y);
    let c = dx * dx + dy * dy - fap_radius_m * fap_radius_m;
    let disc = b * b - 4.0 * a * c;
    if disc <= 0.0 {
        return 0.0;
    }
    let sq = disc.sqrt();
    let t_exit = (-b + sq) / (2.0 * a);
    if t_exit <= 0.0 {
        return 0.0;
    }
    let t_enter = ((-b - sq) / (2.0 * a)).max(0.0);
    t_exit - t_enter
}
