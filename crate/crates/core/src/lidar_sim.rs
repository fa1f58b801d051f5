//! Planar unicycle robot with a five-beam range finder in segment worlds.
//!
//! The robot drives forward at constant speed and only commands its angular
//! velocity. Observations are beam ranges ordered left to right. Every step
//! pays `r_alive`, except a step that ends within `collision_radius` of a wall,
//! which pays `r_crash` and terminates the episode.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::knaf::{Environment, StepOutcome};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub a: [f64; 2],
    pub b: [f64; 2],
}

impl Segment {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self {
            a: [x1, y1],
            b: [x2, y2],
        }
    }

    pub fn distance_to(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (self.b[0] - self.a[0], self.b[1] - self.a[1]);
        let len_sq = dx * dx + dy * dy;
        let t = if len_sq > 0.0 {
            (((x - self.a[0]) * dx + (y - self.a[1]) * dy) / len_sq).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (px, py) = (self.a[0] + t * dx, self.a[1] + t * dy);
        ((x - px).powi(2) + (y - py).powi(2)).sqrt()
    }

    /// Distance along the ray `origin + t·dir` (unit `dir`) to this segment.
    pub fn ray_hit(&self, origin: [f64; 2], dir: [f64; 2]) -> Option<f64> {
        let e = [self.b[0] - self.a[0], self.b[1] - self.a[1]];
        let denom = dir[0] * e[1] - dir[1] * e[0];
        if denom.abs() < 1e-15 {
            return None;
        }
        let w = [self.a[0] - origin[0], self.a[1] - origin[1]];
        let t = (w[0] * e[1] - w[1] * e[0]) / denom;
        let u = (w[0] * dir[1] - w[1] * dir[0]) / denom;
        (t >= 0.0 && (0.0..=1.0).contains(&u)).then_some(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl RobotState {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn normalize_angle(theta: f64) -> f64 {
    let mut t = theta.rem_euclid(2.0 * PI);
    if t > PI {
        t -= 2.0 * PI;
    }
    t
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldMap {
    pub name: String,
    pub segments: Vec<Segment>,
    pub spawn_poses: Vec<RobotState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub v: f64,
    pub dt: f64,
    pub omega_bounds: [f64; 2],
    /// Beam angles relative to heading, left to right.
    pub beam_angles: [f64; 5],
    pub max_range: f64,
    pub collision_radius: f64,
    pub r_crash: f64,
    pub r_alive: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        let deg = PI / 180.0;
        Self {
            v: 0.15,
            dt: 0.1,
            omega_bounds: [-0.3, 0.3],
            beam_angles: [68.0 * deg, 34.0 * deg, 0.0, -34.0 * deg, -68.0 * deg],
            max_range: 5.0,
            collision_radius: 0.15,
            r_crash: -200.0,
            r_alive: 1.0,
        }
    }
}

impl WorldMap {
    pub fn validate(&self, cfg: &SimConfig) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "map '{}' has no segments",
                self.name
            )));
        }
        if self.spawn_poses.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "map '{}' has no spawn poses",
                self.name
            )));
        }
        for (i, p) in self.spawn_poses.iter().enumerate() {
            if collides(self, p, cfg) {
                return Err(Error::InvalidParameter(format!(
                    "spawn pose {i} of map '{}' is in collision",
                    self.name
                )));
            }
        }
        Ok(())
    }

    /// Parses the line-oriented map format:
    /// `segment x1 y1 x2 y2`, `spawn x y theta`, optional `name <label>`,
    /// and `#` comments.
    pub fn parse(text: &str) -> Result<Self> {
        let mut name = String::from("unnamed");
        let mut segments = Vec::new();
        let mut spawn_poses = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse {
                line: lineno + 1,
                msg,
            };
            let mut parts = line.split_whitespace();
            let kind = parts.next().unwrap_or_default();
            if kind == "name" {
                name = parts.collect::<Vec<_>>().join(" ");
                continue;
            }
            let nums: Vec<f64> = parts
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|e| err(format!("bad number '{t}': {e}")))
                })
                .collect::<Result<_>>()?;
            if nums.iter().any(|v| !v.is_finite()) {
                return Err(err("non-finite coordinate".into()));
            }
            match (kind, nums.as_slice()) {
                ("segment", [x1, y1, x2, y2]) => segments.push(Segment::new(*x1, *y1, *x2, *y2)),
                ("spawn", [x, y, t]) => spawn_poses.push(RobotState {
                    x: *x,
                    y: *y,
                    theta: *t,
                }),
                ("segment", _) | ("spawn", _) => {
                    return Err(err(format!("wrong number of fields for '{kind}'")));
                }
                _ => return Err(err(format!("unknown directive '{kind}'"))),
            }
        }
        if segments.is_empty() || spawn_poses.is_empty() {
            return Err(Error::Parse {
                line: text.lines().count(),
                msg: "map needs at least one segment and one spawn".into(),
            });
        }
        Ok(Self {
            name,
            segments,
            spawn_poses,
        })
    }

    /// Inverse of [`WorldMap::parse`]; shortest round-trip float formatting.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "name {}", self.name);
        for s in &self.segments {
            let _ = writeln!(
                out,
                "segment {:?} {:?} {:?} {:?}",
                s.a[0], s.a[1], s.b[0], s.b[1]
            );
        }
        for p in &self.spawn_poses {
            let _ = writeln!(out, "spawn {:?} {:?} {:?}", p.x, p.y, p.theta);
        }
        out
    }
}

pub fn raycast(map: &WorldMap, state: &RobotState, cfg: &SimConfig) -> [f64; 5] {
    let mut out = [cfg.max_range; 5];
    for (r, beam) in out.iter_mut().zip(cfg.beam_angles) {
        let ang = state.theta + beam;
        let dir = [ang.cos(), ang.sin()];
        for seg in &map.segments {
            if let Some(t) = seg.ray_hit([state.x, state.y], dir) {
                if t < *r {
                    *r = t;
                }
            }
        }
    }
    out
}

fn collides(map: &WorldMap, state: &RobotState, cfg: &SimConfig) -> bool {
    map.segments
        .iter()
        .any(|s| s.distance_to(state.x, state.y) < cfg.collision_radius)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimStep {
    pub state: RobotState,
    pub obs: [f64; 5],
    pub reward: f64,
    pub done: bool,
}

/// Advances the unicycle one tick with `omega` clipped to the configured bounds.
pub fn step(map: &WorldMap, state: &RobotState, omega: f64, cfg: &SimConfig) -> SimStep {
    let omega = omega.clamp(cfg.omega_bounds[0], cfg.omega_bounds[1]);
    let next = RobotState::new(
        state.x + cfg.v * state.theta.cos() * cfg.dt,
        state.y + cfg.v * state.theta.sin() * cfg.dt,
        state.theta + omega * cfg.dt,
    );
    let done = collides(map, &next, cfg);
    SimStep {
        obs: raycast(map, &next, cfg),
        state: next,
        reward: if done { cfg.r_crash } else { cfg.r_alive },
        done,
    }
}

/// Picks a spawn pose uniformly.
pub fn reset<R: Rng + ?Sized>(
    map: &WorldMap,
    rng: &mut R,
    cfg: &SimConfig,
) -> (RobotState, [f64; 5]) {
    let pose = map.spawn_poses[rng.random_range(0..map.spawn_poses.len())];
    (pose, raycast(map, &pose, cfg))
}

/// Episodic wrapper implementing [`Environment`]. Counts every `step` call.
#[derive(Debug, Clone)]
pub struct LidarEnv {
    map: WorldMap,
    cfg: SimConfig,
    state: RobotState,
    rng: ChaCha8Rng,
    steps_taken: u64,
}

impl LidarEnv {
    pub fn new(map: WorldMap, cfg: SimConfig, seed: u64) -> Result<Self> {
        map.validate(&cfg)?;
        let state = map.spawn_poses[0];
        Ok(Self {
            map,
            cfg,
            state,
            rng: ChaCha8Rng::seed_from_u64(seed),
            steps_taken: 0,
        })
    }

    pub fn map(&self) -> &WorldMap {
        &self.map
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn pose(&self) -> RobotState {
        self.state
    }

    /// Total number of simulator transitions consumed.
    pub fn steps_taken(&self) -> u64 {
        self.steps_taken
    }
}

impl Environment for LidarEnv {
    fn state_dim(&self) -> usize {
        5
    }

    fn action_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (
            vec![self.cfg.omega_bounds[0]],
            vec![self.cfg.omega_bounds[1]],
        )
    }

    fn reset(&mut self) -> Result<Vec<f64>> {
        let (state, obs) = reset(&self.map, &mut self.rng, &self.cfg);
        self.state = state;
        Ok(obs.to_vec())
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        let [omega] = action else {
            return Err(Error::Environment(format!(
                "expected 1 action component, got {}",
                action.len()
            )));
        };
        if !omega.is_finite() {
            return Err(Error::Environment("non-finite angular velocity".into()));
        }
        let out = step(&self.map, &self.state, *omega, &self.cfg);
        self.state = out.state;
        self.steps_taken += 1;
        Ok(StepOutcome {
            obs: out.obs.to_vec(),
            reward: out.reward,
            done: out.done,
        })
    }
}

pub mod maps;
pub use maps::builtin_maps;

#[cfg(test)]
mod tests {
    use super::*;

    fn square_room(half: f64) -> WorldMap {
        WorldMap {
            name: "square".into(),
            segments: vec![
                Segment::new(-half, -half, half, -half),
                Segment::new(half, -half, half, half),
                Segment::new(half, half, -half, half),
                Segment::new(-half, half, -half, -half),
            ],
            spawn_poses: vec![RobotState::new(0.0, 0.0, 0.0)],
        }
    }

    #[test]
    fn center_beam_hits_facing_wall() {
        let map = square_room(2.0);
        let cfg = SimConfig::default();
        let r = raycast(&map, &RobotState::new(0.0, 0.0, 0.0), &cfg);
        assert!((r[2] - 2.0).abs() < 1e-12);
        // 34° off axis still hits the x = 2 wall: 2 / cos(34°).
        let expect = 2.0 / (34f64.to_radians()).cos();
        assert!((r[1] - expect).abs() < 1e-12);
        assert!((r[3] - expect).abs() < 1e-12);
    }

    #[test]
    fn beams_ordered_left_to_right() {
        // Wall only on the robot's left.
        let map = WorldMap {
            name: "left".into(),
            segments: vec![Segment::new(-10.0, 1.0, 10.0, 1.0)],
            spawn_poses: vec![RobotState::new(0.0, 0.0, 0.0)],
        };
        let cfg = SimConfig::default();
        let r = raycast(&map, &RobotState::new(0.0, 0.0, 0.0), &cfg);
        assert!((r[0] - 1.0 / 68f64.to_radians().sin()).abs() < 1e-12);
        assert_eq!(r[4], cfg.max_range);
        assert_eq!(r[2], cfg.max_range);
    }

    #[test]
    fn empty_direction_clips_to_max_range() {
        let map = square_room(20.0);
        let cfg = SimConfig::default();
        assert_eq!(
            raycast(&map, &RobotState::new(0.0, 0.0, 0.3), &cfg),
            [cfg.max_range; 5]
        );
    }

    #[test]
    fn rigid_rotation_leaves_readings_unchanged() {
        let map = square_room(2.0);
        let cfg = SimConfig::default();
        let pose = RobotState::new(0.4, -0.7, 0.9);
        let base = raycast(&map, &pose, &cfg);
        let ang: f64 = 1.234;
        let (c, s) = (ang.cos(), ang.sin());
        let rot = |x: f64, y: f64| (c * x - s * y, s * x + c * y);
        let segments = map
            .segments
            .iter()
            .map(|seg| {
                let (a0, a1) = rot(seg.a[0], seg.a[1]);
                let (b0, b1) = rot(seg.b[0], seg.b[1]);
                Segment::new(a0, a1, b0, b1)
            })
            .collect();
        let rotated = WorldMap {
            segments,
            ..map.clone()
        };
        let (px, py) = rot(pose.x, pose.y);
        let r = raycast(&rotated, &RobotState::new(px, py, pose.theta + ang), &cfg);
        for (a, b) in base.iter().zip(&r) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn straight_step_advances_fifteen_mm() {
        let map = square_room(2.0);
        let cfg = SimConfig::default();
        let out = step(&map, &RobotState::new(0.0, 0.0, 0.0), 0.0, &cfg);
        assert!((out.state.x - 0.015).abs() < 1e-15);
        assert_eq!(out.state.y, 0.0);
        assert_eq!(out.reward, 1.0);
        assert!(!out.done);
    }

    #[test]
    fn turning_integrates_heading() {
        let map = square_room(2.0);
        let cfg = SimConfig::default();
        let mut st = RobotState::new(0.0, 0.0, 0.0);
        for _ in 0..10 {
            st = step(&map, &st, 0.3, &cfg).state;
        }
        assert!((st.theta - 0.3).abs() < 1e-12);
        // Commands beyond the bound are clipped.
        let st2 = step(&map, &RobotState::new(0.0, 0.0, 0.0), 5.0, &cfg).state;
        assert!((st2.theta - 0.03).abs() < 1e-15);
    }

    #[test]
    fn driving_into_wall_crashes() {
        let map = square_room(2.0);
        let cfg = SimConfig::default();
        let out = step(&map, &RobotState::new(1.84, 0.0, 0.0), 0.0, &cfg);
        assert!(out.done);
        assert_eq!(out.reward, -200.0);
    }

    #[test]
    fn angle_normalization_range() {
        assert_eq!(normalize_angle(PI), PI);
        assert!((normalize_angle(-PI) - PI).abs() < 1e-15);
        assert!((normalize_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn reset_is_seeded_and_consistent() {
        let map = builtin_maps().remove(0);
        let cfg = SimConfig::default();
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        let (a, obs) = reset(&map, &mut r1, &cfg);
        let (b, _) = reset(&map, &mut r2, &cfg);
        assert_eq!(a, b);
        assert_eq!(obs, raycast(&map, &a, &cfg));
        assert!(!collides(&map, &a, &cfg));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let bad = "segment 0 0 1 1\nspawn 0 0\n";
        match WorldMap::parse(bad) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(WorldMap::parse("# only a comment\n").is_err());
        assert!(WorldMap::parse("wall 0 0 1 1\n").is_err());
    }

    #[test]
    fn parse_accepts_comments() {
        let text = "# room\nname box\nsegment 0 0 1 0 # floor\nspawn 0.5 0.5 0\n";
        let m = WorldMap::parse(text).unwrap();
        assert_eq!(m.name, "box");
        assert_eq!(m.segments.len(), 1);
        assert_eq!(m.spawn_poses.len(), 1);
    }
}
