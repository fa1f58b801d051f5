//! Hand-authored worlds: Round, Circuit 1, Circuit 2 and Maze.
//!
//! Geometry is polygonal and metric. Corridor loops are built by offsetting a
//! closed centerline to both sides with mitered corners.

use std::f64::consts::PI;

use super::{RobotState, Segment, WorldMap};

/// Closed polygon through `pts` as segments.
fn ring(pts: &[[f64; 2]]) -> Vec<Segment> {
    (0..pts.len())
        .map(|i| {
            let (a, b) = (pts[i], pts[(i + 1) % pts.len()]);
            Segment::new(a[0], a[1], b[0], b[1])
        })
        .collect()
}

pub fn circle(cx: f64, cy: f64, r: f64, n: usize) -> Vec<[f64; 2]> {
    (0..n)
        .map(|k| {
            let a = 2.0 * PI * k as f64 / n as f64;
            [cx + r * a.cos(), cy + r * a.sin()]
        })
        .collect()
}

/// Offsets a closed centerline by `d` to its left (negative `d` goes right).
fn offset_closed(center: &[[f64; 2]], d: f64) -> Vec<[f64; 2]> {
    let n = center.len();
    (0..n)
        .map(|i| {
            let prev = center[(i + n - 1) % n];
            let cur = center[i];
            let next = center[(i + 1) % n];
            let unit = |a: [f64; 2], b: [f64; 2]| {
                let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
                let l = (dx * dx + dy * dy).sqrt();
                [dx / l, dy / l]
            };
            let t1 = unit(prev, cur);
            let t2 = unit(cur, next);
            let n1 = [-t1[1], t1[0]];
            let n2 = [-t2[1], t2[0]];
            let m = [n1[0] + n2[0], n1[1] + n2[1]];
            let ml = (m[0] * m[0] + m[1] * m[1]).sqrt();
            let m = [m[0] / ml, m[1] / ml];
            let scale = d / (m[0] * n1[0] + m[1] * n1[1]);
            [cur[0] + m[0] * scale, cur[1] + m[1] * scale]
        })
        .collect()
}

/// Spawn poses at the midpoints of each centerline edge, facing along it.
fn edge_spawns(center: &[[f64; 2]]) -> Vec<RobotState> {
    let n = center.len();
    (0..n)
        .map(|i| {
            let (a, b) = (center[i], center[(i + 1) % n]);
            RobotState::new(
                0.5 * (a[0] + b[0]),
                0.5 * (a[1] + b[1]),
                (b[1] - a[1]).atan2(b[0] - a[0]),
            )
        })
        .collect()
}

/// Corridor of width `2·half_width` around a closed centerline, with one
/// spawn per centerline edge facing the traversal direction.
pub fn corridor_loop(name: &str, center: &[[f64; 2]], half_width: f64) -> WorldMap {
    let mut segments = ring(&offset_closed(center, half_width));
    segments.extend(ring(&offset_closed(center, -half_width)));
    WorldMap {
        name: name.into(),
        segments,
        spawn_poses: edge_spawns(center),
    }
}

/// Annular track between two concentric 48-gons, driven counter-clockwise.
pub fn round() -> WorldMap {
    let (inner, outer) = (1.25, 3.0);
    let mid = 0.5 * (inner + outer);
    let mut segments = ring(&circle(0.0, 0.0, outer, 48));
    segments.extend(ring(&circle(0.0, 0.0, inner, 48)));
    let spawn_poses = (0..8)
        .map(|k| {
            let a = 2.0 * PI * k as f64 / 8.0 + PI / 8.0;
            RobotState::new(mid * a.cos(), mid * a.sin(), a + PI / 2.0)
        })
        .collect();
    WorldMap {
        name: "Round".into(),
        segments,
        spawn_poses,
    }
}

/// Zig-zag loop with several tight turns close together.
pub fn circuit1() -> WorldMap {
    let center = [
        [0.0, 0.0],
        [10.0, 0.0],
        [10.0, 8.0],
        [8.0, 8.0],
        [8.0, 3.0],
        [6.0, 3.0],
        [6.0, 8.0],
        [4.0, 8.0],
        [4.0, 3.0],
        [2.0, 3.0],
        [2.0, 8.0],
        [0.0, 8.0],
    ];
    corridor_loop("Circuit1", &center, 0.7)
}

/// U-shaped loop whose hallways turn both left and right.
pub fn circuit2() -> WorldMap {
    let center = [
        [0.0, 0.0],
        [9.0, 0.0],
        [9.0, 7.0],
        [6.0, 7.0],
        [6.0, 3.0],
        [3.0, 3.0],
        [3.0, 7.0],
        [0.0, 7.0],
    ];
    corridor_loop("Circuit2", &center, 0.7)
}

/// Square hall with a 3×3 grid of pillars: loops, junctions and turns both ways.
pub fn maze() -> WorldMap {
    let size = 10.0;
    let mut segments = ring(&[[0.0, 0.0], [size, 0.0], [size, size], [0.0, size]]);
    for cx in [2.0, 5.0, 8.0] {
        for cy in [2.0, 5.0, 8.0] {
            let h = 0.8;
            segments.extend(ring(&[
                [cx - h, cy - h],
                [cx + h, cy - h],
                [cx + h, cy + h],
                [cx - h, cy + h],
            ]));
        }
    }
    let spawn_poses = vec![
        RobotState::new(0.6, 5.0, PI / 2.0),
        RobotState::new(5.0, 0.6, 0.0),
        RobotState::new(9.4, 5.0, -PI / 2.0),
        RobotState::new(5.0, 9.4, PI),
        RobotState::new(3.5, 5.0, PI / 2.0),
        RobotState::new(6.5, 5.0, -PI / 2.0),
    ];
    WorldMap {
        name: "Maze".into(),
        segments,
        spawn_poses,
    }
}

/// Round, Maze, Circuit2, Circuit1.
pub fn builtin_maps() -> Vec<WorldMap> {
    vec![round(), maze(), circuit2(), circuit1()]
}

/// Case-insensitive lookup among [`builtin_maps`].
pub fn builtin(name: &str) -> Option<WorldMap> {
    builtin_maps()
        .into_iter()
        .find(|m| m.name.eq_ignore_ascii_case(name))
}
