//! Planar primitives: point-segment projection, obstacle clearance and the
//! nearest-collision-point search.

use thiserror::Error;

pub type Vec2 = nalgebra::Vector2<f64>;

/// Below this length a direction vector is treated as undefined.
pub const COINCIDENT_TOL: f64 = 1e-9;

/// Circular obstacle. `radius` is the buffer subtracted from center distances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obstacle {
    pub center: Vec2,
    pub radius: f64,
}

impl Obstacle {
    pub fn new(cx: f64, cy: f64, radius: f64) -> Self {
        Obstacle {
            center: Vec2::new(cx, cy),
            radius,
        }
    }

    /// Signed distance from `p` to the obstacle boundary (negative inside).
    pub fn boundary_distance(&self, p: &Vec2) -> f64 {
        (p - self.center).norm() - self.radius
    }
}

/// Closest point on a segment `[a, b]`, written as `zeta * a + (1 - zeta) * b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentProjection {
    pub closest_point: Vec2,
    pub zeta: f64,
    pub distance: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("robot {0} has no other robot or obstacle to collide with")]
    NoCollisionCandidates(usize),
}

/// Unit vector along `v`, or zero when `v` is shorter than [`COINCIDENT_TOL`].
pub fn unit_or_zero(v: &Vec2) -> Vec2 {
    let n = v.norm();
    if n < COINCIDENT_TOL {
        Vec2::zeros()
    } else {
        v / n
    }
}

pub fn project_point_to_segment(p: &Vec2, a: &Vec2, b: &Vec2) -> SegmentProjection {
    let ab = b - a;
    let len2 = ab.norm_squared();
    // zeta = 1 at a, 0 at b; a degenerate segment collapses onto a
    let zeta = if len2 == 0.0 {
        1.0
    } else {
        let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
        1.0 - t
    };
    let closest_point = zeta * a + (1.0 - zeta) * b;
    SegmentProjection {
        closest_point,
        zeta,
        distance: (p - closest_point).norm(),
    }
}

/// The obstacle whose boundary comes closest to a segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NearestObstacle {
    pub index: usize,
    /// Boundary point of the obstacle nearest to the segment.
    pub x_beta: Vec2,
    /// Projection of the obstacle center onto the segment.
    pub projection: SegmentProjection,
    /// Boundary-to-segment distance; negative when the segment penetrates.
    pub clearance: f64,
}

/// Returns `None` only for an empty obstacle list. Ties go to the lowest index.
pub fn nearest_obstacle_to_segment(
    a: &Vec2,
    b: &Vec2,
    obstacles: &[Obstacle],
) -> Option<NearestObstacle> {
    let mut best: Option<NearestObstacle> = None;
    for (index, obs) in obstacles.iter().enumerate() {
        let projection = project_point_to_segment(&obs.center, a, b);
        let clearance = projection.distance - obs.radius;
        if best.is_none_or(|cur| clearance < cur.clearance) {
            let dir = unit_or_zero(&(projection.closest_point - obs.center));
            best = Some(NearestObstacle {
                index,
                x_beta: obs.center + obs.radius * dir,
                projection,
                clearance,
            });
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CollisionKind {
    Robot(usize),
    Obstacle(usize),
}

/// Nearest possible collision point for one robot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionTarget {
    pub x_gamma: Vec2,
    /// Buffer around the target: the other robot's inflation or the obstacle radius.
    pub buffer: f64,
    pub kind: CollisionKind,
}

/// Minimizes `|x_i - x_gamma| - buffer` over the other robots (buffer taken
/// from `robot_buffers`) and then over obstacles. Strict comparison keeps the
/// lowest index, and robots win ties against obstacles.
pub fn nearest_collision_point(
    i: usize,
    nominals: &[Vec2],
    robot_buffers: &[f64],
    obstacles: &[Obstacle],
) -> Result<CollisionTarget, GeometryError> {
    let xi = nominals[i];
    let mut best: Option<(f64, CollisionTarget)> = None;
    let mut consider = |score: f64, target: CollisionTarget| {
        if best.is_none_or(|(s, _)| score < s) {
            best = Some((score, target));
        }
    };
    for (j, xj) in nominals.iter().enumerate() {
        if j == i {
            continue;
        }
        let buffer = robot_buffers[j];
        consider(
            (xi - xj).norm() - buffer,
            CollisionTarget {
                x_gamma: *xj,
                buffer,
                kind: CollisionKind::Robot(j),
            },
        );
    }
    for (k, obs) in obstacles.iter().enumerate() {
        consider(
            (xi - obs.center).norm() - obs.radius,
            CollisionTarget {
                x_gamma: obs.center,
                buffer: obs.radius,
                kind: CollisionKind::Obstacle(k),
            },
        );
    }
    best.map(|(_, t)| t)
        .ok_or(GeometryError::NoCollisionCandidates(i))
}
