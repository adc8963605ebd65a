//! Finite-difference check of the analytic edge-weight gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{project_point_to_segment, Obstacle, Vec2};
use crate::weighted_graph::{
    conservative_range, edge_weight, los_clearance, GraphParams, WorldView,
};

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
/// Distance kept from every branch edge, clamp transition and argmin tie.
pub const SMOOTH_MARGIN: f64 = 1e-3;
/// Gradient norm floor in the relative-error denominator.
pub const REL_FLOOR: f64 = 1e-6;
const MAX_DRAWS_PER_TRIAL: usize = 10_000;

/// A sampled world plus the edge (i, j) whose gradient is checked.
#[derive(Debug, Clone)]
pub struct Configuration {
    pub nominals: Vec<Vec2>,
    pub eigs: Vec<f64>,
    pub obstacles: Vec<Obstacle>,
    pub i: usize,
    pub j: usize,
}

impl Configuration {
    pub fn world<'a>(&'a self, params: &'a GraphParams) -> WorldView<'a> {
        WorldView {
            nominals: &self.nominals,
            eigs: &self.eigs,
            obstacles: &self.obstacles,
            params,
        }
    }
}

/// Central difference of a_ij with respect to robot i's nominal position.
pub fn finite_difference_gradient(cfg: &Configuration, params: &GraphParams, h: f64) -> Vec2 {
    let mut g = Vec2::zeros();
    for axis in 0..2 {
        let mut shifted = cfg.nominals.clone();
        shifted[cfg.i][axis] += h;
        let plus = eval(cfg, &shifted, params);
        shifted[cfg.i][axis] -= 2.0 * h;
        let minus = eval(cfg, &shifted, params);
        g[axis] = (plus - minus) / (2.0 * h);
    }
    g
}

fn eval(cfg: &Configuration, nominals: &[Vec2], params: &GraphParams) -> f64 {
    let w = WorldView {
        nominals,
        eigs: &cfg.eigs,
        obstacles: &cfg.obstacles,
        params,
    };
    edge_weight(cfg.i, cfg.j, &w).a
}

pub fn relative_error(analytic: &Vec2, numeric: &Vec2) -> f64 {
    (analytic - numeric).norm() / analytic.norm().max(numeric.norm()).max(REL_FLOOR)
}

fn off_edges(l: f64, edges: &[f64]) -> bool {
    !l.is_finite() || edges.iter().all(|e| (l - e).abs() > SMOOTH_MARGIN)
}

/// Second-smallest minus smallest of `scores`; `+inf` with fewer than two.
fn argmin_gap(scores: impl Iterator<Item = f64>) -> f64 {
    let mut best = f64::INFINITY;
    let mut second = f64::INFINITY;
    for s in scores {
        if s < best {
            second = best;
            best = s;
        } else if s < second {
            second = s;
        }
    }
    second - best
}

/// True when a_ij is smooth in a `SMOOTH_MARGIN` ball around robot i: every
/// factor argument is away from its branch edges, the segment projection is
/// away from its clamp transitions, and no nearest-obstacle or
/// nearest-collision choice is close to a tie.
pub fn is_smooth(cfg: &Configuration, params: &GraphParams) -> bool {
    let p = params;
    let (i, j) = (cfg.i, cfg.j);
    let (xi, xj) = (cfg.nominals[i], cfg.nominals[j]);
    if (xi - xj).norm() <= SMOOTH_MARGIN {
        return false;
    }
    let l = conservative_range(&xi, &xj, cfg.eigs[i], cfg.eigs[j], p.s);
    if !off_edges(l, &[p.rho0, p.rho]) {
        return false;
    }

    let los = los_clearance(&xi, &xj, &cfg.obstacles, cfg.eigs[i], cfg.eigs[j], p.s);
    if !off_edges(los.clearance, &[p.d_beta_min, p.d_beta_max]) {
        return false;
    }
    let seg_gap = argmin_gap(
        cfg.obstacles
            .iter()
            .map(|o| project_point_to_segment(&o.center, &xi, &xj).distance - o.radius),
    );
    if seg_gap <= SMOOTH_MARGIN {
        return false;
    }
    if let Some(k) = los.obstacle {
        let c = cfg.obstacles[k].center;
        let ab = xj - xi;
        let t = (c - xi).dot(&ab) / ab.norm_squared();
        if t.abs() <= SMOOTH_MARGIN || (t - 1.0).abs() <= SMOOTH_MARGIN {
            return false;
        }
        // the obstacle center must not sit on the segment, where the unit vector flips
        if project_point_to_segment(&c, &xi, &xj).distance <= SMOOTH_MARGIN {
            return false;
        }
    }

    let w = cfg.world(p);
    let cc = w.collision_clearances();
    let buffers: Vec<f64> = cfg.eigs.iter().map(|e| p.s * e.sqrt()).collect();
    for r in [i, j] {
        if !off_edges(cc[r].clearance, &[p.d_gamma_min, p.d_gamma_max]) {
            return false;
        }
        let xr = cfg.nominals[r];
        let robot_scores = (0..cfg.nominals.len())
            .filter(|&k| k != r)
            .map(|k| (xr - cfg.nominals[k]).norm() - buffers[k]);
        let obstacle_scores = cfg.obstacles.iter().map(|o| (xr - o.center).norm() - o.radius);
        if argmin_gap(robot_scores.chain(obstacle_scores)) <= SMOOTH_MARGIN {
            return false;
        }
        if let Some(t) = cc[r].target {
            if (xr - t.x_gamma).norm() <= SMOOTH_MARGIN {
                return false;
            }
        }
    }
    true
}

/// Draws 2..=5 robots and 0..=3 obstacles. Robot j lands 4-20 m from robot i
/// and everything else near the pair, so most draws sit on some taper.
pub fn sample_configuration(rng: &mut impl Rng) -> Configuration {
    let n = rng.random_range(2..=5);
    let i = rng.random_range(0..n);
    let j = (i + rng.random_range(1..n)) % n;
    let mut nominals = vec![Vec2::zeros(); n];
    let heading = rng.random_range(0.0..std::f64::consts::TAU);
    nominals[j] = rng.random_range(4.0..20.0) * Vec2::new(heading.cos(), heading.sin());
    let mid = nominals[j] / 2.0;
    let near = |rng: &mut _, spread: f64| {
        mid + Vec2::new(
            Rng::random_range(rng, -spread..spread),
            Rng::random_range(rng, -spread..spread),
        )
    };
    for k in (0..n).filter(|&k| k != i && k != j) {
        nominals[k] = near(rng, 15.0);
    }
    let eigs = (0..n).map(|_| rng.random_range(0.0..0.3)).collect();
    let m = rng.random_range(0..=3);
    let obstacles = (0..m)
        .map(|_| {
            // off to one side of the segment, 2.5-7 m clear of it
            let along = rng.random_range(0.0..1.0) * nominals[j];
            let side = Vec2::new(-heading.sin(), heading.cos());
            let r = rng.random_range(0.5..2.0);
            let off = (r + rng.random_range(2.5..7.0)) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let c = along + off * side;
            Obstacle::new(c[0], c[1], r)
        })
        .collect();
    Configuration {
        nominals,
        eigs,
        obstacles,
        i,
        j,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub trials: usize,
    /// Configurations drawn, including those rejected by the smoothness filter.
    pub draws: usize,
    pub max_rel_error: f64,
    /// Trials whose analytic gradient is nonzero.
    pub nonzero: usize,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < REL_TOL
    }
}

/// Checks `trials` smooth configurations drawn from `seed`.
pub fn run_gradcheck(trials: usize, seed: u64, params: &GraphParams) -> GradcheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradcheckReport {
        trials,
        draws: 0,
        max_rel_error: 0.0,
        nonzero: 0,
    };
    for _ in 0..trials {
        let cfg = (0..MAX_DRAWS_PER_TRIAL)
            .map(|_| {
                report.draws += 1;
                sample_configuration(&mut rng)
            })
            .find(|c| is_smooth(c, params))
            .expect("smoothness filter rejected every draw");
        let analytic = edge_weight(cfg.i, cfg.j, &cfg.world(params)).grad_a_wrt_i;
        let numeric = finite_difference_gradient(&cfg, params, FD_STEP);
        if analytic != Vec2::zeros() {
            report.nonzero += 1;
        }
        report.max_rel_error = report.max_rel_error.max(relative_error(&analytic, &numeric));
    }
    report
}
