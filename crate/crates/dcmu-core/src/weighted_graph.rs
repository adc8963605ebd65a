//! Uncertainty-inflated weighted graph: conservative measures, the range,
//! line-of-sight and collision factors, analytic edge-weight gradients,
//! Laplacian, a Jacobi eigen oracle, and the true binary graph.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::geometry::{
    nearest_collision_point, nearest_obstacle_to_segment, project_point_to_segment, unit_or_zero,
    CollisionKind, CollisionTarget, Obstacle, Vec2, COINCIDENT_TOL,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphParams {
    pub rho: f64,
    pub rho0: f64,
    pub d_beta_min: f64,
    pub d_beta_max: f64,
    pub d_gamma_min: f64,
    pub d_gamma_max: f64,
    /// Confidence scale on the standard deviation.
    pub s: f64,
    pub epsilon: f64,
    /// Body radius used only by the true-connectivity collision test.
    pub collision_radius: f64,
}

impl Default for GraphParams {
    fn default() -> Self {
        GraphParams {
            rho: 20.0,
            rho0: 18.0,
            d_beta_min: 1.0,
            d_beta_max: 3.0,
            d_gamma_min: 1.0,
            d_gamma_max: 3.0,
            s: 3.494,
            epsilon: 0.01,
            collision_radius: 0.5,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("rho0 must be > 0")]
    Rho0NotPositive,
    #[error("rho0 must be < rho")]
    Rho0NotBelowRho,
    #[error("d_beta_min must be > 0")]
    DBetaMinNotPositive,
    #[error("d_beta_min must be < d_beta_max")]
    DBetaOrder,
    #[error("d_gamma_min must be > 0")]
    DGammaMinNotPositive,
    #[error("d_gamma_min must be < d_gamma_max")]
    DGammaOrder,
    #[error("s must be >= 0")]
    NegativeS,
    #[error("epsilon must be > 0")]
    EpsilonNotPositive,
    #[error("collision_radius must be >= 0")]
    NegativeCollisionRadius,
    #[error("adjacency matrix is not symmetric with zero diagonal")]
    InvalidAdjacency,
}

impl GraphError {
    /// Name of the parameter the error is about, if any.
    pub fn key(&self) -> Option<&'static str> {
        use GraphError::*;
        Some(match self {
            Rho0NotPositive | Rho0NotBelowRho => "rho0",
            DBetaMinNotPositive | DBetaOrder => "d_beta_min",
            DGammaMinNotPositive | DGammaOrder => "d_gamma_min",
            NegativeS => "s",
            EpsilonNotPositive => "epsilon",
            NegativeCollisionRadius => "collision_radius",
            InvalidAdjacency => return None,
        })
    }
}

impl GraphParams {
    pub fn validate(&self) -> Result<(), GraphError> {
        // negated comparisons so NaN fails too
        if !(self.rho0 > 0.0) {
            return Err(GraphError::Rho0NotPositive);
        }
        if !(self.rho0 < self.rho) {
            return Err(GraphError::Rho0NotBelowRho);
        }
        if !(self.d_beta_min > 0.0) {
            return Err(GraphError::DBetaMinNotPositive);
        }
        if !(self.d_beta_min < self.d_beta_max) {
            return Err(GraphError::DBetaOrder);
        }
        if !(self.d_gamma_min > 0.0) {
            return Err(GraphError::DGammaMinNotPositive);
        }
        if !(self.d_gamma_min < self.d_gamma_max) {
            return Err(GraphError::DGammaOrder);
        }
        if !(self.s >= 0.0) {
            return Err(GraphError::NegativeS);
        }
        if !(self.epsilon > 0.0) {
            return Err(GraphError::EpsilonNotPositive);
        }
        if !(self.collision_radius >= 0.0) {
            return Err(GraphError::NegativeCollisionRadius);
        }
        Ok(())
    }
}

pub fn conservative_range(xi: &Vec2, xj: &Vec2, eig_i: f64, eig_j: f64, s: f64) -> f64 {
    (xi - xj).norm() + s * eig_i.sqrt() + s * eig_j.sqrt()
}

/// 1 up to `rho0`, cosine taper to 0 at `rho`.
pub fn comm_range_factor(l: f64, rho0: f64, rho: f64) -> f64 {
    if l <= rho0 {
        1.0
    } else if l <= rho {
        0.5 + 0.5 * (PI * (l - rho0) / (rho - rho0)).cos()
    } else {
        0.0
    }
}

/// d(alpha)/d(l); zero on the flat branches.
pub fn comm_range_factor_slope(l: f64, rho0: f64, rho: f64) -> f64 {
    if l > rho0 && l <= rho {
        -PI / (2.0 * (rho - rho0)) * (PI * (l - rho0) / (rho - rho0)).sin()
    } else {
        0.0
    }
}

/// 0 up to `d_min`, cosine taper to 1 at `d_max`. Shared by the line-of-sight
/// and collision factors.
pub fn clearance_factor(l: f64, d_min: f64, d_max: f64) -> f64 {
    if l > d_max {
        1.0
    } else if l > d_min {
        0.5 + 0.5 * (PI * (d_max - l) / (d_max - d_min)).cos()
    } else {
        0.0
    }
}

pub fn clearance_factor_slope(l: f64, d_min: f64, d_max: f64) -> f64 {
    if l > d_min && l <= d_max {
        PI / (2.0 * (d_max - d_min)) * (PI * (d_max - l) / (d_max - d_min)).sin()
    } else {
        0.0
    }
}

pub fn los_factor(l: f64, d_beta_min: f64, d_beta_max: f64) -> f64 {
    clearance_factor(l, d_beta_min, d_beta_max)
}

pub fn collision_factor(l: f64, d_gamma_min: f64, d_gamma_max: f64) -> f64 {
    clearance_factor(l, d_gamma_min, d_gamma_max)
}

/// Line-of-sight clearance between robots i and j.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LosClearance {
    /// `+inf` in an obstacle-free world.
    pub clearance: f64,
    pub zeta: f64,
    pub x_beta: Option<Vec2>,
    pub x_l: Vec2,
    pub obstacle: Option<usize>,
}

/// Signed boundary distance from the closest point of segment `[x_i, x_j]` to
/// the nearest obstacle, minus `s * sqrt(max(eig_i, eig_j))`.
pub fn los_clearance(
    xi: &Vec2,
    xj: &Vec2,
    obstacles: &[Obstacle],
    eig_i: f64,
    eig_j: f64,
    s: f64,
) -> LosClearance {
    match nearest_obstacle_to_segment(xi, xj, obstacles) {
        None => LosClearance {
            clearance: f64::INFINITY,
            zeta: 1.0,
            x_beta: None,
            x_l: *xi,
            obstacle: None,
        },
        Some(n) => LosClearance {
            clearance: n.clearance - s * eig_i.max(eig_j).sqrt(),
            zeta: n.projection.zeta,
            x_beta: Some(n.x_beta),
            x_l: n.projection.closest_point,
            obstacle: Some(n.index),
        },
    }
}

/// Collision clearance of one robot against its nearest collision target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionClearance {
    /// `+inf` when there is nothing to collide with.
    pub clearance: f64,
    pub target: Option<CollisionTarget>,
}

pub fn collision_clearance(
    i: usize,
    nominals: &[Vec2],
    eigs: &[f64],
    s: f64,
    obstacles: &[Obstacle],
) -> CollisionClearance {
    let buffers: Vec<f64> = eigs.iter().map(|e| s * e.sqrt()).collect();
    collision_clearance_with_buffers(i, nominals, &buffers, obstacles)
}

fn collision_clearance_with_buffers(
    i: usize,
    nominals: &[Vec2],
    buffers: &[f64],
    obstacles: &[Obstacle],
) -> CollisionClearance {
    match nearest_collision_point(i, nominals, buffers, obstacles) {
        Ok(t) => CollisionClearance {
            clearance: (nominals[i] - t.x_gamma).norm() - buffers[i] - t.buffer,
            target: Some(t),
        },
        Err(_) => CollisionClearance {
            clearance: f64::INFINITY,
            target: None,
        },
    }
}

/// Everything an edge weight depends on.
#[derive(Debug, Clone, Copy)]
pub struct WorldView<'a> {
    pub nominals: &'a [Vec2],
    /// Largest eigenvalue of each robot's dispersion covariance.
    pub eigs: &'a [f64],
    pub obstacles: &'a [Obstacle],
    pub params: &'a GraphParams,
}

impl WorldView<'_> {
    pub fn n(&self) -> usize {
        self.nominals.len()
    }

    pub fn collision_clearances(&self) -> Vec<CollisionClearance> {
        let buffers: Vec<f64> = self.eigs.iter().map(|e| self.params.s * e.sqrt()).collect();
        (0..self.n())
            .map(|i| collision_clearance_with_buffers(i, self.nominals, &buffers, self.obstacles))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedEdge {
    pub alpha: f64,
    pub beta: f64,
    pub gamma_i: f64,
    pub gamma_j: f64,
    pub a: f64,
    /// d(a_ij)/d(x_nom_i).
    pub grad_a_wrt_i: Vec2,
}

pub fn edge_weight(i: usize, j: usize, world: &WorldView) -> WeightedEdge {
    let cc = world.collision_clearances();
    edge_weight_with(i, j, world, &cc)
}

pub fn edge_weight_gradient(i: usize, j: usize, world: &WorldView) -> Vec2 {
    edge_weight(i, j, world).grad_a_wrt_i
}

/// Edge weight using precomputed collision clearances for all robots.
pub fn edge_weight_with(
    i: usize,
    j: usize,
    world: &WorldView,
    cc: &[CollisionClearance],
) -> WeightedEdge {
    assert_ne!(i, j, "edge weight needs two distinct robots");
    let p = world.params;
    let (xi, xj) = (world.nominals[i], world.nominals[j]);
    let (ei, ej) = (world.eigs[i], world.eigs[j]);

    let l_range = conservative_range(&xi, &xj, ei, ej, p.s);
    let alpha = comm_range_factor(l_range, p.rho0, p.rho);
    let d_alpha = comm_range_factor_slope(l_range, p.rho0, p.rho) * unit_or_zero(&(xi - xj));

    let los = los_clearance(&xi, &xj, world.obstacles, ei, ej, p.s);
    let beta = los_factor(los.clearance, p.d_beta_min, p.d_beta_max);
    let d_beta = match los.obstacle {
        Some(k) => {
            let slope = clearance_factor_slope(los.clearance, p.d_beta_min, p.d_beta_max);
            slope * los.zeta * unit_or_zero(&(los.x_l - world.obstacles[k].center))
        }
        None => Vec2::zeros(),
    };

    let (ci, cj) = (&cc[i], &cc[j]);
    let gamma_i = collision_factor(ci.clearance, p.d_gamma_min, p.d_gamma_max);
    let gamma_j = collision_factor(cj.clearance, p.d_gamma_min, p.d_gamma_max);
    let d_gamma_i = match ci.target {
        Some(t) => {
            clearance_factor_slope(ci.clearance, p.d_gamma_min, p.d_gamma_max)
                * unit_or_zero(&(xi - t.x_gamma))
        }
        None => Vec2::zeros(),
    };
    // gamma_j moves with x_i only when robot i is j's nearest collision point
    let d_gamma_j = match cj.target {
        Some(t) if t.kind == CollisionKind::Robot(i) => {
            clearance_factor_slope(cj.clearance, p.d_gamma_min, p.d_gamma_max)
                * unit_or_zero(&(xi - xj))
        }
        _ => Vec2::zeros(),
    };

    let grad = d_alpha * (beta * gamma_i * gamma_j)
        + d_beta * (alpha * gamma_i * gamma_j)
        + d_gamma_i * (alpha * beta * gamma_j)
        + d_gamma_j * (alpha * beta * gamma_i);
    WeightedEdge {
        alpha,
        beta,
        gamma_i,
        gamma_j,
        a: alpha * beta * gamma_i * gamma_j,
        grad_a_wrt_i: grad,
    }
}

/// All pairwise weights and gradients for the current nominal configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSet {
    pub adjacency: DMatrix<f64>,
    /// `gradients[i][j]` is d(a_ij)/d(x_nom_i).
    pub gradients: Vec<Vec<Vec2>>,
}

pub fn weighted_edges(world: &WorldView) -> EdgeSet {
    let n = world.n();
    let cc = world.collision_clearances();
    let mut adjacency = DMatrix::zeros(n, n);
    let mut gradients = vec![vec![Vec2::zeros(); n]; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let e = edge_weight_with(i, j, world, &cc);
            // a_ij is symmetric by construction; keep the (min, max) evaluation bit-exact on both sides
            if i < j {
                adjacency[(i, j)] = e.a;
                adjacency[(j, i)] = e.a;
            }
            gradients[i][j] = e.grad_a_wrt_i;
        }
    }
    EdgeSet {
        adjacency,
        gradients,
    }
}

pub fn laplacian(a: &DMatrix<f64>) -> Result<DMatrix<f64>, GraphError> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(GraphError::InvalidAdjacency);
    }
    for i in 0..n {
        if a[(i, i)] != 0.0 {
            return Err(GraphError::InvalidAdjacency);
        }
        for j in 0..i {
            if a[(i, j)] != a[(j, i)] {
                return Err(GraphError::InvalidAdjacency);
            }
        }
    }
    let mut l = -a.clone();
    for i in 0..n {
        l[(i, i)] = a.row(i).iter().sum();
    }
    Ok(l)
}

pub const JACOBI_TOL: f64 = 1e-12;
pub const JACOBI_MAX_SWEEPS: usize = 100;
/// Relative gap below which lambda2 and lambda3 are treated as repeated.
pub const MULTIPLICITY_TOL: f64 = 1e-6;

/// Symmetric eigendecomposition, eigenvalues ascending, eigenvectors as columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DMatrix<f64>,
}

/// Cyclic Jacobi with row-major pivot order. Deterministic for a given input.
pub fn jacobi_eigen(m: &DMatrix<f64>) -> Spectrum {
    let n = m.nrows();
    let mut a = m.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|p| (0..n).filter(move |&q| q != p).map(move |q| (p, q)))
            .map(|(p, q)| a[(p, q)] * a[(p, q)])
            .sum::<f64>()
            .sqrt();
        if off < JACOBI_TOL {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    // stable sort keeps ties in pivot order
    order.sort_by(|&x, &y| a[(x, x)].total_cmp(&a[(y, y)]));
    let eigenvalues = order.iter().map(|&k| a[(k, k)]).collect();
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (col, &k) in order.iter().enumerate() {
        let mut vec = v.column(k).into_owned();
        if let Some(first) = vec.iter().find(|x| x.abs() > JACOBI_TOL) {
            if *first < 0.0 {
                vec = -vec;
            }
        }
        eigenvectors.set_column(col, &vec);
    }
    Spectrum {
        eigenvalues,
        eigenvectors,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fiedler {
    pub lambda2: f64,
    /// Unit eigenvector of `lambda2`; zeros for fewer than two nodes.
    pub vector: Vec<f64>,
    /// `lambda2` and `lambda3` coincide, so the vector is one of many.
    pub degenerate: bool,
}

pub fn fiedler_oracle(l: &DMatrix<f64>) -> Fiedler {
    let n = l.nrows();
    if n < 2 {
        return Fiedler {
            lambda2: 0.0,
            vector: vec![0.0; n],
            degenerate: false,
        };
    }
    let spectrum = jacobi_eigen(l);
    let lambda2 = spectrum.eigenvalues[1];
    let degenerate = n > 2
        && (spectrum.eigenvalues[2] - lambda2).abs() <= MULTIPLICITY_TOL * lambda2.abs().max(1.0);
    Fiedler {
        lambda2,
        vector: spectrum.eigenvectors.column(1).iter().copied().collect(),
        degenerate,
    }
}

/// Snapshot of a weighted graph with its Fiedler data.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSnapshot {
    pub adjacency: DMatrix<f64>,
    pub laplacian: DMatrix<f64>,
    pub fiedler: Fiedler,
}

impl GraphSnapshot {
    pub fn new(adjacency: DMatrix<f64>) -> Result<Self, GraphError> {
        let laplacian = laplacian(&adjacency)?;
        let fiedler = fiedler_oracle(&laplacian);
        Ok(GraphSnapshot {
            adjacency,
            laplacian,
            fiedler,
        })
    }

    pub fn n(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn lambda2(&self) -> f64 {
        self.fiedler.lambda2
    }
}

/// Whether segment `[a, b]` touches any obstacle disk.
pub fn segment_blocked(a: &Vec2, b: &Vec2, obstacles: &[Obstacle]) -> bool {
    obstacles
        .iter()
        .any(|o| project_point_to_segment(&o.center, a, b).distance <= o.radius)
}

/// Per-robot collision flags under the true-graph body model.
pub fn collision_flags(positions: &[Vec2], obstacles: &[Obstacle], collision_radius: f64) -> Vec<bool> {
    let n = positions.len();
    (0..n)
        .map(|i| {
            obstacles
                .iter()
                .any(|o| o.boundary_distance(&positions[i]) < collision_radius)
                || (0..n).any(|j| {
                    j != i && (positions[i] - positions[j]).norm() < 2.0 * collision_radius
                })
        })
        .collect()
}

/// Ground-truth {0,1} adjacency on true positions and its algebraic connectivity.
pub fn true_binary_connectivity(
    positions: &[Vec2],
    obstacles: &[Obstacle],
    params: &GraphParams,
) -> (DMatrix<f64>, f64) {
    let n = positions.len();
    let colliding = collision_flags(positions, obstacles, params.collision_radius);
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let (xi, xj) = (positions[i], positions[j]);
            let linked = (xi - xj).norm() <= params.rho
                && !segment_blocked(&xi, &xj, obstacles)
                && !colliding[i]
                && !colliding[j];
            if linked {
                a[(i, j)] = 1.0;
                a[(j, i)] = 1.0;
            }
        }
    }
    let l = laplacian(&a).expect("binary adjacency is symmetric");
    let lambda2 = fiedler_oracle(&l).lambda2;
    (a, lambda2)
}

/// True when the coincident-nominal guard zeroes the range direction.
pub fn nominals_coincide(xi: &Vec2, xj: &Vec2) -> bool {
    (xi - xj).norm() < COINCIDENT_TOL
}
