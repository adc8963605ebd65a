//! Follower nominal control: gradient descent on V(lambda2) = coth(lambda2 - eps).

use crate::geometry::Vec2;
use crate::robot_model::clamp_components;

/// Cap on |dV/dlambda2|.
pub const VALUE_GRAD_MAX: f64 = 1e6;
/// Width above epsilon where the gradient cap applies.
pub const VALUE_GRAD_CLAMP_BAND: f64 = 1e-3;

pub fn value_function(lambda2: f64, epsilon: f64) -> f64 {
    if lambda2 > epsilon {
        let x = lambda2 - epsilon;
        // coth via exp(-2x), finite for every x > 0 that is not subnormal
        let e = (-2.0 * x).exp();
        (1.0 + e) / (1.0 - e)
    } else {
        0.0
    }
}

/// dV/dlambda2 = -1/sinh^2(lambda2 - eps), capped at `-VALUE_GRAD_MAX` near eps.
pub fn value_gradient(lambda2: f64, epsilon: f64) -> f64 {
    if lambda2 <= epsilon {
        0.0
    } else if lambda2 < epsilon + VALUE_GRAD_CLAMP_BAND {
        -VALUE_GRAD_MAX
    } else {
        let s = (lambda2 - epsilon).sinh();
        (-1.0 / (s * s)).max(-VALUE_GRAD_MAX)
    }
}

/// What robot i reads about one neighbor j (a_ij > 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborTerm {
    pub id: usize,
    pub a: f64,
    /// d(a_ij)/d(x_nom_i).
    pub grad_a: Vec2,
    pub e2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlReport {
    /// Clamped nominal velocity.
    pub u_nom: Vec2,
    /// Unclamped step, `u_nom * dt` before clamping.
    pub delta_x_nom: Vec2,
    pub value_grad: f64,
    /// `(j, grad_a_ij * (e2_i - e2_j)^2)` per neighbor.
    pub contributions: Vec<(usize, Vec2)>,
}

/// u = (1/dt) (-dV/dlambda2) sum_j grad_a_ij (e2_i - e2_j)^2, clamped per
/// component to `v_max`. Zero when the estimate is at or below epsilon.
pub fn nominal_control(
    own_e2: f64,
    lambda2_est: f64,
    neighbors: &[NeighborTerm],
    epsilon: f64,
    dt: f64,
    v_max: f64,
) -> ControlReport {
    let value_grad = value_gradient(lambda2_est, epsilon);
    let contributions: Vec<(usize, Vec2)> = neighbors
        .iter()
        .filter(|n| n.a > 0.0)
        .map(|n| {
            let d = own_e2 - n.e2;
            (n.id, n.grad_a * (d * d))
        })
        .collect();
    if lambda2_est <= epsilon {
        return ControlReport {
            u_nom: Vec2::zeros(),
            delta_x_nom: Vec2::zeros(),
            value_grad,
            contributions,
        };
    }
    let sum = contributions.iter().fold(Vec2::zeros(), |acc, (_, c)| acc + c);
    let delta_x_nom = -value_grad * sum;
    ControlReport {
        u_nom: clamp_components(&(delta_x_nom / dt), v_max),
        delta_x_nom,
        value_grad,
        contributions,
    }
}
