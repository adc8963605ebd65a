//! Single-integrator robots with a Kalman filter, linear feedback around the
//! nominal trajectory, and the dispersion covariance `Sigma = P + Lambda`.

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::geometry::Vec2;

pub type Mat2 = nalgebra::Matrix2<f64>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseParams {
    /// Motion noise covariance, m^2.
    pub q: Mat2,
    /// Sensing noise covariance, m^2.
    pub r: Mat2,
}

impl NoiseParams {
    pub fn isotropic(q: f64, r: f64) -> Self {
        NoiseParams {
            q: Mat2::identity() * q,
            r: Mat2::identity() * r,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Leader,
    Follower,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("innovation covariance P_bar + R is singular")]
    SingularInnovation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotState {
    pub role: Role,
    pub x_true: Vec2,
    pub x_hat: Vec2,
    pub x_nom: Vec2,
    pub p: Mat2,
    pub lambda: Mat2,
    pub sigma: Mat2,
    pub sigma_eig_max: f64,
    pub k_fb: Mat2,
    pub u_nom: Vec2,
}

impl RobotState {
    /// Robot starting exactly on its nominal position with `Lambda = 0`.
    pub fn new(role: Role, position: Vec2, estimate: Vec2, p0: Mat2, k_fb: Mat2) -> Self {
        let lambda = Mat2::zeros();
        let sigma = p0 + lambda;
        RobotState {
            role,
            x_true: position,
            x_hat: estimate,
            x_nom: position,
            p: p0,
            lambda,
            sigma,
            sigma_eig_max: max_eigenvalue_sym2(&sigma),
            k_fb,
            u_nom: Vec2::zeros(),
        }
    }

    /// One control period after `u_nom` has been chosen: total control from
    /// the pre-advance nominal, nominal advance, noisy motion, measurement,
    /// filter and dispersion update. Returns the applied total control.
    pub fn advance<R: Rng + ?Sized>(
        &mut self,
        u_nom: Vec2,
        noise: &NoiseParams,
        dt: f64,
        v_max: f64,
        rng: &mut R,
    ) -> Result<Vec2, ModelError> {
        let u = total_control(&u_nom, &self.x_hat, &self.x_nom, &self.k_fb, v_max);
        self.u_nom = u_nom;
        self.x_nom = advance_nominal(&self.x_nom, &u_nom, dt);
        self.x_true = step_true_state(&self.x_true, &u, dt, &noise.q, rng);
        let z = sample_measurement(&self.x_true, &noise.r, rng);
        let (x_bar, p_bar) = kf_predict(&self.x_hat, &self.p, &u, dt, &noise.q);
        let (x_hat, p, g) = match kf_correct(&x_bar, &p_bar, &z, &noise.r) {
            Ok(c) => c,
            // an exact prior has nothing to learn from an exact measurement
            Err(_) if p_bar == Mat2::zeros() => (x_bar, p_bar, Mat2::zeros()),
            Err(e) => return Err(e),
        };
        let d = update_dispersion(&self.lambda, &p, &p_bar, &g, dt, &self.k_fb);
        self.x_hat = x_hat;
        self.p = p;
        self.lambda = d.lambda;
        self.sigma = d.sigma;
        self.sigma_eig_max = d.sigma_eig_max;
        Ok(u)
    }
}

pub fn kf_predict(x_hat: &Vec2, p: &Mat2, u: &Vec2, dt: f64, q: &Mat2) -> (Vec2, Mat2) {
    (x_hat + dt * u, p + q)
}

pub fn kf_correct(
    x_bar: &Vec2,
    p_bar: &Mat2,
    z: &Vec2,
    r: &Mat2,
) -> Result<(Vec2, Mat2, Mat2), ModelError> {
    let s = p_bar + r;
    let s_inv = s.try_inverse().ok_or(ModelError::SingularInnovation)?;
    if !s_inv.iter().all(|v| v.is_finite()) {
        return Err(ModelError::SingularInnovation);
    }
    let g = p_bar * s_inv;
    let x_hat = x_bar + g * (z - x_bar);
    let p = p_bar - g * p_bar;
    Ok((x_hat, symmetrize(&p), g))
}

/// `u_nom - K (x_hat - x_nom)`, each component clamped to `[-v_max, v_max]`.
pub fn total_control(u_nom: &Vec2, x_hat: &Vec2, x_nom: &Vec2, k_fb: &Mat2, v_max: f64) -> Vec2 {
    clamp_components(&(u_nom - k_fb * (x_hat - x_nom)), v_max)
}

pub fn clamp_components(u: &Vec2, v_max: f64) -> Vec2 {
    u.map(|c| c.clamp(-v_max, v_max))
}

pub fn step_true_state<R: Rng + ?Sized>(
    x_true: &Vec2,
    u: &Vec2,
    dt: f64,
    q: &Mat2,
    rng: &mut R,
) -> Vec2 {
    x_true + dt * u + sample_gaussian(q, rng)
}

pub fn sample_measurement<R: Rng + ?Sized>(x_true: &Vec2, r: &Mat2, rng: &mut R) -> Vec2 {
    x_true + sample_gaussian(r, rng)
}

/// Zero-mean sample with covariance `cov` (symmetric PSD, possibly singular).
/// Always draws two normals so streams stay aligned when `cov` is zero.
pub fn sample_gaussian<R: Rng + ?Sized>(cov: &Mat2, rng: &mut R) -> Vec2 {
    let n0: f64 = rng.sample(StandardNormal);
    let n1: f64 = rng.sample(StandardNormal);
    psd_factor(cov) * Vec2::new(n0, n1)
}

/// Lower-triangular `L` with `L L^T = cov` for a symmetric PSD 2x2 matrix.
pub fn psd_factor(cov: &Mat2) -> Mat2 {
    let l00 = cov[(0, 0)].max(0.0).sqrt();
    let off = 0.5 * (cov[(0, 1)] + cov[(1, 0)]);
    let l10 = if l00 > 0.0 { off / l00 } else { 0.0 };
    let l11 = (cov[(1, 1)] - l10 * l10).max(0.0).sqrt();
    Mat2::new(l00, 0.0, l10, l11)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dispersion {
    pub lambda: Mat2,
    pub sigma: Mat2,
    pub sigma_eig_max: f64,
}

/// `Lambda' = (I - B K) Lambda (I - B K)^T + G P_bar`, `Sigma' = P' + Lambda'`.
/// Nothing here depends on positions or controls.
pub fn update_dispersion(
    lambda: &Mat2,
    p_post: &Mat2,
    p_bar: &Mat2,
    g: &Mat2,
    dt: f64,
    k_fb: &Mat2,
) -> Dispersion {
    let a = Mat2::identity() - dt * k_fb;
    let lambda = symmetrize(&(a * lambda * a.transpose() + g * p_bar));
    let sigma = p_post + lambda;
    Dispersion {
        lambda,
        sigma,
        sigma_eig_max: max_eigenvalue_sym2(&sigma),
    }
}

pub fn advance_nominal(x_nom: &Vec2, u_nom: &Vec2, dt: f64) -> Vec2 {
    x_nom + dt * u_nom
}

/// Largest eigenvalue of a symmetric 2x2 matrix (trace/determinant form).
pub fn max_eigenvalue_sym2(m: &Mat2) -> f64 {
    let a = m[(0, 0)];
    let d = m[(1, 1)];
    let b = 0.5 * (m[(0, 1)] + m[(1, 0)]);
    let half_gap = 0.5 * (a - d);
    0.5 * (a + d) + (half_gap * half_gap + b * b).sqrt()
}

pub fn min_eigenvalue_sym2(m: &Mat2) -> f64 {
    let a = m[(0, 0)];
    let d = m[(1, 1)];
    let b = 0.5 * (m[(0, 1)] + m[(1, 0)]);
    let half_gap = 0.5 * (a - d);
    0.5 * (a + d) - (half_gap * half_gap + b * b).sqrt()
}

fn symmetrize(m: &Mat2) -> Mat2 {
    let off = 0.5 * (m[(0, 1)] + m[(1, 0)]);
    Mat2::new(m[(0, 0)], off, off, m[(1, 1)])
}
