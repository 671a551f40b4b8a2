//! Shared fixtures and independent oracles for the integration suites.

#![allow(dead_code)]

use nalgebra::{Cholesky, DMatrix, DVector};
use uavtraj::polysnap::PiecewiseTrajectory;

/// Evaluate the `order`-th real-time derivative of one segment polynomial
/// (normalized-time coefficients) without going through the library's
/// evaluation path.
pub fn eval_segment_derivative(coeffs: &[f64], tau: f64, duration: f64, order: usize) -> f64 {
    let mut acc = 0.0;
    for (i, &c) in coeffs.iter().enumerate().skip(order) {
        let mut fall = 1.0;
        for j in 0..order {
            fall *= (i - j) as f64;
        }
        acc += c * fall * tau.powi((i - order) as i32);
    }
    acc / duration.powi(order as i32)
}

/// Composite-Simpson quadrature of the weighted squared smoothness
/// derivatives over the whole trajectory, fully independent of the
/// Gram-matrix cost path.
pub fn quadrature_cost(traj: &PiecewiseTrajectory, c_r: f64, c_yaw: f64) -> f64 {
    let steps = 2000;
    let mut total = 0.0;
    for seg in 0..traj.timeline().segments() {
        let duration = traj.timeline().duration(seg);
        for channel in 0..4 {
            let (weight, order) = if channel == 3 { (c_yaw, 2) } else { (c_r, 4) };
            let coeffs = traj.segment_coefficients(seg, channel);
            let f = |tau: f64| eval_segment_derivative(coeffs, tau, duration, order).powi(2);
            let h = 1.0 / steps as f64;
            let mut integral = f(0.0) + f(1.0);
            for s in 1..steps {
                integral += if s % 2 == 1 { 4.0 } else { 2.0 } * f(s as f64 * h);
            }
            total += weight * duration * integral * h / 3.0;
        }
    }
    total
}

/// Orthogonal projector onto the null space of `a` (rows assumed
/// independent): P = I − Aᵀ (A Aᵀ)⁻¹ A.
pub struct NullSpaceProjector {
    a: DMatrix<f64>,
    gram: Cholesky<f64, nalgebra::Dyn>,
}

impl NullSpaceProjector {
    pub fn new(a: &DMatrix<f64>) -> Self {
        let gram = Cholesky::new(a * a.transpose()).expect("constraint rows are independent");
        Self { a: a.clone(), gram }
    }

    pub fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        v - self.a.transpose() * self.gram.solve(&(&self.a * v))
    }

    /// Minimum-norm solution of A c = b.
    pub fn min_norm_solution(&self, b: &DVector<f64>) -> DVector<f64> {
        self.a.transpose() * self.gram.solve(b)
    }
}

/// Projected conjugate gradient on the constraint manifold {c : A c = b}:
/// a generic iterative equality-constrained minimizer of cᵀ Q c that shares
/// no code with the KKT solve.
pub fn projected_cg_minimize(q: &DMatrix<f64>, a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let projector = NullSpaceProjector::new(a);
    let mut c = projector.min_norm_solution(b);
    let mut residual = projector.project(&(-2.0 * q * &c));
    let mut direction = residual.clone();
    let mut rr = residual.dot(&residual);
    let dim = q.nrows() - a.nrows();
    for _ in 0..(4 * dim.max(8)) {
        if rr < 1e-24 {
            break;
        }
        let qd = 2.0 * q * &direction;
        let curvature = direction.dot(&qd);
        if curvature <= 0.0 {
            break;
        }
        let alpha = rr / curvature;
        c += alpha * &direction;
        residual = projector.project(&(-2.0 * q * &c));
        let rr_new = residual.dot(&residual);
        direction = &residual + (rr_new / rr) * direction;
        rr = rr_new;
    }
    c
}

/// Textbook CV Kalman recursion as two decoupled per-axis scalar filters;
/// an independent implementation of the production recursion.
pub fn reference_kalman_mean(
    observations: &[[f64; 2]],
    process_intensity: f64,
    measurement_variance: f64,
    initial_velocity_variance: f64,
) -> [f64; 4] {
    let q = process_intensity;
    let r = measurement_variance;
    let mut state = [[0.0f64; 2]; 2];
    let mut covs = [[[0.0f64; 2]; 2]; 2];
    for axis in 0..2 {
        state[axis] = [observations[0][axis], 0.0];
        covs[axis] = [[r, 0.0], [0.0, initial_velocity_variance]];
    }
    for obs in &observations[1..] {
        for axis in 0..2 {
            let [x, v] = state[axis];
            let p = covs[axis];
            let xp = x + v;
            let p00 = p[0][0] + p[0][1] + p[1][0] + p[1][1] + 0.25 * q;
            let p01 = p[0][1] + p[1][1] + 0.5 * q;
            let p10 = p[1][0] + p[1][1] + 0.5 * q;
            let p11 = p[1][1] + q;
            let s = p00 + r;
            let k0 = p00 / s;
            let k1 = p10 / s;
            let innovation = obs[axis] - xp;
            state[axis] = [xp + k0 * innovation, v + k1 * innovation];
            covs[axis] = [
                [(1.0 - k0) * p00, (1.0 - k0) * p01],
                [p10 - k1 * p00, p11 - k1 * p01],
            ];
        }
    }
    [state[0][0], state[1][0], state[0][1], state[1][1]]
}
