//! Classic reference predictors: a constant-velocity Kalman filter with a
//! white-noise-acceleration process model, and linear extrapolation of the
//! observed window.
//!
//! All quantities are per frame: the state is (u, v, u̇, v̇) in pixels and
//! pixels/frame with a unit time step.

use nalgebra::{Matrix2, Matrix2x4, Matrix4, Vector2, Vector4};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("observations contain non-finite values")]
    NonFiniteInput,
    #[error("need at least {needed} observations, got {got}")]
    TooFewObservations { needed: usize, got: usize },
}

/// Filter parameters. `process_noise_intensity` is the white-noise
/// acceleration intensity σ²_CV entering the discretized process covariance
/// σ²·[[¼, ½], [½, 1]] per axis; `measurement_variance` is the pixel
/// observation variance R.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanParams {
    pub process_noise_intensity: f64,
    pub measurement_variance: f64,
    pub initial_velocity_variance: f64,
}

impl Default for KalmanParams {
    fn default() -> Self {
        Self {
            process_noise_intensity: 0.5,
            measurement_variance: 1.5 * 1.5,
            initial_velocity_variance: 100.0,
        }
    }
}

/// Posterior state of the constant-velocity filter.
#[derive(Debug, Clone, PartialEq)]
pub struct CvKalmanState {
    pub mean: Vector4<f64>,
    pub covariance: Matrix4<f64>,
    pub params: KalmanParams,
}

fn transition() -> Matrix4<f64> {
    Matrix4::new(
        1.0, 0.0, 1.0, 0.0, //
        0.0, 1.0, 0.0, 1.0, //
        0.0, 0.0, 1.0, 0.0, //
        0.0, 0.0, 0.0, 1.0,
    )
}

fn process_noise(intensity: f64) -> Matrix4<f64> {
    Matrix4::new(
        0.25, 0.0, 0.5, 0.0, //
        0.0, 0.25, 0.0, 0.5, //
        0.5, 0.0, 1.0, 0.0, //
        0.0, 0.5, 0.0, 1.0,
    ) * intensity
}

fn predict(state: &mut CvKalmanState) {
    let f = transition();
    state.mean = f * state.mean;
    state.covariance =
        f * state.covariance * f.transpose() + process_noise(state.params.process_noise_intensity);
}

fn update(state: &mut CvKalmanState, observation: Vector2<f64>) {
    let h = Matrix2x4::new(
        1.0, 0.0, 0.0, 0.0, //
        0.0, 1.0, 0.0, 0.0,
    );
    let r = Matrix2::identity() * state.params.measurement_variance;
    let innovation = observation - h * state.mean;
    let s = h * state.covariance * h.transpose() + r;
    let gain = state.covariance
        * h.transpose()
        * s.try_inverse().expect("innovation covariance is positive definite");
    state.mean += gain * innovation;
    // Joseph form keeps the covariance symmetric positive definite.
    let ikh = Matrix4::identity() - gain * h;
    let cov = ikh * state.covariance * ikh.transpose() + gain * r * gain.transpose();
    state.covariance = (cov + cov.transpose()) * 0.5;
}

/// Run the predict/update recursion over a pixel track. The first
/// observation initializes the state with zero velocity; every later one is
/// a predict followed by an update.
pub fn kalman_filter(
    observations: &[[f64; 2]],
    params: &KalmanParams,
) -> Result<CvKalmanState, BaselineError> {
    if observations.is_empty() {
        return Err(BaselineError::TooFewObservations { needed: 1, got: 0 });
    }
    if observations
        .iter()
        .any(|p| !p[0].is_finite() || !p[1].is_finite())
    {
        return Err(BaselineError::NonFiniteInput);
    }
    let r = params.measurement_variance;
    let v0 = params.initial_velocity_variance;
    let mut state = CvKalmanState {
        mean: Vector4::new(observations[0][0], observations[0][1], 0.0, 0.0),
        covariance: Matrix4::from_diagonal(&Vector4::new(r, r, v0, v0)),
        params: *params,
    };
    for obs in &observations[1..] {
        predict(&mut state);
        update(&mut state, Vector2::new(obs[0], obs[1]));
    }
    Ok(state)
}

/// Roll the prediction step forward `n` frames with no updates. Returns the
/// forecast pixel positions and the position covariance per step.
pub fn kalman_forecast(state: &CvKalmanState, n: usize) -> Vec<([f64; 2], Matrix2<f64>)> {
    let mut rolled = state.clone();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        predict(&mut rolled);
        out.push((
            [rolled.mean[0], rolled.mean[1]],
            rolled.covariance.fixed_view::<2, 2>(0, 0).into_owned(),
        ));
    }
    out
}

/// How the linear baseline estimates the per-frame velocity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LinearFit {
    /// Least-squares slope of the observed window (the default).
    #[default]
    LeastSquares,
    /// Average endpoint difference (last − first) / (len − 1).
    EndpointDifference,
}

/// Continue the observed window from its last point at a constant velocity.
pub fn linear_forecast(
    observations: &[[f64; 2]],
    n: usize,
) -> Result<Vec<[f64; 2]>, BaselineError> {
    linear_forecast_with(observations, n, LinearFit::LeastSquares)
}

pub fn linear_forecast_with(
    observations: &[[f64; 2]],
    n: usize,
    fit: LinearFit,
) -> Result<Vec<[f64; 2]>, BaselineError> {
    let k = observations.len();
    if k < 2 {
        return Err(BaselineError::TooFewObservations { needed: 2, got: k });
    }
    if observations
        .iter()
        .any(|p| !p[0].is_finite() || !p[1].is_finite())
    {
        return Err(BaselineError::NonFiniteInput);
    }
    let velocity = match fit {
        LinearFit::LeastSquares => {
            let t_mean = (k - 1) as f64 / 2.0;
            let mut num = [0.0; 2];
            let mut den = 0.0;
            for (t, p) in observations.iter().enumerate() {
                let dt = t as f64 - t_mean;
                num[0] += dt * p[0];
                num[1] += dt * p[1];
                den += dt * dt;
            }
            [num[0] / den, num[1] / den]
        }
        LinearFit::EndpointDifference => {
            let span = (k - 1) as f64;
            [
                (observations[k - 1][0] - observations[0][0]) / span,
                (observations[k - 1][1] - observations[0][1]) / span,
            ]
        }
    };
    let last = observations[k - 1];
    Ok((1..=n)
        .map(|i| {
            [
                last[0] + velocity[0] * i as f64,
                last[1] + velocity[1] * i as f64,
            ]
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    /// Textbook recursion written as two decoupled scalar 2-state filters,
    /// standard (non-Joseph) covariance update. Independent of the
    /// production path.
    fn reference_filter(observations: &[[f64; 2]], params: &KalmanParams) -> Vector4<f64> {
        let q = params.process_noise_intensity;
        let r = params.measurement_variance;
        let mut axes = [[0.0f64; 2]; 2]; // per-axis (pos, vel)
        let mut covs = [[[0.0f64; 2]; 2]; 2];
        for axis in 0..2 {
            axes[axis] = [observations[0][axis], 0.0];
            covs[axis] = [[r, 0.0], [0.0, params.initial_velocity_variance]];
        }
        for obs in &observations[1..] {
            for axis in 0..2 {
                let [x, v] = axes[axis];
                let p = covs[axis];
                // predict: x += v; P = F P Fᵀ + q·[[1/4, 1/2], [1/2, 1]]
                let xp = x + v;
                let p00 = p[0][0] + p[0][1] + p[1][0] + p[1][1] + 0.25 * q;
                let p01 = p[0][1] + p[1][1] + 0.5 * q;
                let p10 = p[1][0] + p[1][1] + 0.5 * q;
                let p11 = p[1][1] + q;
                // update
                let s = p00 + r;
                let k0 = p00 / s;
                let k1 = p10 / s;
                let innov = obs[axis] - xp;
                axes[axis] = [xp + k0 * innov, v + k1 * innov];
                covs[axis] = [
                    [(1.0 - k0) * p00, (1.0 - k0) * p01],
                    [p10 - k1 * p00, p11 - k1 * p01],
                ];
            }
        }
        Vector4::new(axes[0][0], axes[1][0], axes[0][1], axes[1][1])
    }

    #[test]
    fn static_observations_pin_position_and_velocity() {
        let obs = vec![[100.0, 100.0]; 8];
        let state = kalman_filter(&obs, &KalmanParams::default()).unwrap();
        assert!((state.mean[0] - 100.0).abs() < 1e-6);
        assert!((state.mean[1] - 100.0).abs() < 1e-6);
        assert!(state.mean[2].abs() < 1e-6);
        assert!(state.mean[3].abs() < 1e-6);
    }

    #[test]
    fn constant_velocity_input_recovers_velocity() {
        let obs: Vec<[f64; 2]> = (0..8).map(|t| [10.0 + 5.0 * t as f64, 20.0]).collect();
        let state = kalman_filter(&obs, &KalmanParams::default()).unwrap();
        assert!((state.mean[2] - 5.0).abs() < 0.05, "u̇ = {}", state.mean[2]);
        assert!(state.mean[3].abs() < 0.05, "v̇ = {}", state.mean[3]);

        let reference = reference_filter(&obs, &KalmanParams::default());
        for i in 0..4 {
            assert!((state.mean[i] - reference[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn filter_matches_reference_on_random_tracks() {
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let params = KalmanParams::default();
        for _ in 0..100 {
            let len = rng.random_range(2..30);
            let mut p = [rng.random_range(0.0..500.0), rng.random_range(0.0..500.0)];
            let obs: Vec<[f64; 2]> = (0..len)
                .map(|_| {
                    p[0] += rng.random_range(-10.0..10.0);
                    p[1] += rng.random_range(-10.0..10.0);
                    p
                })
                .collect();
            let state = kalman_filter(&obs, &params).unwrap();
            let reference = reference_filter(&obs, &params);
            for i in 0..4 {
                assert!(
                    (state.mean[i] - reference[i]).abs() < 1e-10,
                    "component {i}: {} vs {}",
                    state.mean[i],
                    reference[i]
                );
            }
        }
    }

    #[test]
    fn covariance_stays_symmetric_positive_definite() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let obs: Vec<[f64; 2]> = (0..40)
            .map(|_| [rng.random_range(-1e3..1e3), rng.random_range(-1e3..1e3)])
            .collect();
        let state = kalman_filter(&obs, &KalmanParams::default()).unwrap();
        let asym = (state.covariance - state.covariance.transpose()).abs().max();
        assert!(asym < 1e-10);
        let chol = nalgebra::Cholesky::new(state.covariance);
        assert!(chol.is_some(), "covariance not positive definite");
    }

    #[test]
    fn forecast_from_zero_velocity_is_constant() {
        let state = kalman_filter(&[[50.0, 60.0]; 6], &KalmanParams::default()).unwrap();
        for (p, _) in kalman_forecast(&state, 12) {
            assert!((p[0] - 50.0).abs() < 1e-6 && (p[1] - 60.0).abs() < 1e-6);
        }
    }

    #[test]
    fn forecast_advances_linearly_and_inflates() {
        let mut state = kalman_filter(&[[0.0, 20.0], [0.0, 20.0]], &KalmanParams::default()).unwrap();
        state.mean = Vector4::new(100.0, 20.0, 5.0, 0.0);
        let forecast = kalman_forecast(&state, 3);
        assert_eq!(forecast[0].0, [105.0, 20.0]);
        assert_eq!(forecast[1].0, [110.0, 20.0]);
        assert_eq!(forecast[2].0, [115.0, 20.0]);
        let traces: Vec<f64> = forecast.iter().map(|(_, c)| c.trace()).collect();
        assert!(traces.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn near_zero_measurement_noise_matches_linear_on_exact_cv() {
        // As R → 0 the filter pins position to the observations and its
        // velocity approaches the exact slope, so the two extrapolations
        // separate by less than 1e-3 px per forecast step. (The velocity
        // residual cannot vanish entirely: with R = 0 the steady-state
        // velocity gain of this process model is exactly 2, so the last
        // transient residual alternates instead of decaying.)
        let obs: Vec<[f64; 2]> = (0..8)
            .map(|t| [3.0 + 2.0 * t as f64, 7.0 - 1.0 * t as f64])
            .collect();
        let params = KalmanParams {
            measurement_variance: 1e-9,
            ..KalmanParams::default()
        };
        let state = kalman_filter(&obs, &params).unwrap();
        assert!((state.mean[0] - obs[7][0]).abs() < 1e-6);
        assert!((state.mean[2] - 2.0).abs() < 1e-3, "u̇ = {}", state.mean[2]);
        assert!((state.mean[3] + 1.0).abs() < 1e-3, "v̇ = {}", state.mean[3]);
        let kf = kalman_forecast(&state, 8);
        let lin = linear_forecast(&obs, 8).unwrap();
        for (i, (a, b)) in kf.iter().zip(&lin).enumerate() {
            let per_step = 1e-3 * (i + 1) as f64;
            assert!((a.0[0] - b[0]).abs() < per_step && (a.0[1] - b[1]).abs() < per_step);
        }
    }

    #[test]
    fn linear_forecast_continues_exact_lines() {
        let obs: Vec<[f64; 2]> = (0..8)
            .map(|t| [1.0 + 2.0 * t as f64, 5.0 - 1.0 * t as f64])
            .collect();
        let forecast = linear_forecast(&obs, 4).unwrap();
        for (i, p) in forecast.iter().enumerate() {
            let t = (7 + i + 1) as f64;
            assert_relative_eq!(p[0], 1.0 + 2.0 * t, epsilon = 1e-12);
            assert_relative_eq!(p[1], 5.0 - t, epsilon = 1e-12);
        }
        let endpoint = linear_forecast_with(&obs, 4, LinearFit::EndpointDifference).unwrap();
        assert_eq!(forecast, endpoint);
    }

    #[test]
    fn linear_forecast_of_constant_input_is_constant() {
        let forecast = linear_forecast(&[[9.0, 9.0]; 5], 3).unwrap();
        assert!(forecast.iter().all(|p| *p == [9.0, 9.0]));
        assert!(matches!(
            linear_forecast(&[[1.0, 1.0]], 3),
            Err(BaselineError::TooFewObservations { .. })
        ));
    }

    #[test]
    fn noisy_line_slope_is_within_ols_bound() {
        // Closed-form OLS slope std: σ / sqrt(Σ (t − t̄)²); for 8 samples
        // Σ (t − t̄)² = 42.
        let sigma = 1.5;
        let slope_sigma = sigma / 42f64.sqrt();
        let mut rng = ChaCha12Rng::seed_from_u64(77);
        let normal = rand_distr::Normal::new(0.0, sigma).unwrap();
        let mut failures = 0;
        let trials = 200;
        for _ in 0..trials {
            let obs: Vec<[f64; 2]> = (0..8)
                .map(|t| {
                    [
                        10.0 + 2.0 * t as f64 + rand_distr::Distribution::sample(&normal, &mut rng),
                        20.0,
                    ]
                })
                .collect();
            let f = linear_forecast(&obs, 2).unwrap();
            let slope = f[1][0] - f[0][0];
            if (slope - 2.0).abs() > 3.0 * slope_sigma {
                failures += 1;
            }
        }
        // 3σ one-axis misses should be rare (~0.3%); allow a small margin.
        assert!(failures <= 5, "{failures} of {trials} beyond 3σ");
    }

    proptest! {
        #[test]
        fn axis_swap_symmetry(seed in 0u64..1000, len in 2usize..20) {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let obs: Vec<[f64; 2]> = (0..len)
                .map(|_| [rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0)])
                .collect();
            let swapped: Vec<[f64; 2]> = obs.iter().map(|p| [p[1], p[0]]).collect();
            let params = KalmanParams::default();
            let a = kalman_filter(&obs, &params).unwrap();
            let b = kalman_filter(&swapped, &params).unwrap();
            prop_assert_eq!(a.mean[0], b.mean[1]);
            prop_assert_eq!(a.mean[1], b.mean[0]);
            prop_assert_eq!(a.mean[2], b.mean[3]);
            prop_assert_eq!(a.mean[3], b.mean[2]);

            let la = linear_forecast(&obs, 5).unwrap();
            let lb = linear_forecast(&swapped, 5).unwrap();
            for (x, y) in la.iter().zip(&lb) {
                prop_assert_eq!(x[0], y[1]);
                prop_assert_eq!(x[1], y[0]);
            }
        }
    }
}
