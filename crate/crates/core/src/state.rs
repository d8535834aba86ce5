//! Gaussian kinematic state, constant-velocity motion, linear position
//! measurements, Kalman update and Mahalanobis gating.
//!
//! State layout is `[x, y, vx, vy]`; the measurement matrix picks `[x, y]`.

use nalgebra::{Matrix2, Matrix2x4, Matrix4, Matrix4x2, Vector2, Vector4};

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

/// Gaussian belief over `[x, y, vx, vy]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateEstimate<T: Scalar> {
    pub mean: Vector4<T>,
    pub covariance: Matrix4<T>,
}

impl<T: Scalar> StateEstimate<T> {
    pub fn new(mean: Vector4<T>, covariance: Matrix4<T>) -> Self {
        Self { mean, covariance }
    }

    pub fn position(&self) -> Vector2<T> {
        Vector2::new(self.mean[0], self.mean[1])
    }

    pub fn velocity(&self) -> Vector2<T> {
        Vector2::new(self.mean[2], self.mean[3])
    }

    /// Largest absolute asymmetry `|P[i][j] - P[j][i]|`.
    pub fn asymmetry(&self) -> T {
        let p = &self.covariance;
        let mut worst = T::zero();
        for i in 0..4 {
            for j in 0..4 {
                worst = worst.max((p[(i, j)] - p[(j, i)]).abs());
            }
        }
        worst
    }
}

/// Motion model parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionParams<T: Scalar> {
    /// White-noise acceleration intensity (m²/s³).
    pub process_noise: T,
    pub survival_prob: T,
}

impl<T: Scalar> MotionParams<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.process_noise >= T::zero()) || !self.process_noise.is_finite() {
            return Err(invalid("process noise intensity must be finite and >= 0"));
        }
        if !(T::zero()..=T::one()).contains(&self.survival_prob) {
            return Err(invalid("survival probability must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Measurement model parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementParams<T: Scalar> {
    /// Position measurement noise covariance (m²).
    pub noise: Matrix2<T>,
    pub detection_prob: T,
    /// Expected false alarms per m² per frame.
    pub clutter_intensity: T,
    /// Squared-Mahalanobis gate.
    pub gate_threshold: T,
}

impl<T: Scalar> MeasurementParams<T> {
    /// Default gate: χ² with two degrees of freedom at 0.99.
    pub const DEFAULT_GATE: f64 = 9.21;

    pub fn validate(&self) -> Result<()> {
        let r = &self.noise;
        if (r[(0, 1)] - r[(1, 0)]).abs() > T::lit(1e-12) {
            return Err(invalid("measurement noise must be symmetric"));
        }
        let det = r[(0, 0)] * r[(1, 1)] - r[(0, 1)] * r[(1, 0)];
        if !(r[(0, 0)] > T::zero() && det > T::zero()) {
            return Err(invalid("measurement noise must be positive definite"));
        }
        if !(T::zero()..=T::one()).contains(&self.detection_prob) {
            return Err(invalid("detection probability must lie in [0, 1]"));
        }
        if !(self.clutter_intensity >= T::zero()) || !self.clutter_intensity.is_finite() {
            return Err(invalid("clutter intensity must be finite and >= 0"));
        }
        if !(self.gate_threshold > T::zero()) {
            return Err(invalid("gate threshold must be > 0"));
        }
        Ok(())
    }
}

/// A 2D position measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement<T: Scalar> {
    pub z: Vector2<T>,
}

impl<T: Scalar> Measurement<T> {
    pub fn new(x: T, y: T) -> Self {
        Self {
            z: Vector2::new(x, y),
        }
    }
}

/// Constant-velocity transition matrix.
pub fn transition_matrix<T: Scalar>(dt: T) -> Matrix4<T> {
    let mut f = Matrix4::identity();
    f[(0, 2)] = dt;
    f[(1, 3)] = dt;
    f
}

/// Discretised white-noise-acceleration covariance, independent per axis.
pub fn process_noise<T: Scalar>(q: T, dt: T) -> Matrix4<T> {
    let dt2 = dt * dt;
    let pp = q * dt2 * dt / T::lit(3.0);
    let pv = q * dt2 / T::lit(2.0);
    let vv = q * dt;
    let mut m = Matrix4::zeros();
    m[(0, 0)] = pp;
    m[(1, 1)] = pp;
    m[(0, 2)] = pv;
    m[(2, 0)] = pv;
    m[(1, 3)] = pv;
    m[(3, 1)] = pv;
    m[(2, 2)] = vv;
    m[(3, 3)] = vv;
    m
}

fn measurement_matrix<T: Scalar>() -> Matrix2x4<T> {
    let mut h = Matrix2x4::zeros();
    h[(0, 0)] = T::one();
    h[(1, 1)] = T::one();
    h
}

pub(crate) fn symmetrize<T: Scalar>(p: &Matrix4<T>) -> Matrix4<T> {
    let half = T::lit(0.5);
    (p + p.transpose()) * half
}

/// Propagates a state through the constant-velocity model.
pub fn cv_predict<T: Scalar>(
    state: &StateEstimate<T>,
    dt: T,
    params: &MotionParams<T>,
) -> Result<StateEstimate<T>> {
    if !(dt > T::zero()) || !dt.is_finite() {
        return Err(invalid(format!("time step must be positive, got {dt}")));
    }
    let f = transition_matrix(dt);
    let mean = f * state.mean;
    let cov = f * state.covariance * f.transpose() + process_noise(params.process_noise, dt);
    Ok(StateEstimate::new(mean, symmetrize(&cov)))
}

/// Predicted measurement distribution `N(H·mean, S)` of one state, cached so
/// gating, likelihood and update share one inversion.
#[derive(Debug, Clone)]
pub struct Innovation<T: Scalar> {
    pub predicted: Vector2<T>,
    pub covariance: Matrix2<T>,
    pub inverse: Matrix2<T>,
    /// `-½·ln((2π)²·|S|)`.
    log_norm: T,
}

impl<T: Scalar> Innovation<T> {
    pub fn new(state: &StateEstimate<T>, params: &MeasurementParams<T>) -> Result<Self> {
        let p = &state.covariance;
        let s = Matrix2::new(p[(0, 0)], p[(0, 1)], p[(1, 0)], p[(1, 1)]) + params.noise;
        let det = s[(0, 0)] * s[(1, 1)] - s[(0, 1)] * s[(1, 0)];
        if !(det > T::zero()) || !det.is_finite() || !(s[(0, 0)] > T::zero()) {
            return Err(Error::NumericalDegeneracy {
                component: format!(
                    "innovation covariance S = [[{}, {}], [{}, {}]] (det {det})",
                    s[(0, 0)],
                    s[(0, 1)],
                    s[(1, 0)],
                    s[(1, 1)]
                ),
            });
        }
        let inverse = Matrix2::new(s[(1, 1)], -s[(0, 1)], -s[(1, 0)], s[(0, 0)]) / det;
        let two_pi = T::TAU();
        let log_norm = -(two_pi.ln() + T::lit(0.5) * det.ln());
        Ok(Self {
            predicted: state.position(),
            covariance: s,
            inverse,
            log_norm,
        })
    }

    pub fn mahalanobis_sq(&self, z: &Measurement<T>) -> T {
        let r = z.z - self.predicted;
        let d = (r.transpose() * self.inverse * r)[(0, 0)];
        d.max(T::zero())
    }

    /// Gaussian log density of `z`.
    pub fn log_likelihood(&self, z: &Measurement<T>) -> T {
        self.log_norm - T::lit(0.5) * self.mahalanobis_sq(z)
    }

    /// Kalman update of `state` (the state this innovation was built from).
    pub fn update(
        &self,
        state: &StateEstimate<T>,
        z: &Measurement<T>,
        params: &MeasurementParams<T>,
    ) -> StateEstimate<T> {
        let h = measurement_matrix::<T>();
        let pht: Matrix4x2<T> = state.covariance * h.transpose();
        let gain = pht * self.inverse;
        let mean = state.mean + gain * (z.z - self.predicted);
        // Joseph form keeps the result PSD under rounding.
        let i_kh = Matrix4::identity() - gain * h;
        let cov =
            i_kh * state.covariance * i_kh.transpose() + gain * params.noise * gain.transpose();
        StateEstimate::new(mean, symmetrize(&cov))
    }
}

/// Posterior state plus the measurement log-likelihood.
#[derive(Debug, Clone)]
pub struct KalmanUpdate<T: Scalar> {
    pub state: StateEstimate<T>,
    pub log_likelihood: T,
}

impl<T: Scalar> KalmanUpdate<T> {
    pub fn likelihood(&self) -> T {
        self.log_likelihood.exp()
    }
}

/// Standard Kalman measurement update.
pub fn kalman_update<T: Scalar>(
    state: &StateEstimate<T>,
    z: &Measurement<T>,
    params: &MeasurementParams<T>,
) -> Result<KalmanUpdate<T>> {
    let inn = Innovation::new(state, params)?;
    Ok(KalmanUpdate {
        state: inn.update(state, z, params),
        log_likelihood: inn.log_likelihood(z),
    })
}

/// `(z - H·mean)ᵀ S⁻¹ (z - H·mean)`.
pub fn mahalanobis_sq<T: Scalar>(
    state: &StateEstimate<T>,
    z: &Measurement<T>,
    params: &MeasurementParams<T>,
) -> Result<T> {
    Ok(Innovation::new(state, params)?.mahalanobis_sq(z))
}

/// Indices of the measurements inside the gate, in input order.
pub fn gate<T: Scalar>(
    state: &StateEstimate<T>,
    measurements: &[Measurement<T>],
    params: &MeasurementParams<T>,
) -> Result<Vec<usize>> {
    if measurements.is_empty() {
        return Ok(Vec::new());
    }
    let inn = Innovation::new(state, params)?;
    Ok(measurements
        .iter()
        .enumerate()
        .filter(|(_, z)| inn.mahalanobis_sq(z) <= params.gate_threshold)
        .map(|(i, _)| i)
        .collect())
}
