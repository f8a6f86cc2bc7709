use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};

use super::Simulate;
use crate::error::{Error, Result};
use crate::estimation::ModelFamily;
use crate::gslr::StateSpaceModel;
use crate::linalg::cholesky;
use crate::real::Real;

// Below this |ω·dt| the turn-rate terms use their Taylor series.
const SERIES_THRESHOLD: f64 = 1e-6;
// The ω-derivatives lose accuracy to cancellation much earlier.
const DERIVATIVE_SERIES_THRESHOLD: f64 = 1e-3;

/// Coordinated-turn motion with bearings-only measurements.
///
/// State `[p_x, p_y, v_x, v_y, ω]`. The position/velocity block rotates at
/// the turn rate `ω` over each step `dt`; the process noise is the
/// discretized white-noise acceleration model with spectral densities `q1`
/// (acceleration) and `q2` (turn rate). Each sensor `i` measures
/// `atan2(p_y − s_y^i, p_x − s_x^i)` with additive noise of covariance `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinatedTurn<T: Real> {
    pub q1: T,
    pub q2: T,
    pub dt: T,
    pub sensors: Vec<(T, T)>,
    /// Measurement noise covariance (one row/column per sensor).
    pub r: DMatrix<T>,
    pub prior_mean: DVector<T>,
    /// Lower Cholesky factor of the prior covariance.
    pub prior_chol: DMatrix<T>,
}

impl Default for CoordinatedTurn<f64> {
    fn default() -> Self {
        CoordinatedTurn {
            q1: 0.1,
            q2: 0.1,
            dt: 0.01,
            sensors: vec![(-1.5, 0.5), (1.0, 1.0)],
            r: DMatrix::from_diagonal(&DVector::from_vec(vec![0.05 * 0.05, 0.1 * 0.1])),
            prior_mean: DVector::from_vec(vec![0.1, 0.2, 1.0, 0.0, 0.0]),
            prior_chol: DMatrix::identity(5, 5),
        }
    }
}

impl<T: Real> CoordinatedTurn<T> {
    pub fn validate(&self) -> Result<()> {
        let ns = self.sensors.len();
        if !(self.dt > T::zero()) || !(self.q1 > T::zero()) || !(self.q2 > T::zero()) {
            return Err(Error::InvalidArgument("dt, q1 and q2 must be positive".into()));
        }
        if ns == 0 || self.r.shape() != (ns, ns) {
            return Err(Error::Dimension(format!(
                "{ns} sensors with a {}x{} noise covariance",
                self.r.nrows(),
                self.r.ncols()
            )));
        }
        if self.prior_mean.len() != 5 || self.prior_chol.shape() != (5, 5) {
            return Err(Error::Dimension("coordinated-turn prior must be 5-dimensional".into()));
        }
        cholesky(&self.r)
            .map_err(|_| Error::InvalidArgument("measurement covariance is not positive definite".into()))?;
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> CoordinatedTurn<U> {
        let c = |v: T| U::from_f64(v.to_f64());
        CoordinatedTurn {
            q1: c(self.q1),
            q2: c(self.q2),
            dt: c(self.dt),
            sensors: self.sensors.iter().map(|&(x, y)| (c(x), c(y))).collect(),
            r: self.r.map(c),
            prior_mean: self.prior_mean.map(c),
            prior_chol: self.prior_chol.map(c),
        }
    }

    /// Process noise covariance over one step.
    pub fn process_covariance(&self) -> DMatrix<T> {
        let dt = self.dt;
        let q1 = self.q1;
        let half = T::from_f64(0.5);
        let third = T::from_f64(1.0 / 3.0);
        let pp = q1 * dt * dt * dt * third;
        let pv = q1 * dt * dt * half;
        let vv = q1 * dt;
        let mut q = DMatrix::zeros(5, 5);
        for i in 0..2 {
            q[(i, i)] = pp;
            q[(i, i + 2)] = pv;
            q[(i + 2, i)] = pv;
            q[(i + 2, i + 2)] = vv;
        }
        q[(4, 4)] = self.q2 * dt;
        q
    }

    // (sin(ωdt)/ω, (1 − cos(ωdt))/ω, cos(ωdt), sin(ωdt))
    fn turn_terms(&self, omega: T) -> (T, T, T, T) {
        let dt = self.dt;
        let u = omega * dt;
        let (s, c) = (u.sin(), u.cos());
        if u.abs().to_f64() < SERIES_THRESHOLD {
            let u2 = u * u;
            let a = dt * (T::one() - u2 / T::from_f64(6.0));
            let b = dt * u * (T::from_f64(0.5) - u2 / T::from_f64(24.0));
            (a, b, c, s)
        } else {
            let sh = (u * T::from_f64(0.5)).sin();
            (s / omega, T::from_f64(2.0) * sh * sh / omega, c, s)
        }
    }

    // Derivatives of the first two turn terms with respect to ω.
    fn turn_term_derivatives(&self, omega: T) -> (T, T) {
        let dt = self.dt;
        let u = omega * dt;
        let dt2 = dt * dt;
        if u.abs().to_f64() < DERIVATIVE_SERIES_THRESHOLD {
            let u2 = u * u;
            let da = dt2 * u * (-T::from_f64(1.0 / 3.0) + u2 / T::from_f64(30.0));
            let db = dt2 * (T::from_f64(0.5) - u2 / T::from_f64(8.0) + u2 * u2 / T::from_f64(144.0));
            (da, db)
        } else {
            let (s, c) = (u.sin(), u.cos());
            let sh = (u * T::from_f64(0.5)).sin();
            let one_minus_c = T::from_f64(2.0) * sh * sh;
            let w2 = omega * omega;
            ((dt * c * omega - s) / w2, (dt * s * omega - one_minus_c) / w2)
        }
    }
}

impl<T: Real> StateSpaceModel<T> for CoordinatedTurn<T> {
    fn state_dim(&self) -> usize {
        5
    }

    fn obs_dim(&self) -> usize {
        self.sensors.len()
    }

    fn prior(&self) -> Result<(DVector<T>, DMatrix<T>)> {
        Ok((self.prior_mean.clone(), self.prior_chol.clone()))
    }

    fn transition_mean(&self, x: &DVector<T>) -> Result<DVector<T>> {
        let (px, py, vx, vy, w) = (x[0], x[1], x[2], x[3], x[4]);
        let (a, b, c, s) = self.turn_terms(w);
        Ok(DVector::from_vec(vec![
            px + a * vx - b * vy,
            py + b * vx + a * vy,
            c * vx - s * vy,
            s * vx + c * vy,
            w,
        ]))
    }

    fn transition_chol(&self, _x: &DVector<T>) -> Result<DMatrix<T>> {
        cholesky(&self.process_covariance())
    }

    fn transition_jacobian(&self, x: &DVector<T>) -> Result<DMatrix<T>> {
        let (vx, vy, w) = (x[2], x[3], x[4]);
        let (a, b, c, s) = self.turn_terms(w);
        let (da, db) = self.turn_term_derivatives(w);
        let dt = self.dt;
        let mut j = DMatrix::identity(5, 5);
        j[(0, 2)] = a;
        j[(0, 3)] = -b;
        j[(1, 2)] = b;
        j[(1, 3)] = a;
        j[(2, 2)] = c;
        j[(2, 3)] = -s;
        j[(3, 2)] = s;
        j[(3, 3)] = c;
        j[(0, 4)] = da * vx - db * vy;
        j[(1, 4)] = db * vx + da * vy;
        j[(2, 4)] = -dt * (s * vx + c * vy);
        j[(3, 4)] = dt * (c * vx - s * vy);
        Ok(j)
    }

    fn observation_mean(&self, x: &DVector<T>) -> Result<DVector<T>> {
        let mut y = DVector::zeros(self.sensors.len());
        for (i, &(sx, sy)) in self.sensors.iter().enumerate() {
            let (dx, dy) = (x[0] - sx, x[1] - sy);
            if dx == T::zero() && dy == T::zero() {
                return Err(Error::UndefinedBearing { sensor: i });
            }
            y[i] = dy.atan2(dx);
        }
        Ok(y)
    }

    fn observation_chol(&self, _x: &DVector<T>) -> Result<DMatrix<T>> {
        cholesky(&self.r)
    }

    fn observation_jacobian(&self, x: &DVector<T>) -> Result<DMatrix<T>> {
        let mut j = DMatrix::zeros(self.sensors.len(), 5);
        for (i, &(sx, sy)) in self.sensors.iter().enumerate() {
            let (dx, dy) = (x[0] - sx, x[1] - sy);
            let r2 = dx * dx + dy * dy;
            if r2 == T::zero() {
                return Err(Error::UndefinedBearing { sensor: i });
            }
            j[(i, 0)] = -dy / r2;
            j[(i, 1)] = dx / r2;
        }
        Ok(j)
    }

    /// Shifts each bearing by a multiple of 2π onto the branch nearest the
    /// predicted bearing.
    fn align_observation(&self, y: &DVector<T>, predicted: &DVector<T>) -> DVector<T> {
        DVector::from_fn(y.len(), |i, _| {
            let turns = ((predicted[i] - y[i]).to_f64() / TAU).round();
            y[i] + T::from_f64(turns * TAU)
        })
    }
}

impl Simulate for CoordinatedTurn<f64> {}

/// Coordinated-turn model parameterized by `θ = [√R₁₁]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CtObservationStdFamily {
    pub base: CoordinatedTurn<f64>,
}

impl ModelFamily for CtObservationStdFamily {
    type Model<T: Real> = CoordinatedTurn<T>;

    fn dim(&self) -> usize {
        1
    }

    fn build<T: Real>(&self, theta: &[T]) -> Result<CoordinatedTurn<T>> {
        let mut model = self.base.cast::<T>();
        model.r[(0, 0)] = theta[0] * theta[0];
        Ok(model)
    }

    fn initial(&self) -> Vec<f64> {
        vec![self.base.r[(0, 0)].sqrt()]
    }

    fn bounds(&self) -> Vec<(f64, f64)> {
        vec![(1e-4, 10.0)]
    }
}
